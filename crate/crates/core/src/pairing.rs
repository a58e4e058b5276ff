//! NOMA user pairing by deferred acceptance.
//!
//! Every directed metric `M_{i,(i,k)}` is solved once per slot (`k == i` is the
//! OMA metric). Users then propose down their preference lists; a proposal is
//! accepted only when the rearranged matching strictly lowers the total metric.

use serde::Serialize;
use thiserror::Error;

use crate::config::SystemParams;
use crate::noma::{solve_prepared, NomaDecision, NomaUser};
use crate::oma::{solve_oma, OmaDecision, UserState};

#[derive(Debug, Error, PartialEq)]
pub enum PairingError {
    #[error("matching covers {got} users, cache holds {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("matching is not an involution at user {0}")]
    NotInvolution(usize),
    #[error("match request recursion exceeded {0} levels")]
    RecursionLimit(usize),
}

/// Involutive partner map. `partner[i] == i` means user `i` uses OMA.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Matching {
    pub partner: Vec<usize>,
}

impl Matching {
    pub fn identity(n: usize) -> Self {
        Self {
            partner: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.partner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partner.is_empty()
    }

    pub fn validate(&self) -> Result<(), PairingError> {
        let n = self.partner.len();
        for (i, &p) in self.partner.iter().enumerate() {
            if p >= n || self.partner[p] != i {
                return Err(PairingError::NotInvolution(i));
            }
        }
        Ok(())
    }

    /// NOMA pairs as `(lower index, higher index)`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.partner
            .iter()
            .enumerate()
            .filter(|&(i, &p)| i < p)
            .map(|(i, &p)| (i, p))
    }

    pub fn pair_count(&self) -> usize {
        self.pairs().count()
    }
}

/// All directed metrics of one slot, the solved decisions behind them, and the
/// preference lists derived from them.
#[derive(Debug, Clone)]
pub struct PreferenceTable {
    n: usize,
    /// Row-major `cost[i * n + k] = M_{i,(i,k)}`.
    cost: Vec<f64>,
    oma: Vec<OmaDecision>,
    /// Pair decisions for `i < j`, packed upper triangle.
    noma: Vec<NomaDecision>,
    /// Candidates with a negative directed metric, best first.
    lists: Vec<Vec<usize>>,
}

fn tri_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

impl PreferenceTable {
    pub fn n_users(&self) -> usize {
        self.n
    }

    /// `M_{i,(i,k)}`.
    pub fn cost(&self, i: usize, k: usize) -> f64 {
        self.cost[i * self.n + k]
    }

    pub fn oma_decision(&self, i: usize) -> &OmaDecision {
        &self.oma[i]
    }

    pub fn noma_decision(&self, i: usize, j: usize) -> &NomaDecision {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        &self.noma[tri_index(self.n, a, b)]
    }

    pub fn preferences(&self, i: usize) -> &[usize] {
        &self.lists[i]
    }
}

/// Solve every OMA and pair problem for the slot and rank partners.
pub fn build_preferences(states: &[UserState], params: &SystemParams) -> PreferenceTable {
    let n = states.len();
    let oma: Vec<OmaDecision> = states.iter().map(|s| solve_oma(s, params)).collect();
    let prepared: Vec<NomaUser> = states.iter().map(|s| NomaUser::new(*s, params)).collect();
    let mut cost = vec![0.0; n * n];
    let mut noma = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        cost[i * n + i] = oma[i].metric;
        for j in i + 1..n {
            let d = solve_prepared(&prepared[i], &prepared[j], params);
            let [(_, mi, _), (_, mj, _)] = d.by_argument();
            cost[i * n + j] = mi;
            cost[j * n + i] = mj;
            noma.push(d);
        }
    }
    let lists = (0..n)
        .map(|i| {
            let row = &cost[i * n..(i + 1) * n];
            let mut list: Vec<usize> = (0..n).filter(|&k| row[k] < 0.0).collect();
            // stable sort keeps lower indices first among ties
            list.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
            list
        })
        .collect();
    PreferenceTable {
        n,
        cost,
        oma,
        noma,
        lists,
    }
}

/// `sum_i M_{i,(i,partner[i])}`.
pub fn total_metric(m: &Matching, prefs: &PreferenceTable) -> Result<f64, PairingError> {
    if m.len() != prefs.n {
        return Err(PairingError::SizeMismatch {
            expected: prefs.n,
            got: m.len(),
        });
    }
    m.validate()?;
    Ok(m.partner.iter().enumerate().map(|(i, &k)| prefs.cost(i, k)).sum())
}

/// Exclusion set with O(1) membership and stack-like truncation.
struct Exclusion {
    count: Vec<u32>,
    stack: Vec<usize>,
}

impl Exclusion {
    fn new(n: usize) -> Self {
        Self {
            count: vec![0; n],
            stack: Vec::with_capacity(2 * n),
        }
    }

    fn push(&mut self, u: usize) {
        self.count[u] += 1;
        self.stack.push(u);
    }

    fn len(&self) -> usize {
        self.stack.len()
    }

    fn truncate(&mut self, len: usize) {
        while self.stack.len() > len {
            let u = self.stack.pop().unwrap();
            self.count[u] -= 1;
        }
    }

    fn contains(&self, u: usize) -> bool {
        self.count[u] > 0
    }
}

/// Working state for building a tentative matching in place. Every overwrite
/// is logged so a rejected proposal can be rolled back, and the metric change
/// is accumulated only over users whose partner changed.
struct Draft<'a> {
    prefs: &'a PreferenceTable,
    partner: Vec<usize>,
    /// `(user, partner before the proposal)`, first write per user only.
    log: Vec<(usize, usize)>,
    touched: Vec<bool>,
}

impl<'a> Draft<'a> {
    fn set(&mut self, u: usize, v: usize) {
        if !self.touched[u] {
            self.touched[u] = true;
            self.log.push((u, self.partner[u]));
        }
        self.partner[u] = v;
    }

    fn delta(&self) -> f64 {
        self.log
            .iter()
            .map(|&(u, old)| self.prefs.cost(u, self.partner[u]) - self.prefs.cost(u, old))
            .sum()
    }

    fn commit(&mut self) {
        for &(u, _) in &self.log {
            self.touched[u] = false;
        }
        self.log.clear();
    }

    fn rollback(&mut self) {
        for &(u, old) in self.log.iter().rev() {
            self.partner[u] = old;
            self.touched[u] = false;
        }
        self.log.clear();
    }

    /// Best entry of `u`'s list outside `excluded`; `u` itself when none is left.
    fn best_outside(&self, u: usize, excluded: &Exclusion) -> usize {
        self.prefs.lists[u]
            .iter()
            .copied()
            .find(|&k| !excluded.contains(k))
            .unwrap_or(u)
    }

    /// Pair `i` with `j` and re-home the displaced partners, recursively.
    fn request(&mut self, i: usize, j: usize, excluded: &mut Exclusion, depth: usize) -> Result<(), PairingError> {
        if depth > self.partner.len() {
            return Err(PairingError::RecursionLimit(self.partner.len()));
        }
        let m = self.partner[i];
        let p = self.partner[j];
        self.set(i, j);
        self.set(j, i);
        if m != i {
            self.set(m, m);
        }
        if p != j {
            self.set(p, p);
        }
        let base = excluded.len();
        excluded.push(i);
        excluded.push(j);
        if m != i && m != j {
            let n = self.best_outside(m, excluded);
            if n == m {
                self.set(m, m);
            } else if n == p {
                self.set(m, p);
                self.set(p, m);
            } else {
                self.request(m, n, excluded, depth + 1)?;
                // the recursion may have extended the set; restore this level's view
                excluded.truncate(base + 2);
            }
        }
        if p != j && p != i && self.partner[p] == p {
            let q = self.best_outside(p, excluded);
            if q != p {
                self.request(p, q, excluded, depth + 1)?;
            }
        }
        excluded.truncate(base);
        Ok(())
    }
}

/// Tentative matching after `u_i` requests `u_j` from `current`, with the
/// displaced users re-proposing outside `excluded`.
pub fn match_request(
    i: usize,
    j: usize,
    current: &Matching,
    excluded: &[usize],
    prefs: &PreferenceTable,
) -> Result<Matching, PairingError> {
    assert_ne!(i, j, "a user cannot request itself");
    let mut draft = Draft {
        prefs,
        partner: current.partner.clone(),
        log: Vec::new(),
        touched: vec![false; current.len()],
    };
    let mut ex = Exclusion::new(current.len());
    for &u in excluded {
        ex.push(u);
    }
    draft.request(i, j, &mut ex, 0)?;
    Ok(Matching {
        partner: draft.partner,
    })
}

/// Deferred-acceptance pairing over the whole user set.
pub fn pair_users(prefs: &PreferenceTable) -> Result<Matching, PairingError> {
    let n = prefs.n;
    let mut draft = Draft {
        prefs,
        partner: (0..n).collect(),
        log: Vec::new(),
        touched: vec![false; n],
    };
    let mut excluded = Exclusion::new(n);
    for i in 0..n {
        for &j in &prefs.lists[i] {
            if j == draft.partner[i] {
                break;
            }
            // proposing to oneself while paired is not a request
            if j == i {
                continue;
            }
            excluded.truncate(0);
            draft.request(i, j, &mut excluded, 0)?;
            if draft.delta() < 0.0 {
                draft.commit();
                break;
            }
            draft.rollback();
        }
    }
    Ok(Matching {
        partner: draft.partner,
    })
}
