//! Per-user transmit queues with packet timestamps, and the virtual queues
//! that track the long-term rate deficit.

use std::collections::VecDeque;

use rand::Rng;
use serde::Serialize;

use crate::config::SystemParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Packet {
    pub arrival_slot: u64,
    pub bits_remaining: u64,
}

/// FIFO of partially served packets. `backlog_bits` always equals the sum of
/// `bits_remaining`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransmitQueue {
    packets: VecDeque<Packet>,
    backlog_bits: u64,
}

impl TransmitQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn backlog_bits(&self) -> u64 {
        self.backlog_bits
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn packets(&self) -> impl Iterator<Item = &Packet> {
        self.packets.iter()
    }

    /// Append one FIFO entry. Zero-bit arrivals are ignored.
    pub fn enqueue(&mut self, bits: u64, now: u64) {
        if bits == 0 {
            return;
        }
        debug_assert!(self.packets.back().is_none_or(|p| p.arrival_slot <= now));
        self.packets.push_back(Packet {
            arrival_slot: now,
            bits_remaining: bits,
        });
        self.backlog_bits += bits;
    }

    /// Remove up to `mu_bits` from the head and return the delays (in slots)
    /// of the packets that completed.
    pub fn serve(&mut self, mu_bits: u64, now: u64) -> Vec<u64> {
        let mut delays = Vec::new();
        self.serve_with(mu_bits, now, |d| delays.push(d));
        delays
    }

    /// Like [`serve`](Self::serve) but reports each completed delay to `done`.
    /// Returns the number of bits actually removed.
    pub fn serve_with(&mut self, mu_bits: u64, now: u64, mut done: impl FnMut(u64)) -> u64 {
        let mut budget = mu_bits;
        while budget > 0 {
            let Some(head) = self.packets.front_mut() else {
                break;
            };
            if head.bits_remaining > budget {
                head.bits_remaining -= budget;
                budget = 0;
                break;
            }
            budget -= head.bits_remaining;
            done(now.saturating_sub(head.arrival_slot).max(1));
            self.packets.pop_front();
        }
        let served = mu_bits - budget;
        self.backlog_bits -= served;
        served
    }
}

/// Direct form of the backlog recurrence: serve, then add arrivals.
pub fn backlog_recurrence(q: u64, mu_bits: u64, arrival_bits: u64) -> u64 {
    q.saturating_sub(mu_bits) + arrival_bits
}

/// Number of packets arriving in one slot, uniform on `arrival_min..=arrival_max`.
pub fn sample_arrival_packets<R: Rng + ?Sized>(params: &SystemParams, rng: &mut R) -> u64 {
    rng.random_range(params.arrival_min..=params.arrival_max)
}

pub fn sample_arrivals<R: Rng + ?Sized>(params: &SystemParams, rng: &mut R) -> u64 {
    sample_arrival_packets(params, rng) * params.packet_bits
}

/// Rate-deficit accumulator `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct VirtualQueue {
    pub deficit: f64,
}

pub fn update_virtual(z: VirtualQueue, eta: f64, r_eff: f64) -> VirtualQueue {
    VirtualQueue {
        deficit: (z.deficit + eta - r_eff).max(0.0),
    }
}
