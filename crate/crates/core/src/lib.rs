//! Power allocation and user pairing for a hybrid OMA/NOMA downlink, with a
//! slotted queue simulator for comparing scheduling policies.

pub mod channel;
pub mod config;
pub mod noma;
pub mod oma;
pub mod oracle;
pub mod pairing;
pub mod policy;
pub mod queue;
pub mod rate;
pub mod sim;
pub mod sweep;
pub mod verify;
