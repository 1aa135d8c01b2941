//! AAS vault: a client/server encrypted-storage gateway with four defensive
//! layers stacked over a plain key-value store:
//!
//! 1. chaffed transport — ciphertext is split into fixed-size benches and
//!    interleaved with fake benches at keyed pseudorandom positions
//!    ([`chaff`]);
//! 2. client-only encryption — data exists on the wire and at rest solely as
//!    authenticated ciphertext envelopes ([`envelope`]);
//! 3. a logging access gateway — the sole path to storage, stamping every
//!    access attempt ([`gateway`]);
//! 4. audits over a tamper-evident, hash-chained access log ([`ledger`],
//!    [`audit`]).
//!
//! [`adversary`] provides the passive-attacker harness used to measure the
//! chaffing layer, and [`client`]/[`server`] carry the framed wire protocol.

pub mod adversary;
pub mod audit;
pub mod chaff;
pub mod client;
pub mod clock;
pub mod config;
pub(crate) mod crypto;
pub mod envelope;
pub mod gateway;
pub mod ledger;
pub mod server;
pub mod wire;

pub use clock::{Clock, SimClock, SystemClock};
