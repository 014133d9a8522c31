//! Shared deterministic primitives: seeded RNG streams, content hashing,
//! and little-endian binary record IO used by the demo and checkpoint
//! containers.

pub mod bytes;
pub mod hash;
pub mod rng;

pub use hash::fnv1a64;
pub use rng::{derive_seed, derive_seed_indexed, DetRng};
