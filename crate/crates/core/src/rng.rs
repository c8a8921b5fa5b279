//! Counter-based random streams.
//!
//! Every stochastic component draws from a ChaCha8 stream selected by
//! `(master seed, domain, index)`. Streams never share state, so results do
//! not depend on how chains or replications are scheduled across workers.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct domains never collide for the same master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum Domain {
    Chain = 1,
    Simulation = 2,
    Replication = 3,
    Oracle = 4,
    Fit = 5,
}

pub fn stream(master: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((domain as u64) << 48) ^ (index & 0xFFFF_FFFF_FFFF));
    rng
}

/// A derived 64-bit seed, for handing to a component that builds its own streams.
pub fn derive_seed(master: u64, domain: Domain, index: u64) -> u64 {
    stream(master, domain, index).next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(stream(7, Domain::Chain, 0), |r, _| Some(r.next_u64()))
            .collect();
        let b: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(stream(7, Domain::Chain, 0), |r, _| Some(r.next_u64()))
            .collect();
        assert_eq!(a, b);
        assert_ne!(
            derive_seed(7, Domain::Chain, 0),
            derive_seed(7, Domain::Chain, 1)
        );
        assert_ne!(
            derive_seed(7, Domain::Chain, 0),
            derive_seed(7, Domain::Simulation, 0)
        );
        assert_ne!(
            derive_seed(7, Domain::Chain, 0),
            derive_seed(8, Domain::Chain, 0)
        );
    }
}
