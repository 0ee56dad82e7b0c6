//! Seeded random streams and discrete samplers shared by the bootstrap and
//! the simulator.
//!
//! Every independent work unit (a bootstrap replicate, a simulated
//! distribution) owns its own ChaCha stream selected by `(seed, unit)`, so
//! results do not depend on the order or thread in which units run.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

/// The random stream of work unit `unit` under the master `seed`.
pub fn unit_rng(seed: u64, unit: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(unit);
    rng
}

/// Multinomial draw of `n` trials over `probs` via sequential conditional
/// binomials. `probs` should sum to 1; the last cell takes the remainder.
pub fn multinomial<R: Rng + ?Sized>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut counts = vec![0; probs.len()];
    let mut remaining_n = n;
    let mut remaining_p = 1.0;
    for (i, &p) in probs.iter().enumerate() {
        if remaining_n == 0 {
            break;
        }
        if i + 1 == probs.len() {
            counts[i] = remaining_n;
            break;
        }
        let q = if remaining_p > 0.0 { (p / remaining_p).clamp(0.0, 1.0) } else { 0.0 };
        let k = if q >= 1.0 {
            remaining_n
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(remaining_n, q).expect("probability in (0,1)").sample(rng)
        };
        counts[i] = k;
        remaining_n -= k;
        remaining_p -= p;
    }
    counts
}
