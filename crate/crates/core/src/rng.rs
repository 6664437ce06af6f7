//! Seeded random streams.
//!
//! Each `(seed, stream)` pair maps to an independent ChaCha8 keystream, so a
//! trial's randomness depends only on its index and never on which worker
//! thread happened to run it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::precision::{Arithmetic, PrecisionMode};

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform point of `[0, 1]^n`.
pub fn uniform_state<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Uniform number in `[0, 1)` carrying random bits down to the working
/// mantissa width, built from 52-bit chunks.
pub fn uniform_num<A: Arithmetic, R: Rng>(ar: &A, rng: &mut R) -> A::Num {
    let bits = match ar.mode() {
        PrecisionMode::F64 => 52,
        PrecisionMode::Big { bits } => bits,
    };
    let mut acc = ar.zero();
    for i in 0..bits.div_ceil(52) {
        let chunk = (rng.next_u64() >> 12) as f64;
        let term = chunk * 2f64.powi(-52 * (i as i32 + 1));
        acc = ar.add(&acc, &ar.from_f64(term));
    }
    acc
}
