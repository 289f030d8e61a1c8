//! Digitally shifted Sobol points in up to four dimensions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BITS: usize = 32;

// (degree, inner polynomial coefficients, initial direction integers) for
// dimensions 2..=4; dimension 1 is the van der Corput sequence.
const POLYS: [(usize, u32, &[u32]); 3] = [(1, 0, &[1]), (2, 1, &[1, 3]), (3, 1, &[1, 3, 1])];

pub const MAX_DIM: usize = 4;

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1u32 << (BITS - 1 - k);
        }
        return v;
    }
    let (s, a, init) = POLYS[dim - 1];
    let mut m = [0u32; BITS];
    m[..s].copy_from_slice(init);
    for k in s..BITS {
        let mut next = m[k - s] ^ (m[k - s] << s);
        for i in 1..s {
            if (a >> (s - 1 - i)) & 1 == 1 {
                next ^= m[k - i] << i;
            }
        }
        m[k] = next;
    }
    for k in 0..BITS {
        v[k] = m[k] << (BITS - 1 - k);
    }
    v
}

/// The first `n` points of a `dim`-dimensional Sobol sequence, each
/// coordinate XOR-shifted by a seeded random word. Coordinates lie strictly
/// inside (0, 1).
pub fn shifted_sobol(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!((1..=MAX_DIM).contains(&dim), "dimension must be in 1..=4");
    let directions: Vec<[u32; BITS]> = (0..dim).map(direction_numbers).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shifts: Vec<u32> = if seed == 0 {
        vec![0; dim]
    } else {
        (0..dim).map(|_| rng.random()).collect()
    };
    let scale = 1.0 / (1u64 << BITS) as f64;
    let mut state = vec![0u32; dim];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            let c = (i - 1).trailing_ones() as usize;
            for (x, v) in state.iter_mut().zip(&directions) {
                *x ^= v[c];
            }
        }
        out.push(
            state
                .iter()
                .zip(&shifts)
                .map(|(&x, &s)| ((x ^ s) as f64 + 0.5) * scale)
                .collect(),
        );
    }
    out
}
