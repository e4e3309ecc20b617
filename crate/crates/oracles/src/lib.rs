//! Independent reference implementations used by the flashpim test suites.
//! Nothing here calls into flashpim itself.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Plain integer matrix-vector product, `y[j] = sum_i x[i] * w[i][j]`.
pub fn mvm_oracle(w: ArrayView2<'_, u8>, x: &[u8]) -> Vec<i64> {
    let (m, n) = w.dim();
    assert_eq!(m, x.len());
    let mut y = vec![0i64; n];
    for i in 0..m {
        for j in 0..n {
            y[j] += x[i] as i64 * w[[i, j]] as i64;
        }
    }
    y
}

pub fn random_u8_matrix(r: &mut impl Rng, rows: usize, cols: usize) -> Array2<u8> {
    Array2::from_shape_fn((rows, cols), |_| r.gen())
}

pub fn random_u8_vec(r: &mut impl Rng, len: usize) -> Vec<u8> {
    (0..len).map(|_| r.gen()).collect()
}

/// Brute-force plan count: every (method, count) per level, counts of 1 only
/// for N, kept when the row and column products hit the tile grid.
pub fn plan_count_oracle(rows: u32, cols: u32, caps: [u32; 4]) -> u64 {
    fn walk(level: usize, caps: &[u32; 4], rp: u64, cp: u64, rows: u64, cols: u64) -> u64 {
        if rp > rows || cp > cols {
            return 0;
        }
        if level == 4 {
            return u64::from(rp == rows && cp == cols);
        }
        let mut total = walk(level + 1, caps, rp, cp, rows, cols);
        for c in 2..=caps[level] as u64 {
            total += walk(level + 1, caps, rp * c, cp, rows, cols);
            total += walk(level + 1, caps, rp, cp * c, rows, cols);
        }
        total
    }
    walk(0, &caps, 1, 1, rows as u64, cols as u64)
}

/// Horowitz-free plane density from first principles, Gb/mm^2 with Gb = 2^30.
pub fn density_oracle(n_row: f64, n_col: f64, n_stack: f64, bits: f64, l_cell: f64, l_stair: f64, w_row: f64) -> f64 {
    let bits_total = n_row * n_col * n_stack * bits;
    let area_m2 = (n_col * l_cell + n_stack * l_stair) * (n_row * w_row);
    bits_total / area_m2 / 1e6 / 1073741824.0
}
