//! Numeric kernels shared across the crate: the chi-square survival
//! function, logistic link helpers, a small dense solver, log-space
//! reductions, the type-7 sample quantile and the seeded RNG contract.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

/// Tag recorded in every stochastic output; bump when the stream layout changes.
pub const RNG_ALGORITHM: &str = "chacha8-splitmix-v1";

/// Value-semantic description of a random stream.
///
/// Identical `(seed, stream)` pairs always produce the same sequence.
/// Child streams for independent tasks are obtained with [`RngState::derive`],
/// which makes parallel work reproducible regardless of scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Stream for task `index` below this one.
    pub fn derive(&self, index: u64) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0x6a09_e667_f3bc_c909))),
            stream: index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `ln(sum(exp(xs)))` without overflow. Empty input and all `-inf` give `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `ln(mean(exp(xs)))`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NEG_INFINITY;
    }
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// Upper tail probability of the chi-square distribution with `dof` degrees of freedom.
pub fn chisq_sf(x: f64, dof: u32) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidParameter("chi-square dof must be >= 1".into()));
    }
    if x.is_nan() || x < 0.0 {
        return Err(Error::InvalidParameter(format!("chi-square statistic must be >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma_ur(dof as f64 / 2.0, x / 2.0).clamp(0.0, 1.0))
}

pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("logit requires p in (0,1), got {p}")));
    }
    Ok((p / (1.0 - p)).ln())
}

pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear_3x3(a: [[f64; 3]; 3], b: [f64; 3]) -> Result<[f64; 3]> {
    let scale = a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if scale == 0.0 || !det.is_finite() || det.abs() <= 1e-12 * scale.powi(3) {
        return Err(Error::Singular);
    }

    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            let pivot_row = m[col];
            for (v, p) in m[row].iter_mut().zip(pivot_row).skip(col) {
                *v -= f * p;
            }
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (m[row][3] - tail) / m[row][row];
    }
    Ok(x)
}

/// Type-7 sample quantile of already sorted data, `h = (n - 1) p + 1`.
///
/// Uses `(1 - h) x[lo] + h x[hi]` and skips interpolation when the two order
/// statistics coincide, which reproduces R's default `quantile()` bit for bit.
pub fn quantile_type7_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty data");
    // 1-based index as in R; `index - lo` must be formed the same way to match bits
    let index = 1.0 + (n - 1) as f64 * prob;
    let lo = index.floor();
    let hi = index.ceil();
    let (lo_i, hi_i) = (lo as usize - 1, (hi as usize - 1).min(n - 1));
    let q = sorted[lo_i];
    if index > lo && sorted[hi_i] != q {
        let h = index - lo;
        (1.0 - h) * q + h * sorted[hi_i]
    } else {
        q
    }
}
