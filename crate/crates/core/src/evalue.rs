//! E-value calibration tests.
//!
//! Under the null hypothesis `P(Y = 1 | P) = P`, the single-observation
//! likelihood ratio `q/p` (for `y = 1`) or `(1-q)/(1-p)` (for `y = 0`) has
//! expectation one for any betting probability `q` chosen without looking at
//! `y`. Every test here multiplies such ratios with `q` estimated by isotonic
//! regression on data not containing the current outcome:
//!
//! * [`sequential_evalue`]: one pass in the given order, the product over
//!   prefixes is a test martingale;
//! * [`exact_symmetrized_evalue`]: the average of the sequential e-value
//!   over all `n!` orderings, feasible only for tiny samples;
//! * [`split_evalue`]: repeated random train/holdout splits with a smoothed,
//!   interpolated isotonic fit, averaged over splits.
//!
//! All products are accumulated in log space and averages use log-sum-exp.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{split_indices, train_size, Observation, SampleSet};
use crate::error::{Error, Result};
use crate::isotonic::{interpolate, laplace_smooth, PooledSample};
use crate::numeric::{log_mean_exp, log_sum_exp, RngState};
use crate::serde_ext;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_SPLIT_FRACTION: f64 = 0.5;
/// Splits for analysing a single data set.
pub const DEFAULT_SPLITS: usize = 10_000;
/// Splits per replication inside Monte Carlo studies.
pub const DEFAULT_SIMULATION_SPLITS: usize = 10;
pub const DEFAULT_EXACT_CAP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Sequential,
    Exact,
    Split,
    Oracle,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Sequential => "sequential",
            Variant::Exact => "exact",
            Variant::Split => "split",
            Variant::Oracle => "oracle",
        })
    }
}

/// Settings shared by all test variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOptions {
    /// Rejection when `e > 1 / alpha`.
    pub alpha: f64,
    /// Treat forecasts of exactly 0 or 1 with the limiting likelihood ratio
    /// (possibly `+inf`) instead of returning an error.
    pub allow_boundary: bool,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, allow_boundary: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EValueReport {
    #[serde(with = "serde_ext::f64_ext")]
    pub e_value: f64,
    #[serde(with = "serde_ext::f64_ext")]
    pub log_e: f64,
    pub implied_p: f64,
    pub reject_at_20: bool,
    pub alpha: f64,
    /// `e_value > 1 / alpha`.
    pub reject: bool,
    pub variant: Variant,
    pub n: usize,
    pub s: Option<f64>,
    #[serde(rename = "B")]
    pub b: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "serde_ext::opt_vec_f64_ext")]
    pub per_split_log_e: Option<Vec<f64>>,
    /// Running e-process `E_1, ..., E_n` of the sequential test.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "serde_ext::opt_vec_f64_ext")]
    pub path: Option<Vec<f64>>,
    /// Betting probabilities `q_i` of the sequential test.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "serde_ext::opt_vec_f64_ext")]
    pub q: Option<Vec<f64>>,
}

impl EValueReport {
    fn from_log_e(log_e: f64, variant: Variant, n: usize, alpha: f64) -> Self {
        let e_value = log_e.exp();
        let implied_p = evalue_to_pvalue(e_value).unwrap_or(f64::NAN);
        Self {
            e_value,
            log_e,
            implied_p,
            reject_at_20: e_value > 20.0,
            alpha,
            reject: e_value > 1.0 / alpha,
            variant,
            n,
            s: None,
            b: None,
            seed: None,
            per_split_log_e: None,
            path: None,
            q: None,
        }
    }
}

/// Conservative p-value `min(1, 1/e)` implied by Markov's inequality.
pub fn evalue_to_pvalue(e: f64) -> Result<f64> {
    if e.is_nan() || e < 0.0 {
        return Err(Error::InvalidParameter(format!("e-value must be >= 0, got {e}")));
    }
    if e == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 / e).min(1.0))
}

/// Single-observation e-value `q/p` for `y = 1` and `(1-q)/(1-p)` for `y = 0`.
pub fn eq_single(p: f64, y: bool, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!("q = {q} not in [0,1]")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::BoundaryForecast { index: 0, p });
    }
    Ok(if y { q / p } else { (1.0 - q) / (1.0 - p) })
}

/// `ln` of [`eq_single`]. Boundary forecasts get the limiting ratio; equal
/// zero likelihoods under both `p` and `q` count as a ratio of one.
#[inline]
pub(crate) fn log_eq(p: f64, y: bool, q: f64) -> f64 {
    let (num, den) = if y { (q, p) } else { (1.0 - q, 1.0 - p) };
    if den == 0.0 {
        return if num > 0.0 { f64::INFINITY } else { 0.0 };
    }
    (num / den).ln()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(())
}

fn check_boundary(samples: &SampleSet, opts: &TestOptions) -> Result<()> {
    check_alpha(opts.alpha)?;
    if opts.allow_boundary {
        Ok(())
    } else {
        samples.ensure_interior()
    }
}

pub fn sequential_evalue(samples: &SampleSet) -> Result<EValueReport> {
    sequential_evalue_with(samples, &TestOptions::default())
}

/// Product of single-observation e-values in the stored order, each `q_i`
/// being the out-of-sample isotonic prediction from observations `1..i`.
pub fn sequential_evalue_with(samples: &SampleSet, opts: &TestOptions) -> Result<EValueReport> {
    check_boundary(samples, opts)?;
    let n = samples.len();
    let mut pooled = PooledSample::new();
    let mut path = Vec::with_capacity(n);
    let mut qs = Vec::with_capacity(n);
    let mut log_e = 0.0;
    for o in samples.items() {
        let q = pooled.oos_predict(o.p);
        log_e += log_eq(o.p, o.y, q);
        path.push(log_e.exp());
        qs.push(q);
        pooled.insert(o.p, o.y_f64());
    }
    let mut report = EValueReport::from_log_e(log_e, Variant::Sequential, n, opts.alpha);
    report.path = Some(path);
    report.q = Some(qs);
    Ok(report)
}

pub fn exact_symmetrized_evalue(samples: &SampleSet, n_max: usize) -> Result<EValueReport> {
    exact_symmetrized_evalue_with(samples, n_max, &TestOptions::default())
}

/// Average of the sequential e-value over all orderings of the sample.
///
/// Orderings are enumerated depth first so that prefixes are shared; the
/// per-ordering log e-values are combined with log-sum-exp in lexicographic
/// order of the permutations.
pub fn exact_symmetrized_evalue_with(samples: &SampleSet, n_max: usize, opts: &TestOptions) -> Result<EValueReport> {
    let n = samples.len();
    if n > n_max {
        return Err(Error::ExactTooLarge { n, cap: n_max });
    }
    check_boundary(samples, opts)?;
    let items = samples.items();

    let per_first: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|first| {
            let mut used = vec![false; n];
            let mut pooled = PooledSample::new();
            let mut leaves = Vec::new();
            let o = items[first];
            used[first] = true;
            pooled.insert(o.p, o.y_f64());
            enumerate(items, &mut pooled, &mut used, 1, log_eq(o.p, o.y, 0.5), &mut leaves);
            leaves
        })
        .collect();
    let leaves: Vec<f64> = per_first.into_iter().flatten().collect();
    let ln_factorial: f64 = (2..=n).map(|k| (k as f64).ln()).sum();
    let log_e = log_sum_exp(&leaves) - ln_factorial;
    Ok(EValueReport::from_log_e(log_e, Variant::Exact, n, opts.alpha))
}

fn enumerate(
    items: &[Observation],
    pooled: &mut PooledSample,
    used: &mut [bool],
    depth: usize,
    acc: f64,
    leaves: &mut Vec<f64>,
) {
    if depth == items.len() {
        leaves.push(acc);
        return;
    }
    for j in 0..items.len() {
        if used[j] {
            continue;
        }
        let o = items[j];
        let q = pooled.oos_predict(o.p);
        used[j] = true;
        pooled.insert(o.p, o.y_f64());
        enumerate(items, pooled, used, depth + 1, acc + log_eq(o.p, o.y, q), leaves);
        pooled.remove(o.p, o.y_f64());
        used[j] = false;
    }
}

/// Log e-value of every split; split `b` draws its indices from `rng.derive(b)`.
fn split_log_evalues<F>(n: usize, s: f64, splits: usize, rng: RngState, per_split: F) -> Result<Vec<f64>>
where
    F: Fn(&[usize], &[usize]) -> f64 + Sync,
{
    if splits == 0 {
        return Err(Error::InvalidParameter("number of splits must be >= 1".into()));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidParameter(format!("split fraction must lie in (0,1), got {s}")));
    }
    let k = train_size(n, s);
    if n < 2 || k == 0 || k >= n {
        return Err(Error::DegenerateSplit { n, s });
    }
    (0..splits as u64)
        .into_par_iter()
        .map(|b| {
            let mut r = rng.derive(b).rng();
            let (train, holdout) = split_indices(n, s, &mut r)?;
            Ok(per_split(&train, &holdout))
        })
        .collect()
}

/// Log e-value of one split: isotonic fit on `train`, Laplace smoothing,
/// interpolation at the holdout forecasts.
pub fn split_log_evalue(items: &[Observation], train: &[usize], holdout: &[usize]) -> f64 {
    let pooled = PooledSample::from_pairs(train.iter().map(|&i| (items[i].p, items[i].y_f64())));
    let fit = pooled.fit().expect("training side is nonempty");
    let smooth = laplace_smooth(&fit);
    holdout
        .iter()
        .map(|&i| {
            let o = items[i];
            log_eq(o.p, o.y, interpolate(&smooth, o.p))
        })
        .sum()
}

pub fn split_evalue(samples: &SampleSet, s: f64, splits: usize, rng: RngState) -> Result<EValueReport> {
    split_evalue_with(samples, s, splits, rng, &TestOptions::default())
}

/// Split likelihood-ratio e-value averaged over `splits` random splits.
pub fn split_evalue_with(
    samples: &SampleSet,
    s: f64,
    splits: usize,
    rng: RngState,
    opts: &TestOptions,
) -> Result<EValueReport> {
    check_boundary(samples, opts)?;
    let items = samples.items();
    let logs = split_log_evalues(samples.len(), s, splits, rng, |train, holdout| {
        split_log_evalue(items, train, holdout)
    })?;
    Ok(split_report(logs, Variant::Split, samples.len(), s, splits, rng, opts.alpha))
}

/// Split e-value with the betting probabilities fixed to known true event
/// probabilities `pi_bar`; the training side is drawn but unused, keeping the
/// holdout structure of [`split_evalue`] for like-for-like comparison.
pub fn oracle_split_evalue(
    samples: &SampleSet,
    pi_bar: &[f64],
    s: f64,
    splits: usize,
    rng: RngState,
    opts: &TestOptions,
) -> Result<EValueReport> {
    if pi_bar.len() != samples.len() {
        return Err(Error::InvalidParameter("pi_bar length differs from sample length".into()));
    }
    check_boundary(samples, opts)?;
    let items = samples.items();
    let logs = split_log_evalues(samples.len(), s, splits, rng, |_, holdout| {
        holdout.iter().map(|&i| log_eq(items[i].p, items[i].y, pi_bar[i])).sum()
    })?;
    Ok(split_report(logs, Variant::Oracle, samples.len(), s, splits, rng, opts.alpha))
}

fn split_report(logs: Vec<f64>, variant: Variant, n: usize, s: f64, splits: usize, rng: RngState, alpha: f64) -> EValueReport {
    let mut report = EValueReport::from_log_e(log_mean_exp(&logs), variant, n, alpha);
    report.s = Some(s);
    report.b = Some(splits);
    report.seed = Some(rng.seed);
    report.per_split_log_e = Some(logs);
    report
}
