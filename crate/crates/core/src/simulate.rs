//! Monte Carlo size and power studies.
//!
//! Covariates are uniform on (-3, 3) and the true event probability is a
//! logistic transform of a quadratic in the covariate. The quadratic is pinned
//! down by three probabilities: `pi(-3) = j + 0.00733745`, `pi(-1.5) = 0.05`
//! and `pi(3) = 0.95`, so `j = 0` gives an (almost exactly) linear logit and
//! larger `j` a growing quadratic misspecification. Forecasts come from a
//! linear logistic regression fitted on an estimation half of the data and
//! are tested on the other half.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{LabeledSampleSet, Observation, SampleSet};
use crate::error::{Error, Result};
use crate::evalue::{oracle_split_evalue, split_evalue_with, TestOptions};
use crate::hl_classic::{hl_test, BinningMethod, DofMode};
use crate::numeric::{expit, logit, solve_linear_3x3, RngState, RNG_ALGORITHM};
use crate::serde_ext;

/// Offset making `j = 0` correspond to a linear logit.
pub const LINEARITY_OFFSET: f64 = 0.00733745;
pub const ANCHOR_X: [f64; 3] = [-3.0, -1.5, 3.0];
pub const COVARIATE_RANGE: (f64, f64) = (-3.0, 3.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticModel {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub j: f64,
}

impl QuadraticModel {
    pub fn linear_predictor(&self, x: f64) -> f64 {
        self.beta0 + self.beta1 * x + self.beta2 * x * x
    }

    /// True event probability at covariate `x`.
    pub fn pi_bar(&self, x: f64) -> f64 {
        expit(self.linear_predictor(x))
    }
}

/// Solves for the quadratic logit passing through the three anchor probabilities.
pub fn solve_quadratic_betas(j: f64) -> Result<QuadraticModel> {
    let targets = [j + LINEARITY_OFFSET, 0.05, 0.95];
    if !(targets[0] > 0.0 && targets[0] < 1.0) {
        return Err(Error::InvalidParameter(format!("j = {j} puts pi(-3) = {} outside (0,1)", targets[0])));
    }
    let a = ANCHOR_X.map(|x| [1.0, x, x * x]);
    let b = [logit(targets[0])?, logit(targets[1])?, logit(targets[2])?];
    let [beta0, beta1, beta2] = solve_linear_3x3(a, b)?;
    Ok(QuadraticModel { beta0, beta1, beta2, j })
}

/// Draws `n` covariates, true probabilities and outcomes.
///
/// The forecasts of the returned set are the true probabilities; replace
/// them with [`LabeledSampleSet::with_forecasts`] once a prediction rule is fitted.
pub fn generate_data<R: Rng + ?Sized>(n: usize, model: &QuadraticModel, rng: &mut R) -> Result<LabeledSampleSet> {
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let (lo, hi) = COVARIATE_RANGE;
    let mut x = Vec::with_capacity(n);
    let mut pi = Vec::with_capacity(n);
    let mut items = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = rng.random_range(lo..hi);
        let p = model.pi_bar(xi);
        let y = rng.random::<f64>() < p;
        x.push(xi);
        pi.push(p);
        items.push(Observation::new(p, y));
    }
    LabeledSampleSet::new(SampleSet::new(items)?, Some(x), Some(pi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub beta0: f64,
    pub beta1: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl LogisticFit {
    pub fn predict(&self, x: f64) -> f64 {
        expit(self.beta0 + self.beta1 * x)
    }
}

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_TOL: f64 = 1e-8;
/// Linear predictors beyond this size mean fitted probabilities of 0 or 1.
const SEPARATION_LOGIT: f64 = 30.0;

fn log_likelihood(x: &[f64], y: &[bool], b0: f64, b1: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let z = b0 + b1 * xi;
            // log(1 + e^z) computed stably
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            if yi {
                z - softplus
            } else {
                -softplus
            }
        })
        .sum()
}

/// Maximum-likelihood fit of `logit(pi) = beta0 + beta1 x` by damped Newton steps.
pub fn fit_logistic(x: &[f64], y: &[bool]) -> Result<LogisticFit> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameter("covariate and outcome lengths differ".into()));
    }
    if x.len() < 2 || y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::InvalidParameter("logistic fit needs at least two observations from both classes".into()));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::Singular);
    }
    let (mut b0, mut b1) = (0.0, 0.0);
    let mut ll = log_likelihood(x, y, b0, b1);
    for it in 0..NEWTON_MAX_ITER {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let p = expit(b0 + b1 * xi);
            let r = if yi { 1.0 - p } else { -p };
            let w = p * (1.0 - p);
            g0 += r;
            g1 += r * xi;
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
        }
        let gnorm = g0.hypot(g1);
        if gnorm < NEWTON_TOL {
            let zmax = x.iter().map(|&xi| (b0 + b1 * xi).abs()).fold(0.0, f64::max);
            if zmax > SEPARATION_LOGIT {
                return Err(Error::Separation);
            }
            return Ok(LogisticFit { beta0: b0, beta1: b1, iterations: it, gradient_norm: gnorm });
        }
        let det = h00 * h11 - h01 * h01;
        let scale = h00.max(h11).max(h01.abs());
        if det.is_nan() || det <= 1e-12 * scale * scale {
            return if scale < 1e-300 || b0.abs().max(b1.abs()) > SEPARATION_LOGIT {
                Err(Error::Separation)
            } else {
                Err(Error::Singular)
            };
        }
        let d0 = (h11 * g0 - h01 * g1) / det;
        let d1 = (h00 * g1 - h01 * g0) / det;
        let mut step = 1.0;
        loop {
            let (n0, n1) = (b0 + step * d0, b1 + step * d1);
            let nll = log_likelihood(x, y, n0, n1);
            // near the optimum the exact step can lose a few ulps of likelihood
            if nll >= ll - 1e-12 * (1.0 + ll.abs()) || step < 1e-10 {
                b0 = n0;
                b1 = n1;
                ll = nll;
                break;
            }
            step *= 0.5;
        }
    }
    let gradient_norm = {
        let (mut g0, mut g1) = (0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let r = if yi { 1.0 } else { 0.0 } - expit(b0 + b1 * xi);
            g0 += r;
            g1 += r * xi;
        }
        g0.hypot(g1)
    };
    Err(Error::NotConverged { iterations: NEWTON_MAX_ITER, gradient_norm })
}

/// [`fit_logistic`] on the covariate column of a labeled set.
pub fn fit_logistic_linear(estimation: &LabeledSampleSet) -> Result<LogisticFit> {
    let x = estimation
        .x
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("estimation set has no covariate column".into()))?;
    let y: Vec<bool> = estimation.samples.items().iter().map(|o| o.y).collect();
    fit_logistic(x, &y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyVariant {
    /// Classical HL test.
    Hl,
    /// Feasible split e-value.
    Ehl,
    /// Split e-value betting on the true probabilities.
    Oracle,
}

impl StudyVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            StudyVariant::Hl => "hl",
            StudyVariant::Ehl => "ehl",
            StudyVariant::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for StudyVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hl" => Ok(StudyVariant::Hl),
            "ehl" => Ok(StudyVariant::Ehl),
            "oracle" => Ok(StudyVariant::Oracle),
            other => Err(Error::InvalidParameter(format!("unknown study variant `{other}` (expected hl, ehl or oracle)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerStudyConfig {
    pub j: Vec<f64>,
    /// Validation sizes; each replication simulates `2 n` observations.
    pub n: Vec<usize>,
    pub s: Vec<f64>,
    pub variants: Vec<StudyVariant>,
    pub reps: usize,
    #[serde(rename = "B")]
    pub splits: usize,
    pub seed: u64,
    pub hl_bins: usize,
    pub hl_method: BinningMethod,
    pub hl_dof: DofMode,
    pub alpha: f64,
}

impl Default for PowerStudyConfig {
    fn default() -> Self {
        Self {
            j: vec![0.0],
            n: vec![1024, 2048, 4096, 8192],
            s: vec![1.0 / 3.0, 0.5, 2.0 / 3.0],
            variants: vec![StudyVariant::Hl, StudyVariant::Ehl],
            reps: 1000,
            splits: crate::evalue::DEFAULT_SIMULATION_SPLITS,
            seed: 1,
            hl_bins: 10,
            hl_method: BinningMethod::QR,
            hl_dof: DofMode::OutOfSample,
            alpha: crate::evalue::DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCell {
    pub j: f64,
    pub n: usize,
    pub s: Option<f64>,
    pub variant: StudyVariant,
    /// Replications that produced a test result.
    pub rep_count: usize,
    pub failures: usize,
    pub reject_rate: f64,
    #[serde(with = "serde_ext::opt_f64_ext")]
    pub mean_log_e: Option<f64>,
    #[serde(with = "serde_ext::opt_f64_ext")]
    pub se_log_e: Option<f64>,
    /// `mean_log_e / n`, the per-observation growth rate.
    #[serde(with = "serde_ext::opt_f64_ext")]
    pub growth_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerStudyReport {
    pub config: PowerStudyConfig,
    pub rng_algorithm: String,
    pub cells: Vec<PowerCell>,
}

impl PowerStudyReport {
    pub fn cell(&self, j: f64, n: usize, s: Option<f64>, variant: StudyVariant) -> Option<&PowerCell> {
        self.cells.iter().find(|c| c.j == j && c.n == n && c.s == s && c.variant == variant)
    }

    /// Long format, one row per cell: `j,n,s,variant,rep_count,reject_rate,mean_log_e`.
    pub fn write_csv<W: std::io::Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["j", "n", "s", "variant", "rep_count", "reject_rate", "mean_log_e"])?;
        for c in &self.cells {
            w.write_record([
                c.j.to_string(),
                c.n.to_string(),
                c.s.map(|s| s.to_string()).unwrap_or_default(),
                c.variant.as_str().to_string(),
                c.rep_count.to_string(),
                c.reject_rate.to_string(),
                c.mean_log_e.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One evaluated test inside a replication.
#[derive(Debug, Clone, Copy)]
struct Slot {
    variant: StudyVariant,
    s_index: Option<usize>,
}

type SlotResult = Option<(bool, Option<f64>)>;

fn check_config(cfg: &PowerStudyConfig) -> Result<()> {
    if cfg.j.is_empty() || cfg.n.is_empty() || cfg.variants.is_empty() {
        return Err(Error::InvalidParameter("j, n and variant grids must be nonempty".into()));
    }
    let needs_s = cfg.variants.iter().any(|v| *v != StudyVariant::Hl);
    if needs_s && cfg.s.is_empty() {
        return Err(Error::InvalidParameter("split fraction grid must be nonempty for e-value variants".into()));
    }
    if cfg.reps == 0 || cfg.splits == 0 {
        return Err(Error::InvalidParameter("reps and B must be >= 1".into()));
    }
    if let Some(&n) = cfg.n.iter().find(|&&n| n < 2) {
        return Err(Error::InvalidParameter(format!("validation size n = {n} is too small")));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0,1), got {}", cfg.alpha)));
    }
    Ok(())
}

/// Runs every `(j, n)` cell for `reps` replications.
///
/// Replication `r` of cell `c` (cells ordered j-major) uses the stream
/// `RngState::new(seed).derive(c).derive(r)`: sub-stream 0 simulates the
/// data and sub-stream `1 + k` seeds the splits at the `k`-th split fraction,
/// shared by the feasible and oracle e-values. All variants see the same
/// data within a replication. At `j = 0` forecasts use the generating
/// coefficients; otherwise they come from a linear logistic fit on the
/// estimation half.
pub fn run_power_study(cfg: &PowerStudyConfig) -> Result<PowerStudyReport> {
    check_config(cfg)?;
    let mut slots = Vec::new();
    for &v in &cfg.variants {
        match v {
            StudyVariant::Hl => slots.push(Slot { variant: v, s_index: None }),
            _ => slots.extend((0..cfg.s.len()).map(|k| Slot { variant: v, s_index: Some(k) })),
        }
    }
    let master = RngState::new(cfg.seed);
    let opts = TestOptions { alpha: cfg.alpha, allow_boundary: false };

    let mut cells = Vec::new();
    for (ji, &j) in cfg.j.iter().enumerate() {
        let model = solve_quadratic_betas(j)?;
        for (ni, &n) in cfg.n.iter().enumerate() {
            let cell_state = master.derive((ji * cfg.n.len() + ni) as u64);
            let outcomes: Vec<Vec<SlotResult>> = (0..cfg.reps as u64)
                .into_par_iter()
                .map(|r| run_replication(cfg, &model, n, cell_state.derive(r), &slots, &opts))
                .collect();
            for (k, slot) in slots.iter().enumerate() {
                cells.push(aggregate(j, n, slot, cfg, outcomes.iter().map(|o| o[k])));
            }
        }
    }
    Ok(PowerStudyReport { config: cfg.clone(), rng_algorithm: RNG_ALGORITHM.to_string(), cells })
}

fn run_replication(
    cfg: &PowerStudyConfig,
    model: &QuadraticModel,
    n: usize,
    state: RngState,
    slots: &[Slot],
    opts: &TestOptions,
) -> Vec<SlotResult> {
    let Ok(data) = generate_data(2 * n, model, &mut state.derive(0).rng()) else {
        return vec![None; slots.len()];
    };
    let estimation: Vec<usize> = (0..n).collect();
    let validation_idx: Vec<usize> = (n..2 * n).collect();
    let (b0, b1) = if model.j == 0.0 {
        (model.beta0, model.beta1)
    } else {
        match data.select(&estimation).and_then(|e| fit_logistic_linear(&e)) {
            Ok(fit) => (fit.beta0, fit.beta1),
            Err(_) => return vec![None; slots.len()],
        }
    };
    let Ok(validation) = data.select(&validation_idx) else {
        return vec![None; slots.len()];
    };
    let x = validation.x.as_ref().expect("simulated data has covariates");
    let p: Vec<f64> = x.iter().map(|&xi| expit(b0 + b1 * xi)).collect();
    let Ok(validation) = validation.with_forecasts(&p) else {
        return vec![None; slots.len()];
    };
    let pi_bar = validation.pi_bar.as_ref().expect("simulated data has true probabilities");
    let samples = &validation.samples;

    slots
        .iter()
        .map(|slot| match (slot.variant, slot.s_index) {
            (StudyVariant::Hl, _) => hl_test(samples, cfg.hl_method, cfg.hl_bins, cfg.hl_dof)
                .ok()
                .and_then(|r| r.p_value)
                .map(|p| (p < cfg.alpha, None)),
            (variant, Some(k)) => {
                let split_state = state.derive(1 + k as u64);
                let report = if variant == StudyVariant::Ehl {
                    split_evalue_with(samples, cfg.s[k], cfg.splits, split_state, opts)
                } else {
                    oracle_split_evalue(samples, pi_bar, cfg.s[k], cfg.splits, split_state, opts)
                };
                report.ok().map(|r| (r.reject, Some(r.log_e)))
            }
            (_, None) => unreachable!("e-value slots carry a split fraction"),
        })
        .collect()
}

fn aggregate(
    j: f64,
    n: usize,
    slot: &Slot,
    cfg: &PowerStudyConfig,
    results: impl Iterator<Item = SlotResult>,
) -> PowerCell {
    let mut rep_count = 0;
    let mut failures = 0;
    let mut rejections = 0;
    let mut logs = Vec::new();
    for r in results {
        match r {
            Some((reject, log_e)) => {
                rep_count += 1;
                rejections += usize::from(reject);
                logs.extend(log_e);
            }
            None => failures += 1,
        }
    }
    let (mean_log_e, se_log_e) = if logs.is_empty() {
        (None, None)
    } else {
        let m = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / m;
        let var = if logs.len() > 1 { logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
        (Some(mean), Some((var / m).sqrt()))
    };
    PowerCell {
        j,
        n,
        s: slot.s_index.map(|k| cfg.s[k]),
        variant: slot.variant,
        rep_count,
        failures,
        reject_rate: if rep_count > 0 { rejections as f64 / rep_count as f64 } else { 0.0 },
        mean_log_e,
        se_log_e,
        growth_rate: mean_log_e.map(|m| m / n as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn linear_at_zero() {
        let m = solve_quadratic_betas(0.0).unwrap();
        assert!(m.beta2.abs() < 1e-6, "beta2 = {}", m.beta2);
        assert_abs_diff_eq!(m.beta1, 1.30864, epsilon = 1e-5);
        assert_abs_diff_eq!(m.beta0, -0.98148, epsilon = 1e-5);
    }

    #[test]
    fn anchors_reproduced() {
        for &j in &[0.0, 0.01, 0.0427, 0.07, 0.1] {
            let m = solve_quadratic_betas(j).unwrap();
            assert_abs_diff_eq!(m.pi_bar(-3.0), j + LINEARITY_OFFSET, epsilon = 1e-10);
            assert_abs_diff_eq!(m.pi_bar(-1.5), 0.05, epsilon = 1e-10);
            assert_abs_diff_eq!(m.pi_bar(3.0), 0.95, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(solve_quadratic_betas(0.0427).unwrap().pi_bar(-3.0), 0.05, epsilon = 1e-3);
        assert!(solve_quadratic_betas(-0.01).is_err());
        assert!(solve_quadratic_betas(1.0).is_err());
    }

    #[test]
    fn generated_data_reproducible() {
        let m = solve_quadratic_betas(0.05).unwrap();
        let a = generate_data(500, &m, &mut RngState::new(4).rng()).unwrap();
        let b = generate_data(500, &m, &mut RngState::new(4).rng()).unwrap();
        assert_eq!(a, b);
        let x = a.x.as_ref().unwrap();
        let pi = a.pi_bar.as_ref().unwrap();
        assert!(x.iter().all(|&v| (-3.0..3.0).contains(&v)));
        assert!(pi.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(a.samples.forecasts(), *pi);
    }

    #[test]
    fn symmetric_toy_fit_is_zero() {
        let fit = fit_logistic(&[-1.0, -1.0, 1.0, 1.0], &[false, true, false, true]).unwrap();
        assert!(fit.beta0.abs() < 1e-12 && fit.beta1.abs() < 1e-12);
        assert!(fit.gradient_norm < 1e-8);
    }

    #[test]
    fn degenerate_fits_error() {
        assert!(matches!(fit_logistic(&[0.0; 4], &[false, true, false, true]), Err(Error::Singular)));
        let sep = fit_logistic(&[-2.0, -1.0, 1.0, 2.0], &[false, false, true, true]);
        assert!(matches!(sep, Err(Error::Separation) | Err(Error::NotConverged { .. })), "{sep:?}");
        assert!(fit_logistic(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn fits_converge_on_simulated_data() {
        for &j in &[0.0, 0.05, 0.1] {
            let m = solve_quadratic_betas(j).unwrap();
            for r in 0..40 {
                let d = generate_data(150 + 50 * r as usize, &m, &mut RngState::new(r).rng()).unwrap();
                let fit = fit_logistic_linear(&d).unwrap();
                assert!(fit.gradient_norm < NEWTON_TOL);
            }
        }
    }

    #[test]
    fn fit_matches_likelihood_grid() {
        let x = [-2.0, -1.0, -0.5, 0.0, 0.3, 1.0, 1.5, 2.5];
        let y = [false, false, true, false, true, false, true, true];
        let fit = fit_logistic(&x, &y).unwrap();
        let best = log_likelihood(&x, &y, fit.beta0, fit.beta1);
        for i in -20..=20 {
            for k in -20..=20 {
                let ll = log_likelihood(&x, &y, fit.beta0 + i as f64 * 0.01, fit.beta1 + k as f64 * 0.01);
                assert!(ll <= best + 1e-12);
            }
        }
    }

    #[test]
    fn small_study_shape_and_determinism() {
        let cfg = PowerStudyConfig {
            j: vec![0.0, 0.1],
            n: vec![200],
            s: vec![0.5],
            variants: vec![StudyVariant::Hl, StudyVariant::Ehl, StudyVariant::Oracle],
            reps: 20,
            splits: 3,
            seed: 9,
            ..PowerStudyConfig::default()
        };
        let a = run_power_study(&cfg).unwrap();
        assert_eq!(a.cells.len(), 6);
        assert!(a.cells.iter().all(|c| (0.0..=1.0).contains(&c.reject_rate) && c.rep_count + c.failures == 20));
        assert!(a.cell(0.0, 200, None, StudyVariant::Hl).unwrap().mean_log_e.is_none());
        assert!(a.cell(0.1, 200, Some(0.5), StudyVariant::Oracle).unwrap().mean_log_e.is_some());
        let b = run_power_study(&cfg).unwrap();
        assert_eq!(a, b);
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("j,n,s,variant,rep_count,reject_rate,mean_log_e\n0,200,,hl,20,"));
    }

    #[test]
    fn study_rejects_empty_grids() {
        let cfg = PowerStudyConfig { j: vec![], ..PowerStudyConfig::default() };
        assert!(run_power_study(&cfg).is_err());
    }
}
