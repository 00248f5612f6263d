//! Isotonic and bagged isotonic recalibration of probability forecasts.
//!
//! Every fitted curve is the Laplace-smoothed isotonic regression, linearly
//! interpolated between knots, so recalibrated values stay inside (0,1).
//! The smoothing can break monotonicity where small pooled blocks sit next to
//! large ones; with well-populated blocks the curves are nondecreasing.
//! Bagged curves are averaged pointwise at the evaluation forecasts and on a
//! fixed export grid.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::SampleSet;
use crate::error::{Error, Result};
use crate::isotonic::{interpolate, laplace_smooth, PooledSample, SmoothedFit};
use crate::numeric::{quantile_type7_sorted, RngState};

pub const DEFAULT_BAGS: usize = 100;
pub const EXPORT_GRID_POINTS: usize = 1001;
pub const DEFAULT_BAND: (f64, f64) = (0.01, 0.99);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecalCurve {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub band_levels: Option<(f64, f64)>,
    pub q_low: Option<Vec<f64>>,
    pub q_high: Option<Vec<f64>>,
}

impl RecalCurve {
    /// CSV with columns `p,mean,q_low,q_high`; band columns are empty for an
    /// unbagged curve.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["p", "mean", "q_low", "q_high"])?;
        for (i, (&p, &m)) in self.grid.iter().zip(&self.mean).enumerate() {
            let band = |v: &Option<Vec<f64>>| v.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
            w.write_record([p.to_string(), m.to_string(), band(&self.q_low), band(&self.q_high)])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recalibration {
    /// Recalibrated value for each evaluation forecast, in input order.
    pub values: Vec<f64>,
    pub curve: RecalCurve,
}

/// `EXPORT_GRID_POINTS` equally spaced points on [0,1].
pub fn export_grid() -> Vec<f64> {
    let m = (EXPORT_GRID_POINTS - 1) as f64;
    (0..EXPORT_GRID_POINTS).map(|k| k as f64 / m).collect()
}

fn smoothed_curve(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<SmoothedFit> {
    Ok(laplace_smooth(&PooledSample::from_pairs(pairs).fit()?))
}

fn check_probs(eval_probs: &[f64]) -> Result<()> {
    match eval_probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
        Some(i) => Err(Error::InvalidParameter(format!("evaluation forecast {} at index {i} not in [0,1]", eval_probs[i]))),
        None => Ok(()),
    }
}

pub fn isotonic_recalibrate(recal_set: &SampleSet, eval_probs: &[f64]) -> Result<Recalibration> {
    check_probs(eval_probs)?;
    let fit = smoothed_curve(recal_set.items().iter().map(|o| (o.p, o.y_f64())))?;
    let grid = export_grid();
    Ok(Recalibration {
        values: eval_probs.iter().map(|&p| interpolate(&fit, p)).collect(),
        curve: RecalCurve {
            mean: grid.iter().map(|&p| interpolate(&fit, p)).collect(),
            grid,
            band_levels: None,
            q_low: None,
            q_high: None,
        },
    })
}

/// Bootstrap-aggregated isotonic recalibration.
///
/// Bag `b` resamples the recalibration set with replacement using
/// `rng.derive(b)`. The recalibrated value is the mean over bags of the
/// per-bag curves; the band holds pointwise type-7 quantiles over bags at
/// `band_levels`, widened where needed so that it always contains the mean.
pub fn bagged_recalibrate(
    recal_set: &SampleSet,
    eval_probs: &[f64],
    n_bags: usize,
    rng: RngState,
    band_levels: (f64, f64),
) -> Result<Recalibration> {
    check_probs(eval_probs)?;
    if n_bags == 0 {
        return Err(Error::InvalidParameter("number of bags must be >= 1".into()));
    }
    let (lo_level, hi_level) = band_levels;
    if !(0.0..=1.0).contains(&lo_level) || !(0.0..=1.0).contains(&hi_level) || lo_level > hi_level {
        return Err(Error::InvalidParameter(format!("invalid band levels {band_levels:?}")));
    }
    let items = recal_set.items();
    let n = items.len();
    if n < 2 {
        return Err(Error::InvalidParameter("bagging needs at least two recalibration observations".into()));
    }
    let grid = export_grid();

    // per bag: values at the evaluation forecasts followed by the grid
    let bags: Vec<Vec<f64>> = (0..n_bags as u64)
        .into_par_iter()
        .map(|b| {
            let mut r = rng.derive(b).rng();
            let fit = smoothed_curve((0..n).map(|_| {
                let o = items[r.random_range(0..n)];
                (o.p, o.y_f64())
            }))?;
            Ok(eval_probs.iter().chain(&grid).map(|&p| interpolate(&fit, p)).collect())
        })
        .collect::<Result<_>>()?;

    let width = eval_probs.len() + grid.len();
    let mut mean = vec![0.0; width];
    for bag in &bags {
        for (m, v) in mean.iter_mut().zip(bag) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n_bags as f64;
    }

    let k = eval_probs.len();
    let mut q_low = Vec::with_capacity(grid.len());
    let mut q_high = Vec::with_capacity(grid.len());
    let mut column = vec![0.0; n_bags];
    for j in k..width {
        for (c, bag) in column.iter_mut().zip(&bags) {
            *c = bag[j];
        }
        column.sort_by(f64::total_cmp);
        q_low.push(quantile_type7_sorted(&column, lo_level).min(mean[j]));
        q_high.push(quantile_type7_sorted(&column, hi_level).max(mean[j]));
    }

    let curve_mean = mean.split_off(k);
    Ok(Recalibration {
        values: mean,
        curve: RecalCurve { grid, mean: curve_mean, band_levels: Some(band_levels), q_low: Some(q_low), q_high: Some(q_high) },
    })
}
