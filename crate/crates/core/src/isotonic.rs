//! Isotonic regression of binary outcomes on forecasts.
//!
//! The pool-adjacent-violators algorithm here works on weighted points with
//! distinct abscissae; observations that share a forecast value are merged
//! into one point first. For 0/1 outcomes the least-squares isotonic fit is
//! also the maximizer of the isotonic log-likelihood ratio against the
//! forecasts, so a single routine serves both views.

use crate::data_model::SampleSet;
use crate::error::{Error, Result};

/// A forecast value together with the outcomes pooled at it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub sum: f64,
    pub count: f64,
}

/// A maximal run of knots sharing one fitted value, `knots[start..end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub start: usize,
    pub end: usize,
    pub sum: f64,
    pub count: f64,
}

impl Block {
    pub fn mean(&self) -> f64 {
        self.sum / self.count
    }
}

/// Fitted monotone step function on the distinct forecast values.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotonicFit {
    knots: Vec<f64>,
    values: Vec<f64>,
    knot_counts: Vec<f64>,
    knot_sums: Vec<f64>,
    blocks: Vec<Block>,
}

impl IsotonicFit {
    /// Strictly increasing distinct forecast values.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Nondecreasing fitted values, one per knot.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of observations at each knot.
    pub fn knot_counts(&self) -> &[f64] {
        &self.knot_counts
    }

    /// Sum of outcomes at each knot.
    pub fn knot_sums(&self) -> &[f64] {
        &self.knot_sums
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Fitted value at a forecast equal to one of the knots.
    pub fn value_at_knot(&self, p: f64) -> Option<f64> {
        self.knots.binary_search_by(|k| k.total_cmp(&p)).ok().map(|i| self.values[i])
    }

    /// Fitted values for every observation of `samples`, which must only
    /// contain forecasts present among the knots.
    pub fn fitted_values(&self, samples: &SampleSet) -> Option<Vec<f64>> {
        samples.items().iter().map(|o| self.value_at_knot(o.p)).collect()
    }

    fn from_points(points: &[Point]) -> Self {
        let blocks = pava(points);
        let mut values = vec![0.0; points.len()];
        for b in &blocks {
            let m = b.mean();
            values[b.start..b.end].fill(m);
        }
        Self {
            knots: points.iter().map(|p| p.x).collect(),
            values,
            knot_counts: points.iter().map(|p| p.count).collect(),
            knot_sums: points.iter().map(|p| p.sum).collect(),
            blocks,
        }
    }
}

/// Pools adjacent violators over points sorted by strictly increasing `x`.
///
/// Neighbouring blocks with equal means are pooled too, so the returned
/// blocks are the maximal level sets of the fit.
///
/// Block means are compared by cross-multiplication, which is exact for the
/// integer counts and sums produced by binary outcomes.
pub fn pava(points: &[Point]) -> Vec<Block> {
    let mut stack: Vec<Block> = Vec::with_capacity(points.len());
    for (i, pt) in points.iter().enumerate() {
        let mut cur = Block { start: i, end: i + 1, sum: pt.sum, count: pt.count };
        while let Some(prev) = stack.last() {
            if prev.sum * cur.count >= cur.sum * prev.count {
                cur = Block { start: prev.start, end: cur.end, sum: prev.sum + cur.sum, count: prev.count + cur.count };
                stack.pop();
            } else {
                break;
            }
        }
        stack.push(cur);
    }
    stack
}

/// Forecasts and outcomes kept sorted by forecast, ties merged.
///
/// Supports insertion and removal so that prefix fits can be updated in
/// linear time while walking through a sequence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PooledSample {
    points: Vec<Point>,
}

impl PooledSample {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut pairs: Vec<(f64, f64)> = pairs.into_iter().collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut points: Vec<Point> = Vec::with_capacity(pairs.len());
        for (x, y) in pairs {
            match points.last_mut() {
                Some(last) if last.x == x => {
                    last.sum += y;
                    last.count += 1.0;
                }
                _ => points.push(Point { x, sum: y, count: 1.0 }),
            }
        }
        Self { points }
    }

    pub fn from_samples(samples: &SampleSet) -> Self {
        Self::from_pairs(samples.items().iter().map(|o| (o.p, o.y_f64())))
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Total number of observations.
    pub fn len(&self) -> usize {
        self.points.iter().map(|p| p.count).sum::<f64>() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn insert(&mut self, x: f64, y: f64) {
        match self.points.binary_search_by(|p| p.x.total_cmp(&x)) {
            Ok(i) => {
                self.points[i].sum += y;
                self.points[i].count += 1.0;
            }
            Err(i) => self.points.insert(i, Point { x, sum: y, count: 1.0 }),
        }
    }

    /// Undoes a previous `insert(x, y)`.
    pub fn remove(&mut self, x: f64, y: f64) {
        let i = self
            .points
            .binary_search_by(|p| p.x.total_cmp(&x))
            .expect("remove of a forecast that was never inserted");
        let pt = &mut self.points[i];
        pt.count -= 1.0;
        pt.sum -= y;
        if pt.count <= 0.0 {
            self.points.remove(i);
        }
    }

    pub fn fit(&self) -> Result<IsotonicFit> {
        if self.points.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(IsotonicFit::from_points(&self.points))
    }

    /// Fitted value at `x` after adding one artificial observation `(x, y)`.
    fn fitted_with_extra(&self, x: f64, y: f64) -> f64 {
        let mut pts = Vec::with_capacity(self.points.len() + 1);
        let pos = self.points.partition_point(|p| p.x < x);
        pts.extend_from_slice(&self.points[..pos]);
        match self.points.get(pos) {
            Some(p) if p.x == x => {
                pts.push(Point { x, sum: p.sum + y, count: p.count + 1.0 });
                pts.extend_from_slice(&self.points[pos + 1..]);
            }
            _ => {
                pts.push(Point { x, sum: y, count: 1.0 });
                pts.extend_from_slice(&self.points[pos..]);
            }
        }
        let blocks = pava(&pts);
        let b = blocks.iter().find(|b| b.start <= pos && pos < b.end).expect("blocks cover all knots");
        b.mean()
    }

    /// The two augmented fits `(g1, g0)` at `p_new` used by [`PooledSample::oos_predict`].
    pub fn augmented_fits(&self, p_new: f64) -> (f64, f64) {
        if self.points.is_empty() {
            return (0.5, 0.5);
        }
        (self.fitted_with_extra(p_new, 1.0), self.fitted_with_extra(p_new, 0.0))
    }

    /// Out-of-sample isotonic prediction at `p_new`: `g1 / (g1 + 1 - g0)`,
    /// and 0.5 for an empty sample.
    pub fn oos_predict(&self, p_new: f64) -> f64 {
        let (g1, g0) = self.augmented_fits(p_new);
        g1 / (g1 + 1.0 - g0)
    }
}

/// Isotonic regression of the outcomes on the forecasts of `samples`.
pub fn pava_fit(samples: &SampleSet) -> Result<IsotonicFit> {
    PooledSample::from_samples(samples).fit()
}

/// Out-of-sample isotonic prediction at `p_new` given a prefix of observations.
///
/// Refits the isotonic regression twice with `p_new` appended, once with an
/// artificial outcome of 1 and once with 0, and combines the two fitted
/// values at `p_new` as `g1 / (g1 + 1 - g0)`. An empty prefix gives 0.5.
pub fn oos_predict(prefix_p: &[f64], prefix_y: &[f64], p_new: f64) -> Result<f64> {
    if prefix_p.len() != prefix_y.len() {
        return Err(Error::InvalidParameter("prefix forecasts and outcomes differ in length".into()));
    }
    if !(0.0..=1.0).contains(&p_new) {
        return Err(Error::InvalidParameter(format!("p_new = {p_new} not in [0,1]")));
    }
    let pooled = PooledSample::from_pairs(prefix_p.iter().copied().zip(prefix_y.iter().copied()));
    Ok(pooled.oos_predict(p_new))
}

/// Isotonic fit with each pooled block shrunk towards 1/2.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedFit {
    knots: Vec<f64>,
    smoothed_values: Vec<f64>,
}

impl SmoothedFit {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn smoothed_values(&self) -> &[f64] {
        &self.smoothed_values
    }
}

/// Replaces each block mean by `(0.5 + sum) / (count + 1)`.
///
/// Small blocks are shrunk harder than large ones, so the smoothed values
/// need not be monotone: a block `0/1` becomes 0.25 while a following block
/// `1/10` becomes about 0.136.
pub fn laplace_smooth(fit: &IsotonicFit) -> SmoothedFit {
    let mut smoothed_values = vec![0.0; fit.knots.len()];
    for b in &fit.blocks {
        smoothed_values[b.start..b.end].fill((0.5 + b.sum) / (b.count + 1.0));
    }
    SmoothedFit { knots: fit.knots.clone(), smoothed_values }
}

/// Piecewise-linear interpolation between adjacent knots, constant outside.
pub fn interpolate(fit: &SmoothedFit, p: f64) -> f64 {
    let knots = &fit.knots;
    let vals = &fit.smoothed_values;
    let m = knots.len();
    if p <= knots[0] {
        return vals[0];
    }
    if p >= knots[m - 1] {
        return vals[m - 1];
    }
    // knots[l - 1] < p <= knots[l]
    let l = knots.partition_point(|&k| k < p);
    if knots[l] == p {
        return vals[l];
    }
    let k = l - 1;
    let (pk, pl) = (knots[k], knots[l]);
    (pl - p) / (pl - pk) * vals[k] + (p - pk) / (pl - pk) * vals[l]
}
