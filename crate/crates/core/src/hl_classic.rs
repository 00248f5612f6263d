//! Classical Hosmer-Lemeshow test.
//!
//! Five ways of binning the forecasts are supported, because the test's
//! result depends heavily on that choice:
//!
//! | tag      | bins                                                         |
//! |----------|--------------------------------------------------------------|
//! | `E`      | `g` equal-width bins over `[min p, max p]`, right-closed     |
//! | `QL`     | type-7 quantile cuts, points on a cut go to the left bin     |
//! | `QR`     | type-7 quantile cuts, points on a cut go to the right bin    |
//! | `Qplus`  | `g` equally populated bins, ties in `p` ordered by `y` asc   |
//! | `Qminus` | `g` equally populated bins, ties in `p` ordered by `y` desc  |
//!
//! Empty bins are dropped, so fewer than `g` bins may be realized.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::SampleSet;
use crate::error::{Error, Result};
use crate::numeric::{chisq_sf, quantile_type7_sorted};
use crate::serde_ext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinningMethod {
    E,
    QL,
    QR,
    Qplus,
    Qminus,
}

impl BinningMethod {
    /// Column order of the sweep table.
    pub const ALL: [BinningMethod; 5] =
        [BinningMethod::QL, BinningMethod::QR, BinningMethod::Qplus, BinningMethod::Qminus, BinningMethod::E];

    pub fn as_str(&self) -> &'static str {
        match self {
            BinningMethod::E => "E",
            BinningMethod::QL => "QL",
            BinningMethod::QR => "QR",
            BinningMethod::Qplus => "Qplus",
            BinningMethod::Qminus => "Qminus",
        }
    }
}

impl fmt::Display for BinningMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BinningMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "E" => Ok(BinningMethod::E),
            "QL" => Ok(BinningMethod::QL),
            "QR" => Ok(BinningMethod::QR),
            "Qplus" | "Q+" => Ok(BinningMethod::Qplus),
            "Qminus" | "Q-" => Ok(BinningMethod::Qminus),
            other => Err(Error::InvalidParameter(format!(
                "unknown binning method `{other}` (expected E, QL, QR, Qplus or Qminus)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieOrder {
    Ascending,
    Descending,
}

/// Degrees of freedom rule: `g` when the evaluation sample was not used to
/// fit the forecasts, `g - 2` when it was.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DofMode {
    #[serde(rename = "g")]
    OutOfSample,
    #[serde(rename = "g-2")]
    InSample,
}

impl FromStr for DofMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "g" => Ok(DofMode::OutOfSample),
            "g-2" => Ok(DofMode::InSample),
            other => Err(Error::InvalidParameter(format!("unknown dof mode `{other}` (expected g or g-2)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    /// Indices into the sample, ascending.
    #[serde(skip)]
    pub members: Vec<usize>,
    pub size: usize,
    /// Interval bounds for `E`, `QL` and `QR`; absent for the count-based methods.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Bin {
    fn new(mut members: Vec<usize>, lower: Option<f64>, upper: Option<f64>) -> Self {
        members.sort_unstable();
        Self { size: members.len(), members, lower, upper }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub method: BinningMethod,
    pub requested: usize,
    pub bins: Vec<Bin>,
}

impl Binning {
    pub fn realized(&self) -> usize {
        self.bins.len()
    }
}

fn check_g(g: usize) -> Result<()> {
    if g == 0 {
        return Err(Error::InvalidParameter("number of bins must be >= 1".into()));
    }
    Ok(())
}

/// Groups indices by bin label and drops labels that received nothing.
fn collect_bins(labels: &[usize], bounds: &[(Option<f64>, Option<f64>)]) -> Vec<Bin> {
    let mut members = vec![Vec::new(); bounds.len()];
    for (i, &k) in labels.iter().enumerate() {
        members[k].push(i);
    }
    members
        .into_iter()
        .zip(bounds)
        .filter(|(m, _)| !m.is_empty())
        .map(|(m, &(lo, hi))| Bin::new(m, lo, hi))
        .collect()
}

pub fn bin_equidistant(samples: &SampleSet, g: usize) -> Result<Binning> {
    check_g(g)?;
    let p = samples.forecasts();
    let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        let bins = vec![Bin::new((0..p.len()).collect(), Some(lo), Some(hi))];
        return Ok(Binning { method: BinningMethod::E, requested: g, bins });
    }
    let width = (hi - lo) / g as f64;
    let mut edges: Vec<f64> = (0..=g).map(|k| lo + k as f64 * width).collect();
    edges[g] = hi;
    // bin k is (edges[k], edges[k+1]], the first one closed at the left
    let uppers = &edges[1..];
    let labels: Vec<usize> = p.iter().map(|&v| uppers.partition_point(|&u| u < v).min(g - 1)).collect();
    let bounds: Vec<_> = (0..g).map(|k| (Some(edges[k]), Some(edges[k + 1]))).collect();
    Ok(Binning { method: BinningMethod::E, requested: g, bins: collect_bins(&labels, &bounds) })
}

/// Interior quantile cuts at levels `1/g, ..., (g-1)/g`, duplicates removed.
pub fn quantile_cuts(samples: &SampleSet, g: usize) -> Vec<f64> {
    let mut sorted = samples.forecasts();
    sorted.sort_by(f64::total_cmp);
    let mut cuts: Vec<f64> = (1..g)
        .map(|k| quantile_type7_sorted(&sorted, k as f64 / g as f64))
        .filter(|&c| c > 0.0 && c < 1.0)
        .collect();
    cuts.dedup();
    cuts
}

pub fn bin_quantile(samples: &SampleSet, g: usize, side: Side) -> Result<Binning> {
    check_g(g)?;
    let cuts = quantile_cuts(samples, g);
    let labels: Vec<usize> = samples
        .items()
        .iter()
        .map(|o| match side {
            Side::Left => cuts.partition_point(|&c| c < o.p),
            Side::Right => cuts.partition_point(|&c| c <= o.p),
        })
        .collect();
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(0.0);
    edges.extend_from_slice(&cuts);
    edges.push(1.0);
    let bounds: Vec<_> = edges.windows(2).map(|w| (Some(w[0]), Some(w[1]))).collect();
    let method = match side {
        Side::Left => BinningMethod::QL,
        Side::Right => BinningMethod::QR,
    };
    Ok(Binning { method, requested: g, bins: collect_bins(&labels, &bounds) })
}

/// Bins (1-based) receiving one of the `r` extra observations: `ceil((2t-1) g / (2r))`.
pub fn spread_extras(g: usize, r: usize) -> Vec<usize> {
    (1..=r).map(|t| ((2 * t - 1) * g).div_ceil(2 * r)).collect()
}

pub fn bin_equal_count(samples: &SampleSet, g: usize, tie_order: TieOrder) -> Result<Binning> {
    check_g(g)?;
    let n = samples.len();
    if g > n {
        return Err(Error::InvalidParameter(format!("{g} equally populated bins need at least {g} observations, got {n}")));
    }
    let items = samples.items();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (oa, ob) = (items[a], items[b]);
        let by_y = match tie_order {
            TieOrder::Ascending => oa.y.cmp(&ob.y),
            TieOrder::Descending => ob.y.cmp(&oa.y),
        };
        oa.p.total_cmp(&ob.p).then(by_y).then(a.cmp(&b))
    });
    let mut sizes = vec![n / g; g];
    for k in spread_extras(g, n % g) {
        sizes[k - 1] += 1;
    }
    let mut bins = Vec::with_capacity(g);
    let mut start = 0;
    for size in sizes {
        bins.push(Bin::new(order[start..start + size].to_vec(), None, None));
        start += size;
    }
    let method = match tie_order {
        TieOrder::Ascending => BinningMethod::Qplus,
        TieOrder::Descending => BinningMethod::Qminus,
    };
    Ok(Binning { method, requested: g, bins })
}

pub fn bin_samples(samples: &SampleSet, method: BinningMethod, g: usize) -> Result<Binning> {
    match method {
        BinningMethod::E => bin_equidistant(samples, g),
        BinningMethod::QL => bin_quantile(samples, g, Side::Left),
        BinningMethod::QR => bin_quantile(samples, g, Side::Right),
        BinningMethod::Qplus => bin_equal_count(samples, g, TieOrder::Ascending),
        BinningMethod::Qminus => bin_equal_count(samples, g, TieOrder::Descending),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinCounts {
    pub size: usize,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub o1: f64,
    pub o0: f64,
    pub e1: f64,
    pub e0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HLReport {
    pub method: BinningMethod,
    pub g_requested: usize,
    pub g_realized: usize,
    pub bins: Vec<BinCounts>,
    #[serde(with = "serde_ext::f64_ext")]
    pub statistic: f64,
    pub dof_mode: Option<DofMode>,
    pub dof: Option<u32>,
    pub p_value: Option<f64>,
}

fn hl_term(observed: f64, expected: f64) -> f64 {
    if expected == 0.0 {
        if observed == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (observed - expected).powi(2) / expected
    }
}

/// Observed and expected counts per bin and the statistic `C`; no p-value.
///
/// A term whose expected count is zero contributes 0 when the observed count
/// is also zero and `+inf` otherwise.
pub fn hl_statistic(samples: &SampleSet, binning: &Binning) -> HLReport {
    let items = samples.items();
    let mut statistic = 0.0;
    let bins: Vec<BinCounts> = binning
        .bins
        .iter()
        .map(|b| {
            let size = b.members.len() as f64;
            let o1: f64 = b.members.iter().map(|&i| items[i].y_f64()).sum();
            let e1: f64 = b.members.iter().map(|&i| items[i].p).sum();
            let (o0, e0) = (size - o1, size - e1);
            statistic += hl_term(o1, e1) + hl_term(o0, e0);
            BinCounts { size: b.members.len(), lower: b.lower, upper: b.upper, o1, o0, e1, e0 }
        })
        .collect();
    HLReport {
        method: binning.method,
        g_requested: binning.requested,
        g_realized: binning.realized(),
        bins,
        statistic,
        dof_mode: None,
        dof: None,
        p_value: None,
    }
}

/// Chi-square p-value of `c_hat` and the degrees of freedom used.
pub fn hl_pvalue(c_hat: f64, g_realized: usize, estimated_in_sample: bool) -> Result<(f64, u32)> {
    let dof = g_realized as i64 - if estimated_in_sample { 2 } else { 0 };
    if dof < 1 {
        return Err(Error::InsufficientDof(dof));
    }
    let dof = dof as u32;
    Ok((chisq_sf(c_hat, dof)?, dof))
}

/// Bin, count and compute the p-value in one go.
pub fn hl_test(samples: &SampleSet, method: BinningMethod, g: usize, dof_mode: DofMode) -> Result<HLReport> {
    let binning = bin_samples(samples, method, g)?;
    let mut report = hl_statistic(samples, &binning);
    let (p, dof) = hl_pvalue(report.statistic, report.g_realized, dof_mode == DofMode::InSample)?;
    report.dof_mode = Some(dof_mode);
    report.dof = Some(dof);
    report.p_value = Some(p);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: BinningMethod,
    pub g: usize,
    pub report: Option<HLReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HLSweep {
    pub g_values: Vec<usize>,
    pub methods: Vec<BinningMethod>,
    pub dof_mode: DofMode,
    /// Method-major: all `g` values for the first method, then the next.
    pub cells: Vec<SweepCell>,
    pub min_p: Option<f64>,
    pub max_p: Option<f64>,
}

pub const DEFAULT_SWEEP_G: std::ops::RangeInclusive<usize> = 5..=20;

/// HL test over every combination of method and bin count.
pub fn hl_sweep(samples: &SampleSet, g_values: &[usize], methods: &[BinningMethod], dof_mode: DofMode) -> HLSweep {
    let grid: Vec<(BinningMethod, usize)> =
        methods.iter().flat_map(|&m| g_values.iter().map(move |&g| (m, g))).collect();
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(method, g)| match hl_test(samples, method, g, dof_mode) {
            Ok(r) => SweepCell { method, g, report: Some(r), error: None },
            Err(e) => SweepCell { method, g, report: None, error: Some(e.to_string()) },
        })
        .collect();
    let ps: Vec<f64> = cells.iter().filter_map(|c| c.report.as_ref().and_then(|r| r.p_value)).collect();
    let min_p = ps.iter().copied().reduce(f64::min);
    let max_p = ps.iter().copied().reduce(f64::max);
    HLSweep { g_values: g_values.to_vec(), methods: methods.to_vec(), dof_mode, cells, min_p, max_p }
}

impl HLSweep {
    pub fn cell(&self, method: BinningMethod, g: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.method == method && c.g == g)
    }

    /// Table with one row per `g` and one column per method. `display`
    /// rounds p-values to two decimals; missing cells are `NA`.
    pub fn to_table_csv(&self, display: bool) -> String {
        let mut out = String::from("g");
        for m in &self.methods {
            out.push(',');
            out.push_str(m.as_str());
        }
        out.push('\n');
        for &g in &self.g_values {
            out.push_str(&g.to_string());
            for &m in &self.methods {
                out.push(',');
                match self.cell(m, g).and_then(|c| c.report.as_ref()).and_then(|r| r.p_value) {
                    Some(p) if display => out.push_str(&format!("{p:.2}")),
                    Some(p) => out.push_str(&p.to_string()),
                    None => out.push_str("NA"),
                }
            }
            out.push('\n');
        }
        out
    }
}
