//! Forecast/outcome samples, CSV ingestion and random splits.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One probability forecast and the binary outcome it was issued for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub p: f64,
    pub y: bool,
}

impl Observation {
    pub fn new(p: f64, y: bool) -> Self {
        Self { p, y }
    }

    #[inline]
    pub fn y_f64(&self) -> f64 {
        if self.y {
            1.0
        } else {
            0.0
        }
    }

    #[inline]
    pub fn is_boundary(&self) -> bool {
        self.p == 0.0 || self.p == 1.0
    }
}

/// Ordered, validated forecast/outcome pairs.
///
/// Order is meaningful: the sequential e-value consumes observations in the
/// order stored here. Nothing in the crate sorts a `SampleSet` in place.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    items: Vec<Observation>,
    has_boundary_forecasts: bool,
}

impl SampleSet {
    pub fn new(items: Vec<Observation>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyInput);
        }
        for (i, o) in items.iter().enumerate() {
            if !(0.0..=1.0).contains(&o.p) {
                return Err(Error::InvalidRow {
                    row: i + 1,
                    message: format!("p = {} not in [0,1]", o.p),
                });
            }
        }
        let has_boundary_forecasts = items.iter().any(Observation::is_boundary);
        Ok(Self { items, has_boundary_forecasts })
    }

    /// Builds a set from parallel slices of forecasts and 0/1 outcomes.
    pub fn from_pairs(p: &[f64], y: &[u8]) -> Result<Self> {
        if p.len() != y.len() {
            return Err(Error::InvalidParameter(format!(
                "length mismatch: {} forecasts, {} outcomes",
                p.len(),
                y.len()
            )));
        }
        let mut items = Vec::with_capacity(p.len());
        for (i, (&p, &y)) in p.iter().zip(y).enumerate() {
            if y > 1 {
                return Err(Error::InvalidRow { row: i + 1, message: format!("y = {y} not in {{0,1}}") });
            }
            items.push(Observation::new(p, y == 1));
        }
        Self::new(items)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Observation] {
        &self.items
    }

    pub fn has_boundary_forecasts(&self) -> bool {
        self.has_boundary_forecasts
    }

    pub fn forecasts(&self) -> Vec<f64> {
        self.items.iter().map(|o| o.p).collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.items.iter().map(Observation::y_f64).collect()
    }

    /// Subset in the order given by `indices`.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.items[i]).collect())
    }

    /// First index holding a forecast of exactly 0 or 1.
    pub fn first_boundary(&self) -> Option<(usize, f64)> {
        self.items.iter().enumerate().find(|(_, o)| o.is_boundary()).map(|(i, o)| (i, o.p))
    }

    pub(crate) fn ensure_interior(&self) -> Result<()> {
        match self.first_boundary() {
            Some((index, p)) => Err(Error::BoundaryForecast { index, p }),
            None => Ok(()),
        }
    }
}

/// A [`SampleSet`] with optional covariate and true event probability per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSampleSet {
    pub samples: SampleSet,
    pub x: Option<Vec<f64>>,
    pub pi_bar: Option<Vec<f64>>,
}

impl LabeledSampleSet {
    pub fn new(samples: SampleSet, x: Option<Vec<f64>>, pi_bar: Option<Vec<f64>>) -> Result<Self> {
        let n = samples.len();
        if x.as_ref().is_some_and(|v| v.len() != n) {
            return Err(Error::InvalidParameter("covariate length differs from sample length".into()));
        }
        if let Some(pi) = &pi_bar {
            if pi.len() != n {
                return Err(Error::InvalidParameter("pi_bar length differs from sample length".into()));
            }
            if let Some(i) = pi.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidRow { row: i + 1, message: format!("pi_bar = {} not in [0,1]", pi[i]) });
            }
        }
        Ok(Self { samples, x, pi_bar })
    }

    pub fn unlabeled(samples: SampleSet) -> Self {
        Self { samples, x: None, pi_bar: None }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same rows with the forecasts replaced by `p`.
    pub fn with_forecasts(&self, p: &[f64]) -> Result<Self> {
        if p.len() != self.len() {
            return Err(Error::InvalidParameter("forecast length differs from sample length".into()));
        }
        let items = self.samples.items().iter().zip(p).map(|(o, &p)| Observation::new(p, o.y)).collect();
        Ok(Self { samples: SampleSet::new(items)?, x: self.x.clone(), pi_bar: self.pi_bar.clone() })
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let pick = |v: &Vec<f64>| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Ok(Self {
            samples: self.samples.select(indices)?,
            x: self.x.as_ref().map(pick),
            pi_bar: self.pi_bar.as_ref().map(pick),
        })
    }
}

/// Column names used when reading a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub p: String,
    pub y: String,
    pub x: String,
    pub pi_bar: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self { p: "p".into(), y: "y".into(), x: "x".into(), pi_bar: "pi_bar".into() }
    }
}

/// Parses CSV text with a header row into a [`LabeledSampleSet`].
///
/// Columns `p` and `y` are required; `x` and `pi_bar` are picked up when
/// present. Lines starting with `#` are treated as comments, so files written
/// by this crate (which carry a metadata line) can be read back directly.
/// Row numbers in errors count data rows from 1.
pub fn load_samples<R: Read>(source: R, schema: &Schema) -> Result<LabeledSampleSet> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let p_col = find(&schema.p).ok_or_else(|| Error::MissingColumn(schema.p.clone()))?;
    let y_col = find(&schema.y).ok_or_else(|| Error::MissingColumn(schema.y.clone()))?;
    let x_col = find(&schema.x);
    let pi_col = find(&schema.pi_bar);

    let mut items = Vec::new();
    let mut xs = x_col.map(|_| Vec::new());
    let mut pis = pi_col.map(|_| Vec::new());
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let field = |col: usize, name: &str| -> Result<f64> {
            let raw = record
                .get(col)
                .ok_or_else(|| Error::InvalidRow { row, message: format!("missing field `{name}`") })?;
            raw.parse::<f64>()
                .map_err(|_| Error::InvalidRow { row, message: format!("malformed number `{raw}` in column `{name}`") })
        };
        let p = field(p_col, &schema.p)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidRow { row, message: format!("p = {p} not in [0,1]") });
        }
        let y = field(y_col, &schema.y)?;
        let y = if y == 0.0 {
            false
        } else if y == 1.0 {
            true
        } else {
            return Err(Error::InvalidRow { row, message: format!("y = {y} not in {{0,1}}") });
        };
        items.push(Observation::new(p, y));
        if let (Some(col), Some(v)) = (x_col, xs.as_mut()) {
            v.push(field(col, &schema.x)?);
        }
        if let (Some(col), Some(v)) = (pi_col, pis.as_mut()) {
            let pi = field(col, &schema.pi_bar)?;
            if !(0.0..=1.0).contains(&pi) {
                return Err(Error::InvalidRow { row, message: format!("pi_bar = {pi} not in [0,1]") });
            }
            v.push(pi);
        }
    }
    LabeledSampleSet::new(SampleSet::new(items)?, xs, pis)
}

/// Writes `p,y[,x][,pi_bar]` rows; floats use the shortest exact representation.
pub fn write_samples<W: Write>(sink: W, data: &LabeledSampleSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["p", "y"];
    if data.x.is_some() {
        header.push("x");
    }
    if data.pi_bar.is_some() {
        header.push("pi_bar");
    }
    w.write_record(&header)?;
    for (i, o) in data.samples.items().iter().enumerate() {
        let mut rec = vec![o.p.to_string(), u8::from(o.y).to_string()];
        if let Some(x) = &data.x {
            rec.push(x[i].to_string());
        }
        if let Some(pi) = &data.pi_bar {
            rec.push(pi[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Size of the training side for `n` observations at fraction `s`, i.e. `floor(n s)`.
///
/// Products that land within rounding distance of an integer are snapped to
/// it, so `n = 6, s = 1/3` gives 2 rather than 1.
pub fn train_size(n: usize, s: f64) -> usize {
    let raw = n as f64 * s;
    let near = raw.round();
    if (raw - near).abs() <= 1e-9 * near.max(1.0) {
        near as usize
    } else {
        raw.floor() as usize
    }
}

/// Draws `floor(n s)` indices without replacement as the training side.
///
/// Both sides are returned sorted ascending.
pub fn split_indices<R: Rng + ?Sized>(n: usize, s: f64, rng: &mut R) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidParameter(format!("split fraction must lie in (0,1), got {s}")));
    }
    let k = train_size(n, s);
    if n < 2 || k == 0 || k >= n {
        return Err(Error::DegenerateSplit { n, s });
    }
    let mut train = rand::seq::index::sample(rng, n, k).into_vec();
    train.sort_unstable();
    let mut in_train = vec![false; n];
    for &i in &train {
        in_train[i] = true;
    }
    let holdout = (0..n).filter(|&i| !in_train[i]).collect();
    Ok((train, holdout))
}
