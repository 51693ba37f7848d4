//! Structure extractor: windowed self-similarity ("tract") scores on a
//! time-frequency energy map.
//!
//! The horizontal score at `(f, c)` pools rows `f - w_s ..= f + w_s` and
//! correlates the window `[c - w_t, c]` with its shift `[c, c + w_t]`:
//!
//! ```text
//! raw = sum X[r,k] X[r,k+w_t] / sqrt(sum X[r,k]^2 * sum X[r,k+w_t]^2)
//! ```
//!
//! The vertical score swaps the roles of time and scale. Scores lie in
//! `[-1, 1]`; for non-negative energy maps in `[0, 1]`. The published value
//! is standardized, `(raw - theta) / beta`, with `theta` and `beta` either
//! configured or estimated from a calibration chunk of white noise.

use ndarray::{Array2, ArrayView2, Axis};
use serde::Deserialize;
use tfstream_core::{
    parse_params, AlignmentParams, Calibration, Continuity, FeatureSpec, MergedChunk, NodeTraits,
    Output, Params, Payload, ProcessError, Processor,
};

use crate::error::DspError;
use crate::single_input;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSpec {
    pub w_t: usize,
    pub w_s: usize,
    #[serde(default = "horizontal")]
    pub direction: Direction,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    /// Threshold offset in noise standard deviations used by calibration.
    #[serde(default = "default_k")]
    pub k: f64,
}

fn horizontal() -> Direction {
    Direction::Horizontal
}

fn default_k() -> f64 {
    2.0
}

impl StructureSpec {
    pub fn new(w_t: usize, w_s: usize) -> Self {
        Self {
            w_t,
            w_s,
            direction: Direction::Horizontal,
            theta: None,
            beta: None,
            k: default_k(),
        }
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.w_t == 0 || self.w_s == 0 {
            return Err(DspError::InvalidSpec("w_t and w_s must be >= 1".into()));
        }
        if let Some(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(DspError::InvalidSpec(format!("beta must be positive, got {b}")));
            }
        }
        if self.theta.is_some() != self.beta.is_some() {
            return Err(DspError::InvalidSpec(
                "theta and beta must be configured together".into(),
            ));
        }
        Ok(())
    }

    pub fn alignment(&self) -> AlignmentParams {
        AlignmentParams::new(self.w_t as u32, self.w_t as u32, self.w_s as u32, self.w_s as u32)
    }

    pub fn calibrated(&self) -> Option<Calibration> {
        Some(Calibration {
            threshold: self.theta?,
            slope: self.beta?,
        })
    }
}

/// Raw scores for every centre column `c` in `[w_t, n - w_t)`, as a
/// `channels × (n - 2 w_t)` map. Rows within `w_s` of either edge are NaN.
pub fn tract_feature(x: ArrayView2<f64>, spec: &StructureSpec) -> Result<Array2<f64>, DspError> {
    let (rows, cols) = x.dim();
    let required = 2 * spec.w_s + 1;
    if rows < required {
        return Err(DspError::TooFewChannels {
            channels: rows,
            required,
        });
    }
    let out_cols = cols.saturating_sub(2 * spec.w_t);
    let mut out = Array2::from_elem((rows, out_cols), f64::NAN);
    if out_cols == 0 {
        return Ok(out);
    }
    match spec.direction {
        Direction::Horizontal => {
            let (lag, pool) = (spec.w_t, spec.w_s);
            let (num, pow) = lagged_sums(x, lag);
            for f in pool..rows - pool {
                for j in 0..out_cols {
                    let c = j + lag;
                    let (mut n, mut a, mut b) = (0.0, 0.0, 0.0);
                    for r in f - pool..=f + pool {
                        n += num[[r, c]];
                        a += pow[[r, c]];
                        b += pow[[r, c + lag]];
                    }
                    out[[f, j]] = ratio(n, a, b);
                }
            }
        }
        Direction::Vertical => {
            let (lag, pool) = (spec.w_s, spec.w_t);
            let xt = x.t();
            let (num, pow) = lagged_sums(xt, lag);
            for f in lag..rows - lag {
                for j in 0..out_cols {
                    let c = j + pool;
                    let (mut n, mut a, mut b) = (0.0, 0.0, 0.0);
                    for k in c - pool..=c + pool {
                        n += num[[k, f]];
                        a += pow[[k, f]];
                        b += pow[[k, f + lag]];
                    }
                    out[[f, j]] = ratio(n, a, b);
                }
            }
        }
    }
    Ok(out)
}

/// For each row and each index `c >= lag`, the window sums over
/// `k in [c - lag, c]` of `x[k] x[k + lag]` (where defined) and `x[k]^2`.
/// Entries whose window is incomplete are left at zero and never read.
fn lagged_sums(x: ArrayView2<f64>, lag: usize) -> (Array2<f64>, Array2<f64>) {
    let (rows, cols) = x.dim();
    let mut num = Array2::zeros((rows, cols));
    let mut pow = Array2::zeros((rows, cols));
    for r in 0..rows {
        let row = x.row(r);
        for c in lag..cols {
            let mut p = 0.0;
            for k in c - lag..=c {
                p += row[k] * row[k];
            }
            pow[[r, c]] = p;
            if c + lag < cols {
                let mut n = 0.0;
                for k in c - lag..=c {
                    n += row[k] * row[k + lag];
                }
                num[[r, c]] = n;
            }
        }
    }
    (num, pow)
}

fn ratio(num: f64, a: f64, b: f64) -> f64 {
    let den = (a * b).sqrt();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// `(theta, beta)` from raw scores of a white-noise calibration map:
/// `theta = mean + k std`, `beta = std`, over finite cells.
pub fn calibrate_structure(
    raw: ArrayView2<f64>,
    continuity: Continuity,
    k: f64,
) -> Result<Calibration, DspError> {
    if continuity != Continuity::CalibrationChunk {
        return Err(DspError::NotACalibrationChunk);
    }
    let vals: Vec<f64> = raw.iter().copied().filter(|v| v.is_finite()).collect();
    if vals.len() < 2 {
        return Err(DspError::InvalidSpec(
            "calibration chunk too short for any valid score".into(),
        ));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if std <= 0.0 {
        return Err(DspError::InvalidSpec(
            "calibration scores have zero spread".into(),
        ));
    }
    Ok(Calibration {
        threshold: mean + k * std,
        slope: std,
    })
}

/// Processor kind `structure_extractor`.
#[derive(Debug)]
pub struct StructureExtractor {
    spec: StructureSpec,
    feature: String,
    calibration: Option<Calibration>,
    /// Last `2 w_t` columns of input, all rows.
    history: Option<Array2<f64>>,
}

impl StructureExtractor {
    pub const KIND: &'static str = "structure_extractor";

    pub fn new(spec: StructureSpec) -> Result<Self, DspError> {
        spec.validate()?;
        Ok(Self {
            calibration: spec.calibrated(),
            spec,
            feature: "T".into(),
            history: None,
        })
    }

    pub fn from_params(params: &Params) -> Result<Box<dyn Processor>, ProcessError> {
        let mut params = params.clone();
        let feature = take_feature(Self::KIND, &mut params, "T")?;
        let spec: StructureSpec = parse_params(Self::KIND, &params)?;
        let mut se = Self::new(spec).map_err(|e| ProcessError::kernel(Self::KIND, e))?;
        se.feature = feature;
        Ok(Box::new(se))
    }

    pub fn spec(&self) -> &StructureSpec {
        &self.spec
    }

    /// Standardized scores for one chunk. On `restart` the history is
    /// cleared and the output has `n - 2 w_t` columns; otherwise `n`.
    pub fn scores(
        &mut self,
        x: ArrayView2<f32>,
        continuity: Continuity,
    ) -> Result<Array2<f64>, DspError> {
        let restart = continuity.is_discontinuous_subtype();
        let input = x.mapv(f64::from);
        let ext = match (&self.history, restart) {
            (Some(h), false) => {
                if h.nrows() != input.nrows() {
                    return Err(DspError::ShapeMismatch(format!(
                        "{} rows after {} rows",
                        input.nrows(),
                        h.nrows()
                    )));
                }
                ndarray::concatenate(Axis(1), &[h.view(), input.view()]).expect("rows match")
            }
            (None, false) => {
                return Err(DspError::ShapeMismatch(
                    "continuous chunk without a preceding discontinuous one".into(),
                ))
            }
            (_, true) => input,
        };
        let raw = tract_feature(ext.view(), &self.spec)?;
        let keep = 2 * self.spec.w_t;
        let start = ext.ncols().saturating_sub(keep);
        self.history = Some(ext.slice(ndarray::s![.., start..]).to_owned());

        if continuity == Continuity::CalibrationChunk && self.spec.calibrated().is_none() {
            self.calibration = Some(calibrate_structure(raw.view(), continuity, self.spec.k)?);
        }
        let cal = self.calibration.ok_or(DspError::NotCalibrated)?;
        Ok(raw.mapv(|v| (v - cal.threshold) / cal.slope))
    }
}

/// Removes an optional `feature` entry from `params`.
pub(crate) fn take_feature(
    kind: &str,
    params: &mut Params,
    default: &str,
) -> Result<String, ProcessError> {
    match params.remove("feature") {
        None => Ok(default.to_string()),
        Some(serde_json::Value::String(s)) => Ok(s),
        Some(other) => Err(ProcessError::Params {
            kind: kind.to_string(),
            message: format!("feature must be a string, got {other}"),
        }),
    }
}

impl Processor for StructureExtractor {
    fn kind(&self) -> &'static str {
        Self::KIND
    }

    fn features(&self) -> Vec<FeatureSpec> {
        vec![FeatureSpec::new(self.feature.clone(), self.spec.alignment())]
    }

    fn traits(&self) -> NodeTraits {
        NodeTraits {
            rate_divisor: 1,
            needs_calibration: self.spec.calibrated().is_none(),
            ..NodeTraits::default()
        }
    }

    fn process(&mut self, input: &MergedChunk) -> Result<Vec<Output>, ProcessError> {
        let (_, inp) = single_input(Self::KIND, input)?;
        let grid = inp.payload.as_grid().ok_or_else(|| {
            ProcessError::kernel(
                Self::KIND,
                DspError::ShapeMismatch("structure extractor expects a 2-D map".into()),
            )
        })?;
        let t = self
            .scores(grid.view(), input.continuity)
            .map_err(|e| ProcessError::kernel(Self::KIND, e))?;
        Ok(vec![Output {
            feature: self.feature.clone(),
            payload: Payload::Grid(t.mapv(|v| v as f32)),
            sample_rate: inp.sample_rate,
            channel_freqs: inp.channel_freqs.clone(),
        }])
    }

    fn calibration(&self) -> Option<Calibration> {
        self.calibration
    }
}
