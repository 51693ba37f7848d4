//! Tonal energy: `E_T = E * sigmoid((T - theta) / beta)` and its complement
//! `E_R = E - E_T`, plus NaN-aware areal averaging.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};
use tfstream_core::{
    parse_params, AlignmentParams, Continuity, FeatureSpec, MergedChunk, NodeTraits, Output,
    Params, Payload, ProcessError, Processor,
};

use crate::error::DspError;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvalidFill {
    #[default]
    Nan,
    Zero,
}

/// Elementwise tonal energy. Cells where either input is NaN become NaN,
/// or 0 with [`InvalidFill::Zero`].
pub fn ptn_tonal_energy(
    e: ArrayView2<f64>,
    t: ArrayView2<f64>,
    theta: f64,
    beta: f64,
    fill: InvalidFill,
) -> Result<Array2<f64>, DspError> {
    if e.dim() != t.dim() {
        return Err(DspError::ShapeMismatch(format!(
            "energy {:?} vs tract {:?}",
            e.dim(),
            t.dim()
        )));
    }
    let mut out = Array2::zeros(e.dim());
    Zip::from(&mut out).and(&e).and(&t).for_each(|o, &e, &t| {
        let v = e * sigmoid((t - theta) / beta);
        *o = match (v.is_nan(), fill) {
            (true, InvalidFill::Zero) => 0.0,
            _ => v,
        };
    });
    Ok(out)
}

/// NaN-aware block means over `(dt, df)` rectangles. Returns the means
/// (NaN for blocks without valid cells) and the valid-cell count per block,
/// both shaped `(ceil(channels / df), ceil(time / dt))`.
pub fn areal_average(x: ArrayView2<f64>, dt: usize, df: usize) -> (Array2<f64>, Array2<u32>) {
    assert!(dt >= 1 && df >= 1, "block size must be positive");
    let (rows, cols) = x.dim();
    let shape = (rows.div_ceil(df), cols.div_ceil(dt));
    let mut sums = Array2::<f64>::zeros(shape);
    let mut counts = Array2::<u32>::zeros(shape);
    for ((r, c), &v) in x.indexed_iter() {
        if !v.is_nan() {
            sums[[r / df, c / dt]] += v;
            counts[[r / df, c / dt]] += 1;
        }
    }
    let means = Zip::from(&sums)
        .and(&counts)
        .map_collect(|&s, &n| if n == 0 { f64::NAN } else { s / n as f64 });
    (means, counts)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PtnParams {
    #[serde(default = "default_energy")]
    energy: String,
    #[serde(default = "default_tract")]
    tract: String,
    #[serde(default)]
    theta: f64,
    #[serde(default = "one")]
    beta: f64,
    #[serde(default)]
    invalid_fill: InvalidFill,
    #[serde(default = "default_tonal")]
    tonal_feature: String,
    #[serde(default = "default_residual")]
    residual_feature: String,
}

fn default_energy() -> String {
    "E".into()
}
fn default_tract() -> String {
    "T".into()
}
fn one() -> f64 {
    1.0
}
fn default_tonal() -> String {
    "E_T".into()
}
fn default_residual() -> String {
    "E_R".into()
}

/// Running totals over every non-calibration chunk processed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PtnStats {
    pub energy: f64,
    pub tonal_energy: f64,
    pub valid_cells: u64,
    pub invalid_cells: u64,
    pub skipped_calibration: u64,
}

impl PtnStats {
    pub fn tonal_fraction(&self) -> f64 {
        self.tonal_energy / self.energy
    }
}

/// Processor kind `ptn`.
#[derive(Debug)]
pub struct Ptn {
    p: PtnParams,
    stats: PtnStats,
}

impl Ptn {
    pub const KIND: &'static str = "ptn";

    pub fn from_params(params: &Params) -> Result<Box<dyn Processor>, ProcessError> {
        let p: PtnParams = parse_params(Self::KIND, params)?;
        if !(p.beta > 0.0) {
            return Err(ProcessError::Params {
                kind: Self::KIND.into(),
                message: format!("beta must be positive, got {}", p.beta),
            });
        }
        Ok(Box::new(Self {
            p,
            stats: PtnStats::default(),
        }))
    }

    pub fn stats(&self) -> PtnStats {
        self.stats
    }
}

fn grid<'a>(input: &'a MergedChunk, feature: &str) -> Result<&'a Array2<f32>, ProcessError> {
    input
        .feature(feature)
        .and_then(|i| i.payload.as_grid())
        .ok_or_else(|| ProcessError::kernel(Ptn::KIND, DspError::MissingInput(feature.into())))
}

impl Processor for Ptn {
    fn kind(&self) -> &'static str {
        Self::KIND
    }

    fn features(&self) -> Vec<FeatureSpec> {
        vec![
            FeatureSpec::new(self.p.tonal_feature.clone(), AlignmentParams::ZERO),
            FeatureSpec::new(self.p.residual_feature.clone(), AlignmentParams::ZERO),
        ]
    }

    fn traits(&self) -> NodeTraits {
        NodeTraits {
            rate_divisor: 1,
            needs_calibration: false,
            required_inputs: [self.p.energy.clone(), self.p.tract.clone()].into(),
        }
    }

    fn process(&mut self, input: &MergedChunk) -> Result<Vec<Output>, ProcessError> {
        if input.continuity == Continuity::CalibrationChunk {
            self.stats.skipped_calibration += 1;
            return Ok(Vec::new());
        }
        let e = grid(input, &self.p.energy)?.mapv(f64::from);
        let t = grid(input, &self.p.tract)?.mapv(f64::from);
        let et = ptn_tonal_energy(e.view(), t.view(), self.p.theta, self.p.beta, self.p.invalid_fill)
            .map_err(|err| ProcessError::kernel(Self::KIND, err))?;
        let er = &e - &et;
        for (&ev, &tv) in e.iter().zip(t.iter()) {
            let v = ev * sigmoid((tv - self.p.theta) / self.p.beta);
            if v.is_nan() {
                self.stats.invalid_cells += 1;
            } else {
                self.stats.valid_cells += 1;
                self.stats.energy += ev;
                self.stats.tonal_energy += v;
            }
        }
        let src = input.feature(&self.p.energy).expect("checked above");
        let out = |feature: &str, x: Array2<f64>| Output {
            feature: feature.to_string(),
            payload: Payload::Grid(x.mapv(|v| v as f32)),
            sample_rate: src.sample_rate,
            channel_freqs: src.channel_freqs.clone(),
        };
        Ok(vec![
            out(&self.p.tonal_feature, et),
            out(&self.p.residual_feature, er),
        ])
    }

    fn report(&self) -> Option<serde_json::Value> {
        let mut v = serde_json::to_value(self.stats).ok()?;
        v["tonal_fraction"] = serde_json::json!(self.stats.tonal_fraction());
        Some(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sigmoid_limits() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(50.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn saturation_and_midpoint() {
        let e = array![[1.0, 2.0], [3.0, 4.0]];
        let hi = Array2::from_elem((2, 2), 1e6);
        let et = ptn_tonal_energy(e.view(), hi.view(), 0.0, 1.0, InvalidFill::Nan).unwrap();
        assert_eq!(et, e);
        let at = Array2::from_elem((2, 2), 0.7);
        let et = ptn_tonal_energy(e.view(), at.view(), 0.7, 0.3, InvalidFill::Nan).unwrap();
        assert_eq!(et, &e / 2.0);
    }

    #[test]
    fn invalid_rows_propagate_or_fill() {
        let e = array![[1.0, 1.0], [1.0, 1.0]];
        let t = array![[f64::NAN, f64::NAN], [0.0, 0.0]];
        let nan = ptn_tonal_energy(e.view(), t.view(), 0.0, 1.0, InvalidFill::Nan).unwrap();
        assert!(nan.row(0).iter().all(|v| v.is_nan()));
        let zero = ptn_tonal_energy(e.view(), t.view(), 0.0, 1.0, InvalidFill::Zero).unwrap();
        assert_eq!(zero.row(0).to_vec(), vec![0.0, 0.0]);
        assert!(ptn_tonal_energy(e.view(), t.slice(ndarray::s![.., ..1]), 0.0, 1.0, InvalidFill::Nan)
            .is_err());
    }

    #[test]
    fn areal_average_ignores_nan() {
        let x = array![
            [1.0, 2.0, 3.0, f64::NAN, 5.0],
            [f64::NAN, 4.0, 5.0, 6.0, 7.0],
            [f64::NAN, f64::NAN, 1.0, 1.0, 1.0]
        ];
        let (m, n) = areal_average(x.view(), 2, 2);
        assert_eq!(m.dim(), (2, 3));
        assert_eq!(n, array![[3, 3, 2], [0, 2, 1]]);
        assert!((m[[0, 0]] - 7.0 / 3.0).abs() < 1e-12);
        assert!(m[[1, 0]].is_nan());
        assert_eq!(m[[0, 2]], 6.0);
        assert_eq!(m[[1, 1]], 1.0);
    }
}
