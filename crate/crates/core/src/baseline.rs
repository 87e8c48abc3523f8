//! Fixed-memory least-squares baseline.
//!
//! Each sample is explained by the first-order ARX model with offset
//!
//! ```text
//! v[k] = th1 v[k-1] + th2 i[k] + th3 i[k-1] + th4
//! ```
//!
//! fitted on the last `N` samples. With `alpha = exp(-dt / tau1)` the exact
//! zero-order-hold discretization of the circuit gives
//! `th1 = alpha`, `th2 = R0`, `th3 = R1 (1 - alpha) - alpha R0` and
//! `th4 = (1 - alpha) voc`, which is inverted sample by sample.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::ecm_sim::{EcmParameters, EcmPoint, SampledDataset};
use crate::error::{Error, Result};

/// Windows swept when comparing against the spline model.
pub const DEFAULT_WINDOWS: [usize; 4] = [50, 100, 200, 500];
pub const MIN_WINDOW: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FmrlsMode {
    /// Exact least squares over a sliding rectangular window.
    SlidingWindow,
    /// Exponentially weighted recursive least squares.
    Forgetting { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmrlsConfig {
    /// Window length in samples; the burn-in length in forgetting mode.
    pub window: usize,
    pub dt: f64,
    /// Ridge on the normal equations.
    pub ridge: f64,
    pub mode: FmrlsMode,
}

impl FmrlsConfig {
    pub fn new(window: usize, dt: f64) -> Self {
        FmrlsConfig {
            window,
            dt,
            ridge: 1e-8,
            mode: FmrlsMode::SlidingWindow,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.window < MIN_WINDOW {
            return Err(Error::InvalidInput(format!(
                "window must be at least {MIN_WINDOW} samples, got {}",
                self.window
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidInput(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidInput("ridge must be non-negative".into()));
        }
        if let FmrlsMode::Forgetting { factor } = self.mode {
            if !(factor > 0.0 && factor <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "forgetting factor must lie in (0, 1], got {factor}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-sample parameter estimates. Invalid samples hold NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmrlsOutput {
    pub t: Vec<f64>,
    pub z: Option<Vec<f64>>,
    pub r0: Vec<f64>,
    pub r1: Vec<f64>,
    pub tau1: Vec<f64>,
    pub voc: Vec<f64>,
    pub valid: Vec<bool>,
}

impl FmrlsOutput {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// ARX coefficients of the discretized circuit.
pub fn theta_from_physical(p: EcmPoint, dt: f64) -> [f64; 4] {
    let alpha = (-dt / p.tau1).exp();
    let one_minus = -(-dt / p.tau1).exp_m1();
    [
        alpha,
        p.r0,
        p.r1 * one_minus - alpha * p.r0,
        one_minus * p.voc,
    ]
}

/// Inverse of [`theta_from_physical`]; `None` unless `0 < th1 < 1`.
pub fn physical_from_theta(theta: [f64; 4], dt: f64) -> Option<EcmPoint> {
    let [t1, t2, t3, t4] = theta;
    if !(t1 > 0.0 && t1 < 1.0) {
        return None;
    }
    let one_minus = 1.0 - t1;
    let p = EcmPoint {
        r0: t2,
        r1: (t3 + t1 * t2) / one_minus,
        tau1: -dt / t1.ln(),
        voc: t4 / one_minus,
    };
    [p.r0, p.r1, p.tau1, p.voc]
        .iter()
        .all(|v| v.is_finite())
        .then_some(p)
}

fn regressor(data: &SampledDataset, k: usize) -> Vector4<f64> {
    Vector4::new(data.v_b[k - 1], data.i_b[k], data.i_b[k - 1], 1.0)
}

// Least squares on rows (k - n, k] with a ridge, via QR of the stacked system.
fn window_fit(data: &SampledDataset, k: usize, n: usize, ridge: f64) -> Option<[f64; 4]> {
    let first = k + 1 - n;
    let mut a = DMatrix::zeros(n + 4, 4);
    let mut b = DVector::zeros(n + 4);
    for (r, j) in (first..=k).enumerate() {
        a.row_mut(r).copy_from(&regressor(data, j).transpose());
        b[r] = data.v_b[j];
    }
    let s = ridge.sqrt();
    for c in 0..4 {
        a[(n + c, c)] = s;
    }
    let qr = a.qr();
    let qtb = qr.q().tr_mul(&b);
    let x = qr.r().solve_upper_triangular(&qtb)?;
    Some([x[0], x[1], x[2], x[3]])
}

/// Runs the baseline over the whole record.
pub fn fmrls_identify(data: &SampledDataset, cfg: &FmrlsConfig) -> Result<FmrlsOutput> {
    cfg.validate()?;
    let m = data.len();
    // every row uses the previous sample, so the first row is k = 1
    if cfg.window >= m {
        return Err(Error::WindowTooLong {
            window: cfg.window,
            len: m,
        });
    }
    if (cfg.dt - data.dt()).abs() > 1e-9 * data.dt() {
        log::warn!(
            "baseline dt {} differs from data dt {}; using the configured value",
            cfg.dt,
            data.dt()
        );
    }
    let thetas: Vec<Option<[f64; 4]>> = match cfg.mode {
        FmrlsMode::SlidingWindow => (0..m)
            .map(|k| {
                (k >= cfg.window)
                    .then(|| window_fit(data, k, cfg.window, cfg.ridge))
                    .flatten()
            })
            .collect(),
        FmrlsMode::Forgetting { factor } => forgetting_fit(data, cfg, factor),
    };

    let nan = f64::NAN;
    let mut out = FmrlsOutput {
        t: data.t.clone(),
        z: data.z.clone(),
        r0: vec![nan; m],
        r1: vec![nan; m],
        tau1: vec![nan; m],
        voc: vec![nan; m],
        valid: vec![false; m],
    };
    for (k, theta) in thetas.into_iter().enumerate() {
        if let Some(p) = theta.and_then(|th| physical_from_theta(th, cfg.dt)) {
            out.r0[k] = p.r0;
            out.r1[k] = p.r1;
            out.tau1[k] = p.tau1;
            out.voc[k] = p.voc;
            out.valid[k] = true;
        }
    }
    Ok(out)
}

fn forgetting_fit(data: &SampledDataset, cfg: &FmrlsConfig, factor: f64) -> Vec<Option<[f64; 4]>> {
    let m = data.len();
    let mut out = vec![None; m];
    let mut theta = Vector4::zeros();
    let mut p = Matrix4::identity() * (1.0 / cfg.ridge.max(1e-12));
    for (k, slot) in out.iter_mut().enumerate().skip(1) {
        let phi = regressor(data, k);
        let pphi = p * phi;
        let gain = pphi / (factor + phi.dot(&pphi));
        theta += gain * (data.v_b[k] - phi.dot(&theta));
        p = (p - gain * pphi.transpose()) / factor;
        p = 0.5 * (p + p.transpose());
        if k >= cfg.window {
            *slot = Some([theta[0], theta[1], theta[2], theta[3]]);
        }
    }
    out
}

/// Parameter curves obtained by taking the median of valid per-sample
/// estimates in SOC bins and interpolating linearly between bin centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedParameters {
    pub centers: Vec<f64>,
    pub r0: Vec<f64>,
    pub r1: Vec<f64>,
    pub tau1: Vec<f64>,
    pub voc: Vec<f64>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl BinnedParameters {
    /// Needs SOC on the output. Bins without valid estimates are skipped.
    pub fn from_output(out: &FmrlsOutput, bin_width: f64) -> Result<Self> {
        let z = out
            .z
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("baseline output has no SOC".into()))?;
        if !(bin_width > 0.0) {
            return Err(Error::InvalidInput("bin width must be positive".into()));
        }
        let mut bins: std::collections::BTreeMap<i64, Vec<usize>> = Default::default();
        for (k, &zk) in z.iter().enumerate() {
            if out.valid[k] {
                bins.entry((zk / bin_width).floor() as i64)
                    .or_default()
                    .push(k);
            }
        }
        if bins.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let mut res = BinnedParameters {
            centers: Vec::new(),
            r0: Vec::new(),
            r1: Vec::new(),
            tau1: Vec::new(),
            voc: Vec::new(),
        };
        for (bin, idx) in bins {
            let pick =
                |series: &[f64]| median(&mut idx.iter().map(|&k| series[k]).collect::<Vec<_>>());
            res.centers.push((bin as f64 + 0.5) * bin_width);
            res.r0.push(pick(&out.r0));
            res.r1.push(pick(&out.r1));
            res.tau1.push(pick(&out.tau1));
            res.voc.push(pick(&out.voc));
        }
        Ok(res)
    }

    fn interp(&self, series: &[f64], z: f64) -> f64 {
        let c = &self.centers;
        if z <= c[0] {
            return series[0];
        }
        if z >= c[c.len() - 1] {
            return series[c.len() - 1];
        }
        let j = c.partition_point(|&x| x <= z);
        let w = (z - c[j - 1]) / (c[j] - c[j - 1]);
        series[j - 1] + w * (series[j] - series[j - 1])
    }
}

impl EcmParameters for BinnedParameters {
    fn at(&self, z: f64) -> EcmPoint {
        EcmPoint {
            r0: self.interp(&self.r0, z),
            r1: self.interp(&self.r1, z),
            tau1: self.interp(&self.tau1, z),
            voc: self.interp(&self.voc, z),
        }
    }
}
