//! Prefiltered regression problem for the LPV input-output battery model
//!
//! ```text
//! F1[v_b] = F0[g v_b] c_a1 + F1[g i_b] c_b0 + F0[g i_b] c_b1
//!         + F1[g] c_voc + F0[g] c_a1voc
//! ```
//!
//! where `g` is the vector of spline basis functions evaluated along the SOC
//! trajectory. Products with `g` are formed sample by sample and then
//! filtered.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bspline::SplineBasis;
use crate::ecm_sim::SampledDataset;
use crate::error::{Error, Result};
use crate::svf::{svf_pair, svf_warmup_length, SvfConfig};

/// Number of coefficient blocks in the regressor.
pub const N_BLOCKS: usize = 5;

/// Coefficient blocks in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    A1 = 0,
    B0 = 1,
    B1 = 2,
    Voc = 3,
    A1Voc = 4,
}

/// Where the perturbed SOC replaces the measured one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbMode {
    /// Only the pure basis blocks `F1[g]`, `F0[g]`.
    SchedulingOnly,
    /// Every basis evaluation.
    Everywhere,
}

/// Adds i.i.d. Gaussian noise of standard deviation `sigma` to `z` and
/// clamps the result to `domain`.
pub fn perturb_soc(z: &[f64], sigma: f64, seed: u64, domain: (f64, f64)) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!(
            "perturbation sigma must be non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(z.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(z.iter()
        .map(|&v| (v + normal.sample(&mut rng)).clamp(domain.0, domain.1))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemOptions {
    pub svf: SvfConfig,
    pub perturb_sigma: f64,
    pub perturb_mode: PerturbMode,
    pub seed: u64,
    /// Overrides the number of leading samples dropped after filtering.
    pub warmup: Option<usize>,
}

/// `y ~ A c` after prefiltering, with the first `warmup` samples dropped.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub y: DVector<f64>,
    pub a: DMatrix<f64>,
    pub basis: SplineBasis,
    /// Index into the original series of every retained row.
    pub sample_index: Vec<usize>,
    pub svf: SvfConfig,
    pub warmup: usize,
    /// SOC used for the pure basis blocks, over the full series.
    pub z_sched: Vec<f64>,
    pub perturb_sigma: f64,
    pub perturb_mode: PerturbMode,
    pub seed: u64,
}

impl RegressionProblem {
    /// Number of basis functions.
    pub fn h(&self) -> usize {
        self.basis.len()
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn block_range(&self, block: Block) -> std::ops::Range<usize> {
        let h = self.h();
        let start = block as usize * h;
        start..start + h
    }

    /// `F0[(g'c) g]` over the retained rows: the basis modulated by the
    /// spline with control points `weights`, then filtered.
    pub fn filtered_modulated_basis(&self, weights: &[f64]) -> Result<DMatrix<f64>> {
        let h = self.h();
        if weights.len() != h {
            return Err(Error::LengthMismatch {
                left: weights.len(),
                right: h,
            });
        }
        let evals = nonzero_table(&self.basis, &self.z_sched)?;
        let modulation: Vec<f64> = evals
            .iter()
            .map(|(first, vals)| {
                vals.iter()
                    .zip(&weights[*first..])
                    .map(|(g, w)| g * w)
                    .sum()
            })
            .collect();
        let mut out = DMatrix::zeros(self.rows(), h);
        let mut signal = vec![0.0; self.z_sched.len()];
        for i in 0..h {
            fill_basis_signal(&evals, i, |k| modulation[k], &mut signal);
            let (f0, _) = svf_pair(&signal, &self.svf);
            out.column_mut(i).copy_from_slice(&f0[self.warmup..]);
        }
        Ok(out)
    }
}

type NonzeroTable = Vec<(usize, Vec<f64>)>;

fn nonzero_table(basis: &SplineBasis, z: &[f64]) -> Result<NonzeroTable> {
    z.iter()
        .enumerate()
        .map(|(k, &zk)| {
            basis.eval_nonzero(zk).map_err(|e| match e {
                Error::OutOfDomain { z, lo, hi, .. } => Error::OutOfDomain {
                    z,
                    lo,
                    hi,
                    index: Some(k),
                },
                other => other,
            })
        })
        .collect()
}

// signal[k] = g_i(z[k]) * factor(k)
fn fill_basis_signal(
    evals: &NonzeroTable,
    i: usize,
    factor: impl Fn(usize) -> f64,
    signal: &mut [f64],
) {
    for (k, (first, vals)) in evals.iter().enumerate() {
        signal[k] = if i >= *first && i < first + vals.len() {
            vals[i - first] * factor(k)
        } else {
            0.0
        };
    }
}

/// Assembles the prefiltered regression problem for `data` on `basis`.
pub fn build_problem(
    data: &SampledDataset,
    basis: &SplineBasis,
    opts: &ProblemOptions,
) -> Result<RegressionProblem> {
    let z = data
        .z
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("dataset has no SOC series".into()))?;
    opts.svf.validate()?;
    if (opts.svf.dt - data.dt()).abs() > 1e-9 * data.dt() {
        return Err(Error::InvalidInput(format!(
            "SVF dt {} differs from data dt {}",
            opts.svf.dt,
            data.dt()
        )));
    }
    let m = data.len();
    let h = basis.len();
    let warmup = opts.warmup.unwrap_or_else(|| svf_warmup_length(&opts.svf));
    let needed = warmup + N_BLOCKS * h;
    if m < needed {
        return Err(Error::InsufficientData { needed, got: m });
    }

    let z_tilde = perturb_soc(z, opts.perturb_sigma, opts.seed, basis.domain())?;
    let sched = nonzero_table(basis, &z_tilde)?;
    let modulated = match opts.perturb_mode {
        PerturbMode::Everywhere => sched.clone(),
        PerturbMode::SchedulingOnly => nonzero_table(basis, z)?,
    };

    let rows = m - warmup;
    let mut a = DMatrix::zeros(rows, N_BLOCKS * h);
    let mut signal = vec![0.0; m];
    for i in 0..h {
        fill_basis_signal(&modulated, i, |k| data.v_b[k], &mut signal);
        let (f0, _) = svf_pair(&signal, &opts.svf);
        a.column_mut(i).copy_from_slice(&f0[warmup..]);

        fill_basis_signal(&modulated, i, |k| data.i_b[k], &mut signal);
        let (f0, f1) = svf_pair(&signal, &opts.svf);
        a.column_mut(h + i).copy_from_slice(&f1[warmup..]);
        a.column_mut(2 * h + i).copy_from_slice(&f0[warmup..]);

        fill_basis_signal(&sched, i, |_| 1.0, &mut signal);
        let (f0, f1) = svf_pair(&signal, &opts.svf);
        a.column_mut(3 * h + i).copy_from_slice(&f1[warmup..]);
        a.column_mut(4 * h + i).copy_from_slice(&f0[warmup..]);
    }
    let (_, target) = svf_pair(&data.v_b, &opts.svf);
    let y = DVector::from_column_slice(&target[warmup..]);

    if a.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite regressor".into()));
    }
    Ok(RegressionProblem {
        y,
        a,
        basis: basis.clone(),
        sample_index: (warmup..m).collect(),
        svf: opts.svf,
        warmup,
        z_sched: z_tilde,
        perturb_sigma: opts.perturb_sigma,
        perturb_mode: opts.perturb_mode,
        seed: opts.seed,
    })
}
