//! Two-stage identification, recovery of the circuit parameters and
//! voltage prediction with the identified model.
//!
//! Stage 1 fits all five coefficient blocks and penalizes the jumps of the
//! third derivative of `a1`, `b0` and `b1`. Stage 2 keeps the dynamic part
//! fixed and re-fits `voc` alone from
//!
//! ```text
//! y - A_dyn c_dyn = (F1[g] - F0[a1 g]) c_voc
//! ```
//!
//! which ties the `a1*voc` block to the estimated `a1` instead of leaving it
//! free.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bspline::{SplineBasis, SplineCurve};
use crate::ecm_sim::{ecm_voltage, soc_trajectory, EcmParameters, EcmPoint, SampledDataset};
use crate::error::{Error, Result};
use crate::metrics::{rmse_with, RmseVariant};
use crate::regression::{build_problem, Block, PerturbMode, ProblemOptions, RegressionProblem};
use crate::solver::{difference_matrix, solve_l1_ls, L1Penalty, SolverOptions, SolverReport};
use crate::svf::SvfConfig;

/// Penalty weights for `a1`, `b0`, `b1` (stage 1) and `voc` (stage 2).
pub const DEFAULT_LAMBDAS: [f64; 4] = [3e-5, 5e-7, 5e-5, 2e-5];
/// SVF cut-off for simulated data, rad/s.
pub const CUTOFF_SIMULATED: f64 = 1e-3;
/// SVF cut-off for laboratory data, rad/s.
pub const CUTOFF_MEASURED: f64 = 1e-4;
pub const DEFAULT_PERTURB_SIGMA: f64 = 1e-4;
pub const DEFAULT_SEGMENTS: usize = 80;
/// Points in the evaluation grid.
pub const GRID_POINTS: usize = 1000;
/// SOC trimmed from each end of the identified range before evaluation.
pub const GRID_TRIM: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifyOptions {
    pub n_segments: usize,
    /// Spline domain; the SOC range of the data when absent.
    pub soc_range: Option<(f64, f64)>,
    pub cutoff: f64,
    pub lambdas: [f64; 4],
    pub perturb_sigma: f64,
    pub perturb_mode: PerturbMode,
    pub seed: u64,
    pub warmup: Option<usize>,
    pub solver: SolverOptions,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        IdentifyOptions {
            n_segments: DEFAULT_SEGMENTS,
            soc_range: None,
            cutoff: CUTOFF_SIMULATED,
            lambdas: DEFAULT_LAMBDAS,
            perturb_sigma: DEFAULT_PERTURB_SIGMA,
            perturb_mode: PerturbMode::SchedulingOnly,
            seed: 1,
            warmup: None,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub cutoff: f64,
    pub dt: f64,
    pub lambdas: [f64; 4],
    pub perturb_sigma: f64,
    pub perturb_mode: PerturbMode,
    pub seed: u64,
    pub warmup: usize,
    pub rows: usize,
}

/// Control points of the identified input-output model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedModel {
    pub basis: SplineBasis,
    pub c_a1: Vec<f64>,
    pub c_b0: Vec<f64>,
    pub c_b1: Vec<f64>,
    /// Stage-2 OCV.
    pub c_voc: Vec<f64>,
    /// Stage-1 `a1*voc` block, kept for diagnostics.
    pub c_a1voc: Vec<f64>,
    /// Stage-1 OCV, kept for diagnostics.
    pub c_voc_stage1: Vec<f64>,
    pub metadata: ModelMetadata,
}

/// Values of the model coefficients at one SOC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IoPoint {
    pub a1: f64,
    pub b0: f64,
    pub b1: f64,
    pub voc: f64,
}

impl IdentifiedModel {
    pub fn curve(&self, block: Block) -> SplineCurve {
        let c = match block {
            Block::A1 => &self.c_a1,
            Block::B0 => &self.c_b0,
            Block::B1 => &self.c_b1,
            Block::Voc => &self.c_voc,
            Block::A1Voc => &self.c_a1voc,
        };
        SplineCurve::new(self.basis.clone(), c.clone()).expect("control points match basis")
    }

    pub fn io_at(&self, z: f64) -> Result<IoPoint> {
        let (first, g) = self.basis.eval_nonzero(z)?;
        let dot = |c: &[f64]| g.iter().zip(&c[first..]).map(|(a, b)| a * b).sum::<f64>();
        Ok(IoPoint {
            a1: dot(&self.c_a1),
            b0: dot(&self.c_b0),
            b1: dot(&self.c_b1),
            voc: dot(&self.c_voc),
        })
    }

    /// Checks that every control-point vector matches the basis.
    pub fn validate(&self) -> Result<()> {
        let h = self.basis.len();
        for c in [
            &self.c_a1,
            &self.c_b0,
            &self.c_b1,
            &self.c_voc,
            &self.c_a1voc,
            &self.c_voc_stage1,
        ] {
            if c.len() != h {
                return Err(Error::LengthMismatch {
                    left: c.len(),
                    right: h,
                });
            }
        }
        Ok(())
    }
}

/// Circuit parameters from the input-output coefficients.
pub fn physical_from_io(p: IoPoint) -> EcmPoint {
    let tau1 = -1.0 / p.a1;
    EcmPoint {
        r0: p.b0,
        r1: p.b1 * tau1 - p.b0,
        tau1,
        voc: p.voc,
    }
}

/// Input-output coefficients from circuit parameters.
pub fn io_from_physical(p: EcmPoint) -> IoPoint {
    IoPoint {
        a1: -1.0 / p.tau1,
        b0: p.r0,
        b1: (p.r0 + p.r1) / p.tau1,
        voc: p.voc,
    }
}

impl EcmParameters for IdentifiedModel {
    /// SOC outside the spline domain is clamped to it.
    fn at(&self, z: f64) -> EcmPoint {
        let io = self
            .io_at(self.basis.clamp(z))
            .expect("clamped SOC lies in the domain");
        physical_from_io(io)
    }
}

/// Circuit parameter curves over an SOC grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalCurves {
    pub z: Vec<f64>,
    pub r0: Vec<f64>,
    pub r1: Vec<f64>,
    pub tau1: Vec<f64>,
    pub voc: Vec<f64>,
    /// False where `a1 >= 0` or `R1 <= 0`.
    pub valid: Vec<bool>,
}

impl PhysicalCurves {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn sample<P: EcmParameters + ?Sized>(params: &P, grid: &[f64]) -> Self {
        let mut out = PhysicalCurves {
            z: grid.to_vec(),
            r0: Vec::with_capacity(grid.len()),
            r1: Vec::with_capacity(grid.len()),
            tau1: Vec::with_capacity(grid.len()),
            voc: Vec::with_capacity(grid.len()),
            valid: Vec::with_capacity(grid.len()),
        };
        for &z in grid {
            let p = params.at(z);
            out.r0.push(p.r0);
            out.r1.push(p.r1);
            out.tau1.push(p.tau1);
            out.voc.push(p.voc);
            out.valid.push(p.tau1 > 0.0 && p.r1 > 0.0);
        }
        out
    }

    pub fn fraction_valid(&self) -> f64 {
        self.valid.iter().filter(|v| **v).count() as f64 / self.len().max(1) as f64
    }
}

pub fn recover_physical(model: &IdentifiedModel, grid: &[f64]) -> Result<PhysicalCurves> {
    let mut out = PhysicalCurves {
        z: grid.to_vec(),
        r0: Vec::with_capacity(grid.len()),
        r1: Vec::with_capacity(grid.len()),
        tau1: Vec::with_capacity(grid.len()),
        voc: Vec::with_capacity(grid.len()),
        valid: Vec::with_capacity(grid.len()),
    };
    for (k, &z) in grid.iter().enumerate() {
        let io = model.io_at(z).map_err(|e| match e {
            Error::OutOfDomain { z, lo, hi, .. } => Error::OutOfDomain {
                z,
                lo,
                hi,
                index: Some(k),
            },
            other => other,
        })?;
        let p = physical_from_io(io);
        out.r0.push(p.r0);
        out.r1.push(p.r1);
        out.tau1.push(p.tau1);
        out.voc.push(p.voc);
        out.valid.push(io.a1 < 0.0 && p.r1 > 0.0);
    }
    Ok(out)
}

/// `n` uniformly spaced points on `[lo, hi]`, endpoints included.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// The standard evaluation grid of a spline domain, trimmed at both ends.
pub fn evaluation_grid(basis: &SplineBasis) -> Result<Vec<f64>> {
    let (lo, hi) = basis.domain();
    let (a, b) = (lo + GRID_TRIM, hi - GRID_TRIM);
    if !(a < b) {
        return Err(Error::InvalidRange(format!(
            "SOC range [{lo}, {hi}] too narrow for the evaluation grid"
        )));
    }
    Ok(uniform_grid(a, b, GRID_POINTS))
}

/// Jump operator `D G3` of a cubic basis: differences of the per-interval
/// third derivative. Empty for a single-segment basis.
pub fn jump_operator(basis: &SplineBasis) -> Result<DMatrix<f64>> {
    let g3 = basis.third_derivative_knot_matrix()?;
    if g3.nrows() < 2 {
        return Ok(DMatrix::zeros(0, basis.len()));
    }
    Ok(difference_matrix(g3.nrows())? * g3)
}

fn embedded_penalty(op: &DMatrix<f64>, weight: f64, offset: usize, n: usize) -> L1Penalty {
    let mut m = DMatrix::zeros(op.nrows(), n);
    m.view_mut((0, offset), (op.nrows(), op.ncols()))
        .copy_from(op);
    L1Penalty::new(weight, m)
}

/// Stage 1 over all five blocks. Returns the `5h` coefficient vector.
pub fn identify_stage1(
    problem: &RegressionProblem,
    lambdas: [f64; 3],
    solver: &SolverOptions,
) -> Result<(Vec<f64>, SolverReport)> {
    let op = jump_operator(&problem.basis)?;
    let n = problem.a.ncols();
    let penalties: Vec<L1Penalty> = [Block::A1, Block::B0, Block::B1]
        .iter()
        .zip(lambdas)
        .filter(|_| op.nrows() > 0)
        .map(|(&b, w)| embedded_penalty(&op, w, problem.block_range(b).start, n))
        .collect();
    let report = solve_l1_ls(&problem.y, &problem.a, &penalties, solver)?;
    Ok((report.solution.clone(), report))
}

/// Stage 2: re-fits the OCV control points with the dynamic blocks fixed.
pub fn identify_stage2(
    problem: &RegressionProblem,
    c_dyn: &[f64],
    lambda4: f64,
    solver: &SolverOptions,
) -> Result<(Vec<f64>, SolverReport)> {
    let h = problem.h();
    if c_dyn.len() != 3 * h {
        return Err(Error::LengthMismatch {
            left: c_dyn.len(),
            right: 3 * h,
        });
    }
    let dyn_cols = problem.a.columns(0, 3 * h);
    let psi = &problem.y - dyn_cols * DVector::from_column_slice(c_dyn);
    let modulated = problem.filtered_modulated_basis(&c_dyn[..h])?;
    let regressor = problem.a.columns(problem.block_range(Block::Voc).start, h) - modulated;

    let op = jump_operator(&problem.basis)?;
    let penalties = if op.nrows() > 0 {
        vec![L1Penalty::new(lambda4, op)]
    } else {
        Vec::new()
    };
    let report = solve_l1_ls(&psi, &regressor, &penalties, solver)?;
    Ok((report.solution.clone(), report))
}

/// Everything produced by one identification run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Identification {
    pub model: IdentifiedModel,
    pub stage1: SolverReport,
    pub stage2: SolverReport,
}

fn accept_unconverged(
    result: Result<(Vec<f64>, SolverReport)>,
    stage: &str,
) -> Result<(Vec<f64>, SolverReport)> {
    match result {
        Err(Error::NotConverged(report)) => {
            log::warn!(
                "{stage} stopped after {} iterations without meeting the tolerance; using best iterate",
                report.iterations
            );
            Ok((report.solution.clone(), *report))
        }
        other => other,
    }
}

/// Spline domain for `data`: the configured range or the data's SOC span.
pub fn soc_domain(data: &SampledDataset, opts: &IdentifyOptions) -> Result<(f64, f64)> {
    if let Some(range) = opts.soc_range {
        return Ok(range);
    }
    let z = data
        .z
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("dataset has no SOC series".into()))?;
    let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Full pipeline: regression assembly, both stages and model assembly.
pub fn identify(data: &SampledDataset, opts: &IdentifyOptions) -> Result<Identification> {
    let (lo, hi) = soc_domain(data, opts)?;
    let basis = SplineBasis::clamped_uniform(lo, hi, opts.n_segments)?;
    let svf = SvfConfig::new(opts.cutoff, data.dt())?;
    let problem = build_problem(
        data,
        &basis,
        &ProblemOptions {
            svf,
            perturb_sigma: opts.perturb_sigma,
            perturb_mode: opts.perturb_mode,
            seed: opts.seed,
            warmup: opts.warmup,
        },
    )?;
    log::info!(
        "regression problem: {} rows, {} columns, warm-up {}",
        problem.rows(),
        problem.a.ncols(),
        problem.warmup
    );
    let [l1, l2, l3, l4] = opts.lambdas;
    let (c, stage1) = accept_unconverged(
        identify_stage1(&problem, [l1, l2, l3], &opts.solver),
        "stage 1",
    )?;
    let h = problem.h();
    let (c_voc, stage2) = accept_unconverged(
        identify_stage2(&problem, &c[..3 * h], l4, &opts.solver),
        "stage 2",
    )?;
    let block = |b: Block| c[problem.block_range(b)].to_vec();
    let model = IdentifiedModel {
        basis,
        c_a1: block(Block::A1),
        c_b0: block(Block::B0),
        c_b1: block(Block::B1),
        c_voc,
        c_a1voc: block(Block::A1Voc),
        c_voc_stage1: block(Block::Voc),
        metadata: ModelMetadata {
            cutoff: opts.cutoff,
            dt: data.dt(),
            lambdas: opts.lambdas,
            perturb_sigma: opts.perturb_sigma,
            perturb_mode: opts.perturb_mode,
            seed: opts.seed,
            warmup: problem.warmup,
            rows: problem.rows(),
        },
    };
    Ok(Identification {
        model,
        stage1,
        stage2,
    })
}

/// Simulated terminal voltage plus the SOC trajectory used.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub v_b: Vec<f64>,
    pub z: Vec<f64>,
    /// Samples whose SOC was clamped by more than [`CLAMP_TOLERANCE`].
    pub clamped: usize,
}

/// Excursions outside the spline domain smaller than this are clamped
/// without being reported; coulomb counting of noisy current drifts by about
/// this much over long records.
pub const CLAMP_TOLERANCE: f64 = 1e-3;

/// Runs the identified model on a current record, starting relaxed.
pub fn predict_voltage(
    model: &IdentifiedModel,
    i_b: &[f64],
    dt: f64,
    z0: f64,
    capacity_ah: f64,
) -> Result<Prediction> {
    let raw = soc_trajectory(i_b, dt, z0, capacity_ah)?;
    let z: Vec<f64> = raw.iter().map(|&v| model.basis.clamp(v)).collect();
    let clamped = raw
        .iter()
        .zip(&z)
        .filter(|(a, b)| (*a - *b).abs() > CLAMP_TOLERANCE)
        .count();
    if clamped > 0 {
        let (lo, hi) = model.basis.domain();
        log::warn!("SOC left the model domain [{lo}, {hi}] at {clamped} samples; clamped");
    }
    let v_b = ecm_voltage(model, i_b, &z, dt)?;
    Ok(Prediction { v_b, z, clamped })
}

/// Per-parameter RMSE of identified curves against reference parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterErrors {
    pub r0: f64,
    pub r1: f64,
    pub tau1: f64,
    pub voc: f64,
}

pub fn parameter_errors<P: EcmParameters + ?Sized>(
    curves: &PhysicalCurves,
    reference: &P,
    variant: RmseVariant,
) -> Result<ParameterErrors> {
    let truth = PhysicalCurves::sample(reference, &curves.z);
    Ok(ParameterErrors {
        r0: rmse_with(&truth.r0, &curves.r0, variant)?,
        r1: rmse_with(&truth.r1, &curves.r1, variant)?,
        tau1: rmse_with(&truth.tau1, &curves.tau1, variant)?,
        voc: rmse_with(&truth.voc, &curves.voc, variant)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algebraic_inversion() {
        let p = physical_from_io(IoPoint {
            a1: -0.5,
            b0: 0.1,
            b1: 0.2,
            voc: 3.6,
        });
        assert!((p.tau1 - 2.0).abs() < 1e-15);
        assert!((p.r0 - 0.1).abs() < 1e-15);
        assert!((p.r1 - 0.3).abs() < 1e-15);
    }

    #[test]
    fn io_round_trip() {
        let truth = crate::ecm_sim::default_truth();
        for k in 0..=100 {
            let z = k as f64 / 100.0;
            let p = truth.at(z);
            let q = physical_from_io(io_from_physical(p));
            assert!((p.r0 - q.r0).abs() < 1e-12);
            assert!((p.r1 - q.r1).abs() < 1e-12);
            assert!((p.tau1 - q.tau1).abs() < 1e-12);
            assert_eq!(p.voc, q.voc);
        }
    }

    #[test]
    fn grid_shape() {
        let basis = SplineBasis::clamped_uniform(0.0, 0.8, 80).unwrap();
        let g = evaluation_grid(&basis).unwrap();
        assert_eq!(g.len(), GRID_POINTS);
        assert!((g[0] - 0.02).abs() < 1e-15);
        assert!((g[GRID_POINTS - 1] - 0.78).abs() < 1e-15);
    }

    #[test]
    fn jump_operator_kills_cubics() {
        let basis = SplineBasis::clamped_uniform(0.0, 0.8, 10).unwrap();
        let op = jump_operator(&basis).unwrap();
        assert_eq!(op.shape(), (9, 13));
        // a global cubic fitted exactly has no third-derivative jumps
        let z = uniform_grid(0.0, 0.8, 200);
        let v: Vec<f64> = z.iter().map(|x| 1.0 - 2.0 * x + x * x * x).collect();
        let c = SplineCurve::fit(basis, &z, &v, 0.0).unwrap();
        let jumps = op * DVector::from_column_slice(c.control_points());
        assert!(jumps.amax() < 1e-7, "{}", jumps.amax());
        let single = SplineBasis::clamped_uniform(0.0, 1.0, 1).unwrap();
        assert_eq!(jump_operator(&single).unwrap().nrows(), 0);
    }
}
