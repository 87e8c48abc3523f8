use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ctlpv_core::baseline::{fmrls_identify, BinnedParameters, FmrlsOutput};
use ctlpv_core::config::RunConfig;
use ctlpv_core::ecm_sim::{default_truth_with_capacity, EcmParameters, SampledDataset};
use ctlpv_core::identify::{
    evaluation_grid, identify as run_identify, parameter_errors, predict_voltage, recover_physical,
    uniform_grid, IdentifiedModel, ParameterErrors, PhysicalCurves, GRID_POINTS, GRID_TRIM,
};
use ctlpv_core::io::{
    read_columns, read_curves_csv, read_dataset_csv, read_json, write_curves_csv,
    write_dataset_csv, write_fmrls_csv, write_json, write_prediction_csv, write_problem_dump,
    ColumnMap, CsvOptions, LoadedDataset, TabulatedParameters,
};
use ctlpv_core::metrics::{rmse_with, vaf_with, RmseVariant, VafVariant};
use ctlpv_core::regression::{build_problem, PerturbMode, ProblemOptions};
use ctlpv_core::solver::SolverReport;
use ctlpv_core::svf::SvfConfig;
use ctlpv_core::{Error, Result};

use crate::{
    BaselineArgs, ConfigArgs, EvaluateArgs, IdentifyArgs, InputArgs, PredictArgs, SimulateArgs,
};

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            RunConfig::from_json_str(&text).map_err(|message| Error::Schema {
                path: path.clone(),
                message,
            })?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.capacity {
        cfg.capacity_ah = v;
    }
    if let Some(v) = args.z0 {
        cfg.z0 = v;
    }
    if let Some(v) = args.segments {
        cfg.n_segments = v;
    }
    if let Some(v) = args.cutoff {
        cfg.cutoff = v;
    }
    if let Some(v) = &args.lambdas {
        cfg.lambdas.copy_from_slice(v);
    }
    if let Some(v) = args.perturb_sigma {
        cfg.perturb_sigma = v;
    }
    if args.perturb_everywhere {
        cfg.perturb_mode = PerturbMode::Everywhere;
    }
    if let Some(v) = args.warmup {
        cfg.warmup = Some(v);
    }
    if let Some(v) = &args.windows {
        cfg.baseline_windows = v.clone();
    }
    if args.rmse_conventional {
        cfg.rmse_variant = RmseVariant::Conventional;
    }
    if args.vaf_conventional {
        cfg.vaf_variant = VafVariant::Conventional;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn csv_options(args: &InputArgs) -> Result<CsvOptions> {
    let mut columns = ColumnMap::default();
    if let Some(spec) = &args.columns {
        columns.parse_overrides(spec)?;
    }
    Ok(CsvOptions {
        columns,
        discharge_positive: args.discharge_positive,
        resample: args.resample,
    })
}

/// Initial SOC: the file's SOC column when present, the configured value
/// otherwise.
fn initial_soc(loaded: &LoadedDataset, cfg: &RunConfig) -> f64 {
    loaded.z.as_ref().map(|z| z[0]).unwrap_or(cfg.z0)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn load_truth(path: &Path) -> Result<TabulatedParameters> {
    TabulatedParameters::new(read_curves_csv(path)?)
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = load_config(&args.cfg)?;
    let sim = &mut cfg.simulation;
    if let Some(p) = args.profile {
        sim.profile = p;
    }
    if let Some(a) = args.amps {
        sim.amplitude = a;
    }
    if let Some(n) = args.noise {
        sim.noise_std = n;
    }
    if let Some(d) = args.duration {
        sim.duration = d;
    }
    if let Some(r) = args.rest {
        sim.leading_rest = Some(r);
    }
    if let Some(dt) = args.dt {
        cfg.dt = dt;
    }
    let run = cfg.simulate()?;
    write_dataset_csv(&args.out, &run.data, Some(&run.z_true))?;

    let truth = default_truth_with_capacity(cfg.capacity_ah);
    let lo = run.z_true.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = run.z_true.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (0.0, 1.0) };
    let curves = PhysicalCurves::sample(&truth, &uniform_grid(lo, hi, GRID_POINTS));
    let truth_path = args
        .truth_out
        .unwrap_or_else(|| sibling(&args.out, "_truth.csv"));
    write_curves_csv(&truth_path, &curves)?;
    log::info!(
        "wrote {} samples to {} and truth to {}",
        run.data.len(),
        args.out.display(),
        truth_path.display()
    );
    Ok(())
}

/// Fit of a predicted voltage under both metric conventions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub rmse: f64,
    pub vaf: f64,
    pub rmse_variant: RmseVariant,
    pub vaf_variant: VafVariant,
    pub rmse_m_plus_one: f64,
    pub rmse_conventional: f64,
    pub vaf_estimate_variance: f64,
    pub vaf_conventional: f64,
    pub samples: usize,
    /// Samples whose SOC was clamped into the model domain.
    pub clamped_samples: usize,
    pub warnings: Vec<String>,
}

fn fit_metrics(measured: &[f64], predicted: &[f64], cfg: &RunConfig) -> Result<FitMetrics> {
    let r_plus = rmse_with(measured, predicted, RmseVariant::MPlusOne)?;
    let r_conv = rmse_with(measured, predicted, RmseVariant::Conventional)?;
    let v_est = vaf_with(measured, predicted, VafVariant::EstimateVariance)?;
    let v_conv = vaf_with(measured, predicted, VafVariant::Conventional)?;
    Ok(FitMetrics {
        rmse: match cfg.rmse_variant {
            RmseVariant::MPlusOne => r_plus,
            RmseVariant::Conventional => r_conv,
        },
        vaf: match cfg.vaf_variant {
            VafVariant::EstimateVariance => v_est,
            VafVariant::Conventional => v_conv,
        },
        rmse_variant: cfg.rmse_variant,
        vaf_variant: cfg.vaf_variant,
        rmse_m_plus_one: r_plus,
        rmse_conventional: r_conv,
        vaf_estimate_variance: v_est,
        vaf_conventional: v_conv,
        samples: measured.len(),
        clamped_samples: 0,
        warnings: Vec::new(),
    })
}

fn predict_on(
    model: &IdentifiedModel,
    data: &SampledDataset,
    z0: f64,
    cfg: &RunConfig,
) -> Result<(Vec<f64>, FitMetrics)> {
    let mut warnings = Vec::new();
    let dt = data.dt();
    if (model.metadata.dt - dt).abs() > 1e-9 * dt {
        let msg = format!(
            "model was identified at dt = {} s but the data has dt = {dt} s; using the data's",
            model.metadata.dt
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let pred = predict_voltage(model, &data.i_b, dt, z0, cfg.capacity_ah)?;
    let mut metrics = fit_metrics(&data.v_b, &pred.v_b, cfg)?;
    if pred.clamped > 0 {
        let (lo, hi) = model.basis.domain();
        warnings.push(format!(
            "SOC left the model domain [{lo}, {hi}] at {} samples and was clamped",
            pred.clamped
        ));
    }
    metrics.clamped_samples = pred.clamped;
    metrics.warnings = warnings;
    Ok((pred.v_b, metrics))
}

#[derive(Debug, Serialize)]
struct IdentifyReport<'a> {
    samples: usize,
    rows: usize,
    warmup: usize,
    soc_range: (f64, f64),
    basis_functions: usize,
    fraction_valid: f64,
    training_fit: FitMetrics,
    /// RMSE of each parameter against the supplied truth on the
    /// evaluation grid.
    parameter_errors: Option<ParameterErrors>,
    stage1: &'a SolverReport,
    stage2: &'a SolverReport,
    config: &'a RunConfig,
}

pub fn identify(args: IdentifyArgs) -> Result<()> {
    let cfg = load_config(&args.cfg)?;
    let loaded = read_dataset_csv(&args.data, &csv_options(&args.input)?)?;
    let z0 = initial_soc(&loaded, &cfg);
    let data = cfg.dataset_with_soc(loaded)?;
    let opts = cfg.identify_options();

    if let Some(path) = &args.dump_problem {
        let (lo, hi) = ctlpv_core::identify::soc_domain(&data, &opts)?;
        let basis = ctlpv_core::bspline::SplineBasis::clamped_uniform(lo, hi, opts.n_segments)?;
        let problem = build_problem(
            &data,
            &basis,
            &ProblemOptions {
                svf: SvfConfig::new(opts.cutoff, data.dt())?,
                perturb_sigma: opts.perturb_sigma,
                perturb_mode: opts.perturb_mode,
                seed: opts.seed,
                warmup: opts.warmup,
            },
        )?;
        write_problem_dump(path, &problem)?;
    }

    let result = run_identify(&data, &opts)?;
    let model = &result.model;
    let grid = evaluation_grid(&model.basis)?;
    let curves = recover_physical(model, &grid)?;
    let (_, training_fit) = predict_on(model, &data, z0, &cfg)?;
    let parameter_errors = match &args.truth {
        Some(path) => Some(parameter_errors(
            &curves,
            &load_truth(path)?,
            cfg.rmse_variant,
        )?),
        None => None,
    };

    let out = &args.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    write_json(&out.join("model.json"), model)?;
    write_curves_csv(&out.join("curves.csv"), &curves)?;
    let report = IdentifyReport {
        samples: data.len(),
        rows: model.metadata.rows,
        warmup: model.metadata.warmup,
        soc_range: model.basis.domain(),
        basis_functions: model.basis.len(),
        fraction_valid: curves.fraction_valid(),
        training_fit,
        parameter_errors,
        stage1: &result.stage1,
        stage2: &result.stage2,
        config: &cfg,
    };
    write_json(&out.join("report.json"), &report)?;
    if curves.fraction_valid() < 1.0 {
        log::warn!(
            "{:.1}% of the evaluation grid has a non-physical time constant or R1",
            100.0 * (1.0 - curves.fraction_valid())
        );
    }
    Ok(())
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let cfg = load_config(&args.cfg)?;
    let model: IdentifiedModel = read_json(&args.model)?;
    model.validate().map_err(|e| Error::Schema {
        path: args.model.clone(),
        message: e.to_string(),
    })?;
    let loaded = read_dataset_csv(&args.data, &csv_options(&args.input)?)?;
    let z0 = initial_soc(&loaded, &cfg);
    let data = loaded.data;
    let (v_hat, metrics) = predict_on(&model, &data, z0, &cfg)?;
    write_prediction_csv(&args.out, &data.t, &data.v_b, &v_hat)?;
    let metrics_path = args
        .metrics
        .unwrap_or_else(|| sibling(&args.out, "_metrics.json"));
    write_json(&metrics_path, &metrics)
}

#[derive(Debug, Serialize)]
struct WindowSummary {
    window: usize,
    fraction_valid: f64,
    /// Errors of SOC-binned median curves on the evaluation grid.
    binned_errors: Option<ParameterErrors>,
    /// Errors of the valid per-sample estimates inside the grid range.
    per_sample_errors: Option<ParameterErrors>,
    file: String,
}

#[derive(Debug, Serialize)]
struct BaselineReport {
    windows: Vec<WindowSummary>,
    /// Smallest binned error of each parameter over all windows.
    best_binned: Option<ParameterErrors>,
    ctlpv: Option<ParameterErrors>,
    /// Whether the spline model beats the best window on each parameter.
    ctlpv_ahead: Option<[bool; 4]>,
    grid: (f64, f64),
}

fn per_sample_errors<P: EcmParameters + ?Sized>(
    out: &FmrlsOutput,
    truth: &P,
    range: (f64, f64),
    variant: RmseVariant,
) -> Result<Option<ParameterErrors>> {
    let Some(z) = &out.z else { return Ok(None) };
    let idx: Vec<usize> = (0..out.len())
        .filter(|&k| out.valid[k] && z[k] >= range.0 && z[k] <= range.1)
        .collect();
    if idx.is_empty() {
        return Ok(None);
    }
    let pick = |s: &[f64]| idx.iter().map(|&k| s[k]).collect::<Vec<_>>();
    let estimates = PhysicalCurves {
        z: pick(z),
        r0: pick(&out.r0),
        r1: pick(&out.r1),
        tau1: pick(&out.tau1),
        voc: pick(&out.voc),
        valid: vec![true; idx.len()],
    };
    parameter_errors(&estimates, truth, variant).map(Some)
}

fn min_errors(a: ParameterErrors, b: ParameterErrors) -> ParameterErrors {
    ParameterErrors {
        r0: a.r0.min(b.r0),
        r1: a.r1.min(b.r1),
        tau1: a.tau1.min(b.tau1),
        voc: a.voc.min(b.voc),
    }
}

pub fn baseline(args: BaselineArgs) -> Result<()> {
    let cfg = load_config(&args.cfg)?;
    let loaded = read_dataset_csv(&args.data, &csv_options(&args.input)?)?;
    let data = cfg.dataset_with_soc(loaded)?;
    let truth = args.truth.as_deref().map(load_truth).transpose()?;
    let model: Option<IdentifiedModel> = args.model.as_deref().map(read_json).transpose()?;

    let grid = match &model {
        Some(m) => evaluation_grid(&m.basis)?,
        None => {
            let z = data.z.as_ref().expect("SOC attached");
            let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo <= 2.0 * GRID_TRIM {
                return Err(Error::InvalidRange(format!(
                    "SOC span [{lo}, {hi}] too narrow for the evaluation grid"
                )));
            }
            uniform_grid(lo + GRID_TRIM, hi - GRID_TRIM, GRID_POINTS)
        }
    };
    let range = (grid[0], grid[grid.len() - 1]);

    let out_dir = &args.out_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.clone(),
        source: e,
    })?;
    let mut windows = Vec::new();
    let mut best: Option<ParameterErrors> = None;
    for &w in &cfg.baseline_windows {
        let out = fmrls_identify(&data, &cfg.fmrls_config(w, data.dt()))?;
        let file = format!("fmrls_w{w}.csv");
        write_fmrls_csv(&out_dir.join(&file), &out)?;
        let fraction_valid = out.valid.iter().filter(|v| **v).count() as f64 / out.len() as f64;
        let (binned_errors, per_sample) = match &truth {
            Some(t) => {
                let binned = match BinnedParameters::from_output(&out, 0.01) {
                    Ok(b) => Some(parameter_errors(
                        &PhysicalCurves::sample(&b, &grid),
                        t,
                        cfg.rmse_variant,
                    )?),
                    Err(Error::InsufficientData { .. }) => None,
                    Err(e) => return Err(e),
                };
                (binned, per_sample_errors(&out, t, range, cfg.rmse_variant)?)
            }
            None => (None, None),
        };
        if let Some(e) = binned_errors {
            best = Some(best.map_or(e, |b| min_errors(b, e)));
        }
        windows.push(WindowSummary {
            window: w,
            fraction_valid,
            binned_errors,
            per_sample_errors: per_sample,
            file,
        });
    }
    let ctlpv = match (&model, &truth) {
        (Some(m), Some(t)) => Some(parameter_errors(
            &recover_physical(m, &grid)?,
            t,
            cfg.rmse_variant,
        )?),
        _ => None,
    };
    let ctlpv_ahead = match (ctlpv, best) {
        (Some(c), Some(b)) => Some([c.r0 < b.r0, c.r1 < b.r1, c.tau1 < b.tau1, c.voc < b.voc]),
        _ => None,
    };
    write_json(
        &out_dir.join("baseline.json"),
        &BaselineReport {
            windows,
            best_binned: best,
            ctlpv,
            ctlpv_ahead,
            grid: range,
        },
    )
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = load_config(&args.cfg)?;
    let est_col = args.estimate_column.as_deref().unwrap_or(&args.column);
    let (reference, _) = read_columns(&args.reference, &args.column, &args.column)?;
    let (estimate, _) = read_columns(&args.estimate, est_col, est_col)?;
    let metrics = fit_metrics(&reference, &estimate, &cfg)?;
    match &args.out {
        Some(path) => write_json(path, &metrics),
        None => {
            let text = serde_json::to_string_pretty(&metrics).map_err(|e| Error::Json {
                path: PathBuf::from("<stdout>"),
                source: e,
            })?;
            println!("{text}");
            Ok(())
        }
    }
}
