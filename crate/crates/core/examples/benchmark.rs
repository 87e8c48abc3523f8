//! Runs the simulated benchmark and prints parameter errors for the spline
//! model and the windowed least-squares baseline.
//!
//! ```text
//! cargo run --release -p ctlpv-core --example benchmark -- [lti|soc] [lambda_scale]
//! ```

use std::time::Instant;

use ctlpv_core::baseline::{fmrls_identify, BinnedParameters, FmrlsConfig, DEFAULT_WINDOWS};
use ctlpv_core::ecm_sim::{
    default_truth, generate_profile, simulate, EcmTruth, ProfileKind, SimOptions,
};
use ctlpv_core::identify::{
    evaluation_grid, identify, parameter_errors, recover_physical, IdentifyOptions, PhysicalCurves,
};
use ctlpv_core::metrics::RmseVariant;
use ctlpv_core::svf::{svf_warmup_length, SvfConfig};

fn main() -> ctlpv_core::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let case = args.get(1).map(String::as_str).unwrap_or("soc");
    let scale: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);

    let (truth, noise) = match case {
        "lti" => (EcmTruth::constant(0.1, 0.3, 18.0, 3.6, 2.0), 0.0),
        _ => (default_truth(), 0.01),
    };
    let sim = SimOptions {
        noise_std: noise,
        ..SimOptions::default()
    };
    let mut opts = IdentifyOptions::default();
    for l in opts.lambdas.iter_mut() {
        *l *= scale;
    }
    let rest = svf_warmup_length(&SvfConfig::new(opts.cutoff, sim.dt)?) as f64 * sim.dt;
    let profile = generate_profile(ProfileKind::DstLike, 1e6, 1.0, 1)?.with_leading_rest(rest);
    let t0 = Instant::now();
    let run = simulate(&truth, &profile, &sim)?;
    let data = run
        .data
        .clone()
        .with_soc(ctlpv_core::ecm_sim::coulomb_count(
            &run.data.i_b,
            sim.dt,
            sim.z0,
            truth.capacity_ah,
        )?)?;
    println!("samples {} ({:.1?})", data.len(), t0.elapsed());

    let t0 = Instant::now();
    let id = identify(&data, &opts)?;
    println!(
        "identify {:.1?}: stage1 iters {} conv {} polished {} | stage2 iters {} conv {} polished {}",
        t0.elapsed(),
        id.stage1.iterations,
        id.stage1.converged,
        id.stage1.polished,
        id.stage2.iterations,
        id.stage2.converged,
        id.stage2.polished
    );
    let grid = evaluation_grid(&id.model.basis)?;
    let curves = recover_physical(&id.model, &grid)?;
    let err = parameter_errors(&curves, &truth, RmseVariant::MPlusOne)?;
    println!("ctlpv   {err:?} valid {:.3}", curves.fraction_valid());
    let inner: Vec<f64> = grid
        .iter()
        .copied()
        .filter(|z| (0.05..=0.75).contains(z))
        .collect();
    let c = recover_physical(&id.model, &inner)?;
    let t = PhysicalCurves::sample(&truth, &inner);
    let maxrel = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| ((x - y) / y).abs())
            .fold(0.0, f64::max)
    };
    println!(
        "max rel on [0.05,0.75]: r0 {:.2e} r1 {:.2e} tau1 {:.2e} voc {:.2e}",
        maxrel(&c.r0, &t.r0),
        maxrel(&c.r1, &t.r1),
        maxrel(&c.tau1, &t.tau1),
        maxrel(&c.voc, &t.voc)
    );

    for w in DEFAULT_WINDOWS {
        let t0 = Instant::now();
        let out = fmrls_identify(&data, &FmrlsConfig::new(w, sim.dt))?;
        let binned = BinnedParameters::from_output(&out, 0.01)?;
        let b = PhysicalCurves::sample(&binned, &grid);
        let e = parameter_errors(&b, &truth, RmseVariant::MPlusOne)?;
        println!("fmrls {w:4} {:.1?} {e:?}", t0.elapsed());
    }
    Ok(())
}
