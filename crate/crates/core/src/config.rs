//! Run configuration shared by every command.
//!
//! A single JSON document; any field left out takes its default, unknown
//! fields are rejected.

use serde::{Deserialize, Serialize};

use crate::baseline::{FmrlsConfig, FmrlsMode, DEFAULT_WINDOWS, MIN_WINDOW};
use crate::ecm_sim::{
    default_truth_with_capacity, generate_profile, simulate, ProfileKind, SampledDataset,
    SimOptions, SimulatedRun, DEFAULT_CAPACITY_AH, DEFAULT_Z_FLOOR,
};
use crate::error::{Error, Result};
use crate::identify::{IdentifyOptions, CUTOFF_SIMULATED, DEFAULT_LAMBDAS, DEFAULT_PERTURB_SIGMA};
use crate::io::LoadedDataset;
use crate::metrics::{RmseVariant, VafVariant};
use crate::regression::PerturbMode;
use crate::solver::SolverOptions;
use crate::svf::{svf_warmup_length, SvfConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub profile: ProfileKind,
    /// Current scale in A.
    pub amplitude: f64,
    /// Upper bound on the profile length in s; the run also stops when the
    /// cell is depleted.
    pub duration: f64,
    /// Standard deviation of the current and voltage noise.
    pub noise_std: f64,
    /// Rest before the profile in s. Defaults to the filter warm-up time so
    /// that the discarded samples carry no excitation.
    pub leading_rest: Option<f64>,
    pub z_floor: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            profile: ProfileKind::DstLike,
            amplitude: 1.0,
            duration: 10_000.0,
            noise_std: 0.01,
            leading_rest: None,
            z_floor: DEFAULT_Z_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub capacity_ah: f64,
    /// Initial SOC of simulations and predictions.
    pub z0: f64,
    /// Sampling interval of simulations, s.
    pub dt: f64,
    pub n_segments: usize,
    /// SVF cut-off, rad/s.
    pub cutoff: f64,
    pub lambdas: [f64; 4],
    pub perturb_sigma: f64,
    pub perturb_mode: PerturbMode,
    pub seed: u64,
    /// Samples discarded after filtering; derived from the cut-off when
    /// absent.
    pub warmup: Option<usize>,
    /// Spline domain; the data's SOC span when absent.
    pub soc_range: Option<(f64, f64)>,
    pub rmse_variant: RmseVariant,
    pub vaf_variant: VafVariant,
    pub baseline_windows: Vec<usize>,
    pub baseline_ridge: f64,
    /// Use exponential forgetting with this factor instead of a sliding
    /// window.
    pub baseline_forgetting: Option<f64>,
    pub solver: SolverOptions,
    pub simulation: SimulationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            capacity_ah: DEFAULT_CAPACITY_AH,
            z0: 0.8,
            dt: 0.1,
            n_segments: 80,
            cutoff: CUTOFF_SIMULATED,
            lambdas: DEFAULT_LAMBDAS,
            perturb_sigma: DEFAULT_PERTURB_SIGMA,
            perturb_mode: PerturbMode::SchedulingOnly,
            seed: 1,
            warmup: None,
            soc_range: None,
            rmse_variant: RmseVariant::MPlusOne,
            vaf_variant: VafVariant::EstimateVariance,
            baseline_windows: DEFAULT_WINDOWS.to_vec(),
            baseline_ridge: 1e-8,
            baseline_forgetting: None,
            solver: SolverOptions::default(),
            simulation: SimulationConfig::default(),
        }
    }
}

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidInput(msg()))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        require(positive(self.capacity_ah), || {
            format!("capacity_ah must be positive, got {}", self.capacity_ah)
        })?;
        require((0.0..=1.0).contains(&self.z0), || {
            format!("z0 must lie in [0, 1], got {}", self.z0)
        })?;
        require(positive(self.dt), || {
            format!("dt must be positive, got {}", self.dt)
        })?;
        require(self.n_segments >= 1, || {
            "n_segments must be at least 1".into()
        })?;
        require(positive(self.cutoff), || {
            format!("cutoff must be positive, got {}", self.cutoff)
        })?;
        require(
            self.lambdas.iter().all(|l| *l >= 0.0 && l.is_finite()),
            || format!("lambdas must be non-negative, got {:?}", self.lambdas),
        )?;
        require(
            self.perturb_sigma >= 0.0 && self.perturb_sigma.is_finite(),
            || {
                format!(
                    "perturb_sigma must be non-negative, got {}",
                    self.perturb_sigma
                )
            },
        )?;
        if let Some((lo, hi)) = self.soc_range {
            require(lo < hi, || format!("soc_range [{lo}, {hi}] is empty"))?;
        }
        require(!self.baseline_windows.is_empty(), || {
            "baseline_windows must not be empty".into()
        })?;
        require(
            self.baseline_windows.iter().all(|&w| w >= MIN_WINDOW),
            || format!("baseline windows must be at least {MIN_WINDOW} samples"),
        )?;
        require(self.baseline_ridge >= 0.0, || {
            "baseline_ridge must be non-negative".into()
        })?;
        if let Some(f) = self.baseline_forgetting {
            require(f > 0.0 && f <= 1.0, || {
                format!("baseline_forgetting must lie in (0, 1], got {f}")
            })?;
        }
        require(
            positive(self.solver.tol) && self.solver.max_iter > 0,
            || "solver tol and max_iter must be positive".into(),
        )?;
        let sim = &self.simulation;
        require(sim.amplitude.is_finite(), || {
            "simulation amplitude must be finite".into()
        })?;
        require(positive(sim.duration), || {
            format!("simulation duration must be positive, got {}", sim.duration)
        })?;
        require(sim.noise_std >= 0.0, || {
            "noise_std must be non-negative".into()
        })?;
        if let Some(r) = sim.leading_rest {
            require(r >= 0.0, || "leading_rest must be non-negative".into())?;
        }
        Ok(())
    }

    /// Parses a JSON document and validates it.
    pub fn from_json_str(text: &str) -> std::result::Result<Self, String> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn identify_options(&self) -> IdentifyOptions {
        IdentifyOptions {
            n_segments: self.n_segments,
            soc_range: self.soc_range,
            cutoff: self.cutoff,
            lambdas: self.lambdas,
            perturb_sigma: self.perturb_sigma,
            perturb_mode: self.perturb_mode,
            seed: self.seed,
            warmup: self.warmup,
            solver: self.solver,
        }
    }

    pub fn fmrls_config(&self, window: usize, dt: f64) -> FmrlsConfig {
        FmrlsConfig {
            window,
            dt,
            ridge: self.baseline_ridge,
            mode: match self.baseline_forgetting {
                Some(factor) => FmrlsMode::Forgetting { factor },
                None => FmrlsMode::SlidingWindow,
            },
        }
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            z0: self.z0,
            dt: self.dt,
            noise_std: self.simulation.noise_std,
            seed: self.seed,
            z_floor: self.simulation.z_floor,
        }
    }

    /// Leading rest in seconds.
    pub fn leading_rest(&self) -> Result<f64> {
        match self.simulation.leading_rest {
            Some(r) => Ok(r),
            None => {
                let svf = SvfConfig::new(self.cutoff, self.dt)?;
                let samples = self.warmup.unwrap_or_else(|| svf_warmup_length(&svf));
                Ok(samples as f64 * self.dt)
            }
        }
    }

    /// The dataset with the file's SOC column, or with SOC coulomb-counted
    /// from `z0` when the file has none.
    pub fn dataset_with_soc(&self, loaded: LoadedDataset) -> Result<SampledDataset> {
        match loaded.z {
            Some(z) => loaded.data.with_soc(z),
            None => loaded.data.coulomb_counted(self.z0, self.capacity_ah),
        }
    }

    /// Simulates the benchmark battery under the configured profile.
    pub fn simulate(&self) -> Result<SimulatedRun> {
        self.validate()?;
        let truth = default_truth_with_capacity(self.capacity_ah);
        let sim = &self.simulation;
        let mut profile = generate_profile(sim.profile, sim.duration, sim.amplitude, self.seed)?;
        let rest = self.leading_rest()?;
        if rest > 0.0 {
            profile = profile.with_leading_rest(rest);
        }
        simulate(&truth, &profile, &self.sim_options())
    }
}
