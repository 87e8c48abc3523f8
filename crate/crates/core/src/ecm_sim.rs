//! First-order equivalent-circuit battery simulator.
//!
//! The RC branch obeys `dv1/dt = -v1/tau1(z) + i_b/C1(z)` and the terminal
//! voltage is `v_b = v1 + R0(z) i_b + voc(z)`. Current is held constant
//! between samples and parameters are frozen at the SOC of the left sample,
//! so each step uses the exact exponential update of the RC branch.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowest SOC the simulator discharges to.
pub const DEFAULT_Z_FLOOR: f64 = 0.001;

/// Simulated cell capacity in Ah.
pub const DEFAULT_CAPACITY_AH: f64 = 2.0;

/// Battery parameters at one state of charge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcmPoint {
    pub r0: f64,
    pub r1: f64,
    pub tau1: f64,
    pub voc: f64,
}

/// Anything that maps SOC to equivalent-circuit parameters.
pub trait EcmParameters: Send + Sync {
    fn at(&self, z: f64) -> EcmPoint;
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Closed-form SOC-dependent battery used as ground truth.
#[derive(Clone)]
pub struct EcmTruth {
    r0: ScalarFn,
    r1: ScalarFn,
    tau1: ScalarFn,
    voc: ScalarFn,
    pub capacity_ah: f64,
}

impl fmt::Debug for EcmTruth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EcmTruth")
            .field("capacity_ah", &self.capacity_ah)
            .finish_non_exhaustive()
    }
}

impl EcmTruth {
    pub fn new<R0, R1, T1, V>(r0: R0, r1: R1, tau1: T1, voc: V, capacity_ah: f64) -> Self
    where
        R0: Fn(f64) -> f64 + Send + Sync + 'static,
        R1: Fn(f64) -> f64 + Send + Sync + 'static,
        T1: Fn(f64) -> f64 + Send + Sync + 'static,
        V: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        EcmTruth {
            r0: Arc::new(r0),
            r1: Arc::new(r1),
            tau1: Arc::new(tau1),
            voc: Arc::new(voc),
            capacity_ah,
        }
    }

    /// SOC-independent battery.
    pub fn constant(r0: f64, r1: f64, tau1: f64, voc: f64, capacity_ah: f64) -> Self {
        Self::new(
            move |_| r0,
            move |_| r1,
            move |_| tau1,
            move |_| voc,
            capacity_ah,
        )
    }

    pub fn r0(&self, z: f64) -> f64 {
        (self.r0)(z)
    }

    pub fn r1(&self, z: f64) -> f64 {
        (self.r1)(z)
    }

    pub fn tau1(&self, z: f64) -> f64 {
        (self.tau1)(z)
    }

    pub fn voc(&self, z: f64) -> f64 {
        (self.voc)(z)
    }
}

impl EcmParameters for EcmTruth {
    fn at(&self, z: f64) -> EcmPoint {
        EcmPoint {
            r0: self.r0(z),
            r1: self.r1(z),
            tau1: self.tau1(z),
            voc: self.voc(z),
        }
    }
}

/// The benchmark battery: parameter curves shaped after a real NMC cell.
pub fn default_truth() -> EcmTruth {
    default_truth_with_capacity(DEFAULT_CAPACITY_AH)
}

pub fn default_truth_with_capacity(capacity_ah: f64) -> EcmTruth {
    EcmTruth::new(
        |z: f64| 0.03 * (0.3 * z + 2.0).cos() + 0.04 / (1.0 + 200.0 * z.powf(1.8)) + 0.1,
        |z: f64| 0.3 * (0.1 * z + 2.0).sin() + 0.6 / (1.0 + 200.0 * z.powf(1.5)) - 0.1,
        |z: f64| (2.0 * z + 1.0).cos() + (5.0 * z + 1.0).sin() + 18.0,
        |z: f64| 0.03 * (1.5 - z).powi(-4) + 0.1 * (z + 0.01).ln() + 3.0,
        capacity_ah,
    )
}

/// Uniformly sampled current/voltage record.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledDataset {
    pub t: Vec<f64>,
    pub i_b: Vec<f64>,
    pub v_b: Vec<f64>,
    /// Scheduling SOC; absent until coulomb counting has been run.
    pub z: Option<Vec<f64>>,
}

impl SampledDataset {
    pub fn new(t: Vec<f64>, i_b: Vec<f64>, v_b: Vec<f64>) -> Result<Self> {
        let ds = SampledDataset {
            t,
            i_b,
            v_b,
            z: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.t.len();
        for len in [self.i_b.len(), self.v_b.len()] {
            if len != m {
                return Err(Error::LengthMismatch {
                    left: m,
                    right: len,
                });
            }
        }
        if let Some(z) = &self.z {
            if z.len() != m {
                return Err(Error::LengthMismatch {
                    left: m,
                    right: z.len(),
                });
            }
        }
        if m < 2 {
            return Err(Error::InsufficientData { needed: 2, got: m });
        }
        let all = self
            .t
            .iter()
            .chain(&self.i_b)
            .chain(&self.v_b)
            .chain(self.z.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dataset contains NaN or Inf".into()));
        }
        let dt = self.t[1] - self.t[0];
        if !(dt > 0.0) {
            return Err(Error::InvalidInput("time stamps must increase".into()));
        }
        for (k, w) in self.t.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt + 4.0 * f64::EPSILON * w[1].abs() {
                return Err(Error::InvalidInput(format!(
                    "non-uniform sampling at sample {}: step {} vs {}",
                    k + 1,
                    w[1] - w[0],
                    dt
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Sampling interval, averaged over the record.
    pub fn dt(&self) -> f64 {
        let m = self.t.len();
        (self.t[m - 1] - self.t[0]) / (m - 1) as f64
    }

    pub fn with_soc(mut self, z: Vec<f64>) -> Result<Self> {
        self.z = Some(z);
        self.validate()?;
        Ok(self)
    }

    /// Fills `z` by coulomb counting the recorded current.
    pub fn coulomb_counted(self, z0: f64, capacity_ah: f64) -> Result<Self> {
        let z = coulomb_count(&self.i_b, self.dt(), z0, capacity_ah)?;
        self.with_soc(z)
    }

    /// Samples `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let ds = SampledDataset {
            t: self.t[range.clone()].to_vec(),
            i_b: self.i_b[range.clone()].to_vec(),
            v_b: self.v_b[range.clone()].to_vec(),
            z: self.z.as_ref().map(|z| z[range].to_vec()),
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Left-point coulomb counting: `z[k] = z[k-1] + dt i[k-1] / (3600 C)`.
/// Fails if the trajectory leaves `[-0.001, 1.001]`.
pub fn coulomb_count(i_b: &[f64], dt: f64, z0: f64, capacity_ah: f64) -> Result<Vec<f64>> {
    let z = soc_trajectory(i_b, dt, z0, capacity_ah)?;
    if let Some((k, &v)) = z
        .iter()
        .enumerate()
        .find(|(_, v)| !(-0.001..=1.001).contains(*v))
    {
        return Err(Error::SocOutOfRange { index: k, value: v });
    }
    Ok(z)
}

/// Coulomb counting without the range check.
pub fn soc_trajectory(i_b: &[f64], dt: f64, z0: f64, capacity_ah: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&z0) {
        return Err(Error::InvalidInput(format!(
            "initial SOC {z0} outside [0, 1]"
        )));
    }
    if !(capacity_ah > 0.0) {
        return Err(Error::InvalidInput(format!(
            "capacity must be positive, got {capacity_ah}"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let scale = dt / (3600.0 * capacity_ah);
    let mut z = Vec::with_capacity(i_b.len());
    let mut acc = z0;
    for &i in i_b {
        z.push(acc);
        acc += scale * i;
    }
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    DstLike,
    Constant,
    Prbs,
}

impl std::str::FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dst" | "dst-like" => Ok(ProfileKind::DstLike),
            "constant" => Ok(ProfileKind::Constant),
            "prbs" => Ok(ProfileKind::Prbs),
            other => Err(Error::InvalidInput(format!(
                "unknown profile kind '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    pub current: f64,
}

/// Unscaled DST-like cycle as (seconds, Ampere); 360 s long with net
/// discharge of 304 A s.
pub const DST_CYCLE: [(f64, f64); 21] = [
    (16.0, 0.0),
    (28.0, -1.0),
    (12.0, -2.0),
    (8.0, 1.0),
    (16.0, 0.0),
    (24.0, -1.0),
    (12.0, -2.0),
    (8.0, 1.0),
    (16.0, 0.0),
    (24.0, -1.0),
    (12.0, -2.0),
    (8.0, 2.0),
    (32.0, -3.0),
    (8.0, 2.0),
    (44.0, -1.0),
    (12.0, -4.0),
    (12.0, 2.0),
    (4.0, -5.0),
    (4.0, 5.0),
    (40.0, -1.0),
    (20.0, 0.0),
];

/// Bit length of the PRBS profile in seconds.
pub const PRBS_BIT_SECONDS: f64 = 5.0;

/// Piecewise-constant current schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentProfile {
    pub kind: ProfileKind,
    pub base_step: f64,
    pub amplitude_scale: f64,
    pub schedule: Vec<Segment>,
}

impl CurrentProfile {
    pub fn new(
        kind: ProfileKind,
        base_step: f64,
        amplitude_scale: f64,
        schedule: Vec<Segment>,
    ) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::InvalidInput("empty current schedule".into()));
        }
        if schedule
            .iter()
            .any(|s| !(s.duration > 0.0) || !s.current.is_finite())
        {
            return Err(Error::InvalidInput(
                "schedule durations must be positive and currents finite".into(),
            ));
        }
        Ok(CurrentProfile {
            kind,
            base_step,
            amplitude_scale,
            schedule,
        })
    }

    pub fn total_duration(&self) -> f64 {
        self.schedule.iter().map(|s| s.duration).sum()
    }

    /// Prepends a zero-current rest of `seconds`.
    pub fn with_leading_rest(mut self, seconds: f64) -> Self {
        if seconds > 0.0 {
            self.schedule.insert(
                0,
                Segment {
                    duration: seconds,
                    current: 0.0,
                },
            );
        }
        self
    }

    /// Zero-order-hold samples `i(k dt)` for every `k dt` before the end of
    /// the schedule.
    pub fn sample(&self, dt: f64) -> Vec<f64> {
        let slack = 1e-9 * dt;
        let total = self.total_duration();
        let n = ((total - slack) / dt).floor() as usize + 1;
        let mut out = Vec::with_capacity(n);
        let mut seg = 0usize;
        let mut seg_end = self.schedule[0].duration;
        for k in 0..n {
            let t = k as f64 * dt;
            while t >= seg_end - slack && seg + 1 < self.schedule.len() {
                seg += 1;
                seg_end += self.schedule[seg].duration;
            }
            out.push(self.schedule[seg].current);
        }
        out
    }
}

/// Deterministic current profile of the requested kind and length.
pub fn generate_profile(
    kind: ProfileKind,
    duration: f64,
    amplitude_scale: f64,
    seed: u64,
) -> Result<CurrentProfile> {
    if !(duration > 0.0) {
        return Err(Error::InvalidInput(format!(
            "profile duration must be positive, got {duration}"
        )));
    }
    let (base_step, schedule) = match kind {
        ProfileKind::Constant => (
            duration,
            vec![Segment {
                duration,
                current: amplitude_scale,
            }],
        ),
        ProfileKind::DstLike => {
            let mut schedule = Vec::new();
            let mut elapsed = 0.0;
            'outer: loop {
                for &(d, i) in &DST_CYCLE {
                    let d = d.min(duration - elapsed);
                    if d <= 0.0 {
                        break 'outer;
                    }
                    schedule.push(Segment {
                        duration: d,
                        current: i * amplitude_scale,
                    });
                    elapsed += d;
                }
            }
            (4.0, schedule)
        }
        ProfileKind::Prbs => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut schedule: Vec<Segment> = Vec::new();
            let mut elapsed = 0.0;
            while elapsed < duration {
                let d = PRBS_BIT_SECONDS.min(duration - elapsed);
                let current = if rng.random::<bool>() {
                    amplitude_scale
                } else {
                    -amplitude_scale
                };
                match schedule.last_mut() {
                    Some(last) if last.current == current => last.duration += d,
                    _ => schedule.push(Segment {
                        duration: d,
                        current,
                    }),
                }
                elapsed += d;
            }
            (PRBS_BIT_SECONDS, schedule)
        }
    };
    CurrentProfile::new(kind, base_step, amplitude_scale, schedule)
}

/// Measurement noise and start conditions of a simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub z0: f64,
    pub dt: f64,
    /// Standard deviation of the noise added to recorded current (A) and
    /// voltage (V).
    pub noise_std: f64,
    pub seed: u64,
    /// Simulation stops before SOC drops below this value.
    pub z_floor: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            z0: 0.8,
            dt: 0.1,
            noise_std: 0.01,
            seed: 1,
            z_floor: DEFAULT_Z_FLOOR,
        }
    }
}

/// Simulator output: the noisy recorded dataset plus noise-free signals.
#[derive(Debug, Clone)]
pub struct SimulatedRun {
    /// Recorded (noisy) current and voltage; `z` is left empty.
    pub data: SampledDataset,
    pub z_true: Vec<f64>,
    pub i_true: Vec<f64>,
    pub v_true: Vec<f64>,
}

// Exact zero-order-hold update of the RC branch voltage over one step.
fn rc_step(v1: f64, p: &EcmPoint, i: f64, dt: f64) -> f64 {
    let decay = (-dt / p.tau1).exp();
    let gain = -(-dt / p.tau1).exp_m1();
    decay * v1 + p.r1 * gain * i
}

/// Terminal voltage of a battery that starts relaxed and is driven by
/// `current` while its SOC follows `z`.
pub fn ecm_voltage<P: EcmParameters + ?Sized>(
    params: &P,
    current: &[f64],
    z: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    if current.len() != z.len() {
        return Err(Error::LengthMismatch {
            left: current.len(),
            right: z.len(),
        });
    }
    let mut v = Vec::with_capacity(current.len());
    let mut v1 = 0.0;
    for (&i, &zk) in current.iter().zip(z) {
        let p = params.at(zk);
        if !(p.tau1 > 0.0) {
            return Err(Error::NonpositiveTimeConstant {
                z: zk,
                tau1: p.tau1,
            });
        }
        v.push(v1 + p.r0 * i + p.voc);
        v1 = rc_step(v1, &p, i, dt);
    }
    Ok(v)
}

/// Integrates the battery under `profile`.
pub fn simulate(
    truth: &EcmTruth,
    profile: &CurrentProfile,
    opts: &SimOptions,
) -> Result<SimulatedRun> {
    if !(opts.dt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "dt must be positive, got {}",
            opts.dt
        )));
    }
    if !(0.0..=1.0).contains(&opts.z0) {
        return Err(Error::InvalidInput(format!(
            "initial SOC {} outside [0, 1]",
            opts.z0
        )));
    }
    if !(opts.noise_std >= 0.0) {
        return Err(Error::InvalidInput("noise_std must be non-negative".into()));
    }
    if !(truth.capacity_ah > 0.0) {
        return Err(Error::InvalidInput("capacity must be positive".into()));
    }
    let current = profile.sample(opts.dt);
    let soc_step = opts.dt / (3600.0 * truth.capacity_ah);

    let mut z_true = Vec::with_capacity(current.len());
    let mut i_true = Vec::with_capacity(current.len());
    let mut v_true = Vec::with_capacity(current.len());
    let mut z = opts.z0;
    let mut v1 = 0.0;
    for &i in &current {
        let p = truth.at(z);
        if !(p.tau1 > 0.0) {
            return Err(Error::NonpositiveTimeConstant { z, tau1: p.tau1 });
        }
        z_true.push(z);
        i_true.push(i);
        v_true.push(v1 + p.r0 * i + p.voc);

        v1 = rc_step(v1, &p, i, opts.dt);
        let z_next = z + soc_step * i;
        if z_next < opts.z_floor || z_next > 1.0 {
            break;
        }
        z = z_next;
    }

    let m = z_true.len();
    let t: Vec<f64> = (0..m).map(|k| k as f64 * opts.dt).collect();
    let (i_rec, v_rec) = if opts.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let normal =
            Normal::new(0.0, opts.noise_std).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut i_rec = Vec::with_capacity(m);
        let mut v_rec = Vec::with_capacity(m);
        for k in 0..m {
            i_rec.push(i_true[k] + normal.sample(&mut rng));
            v_rec.push(v_true[k] + normal.sample(&mut rng));
        }
        (i_rec, v_rec)
    } else {
        (i_true.clone(), v_true.clone())
    };
    let data = SampledDataset::new(t, i_rec, v_rec)?;
    Ok(SimulatedRun {
        data,
        z_true,
        i_true,
        v_true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coulomb_zero_current() {
        let z = coulomb_count(&[0.0; 20], 1.0, 0.8, 2.0).unwrap();
        assert!(z.iter().all(|&v| v == 0.8));
    }

    #[test]
    fn coulomb_one_c_discharge() {
        let cap = 2.0;
        let i = vec![-cap; 3601];
        let z = coulomb_count(&i, 1.0, 1.0, cap).unwrap();
        assert!(z[3600].abs() < 1e-12);
    }

    #[test]
    fn coulomb_rejects_leaving_range() {
        let i = vec![-2.0; 4000];
        match coulomb_count(&i, 1.0, 1.0, 2.0) {
            Err(Error::SocOutOfRange { index, value }) => {
                assert!(value < -0.001);
                assert!(index > 3600);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(coulomb_count(&[1.0], 1.0, 1.2, 2.0).is_err());
        assert!(coulomb_count(&[1.0], 1.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn default_truth_endpoint_values() {
        let truth = default_truth();
        let r0 = 0.03 * 2.3f64.cos() + 0.04 / 201.0 + 0.1;
        let tau = 3.0f64.cos() + 6.0f64.sin() + 18.0;
        assert!((truth.r0(1.0) - r0).abs() < 1e-15);
        assert!((truth.tau1(1.0) - tau).abs() < 1e-14);
    }

    #[test]
    fn default_truth_positive_and_monotone_ocv() {
        let truth = default_truth();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=1000 {
            let z = 0.001 + 0.999 * k as f64 / 1000.0;
            let p = truth.at(z);
            assert!(p.r0 > 0.0 && p.r1 > 0.0 && p.tau1 > 0.0, "z={z}");
            if z >= 0.05 {
                assert!(p.voc > prev, "z={z}");
                prev = p.voc;
            }
        }
    }

    #[test]
    fn constant_profile() {
        let p = generate_profile(ProfileKind::Constant, 100.0, -2.0, 0).unwrap();
        assert_eq!(
            p.schedule,
            vec![Segment {
                duration: 100.0,
                current: -2.0
            }]
        );
        assert!(generate_profile(ProfileKind::Constant, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn dst_single_cycle_is_the_table() {
        let p = generate_profile(ProfileKind::DstLike, 360.0, 1.0, 0).unwrap();
        let table: Vec<Segment> = DST_CYCLE
            .iter()
            .map(|&(duration, current)| Segment { duration, current })
            .collect();
        assert_eq!(p.schedule, table);
        let net: f64 = p.schedule.iter().map(|s| s.duration * s.current).sum();
        assert_eq!(net, -304.0);
        assert!(p.schedule.iter().any(|s| s.current > 0.0));
    }

    #[test]
    fn prbs_is_reproducible() {
        let a = generate_profile(ProfileKind::Prbs, 100.0, 1.0, 7).unwrap();
        let b = generate_profile(ProfileKind::Prbs, 100.0, 1.0, 7).unwrap();
        assert_eq!(a, b);
        assert!((a.total_duration() - 100.0).abs() < 1e-12);
        assert!(a.schedule.iter().all(|s| s.current.abs() == 1.0));
        let c = generate_profile(ProfileKind::Prbs, 100.0, 1.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn step_response_matches_closed_form() {
        let truth = EcmTruth::constant(0.1, 0.3, 18.0, 3.6, 2.0);
        let profile = generate_profile(ProfileKind::Constant, 200.0, 1.0, 0).unwrap();
        let opts = SimOptions {
            z0: 0.5,
            dt: 0.5,
            noise_std: 0.0,
            seed: 0,
            z_floor: DEFAULT_Z_FLOOR,
        };
        let run = simulate(&truth, &profile, &opts).unwrap();
        assert_eq!(run.data.len(), 400);
        for (k, &v) in run.data.v_b.iter().enumerate() {
            let t = k as f64 * opts.dt;
            let exact = 3.6 + 0.1 + 0.3 * (1.0 - (-t / 18.0).exp());
            assert!((v - exact).abs() < 1e-9, "k={k}");
        }
        assert!((run.data.v_b.last().unwrap() - 4.0).abs() < 1e-4);
    }

    #[test]
    fn open_circuit_is_flat() {
        let truth = default_truth();
        let profile = generate_profile(ProfileKind::Constant, 50.0, 0.0, 0).unwrap();
        let opts = SimOptions {
            z0: 0.6,
            dt: 1.0,
            noise_std: 0.0,
            ..SimOptions::default()
        };
        let run = simulate(&truth, &profile, &opts).unwrap();
        assert!(run.data.v_b.iter().all(|&v| v == truth.voc(0.6)));
    }

    #[test]
    fn rejects_nonpositive_time_constant() {
        let truth = EcmTruth::constant(0.1, 0.3, 0.0, 3.6, 2.0);
        let profile = generate_profile(ProfileKind::Constant, 10.0, -1.0, 0).unwrap();
        assert!(matches!(
            simulate(&truth, &profile, &SimOptions::default()),
            Err(Error::NonpositiveTimeConstant { .. })
        ));
    }

    #[test]
    fn stops_at_soc_floor() {
        let truth = EcmTruth::constant(0.1, 0.3, 18.0, 3.6, 0.01);
        let profile = generate_profile(ProfileKind::Constant, 10_000.0, -1.0, 0).unwrap();
        let opts = SimOptions {
            z0: 0.5,
            dt: 1.0,
            noise_std: 0.0,
            ..SimOptions::default()
        };
        let run = simulate(&truth, &profile, &opts).unwrap();
        assert!(run.z_true.iter().all(|&z| z >= DEFAULT_Z_FLOOR));
        assert!(run.data.len() < 10_000);
    }

    #[test]
    fn dataset_validation() {
        assert!(SampledDataset::new(vec![0.0, 1.0], vec![0.0], vec![0.0, 0.0]).is_err());
        assert!(SampledDataset::new(vec![0.0], vec![0.0], vec![0.0]).is_err());
        assert!(SampledDataset::new(vec![0.0, 1.0, 2.5], vec![0.0; 3], vec![0.0; 3]).is_err());
        assert!(
            SampledDataset::new(vec![0.0, 1.0, 2.0], vec![0.0, f64::NAN, 0.0], vec![0.0; 3])
                .is_err()
        );
        assert!(SampledDataset::new(vec![0.0, 1.0, 2.0], vec![0.0; 3], vec![0.0; 3]).is_ok());
    }
}
