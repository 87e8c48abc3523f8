//! First-order state variable filter `1/(s + nu)` and its derivative tap
//! `s/(s + nu)`, discretized exactly for zero-order-hold inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvfConfig {
    /// Cut-off frequency in rad/s.
    pub cutoff: f64,
    /// Filter order; only first-order filters are supported.
    pub order: usize,
    /// Sampling interval in seconds.
    pub dt: f64,
}

impl SvfConfig {
    pub fn new(cutoff: f64, dt: f64) -> Result<Self> {
        let cfg = SvfConfig {
            cutoff,
            order: 1,
            dt,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0) || !self.cutoff.is_finite() {
            return Err(Error::InvalidInput(format!(
                "SVF cut-off must be positive, got {}",
                self.cutoff
            )));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sampling interval must be positive, got {}",
                self.dt
            )));
        }
        if self.order != 1 {
            return Err(Error::InvalidOrder {
                order: self.order,
                max: 1,
            });
        }
        if self.cutoff * self.dt >= 1.0 {
            log::warn!(
                "SVF cut-off {} rad/s is fast relative to dt = {} s (nu*dt = {})",
                self.cutoff,
                self.dt,
                self.cutoff * self.dt
            );
        }
        Ok(())
    }

    /// Per-sample pole `e^(-nu dt)` and input gain `(1 - e^(-nu dt)) / nu`.
    fn coefficients(&self) -> (f64, f64) {
        let x = self.cutoff * self.dt;
        let pole = (-x).exp();
        // -expm1(-x) keeps full precision for small nu*dt
        let gain = -(-x).exp_m1() / self.cutoff;
        (pole, gain)
    }
}

/// Number of leading samples to discard so the zero-initial-state
/// transient has decayed below `e^-5`.
pub fn svf_warmup_length(cfg: &SvfConfig) -> usize {
    let x = 5.0 / (cfg.cutoff * cfg.dt);
    // absorb representation error in nu*dt before rounding up
    (x * (1.0 - 1e-12)).ceil() as usize
}

/// Filters `signal` (held constant between samples) through
/// `s^j / (s + nu)` starting from a zero state. Output is sampled at the
/// input timestamps.
pub fn svf_filter(signal: &[f64], cfg: &SvfConfig, j: usize) -> Result<Vec<f64>> {
    if j > cfg.order {
        return Err(Error::InvalidOrder {
            order: j,
            max: cfg.order,
        });
    }
    let mut out = vec![0.0; signal.len()];
    match j {
        0 => filter_into(signal, cfg, &mut out),
        _ => {
            filter_into(signal, cfg, &mut out);
            for (y, &u) in out.iter_mut().zip(signal) {
                *y = u - cfg.cutoff * *y;
            }
        }
    }
    Ok(out)
}

/// Both taps at once: `(F0[u], F1[u])`.
pub fn svf_pair(signal: &[f64], cfg: &SvfConfig) -> (Vec<f64>, Vec<f64>) {
    let mut f0 = vec![0.0; signal.len()];
    filter_into(signal, cfg, &mut f0);
    let f1 = signal
        .iter()
        .zip(&f0)
        .map(|(&u, &x)| u - cfg.cutoff * x)
        .collect();
    (f0, f1)
}

fn filter_into(signal: &[f64], cfg: &SvfConfig, out: &mut [f64]) {
    let (pole, gain) = cfg.coefficients();
    let mut x = 0.0;
    for (y, &u) in out.iter_mut().zip(signal) {
        *y = x;
        x = pole * x + gain * u;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_formula() {
        let w = |nu, dt| svf_warmup_length(&SvfConfig::new(nu, dt).unwrap());
        assert_eq!(w(1e-3, 1.0), 5000);
        assert_eq!(w(1e-4, 1.0), 50000);
        assert_eq!(w(0.5, 1.0), 10);
    }

    #[test]
    fn constant_input_responses() {
        let cfg = SvfConfig::new(0.05, 0.5).unwrap();
        let c = 2.0;
        let u = vec![c; 400];
        let f0 = svf_filter(&u, &cfg, 0).unwrap();
        let f1 = svf_filter(&u, &cfg, 1).unwrap();
        for k in 0..u.len() {
            let t = k as f64 * cfg.dt;
            let exact0 = c / cfg.cutoff * (1.0 - (-cfg.cutoff * t).exp());
            let exact1 = c * (-cfg.cutoff * t).exp();
            assert!((f0[k] - exact0).abs() < 1e-12, "k={k}");
            assert!((f1[k] - exact1).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn order_checks() {
        let cfg = SvfConfig::new(0.1, 1.0).unwrap();
        assert!(matches!(
            svf_filter(&[1.0], &cfg, 2),
            Err(Error::InvalidOrder { order: 2, max: 1 })
        ));
        assert!(SvfConfig::new(0.0, 1.0).is_err());
        assert!(SvfConfig::new(1.0, -1.0).is_err());
        let bad = SvfConfig {
            cutoff: 1.0,
            order: 2,
            dt: 1.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pair_matches_single_taps() {
        let cfg = SvfConfig::new(0.3, 0.1).unwrap();
        let u: Vec<f64> = (0..50).map(|k| (k as f64 * 0.37).sin()).collect();
        let (f0, f1) = svf_pair(&u, &cfg);
        assert_eq!(f0, svf_filter(&u, &cfg, 0).unwrap());
        assert_eq!(f1, svf_filter(&u, &cfg, 1).unwrap());
    }
}
