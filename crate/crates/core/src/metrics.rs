//! Fit metrics for voltage predictions and parameter curves.
//!
//! The default RMSE divides by `m + 1` and the default VAF normalizes by the
//! variance of the estimate. The conventional forms (`m`, variance of the
//! measurement) are available through the variant enums.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance below which VAF is undefined.
pub const VARIANCE_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RmseVariant {
    /// `sqrt(sum e^2 / (m + 1))`
    #[default]
    MPlusOne,
    /// `sqrt(sum e^2 / m)`
    Conventional,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VafVariant {
    /// `1 - var(y - yhat) / var(yhat)`
    #[default]
    EstimateVariance,
    /// `1 - var(y - yhat) / var(y)`
    Conventional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub rmse: f64,
    /// Percent.
    pub vaf: f64,
}

fn check_lengths(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(())
}

/// Population variance (divides by `m`).
pub fn population_variance(x: &[f64]) -> f64 {
    let m = x.len() as f64;
    let mean = x.iter().sum::<f64>() / m;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    rmse_with(y, yhat, RmseVariant::default())
}

pub fn rmse_with(y: &[f64], yhat: &[f64], variant: RmseVariant) -> Result<f64> {
    check_lengths(y, yhat)?;
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    let denom = match variant {
        RmseVariant::MPlusOne => y.len() + 1,
        RmseVariant::Conventional => y.len(),
    };
    Ok((sse / denom as f64).sqrt())
}

/// Variance accounted for, in percent.
pub fn vaf(y: &[f64], yhat: &[f64]) -> Result<f64> {
    vaf_with(y, yhat, VafVariant::default())
}

pub fn vaf_with(y: &[f64], yhat: &[f64], variant: VafVariant) -> Result<f64> {
    check_lengths(y, yhat)?;
    let reference = match variant {
        VafVariant::EstimateVariance => population_variance(yhat),
        VafVariant::Conventional => population_variance(y),
    };
    if reference <= VARIANCE_FLOOR {
        return Err(Error::DegenerateVariance(reference));
    }
    let residual: Vec<f64> = y.iter().zip(yhat).map(|(a, b)| a - b).collect();
    Ok((1.0 - population_variance(&residual) / reference) * 100.0)
}

pub fn metric_pair(
    y: &[f64],
    yhat: &[f64],
    rmse_variant: RmseVariant,
    vaf_variant: VafVariant,
) -> Result<MetricPair> {
    Ok(MetricPair {
        rmse: rmse_with(y, yhat, rmse_variant)?,
        vaf: vaf_with(y, yhat, vaf_variant)?,
    })
}
