//! Traffic benefits derived from mean-opinion-score models.
//!
//! Video quality is a logistic function of PSNR; elastic quality is
//! logarithmic in throughput. A type's D2D benefit is the MOS gain of the
//! D2D link over the cellular link.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MosError {
    #[error("elastic MOS is not positive: b4 * throughput = {product} <= 1")]
    NonPositiveMos { product: f64 },
    #[error("D2D MOS {d2d} is below cellular MOS {cellular}")]
    NegativeBenefit { d2d: f64, cellular: f64 },
    #[error("invalid MOS parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    Base10,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Base10 => x.log10(),
        }
    }
}

impl fmt::Display for LogBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogBase::Natural => "natural",
            LogBase::Base10 => "base10",
        })
    }
}

impl FromStr for LogBase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "natural" | "ln" | "e" => Ok(LogBase::Natural),
            "base10" | "log10" | "10" => Ok(LogBase::Base10),
            other => Err(format!("unknown log base '{other}' (expected natural or base10)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MosParams {
    /// Video logistic slope.
    pub b1: f64,
    /// Video logistic midpoint, dB.
    pub b2: f64,
    /// Elastic scale.
    pub b3: f64,
    /// Elastic throughput coefficient, per kbps.
    pub b4: f64,
    #[serde(default)]
    pub log_base: LogBase,
}

impl Default for MosParams {
    fn default() -> Self {
        Self {
            b1: 1.0,
            b2: 5.0,
            b3: 2.6949,
            b4: 0.0235,
            log_base: LogBase::Natural,
        }
    }
}

impl MosParams {
    pub fn validate(&self) -> Result<(), MosError> {
        for (name, v) in [("b1", self.b1), ("b3", self.b3), ("b4", self.b4)] {
            if !(v > 0.0) {
                return Err(MosError::InvalidParams(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkQuality {
    /// dB
    pub psnr: f64,
    /// kbps
    pub throughput: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MosTrafficKind {
    Video,
    Elastic,
}

/// `4.5 - 3.5 / (1 + exp(b1 (psnr - b2)))`, a score in (1, 4.5).
pub fn mos_video(params: &MosParams, psnr: f64) -> f64 {
    4.5 - 3.5 / (1.0 + (params.b1 * (psnr - params.b2)).exp())
}

/// `b3 * log(b4 * throughput)` in the configured log base.
pub fn mos_elastic(params: &MosParams, throughput: f64) -> Result<f64, MosError> {
    let product = params.b4 * throughput;
    if !(product > 1.0) {
        return Err(MosError::NonPositiveMos { product });
    }
    Ok(params.b3 * params.log_base.log(product))
}

pub fn mos(params: &MosParams, link: &LinkQuality, kind: MosTrafficKind) -> Result<f64, MosError> {
    match kind {
        MosTrafficKind::Video => Ok(mos_video(params, link.psnr)),
        MosTrafficKind::Elastic => mos_elastic(params, link.throughput),
    }
}

/// MOS gain of the D2D link over the cellular link.
pub fn benefit_from_mos(
    params: &MosParams,
    d2d: &LinkQuality,
    cellular: &LinkQuality,
    kind: MosTrafficKind,
) -> Result<f64, MosError> {
    params.validate()?;
    let d = mos(params, d2d, kind)?;
    let c = mos(params, cellular, kind)?;
    if d < c {
        return Err(MosError::NegativeBenefit { d2d: d, cellular: c });
    }
    Ok(d - c)
}
