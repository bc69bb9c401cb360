use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{extract_thresholds, value_iteration, SolverConfig, SolverError, ThresholdTable};
use crate::model::MdpModel;

/// Model parameter varied by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    Discount,
    RecvProb,
    AcceptProb,
    Cost,
    /// Benefit of the non-idle type with this index (1-based).
    Benefit(usize),
}

impl SweepParam {
    pub fn apply(self, template: &MdpModel, value: f64) -> MdpModel {
        let mut m = template.clone();
        match self {
            SweepParam::Discount => m.discount = value,
            SweepParam::RecvProb => m.env.p_recv = value,
            SweepParam::AcceptProb => m.env.q_accept = value,
            SweepParam::Cost => m.cost = value,
            SweepParam::Benefit(i) => {
                if let Some(b) = i.checked_sub(1).and_then(|j| m.traffic.benefit.get_mut(j)) {
                    *b = value;
                }
            }
        }
        m
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepParam::Discount => write!(f, "beta"),
            SweepParam::RecvProb => write!(f, "p"),
            SweepParam::AcceptProb => write!(f, "q"),
            SweepParam::Cost => write!(f, "c"),
            SweepParam::Benefit(i) => write!(f, "b{i}"),
        }
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "beta" | "discount" => Ok(SweepParam::Discount),
            "p" | "p_recv" => Ok(SweepParam::RecvProb),
            "q" | "q_accept" => Ok(SweepParam::AcceptProb),
            "c" | "cost" => Ok(SweepParam::Cost),
            other => other
                .strip_prefix('b')
                .and_then(|i| i.parse::<usize>().ok())
                .filter(|i| *i >= 1)
                .map(SweepParam::Benefit)
                .ok_or_else(|| format!("unknown sweep parameter '{other}' (expected beta, p, q, c or b<i>)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub result: Result<ThresholdTable, SolverError>,
}

/// Solves the template at each grid value and extracts thresholds. Grid
/// points run in parallel; the output keeps grid order.
pub fn sweep(template: &MdpModel, param: SweepParam, grid: &[f64], cfg: &SolverConfig) -> Vec<SweepPoint> {
    grid.par_iter()
        .map(|&value| {
            let model = param.apply(template, value);
            let result = value_iteration(&model, cfg).and_then(|sol| extract_thresholds(&model, &sol.policy));
            SweepPoint { value, result }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrendDirection {
    NonDecreasing,
    NonIncreasing,
}

/// Verdict on how one type's threshold moves along a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Trend {
    pub direction: TrendDirection,
    pub monotone: bool,
    /// Grid steps where the threshold strictly moved in `direction`.
    pub strict_steps: usize,
}

/// Checks whether a type's thresholds follow `direction` over the grid
/// points that solved successfully, in grid order.
pub fn trend(points: &[SweepPoint], traffic: usize, direction: TrendDirection) -> Trend {
    let series: Vec<usize> = points
        .iter()
        .filter_map(|p| p.result.as_ref().ok().map(|t| t.get(traffic)))
        .collect();
    let mut monotone = true;
    let mut strict_steps = 0;
    for w in series.windows(2) {
        let (ok, strict) = match direction {
            TrendDirection::NonDecreasing => (w[1] >= w[0], w[1] > w[0]),
            TrendDirection::NonIncreasing => (w[1] <= w[0], w[1] < w[0]),
        };
        monotone &= ok;
        strict_steps += usize::from(strict);
    }
    Trend {
        direction,
        monotone,
        strict_steps,
    }
}
