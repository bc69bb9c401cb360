//! Structural checks on value functions and policies: threshold extraction,
//! the one-shot deviation characterization, diminishing marginal token
//! value, and threshold ordering by benefit.

use serde::{Deserialize, Serialize};

use super::{deviation_slack, expected_next_values, Policy, SolverError, ValueFunction, TIE_TOLERANCE};
use crate::model::{Action, MdpModel, State};

/// Tolerance for [`check_concavity`] and [`check_monotone_values`].
pub const CONCAVITY_TOLERANCE: f64 = 1e-9;

/// Per-type thresholds: action 1 iff `k >= thresholds[s]`. The value
/// `K + 1` means the type never takes action 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub token_cap: usize,
    pub thresholds: Vec<usize>,
}

impl ThresholdTable {
    pub fn get(&self, traffic: usize) -> usize {
        self.thresholds[traffic]
    }

    /// `true` when the type never takes action 1.
    pub fn is_never(&self, traffic: usize) -> bool {
        self.thresholds[traffic] > self.token_cap
    }

    pub fn to_policy(&self, model: &MdpModel) -> Policy {
        Policy::from_fn(model, |s| {
            if s.tokens >= self.thresholds[s.traffic] {
                Action::ONE
            } else {
                Action::ZERO
            }
        })
    }
}

/// Reads per-type thresholds off a policy, failing at the first type whose
/// actions are not monotone in the token count.
pub fn extract_thresholds(model: &MdpModel, policy: &Policy) -> Result<ThresholdTable, SolverError> {
    let cap = model.token_cap;
    let mut thresholds = Vec::with_capacity(model.num_types());
    for s in 0..model.num_types() {
        let mut threshold = cap + 1;
        for k in 0..=cap {
            let a = policy.action(State::new(s, k));
            if a.is_one() && threshold > cap {
                threshold = k;
            } else if !a.is_one() && threshold <= cap {
                return Err(SolverError::NotThreshold { traffic: s, tokens: k });
            }
        }
        thresholds.push(threshold);
    }
    Ok(ThresholdTable {
        token_cap: cap,
        thresholds,
    })
}

/// Non-idle types whose threshold is above that of a less beneficial type.
/// Empty when thresholds are non-increasing in benefit.
pub fn check_threshold_ordering(table: &ThresholdTable) -> Vec<(usize, usize)> {
    (1..table.thresholds.len().saturating_sub(1))
        .filter(|&s| table.thresholds[s + 1] > table.thresholds[s])
        .map(|s| (s, s + 1))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationViolation {
    pub state: State,
    pub policy_action: Action,
    pub expected_action: Action,
    /// Opportunity cost minus immediate gain; `None` at forced states.
    pub slack: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DeviationReport {
    pub violations: Vec<DeviationViolation>,
}

impl DeviationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the one-shot deviation characterization at every state: with traffic
/// and `k > 0`, action 0 iff `beta * (D(k) - D(k-1)) >= b_s`; idle with
/// `k < K`, action 0 iff `beta * (D(k+1) - D(k)) >= c`, where `D(k)` is the
/// expected next-slot value at `k` tokens. Forced states must carry their
/// forced action.
pub fn check_one_shot_deviation(model: &MdpModel, v: &ValueFunction, policy: &Policy) -> DeviationReport {
    let delta = expected_next_values(model, v);
    let mut violations = Vec::new();
    for state in model.enumerate_states() {
        let policy_action = policy.action(state);
        let (expected_action, slack) = match model.forced_action(state) {
            Some(a) => (a, None),
            None => {
                let slack = deviation_slack(model, &delta, state).expect("free state");
                let a = if slack >= -TIE_TOLERANCE {
                    Action::ZERO
                } else {
                    Action::ONE
                };
                (a, Some(slack))
            }
        };
        if policy_action != expected_action {
            violations.push(DeviationViolation {
                state,
                policy_action,
                expected_action,
                slack,
            });
        }
    }
    DeviationReport { violations }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConcavityReport {
    /// Largest `(V(k+1) - V(k)) - (V(k) - V(k-1))` observed, or 0.
    pub max_violation: f64,
    /// States `(s, k)` where the increase exceeded the tolerance, with its size.
    pub violations: Vec<(State, f64)>,
}

impl ConcavityReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Diminishing marginal token value: `V(s,k+1) - V(s,k) <= V(s,k) - V(s,k-1)`
/// for every `s` and `1 <= k <= K-1`.
pub fn check_concavity(v: &ValueFunction) -> ConcavityReport {
    let mut report = ConcavityReport::default();
    for s in 0..v.num_types {
        let row = v.row(s);
        for k in 1..v.token_cap {
            let excess = (row[k + 1] - row[k]) - (row[k] - row[k - 1]);
            report.max_violation = report.max_violation.max(excess);
            if excess > CONCAVITY_TOLERANCE {
                report.violations.push((State::new(s, k), excess));
            }
        }
    }
    report
}

/// States where `V(s, k+1) < V(s, k)` beyond tolerance.
pub fn check_monotone_values(v: &ValueFunction) -> Vec<State> {
    let mut out = Vec::new();
    for s in 0..v.num_types {
        let row = v.row(s);
        for k in 0..v.token_cap {
            if row[k + 1] < row[k] - CONCAVITY_TOLERANCE {
                out.push(State::new(s, k));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::solver::{value_iteration, SolverConfig};

    fn solved() -> (MdpModel, crate::solver::Solution) {
        let m = presets::illustrative();
        let sol = value_iteration(&m, &SolverConfig::default()).unwrap();
        (m, sol)
    }

    #[test]
    fn illustrative_thresholds() {
        let (m, sol) = solved();
        let t = extract_thresholds(&m, &sol.policy).unwrap();
        assert_eq!(t.get(4), 1);
        assert!(t.get(4) <= t.get(3) && t.get(3) <= t.get(2) && t.get(2) <= t.get(1));
        assert!(check_threshold_ordering(&t).is_empty());
        assert_eq!(t.to_policy(&m), sol.policy);
    }

    #[test]
    fn never_act_thresholds() {
        let m = presets::illustrative();
        let t = extract_thresholds(&m, &Policy::never_act(&m)).unwrap();
        // Idle refuses everywhere: threshold 0. Traffic types never spend.
        assert_eq!(t.get(0), 0);
        assert!((1..m.num_types()).all(|s| t.is_never(s) && t.get(s) == m.token_cap + 1));
    }

    #[test]
    fn non_threshold_detected() {
        let m = presets::illustrative();
        let mut p = Policy::never_act(&m);
        p.set(State::new(2, 4), Action::ONE);
        assert!(matches!(
            extract_thresholds(&m, &p),
            Err(SolverError::NotThreshold { traffic: 2, tokens: 5 })
        ));
    }

    #[test]
    fn converged_solution_has_no_deviations() {
        let (m, sol) = solved();
        assert!(check_one_shot_deviation(&m, &sol.values, &sol.policy).is_clean());
    }

    #[test]
    fn flipped_actions_are_reported() {
        let (m, sol) = solved();
        let mut p = sol.policy.clone();
        let flips = [State::new(1, 7), State::new(0, 3), State::new(1, 0)];
        for s in flips {
            p.set(s, p.action(s).flipped());
        }
        let report = check_one_shot_deviation(&m, &sol.values, &p);
        let mut flagged: Vec<State> = report.violations.iter().map(|v| v.state).collect();
        flagged.sort();
        let mut expected = flips.to_vec();
        expected.sort();
        assert_eq!(flagged, expected);
        let forced = report.violations.iter().find(|v| v.state == State::new(1, 0)).unwrap();
        assert_eq!(forced.slack, None);
    }

    #[test]
    fn zero_values_make_spending_attractive() {
        let m = presets::illustrative();
        let v = ValueFunction::zeros(&m);
        let p = Policy::from_fn(&m, |s| if s.is_idle() { Action::ONE } else { Action::ZERO });
        let report = check_one_shot_deviation(&m, &v, &p);
        let expected = (1..m.num_types()).count() * m.token_cap;
        assert_eq!(report.violations.len(), expected);
        assert!(report
            .violations
            .iter()
            .all(|v| !v.state.is_idle() && v.state.tokens > 0));
        assert!(report.violations.iter().all(|v| v.slack.unwrap() < 0.0));
    }

    #[test]
    fn concavity_examples() {
        let m = presets::illustrative();
        let r = check_concavity(&ValueFunction::zeros(&m));
        assert!(r.holds());
        assert_eq!(r.max_violation, 0.0);

        let mut small = m.clone();
        small.token_cap = 2;
        let mut v = ValueFunction::zeros(&small);
        v.set(State::new(1, 1), 1.0);
        v.set(State::new(1, 2), 3.0);
        let r = check_concavity(&v);
        assert_eq!(r.violations, vec![(State::new(1, 1), 1.0)]);
        assert_eq!(r.max_violation, 1.0);
    }

    #[test]
    fn ordering_violation_reported() {
        let t = ThresholdTable {
            token_cap: 5,
            thresholds: vec![3, 2, 4, 1],
        };
        assert_eq!(check_threshold_ordering(&t), vec![(1, 2)]);
    }
}
