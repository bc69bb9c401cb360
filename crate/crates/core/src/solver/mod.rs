//! Optimal policy computation and validation of the policy's structure.
//!
//! [`value_iteration`] is the production solver. [`evaluate_policy_exact`]
//! and [`brute_force_optimal`] form an independent oracle built on the
//! generic transition kernel instead of the token-count shortcut used by the
//! backup.

mod exact;
mod structure;
mod sweep;

pub use exact::{brute_force_optimal, brute_force_restricted, evaluate_policy_exact, MAX_BRUTE_FORCE_FREE_STATES};
pub use structure::{
    check_concavity, check_monotone_values, check_one_shot_deviation, check_threshold_ordering, extract_thresholds,
    ConcavityReport, DeviationReport, DeviationViolation, ThresholdTable,
};
pub use sweep::{sweep, trend, SweepParam, SweepPoint, Trend, TrendDirection};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Action, MdpModel, ModelError, State};

/// Absolute tolerance under which the two sides of the one-shot deviation
/// comparison count as equal; equality selects action 0.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone)]
pub enum SolverError {
    #[error("value iteration did not converge in {iterations} iterations (last residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        last: ValueFunction,
    },
    #[error("policy is not a threshold policy: action 1 then 0 for type s{traffic} at k = {tokens}")]
    NotThreshold { traffic: usize, tokens: usize },
    #[error("brute force needs 2^{free_states} candidates; at most {max} free states are supported")]
    TooLarge { free_states: usize, max: usize },
    #[error("policy evaluation system is singular")]
    Singular,
    #[error("no single policy attains the pointwise maximum (gap {gap:e})")]
    NoUniformOptimum { gap: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Expected discounted utility of every state, stored in enumeration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub num_types: usize,
    pub token_cap: usize,
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn zeros(model: &MdpModel) -> Self {
        Self::from_values(model, vec![0.0; model.num_states()])
    }

    pub fn from_values(model: &MdpModel, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), model.num_states(), "value table size mismatch");
        Self {
            num_types: model.num_types(),
            token_cap: model.token_cap,
            values,
        }
    }

    pub fn get(&self, state: State) -> f64 {
        self.values[state.traffic * (self.token_cap + 1) + state.tokens]
    }

    pub fn set(&mut self, state: State, value: f64) {
        self.values[state.traffic * (self.token_cap + 1) + state.tokens] = value;
    }

    /// The row `V(s, 0..=K)`.
    pub fn row(&self, traffic: usize) -> &[f64] {
        let w = self.token_cap + 1;
        &self.values[traffic * w..(traffic + 1) * w]
    }

    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        let w = self.token_cap + 1;
        (0..self.values.len()).map(move |i| State::new(i / w, i % w))
    }
}

/// Deterministic stationary policy, one action per state in enumeration order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Policy {
    pub num_types: usize,
    pub token_cap: usize,
    pub actions: Vec<Action>,
}

impl Policy {
    /// Builds a policy from a rule; forced states always get their forced action.
    pub fn from_fn(model: &MdpModel, mut rule: impl FnMut(State) -> Action) -> Self {
        let actions = model
            .enumerate_states()
            .into_iter()
            .map(|s| model.forced_action(s).unwrap_or_else(|| rule(s)))
            .collect();
        Self {
            num_types: model.num_types(),
            token_cap: model.token_cap,
            actions,
        }
    }

    /// Never spends a token and never accepts a request.
    pub fn never_act(model: &MdpModel) -> Self {
        Self::from_fn(model, |s| if s.is_idle() { Action::ONE } else { Action::ZERO })
    }

    pub fn action(&self, state: State) -> Action {
        self.actions[state.traffic * (self.token_cap + 1) + state.tokens]
    }

    pub fn set(&mut self, state: State, action: Action) {
        self.actions[state.traffic * (self.token_cap + 1) + state.tokens] = action;
    }

    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        let w = self.token_cap + 1;
        (0..self.actions.len()).map(move |i| State::new(i / w, i % w))
    }

    /// Fraction of states on which two policies pick the same action.
    pub fn agreement(&self, other: &Policy) -> f64 {
        let same = self.actions.iter().zip(&other.actions).filter(|(a, b)| a == b).count();
        same as f64 / self.actions.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-9,
            max_iterations: 100_000,
        }
    }
}

/// Output of [`value_iteration`].
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub values: ValueFunction,
    pub policy: Policy,
    pub iterations: usize,
}

/// Expected next-slot value at each token count: `D(k) = sum_s' p(s') V(s', k)`.
pub(crate) fn expected_next_values(model: &MdpModel, v: &ValueFunction) -> Vec<f64> {
    let mut delta = vec![0.0; model.token_cap + 1];
    for s in 0..model.num_types() {
        let p = model.traffic.prob(s);
        for (d, x) in delta.iter_mut().zip(v.row(s)) {
            *d += p * x;
        }
    }
    delta
}

/// Gain of action 1 over action 0 in the one-shot deviation comparison,
/// `None` at forced states. Action 0 is chosen iff the returned slack is
/// `>= -TIE_TOLERANCE`, where slack is `opportunity cost - immediate gain`.
pub(crate) fn deviation_slack(model: &MdpModel, delta: &[f64], state: State) -> Option<f64> {
    if model.forced_action(state).is_some() {
        return None;
    }
    let beta = model.discount;
    let k = state.tokens;
    Some(if state.is_idle() {
        beta * (delta[k + 1] - delta[k]) - model.cost
    } else {
        beta * (delta[k] - delta[k - 1]) - model.traffic.benefit_of(state.traffic)
    })
}

pub(crate) fn decide(model: &MdpModel, delta: &[f64], state: State) -> Action {
    match model.forced_action(state) {
        Some(a) => a,
        None => {
            let slack = deviation_slack(model, delta, state).expect("free state");
            if slack >= -TIE_TOLERANCE {
                Action::ZERO
            } else {
                Action::ONE
            }
        }
    }
}

/// Right-hand side of the Bellman equation for one action.
pub(crate) fn action_value(model: &MdpModel, delta: &[f64], state: State, action: Action) -> f64 {
    let beta = model.discount;
    let k = state.tokens;
    let reward = model.expected_reward(state, action);
    let continuation = if state.is_idle() {
        if k < model.token_cap && !action.is_one() {
            let p = model.env.p_recv;
            p * delta[k + 1] + (1.0 - p) * delta[k]
        } else {
            delta[k]
        }
    } else if k > 0 && action.is_one() {
        let q = model.env.q_accept;
        q * delta[k - 1] + (1.0 - q) * delta[k]
    } else {
        delta[k]
    };
    reward + beta * continuation
}

fn backup_impl(model: &MdpModel, v: &ValueFunction, fixed: Option<&[Option<Action>]>) -> (ValueFunction, Policy) {
    let delta = expected_next_values(model, v);
    let n = model.num_states();
    let mut values = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    for i in 0..n {
        let state = model.state_at(i);
        let action = match fixed.and_then(|f| f[i]) {
            Some(a) => model.forced_action(state).unwrap_or(a),
            None => decide(model, &delta, state),
        };
        values.push(action_value(model, &delta, state, action));
        actions.push(action);
    }
    (
        ValueFunction::from_values(model, values),
        Policy {
            num_types: model.num_types(),
            token_cap: model.token_cap,
            actions,
        },
    )
}

/// One Bellman improvement step and the greedy policy achieving it.
pub fn bellman_backup(model: &MdpModel, v: &ValueFunction) -> (ValueFunction, Policy) {
    backup_impl(model, v, None)
}

/// Greedy policy with respect to `v` without computing new values.
pub fn greedy_policy(model: &MdpModel, v: &ValueFunction) -> Policy {
    let delta = expected_next_values(model, v);
    Policy::from_fn(model, |s| decide(model, &delta, s))
}

/// Value iteration from `V = 0` until the sup-norm step is below epsilon.
///
/// The returned policy is greedy with respect to the returned values.
pub fn value_iteration(model: &MdpModel, cfg: &SolverConfig) -> Result<Solution, SolverError> {
    value_iteration_observed(model, cfg, |_, _| {})
}

/// Same as [`value_iteration`], calling `observer(n, V^n)` for every iterate
/// starting with `V^0`.
pub fn value_iteration_observed(
    model: &MdpModel,
    cfg: &SolverConfig,
    observer: impl FnMut(usize, &ValueFunction),
) -> Result<Solution, SolverError> {
    run_iteration(model, cfg, None, observer)
}

/// Value iteration where the states with `Some(action)` in `fixed` keep that
/// action and only the remaining states are optimized.
pub fn value_iteration_restricted(
    model: &MdpModel,
    cfg: &SolverConfig,
    fixed: &[Option<Action>],
) -> Result<Solution, SolverError> {
    assert_eq!(fixed.len(), model.num_states(), "restriction table size mismatch");
    run_iteration(model, cfg, Some(fixed), |_, _| {})
}

fn run_iteration(
    model: &MdpModel,
    cfg: &SolverConfig,
    fixed: Option<&[Option<Action>]>,
    mut observer: impl FnMut(usize, &ValueFunction),
) -> Result<Solution, SolverError> {
    model.clone().validated()?;
    let mut v = ValueFunction::zeros(model);
    observer(0, &v);
    let mut residual = f64::INFINITY;
    for n in 1..=cfg.max_iterations {
        let (next, _) = backup_impl(model, &v, fixed);
        residual = next.sup_distance(&v);
        observer(n, &next);
        v = next;
        if residual < cfg.epsilon {
            let (_, policy) = backup_impl(model, &v, fixed);
            return Ok(Solution {
                values: v,
                policy,
                iterations: n,
            });
        }
    }
    Err(SolverError::NotConverged {
        iterations: cfg.max_iterations,
        residual,
        last: v,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn backup_from_zero() {
        let m = presets::illustrative();
        let (v, pi) = bellman_backup(&m, &ValueFunction::zeros(&m));
        assert_eq!(pi.action(State::new(4, 3)), Action::ONE);
        assert!((v.get(State::new(4, 3)) - 3.0).abs() < 1e-15);
        assert_eq!(pi.action(State::new(0, 2)), Action::ONE);
        assert_eq!(v.get(State::new(0, 2)), 0.0);
        assert_eq!(pi.action(State::new(1, 0)), Action::ZERO);
        assert_eq!(v.get(State::new(1, 0)), 0.0);
        assert_eq!(pi.action(State::new(0, 20)), Action::ONE);
    }

    #[test]
    fn backup_matches_generic_kernel() {
        let m = presets::illustrative();
        let v = ValueFunction::from_values(&m, (0..m.num_states()).map(|i| (i as f64).sqrt()).collect());
        let (next, pi) = bellman_backup(&m, &v);
        for s in m.enumerate_states() {
            let generic = |a: Action| {
                m.expected_reward(s, a)
                    + m.discount
                        * m.successor_distribution(s, a)
                            .iter()
                            .map(|(t, p)| p * v.get(*t))
                            .sum::<f64>()
            };
            let best = match m.forced_action(s) {
                Some(a) => generic(a),
                None => generic(Action::ZERO).max(generic(Action::ONE)),
            };
            assert!((next.get(s) - best).abs() < 1e-12, "state {s}");
            assert!((generic(pi.action(s)) - best).abs() < 1e-12);
        }
    }

    #[test]
    fn not_converged_carries_last_iterate() {
        let m = presets::illustrative();
        let cfg = SolverConfig {
            epsilon: 1e-9,
            max_iterations: 5,
        };
        match value_iteration(&m, &cfg) {
            Err(SolverError::NotConverged { iterations, last, .. }) => {
                assert_eq!(iterations, 5);
                assert_eq!(last.values.len(), m.num_states());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_model_rejected() {
        let mut m = presets::illustrative();
        m.discount = 1.0;
        assert!(matches!(
            value_iteration(&m, &SolverConfig::default()),
            Err(SolverError::Model(_))
        ));
    }

    #[test]
    fn deterministic() {
        let m = presets::illustrative();
        let a = value_iteration(&m, &SolverConfig::default()).unwrap();
        let b = value_iteration(&m, &SolverConfig::default()).unwrap();
        assert_eq!(a, b);
        let bits = |s: &Solution| s.values.values.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn values_bounded_and_monotone() {
        let m = presets::illustrative();
        let sol = value_iteration(&m, &SolverConfig::default()).unwrap();
        let bound = m.traffic.max_benefit() / (1.0 - m.discount);
        assert!(sol.values.values.iter().all(|v| v.abs() <= bound));
        assert!(check_monotone_values(&sol.values).is_empty());
    }
}
