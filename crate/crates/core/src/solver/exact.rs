use nalgebra::{DMatrix, DVector};

use super::{Policy, SolverError, ValueFunction};
use crate::model::{Action, MdpModel};

/// Largest number of free states [`brute_force_optimal`] will enumerate.
pub const MAX_BRUTE_FORCE_FREE_STATES: usize = 16;

/// Two candidate values closer than this are treated as equal when
/// checking that one policy attains the pointwise optimum.
const UNIFORM_OPTIMUM_TOLERANCE: f64 = 1e-9;

/// Solves `(I - beta P_pi) V = r_pi` for the policy's value function.
///
/// The system is assembled from [`MdpModel::successor_distribution`] and
/// [`MdpModel::expected_reward`], independently of the backup used by value
/// iteration. Forced states use their forced action.
pub fn evaluate_policy_exact(model: &MdpModel, policy: &Policy) -> Result<ValueFunction, SolverError> {
    let n = model.num_states();
    assert_eq!(policy.actions.len(), n, "policy table size mismatch");
    let beta = model.discount;
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for (i, state) in model.enumerate_states().into_iter().enumerate() {
        let action = model.forced_action(state).unwrap_or(policy.action(state));
        r[i] = model.expected_reward(state, action);
        for (next, p) in model.successor_distribution(state, action) {
            a[(i, model.index_of(next))] -= beta * p;
        }
    }
    let lu = a.clone().lu();
    let mut x = lu.solve(&r).ok_or(SolverError::Singular)?;
    // One round of iterative refinement.
    let residual = &r - &a * &x;
    if let Some(correction) = lu.solve(&residual) {
        x += correction;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::Singular);
    }
    Ok(ValueFunction::from_values(model, x.iter().copied().collect()))
}

/// Exhaustive search over all deterministic stationary policies.
pub fn brute_force_optimal(model: &MdpModel) -> Result<(ValueFunction, Policy), SolverError> {
    brute_force_restricted(model, &vec![None; model.num_states()])
}

/// Exhaustive search over the policies that agree with `fixed` wherever it
/// holds `Some(action)`. Forced states are never enumerated.
///
/// Returns the pointwise maximal value function and a policy attaining it at
/// every state; among such policies the one with the fewest 1-actions wins,
/// matching the ties-to-0 convention of the solver.
pub fn brute_force_restricted(
    model: &MdpModel,
    fixed: &[Option<Action>],
) -> Result<(ValueFunction, Policy), SolverError> {
    model.clone().validated()?;
    assert_eq!(fixed.len(), model.num_states(), "restriction table size mismatch");
    let states = model.enumerate_states();
    let free: Vec<usize> = states
        .iter()
        .enumerate()
        .filter(|(i, s)| model.forced_action(**s).is_none() && fixed[*i].is_none())
        .map(|(i, _)| i)
        .collect();
    if free.len() > MAX_BRUTE_FORCE_FREE_STATES {
        return Err(SolverError::TooLarge {
            free_states: free.len(),
            max: MAX_BRUTE_FORCE_FREE_STATES,
        });
    }
    let base = Policy::from_fn(model, |s| fixed[model.index_of(s)].unwrap_or(Action::ZERO));

    let mut candidates = Vec::with_capacity(1 << free.len());
    for mask in 0u32..(1u32 << free.len()) {
        let mut policy = base.clone();
        for (bit, &i) in free.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                policy.actions[i] = Action::ONE;
            }
        }
        let values = evaluate_policy_exact(model, &policy)?;
        candidates.push((mask.count_ones(), policy, values));
    }

    let n = model.num_states();
    let mut best = vec![f64::NEG_INFINITY; n];
    for (_, _, v) in &candidates {
        for (b, x) in best.iter_mut().zip(&v.values) {
            *b = b.max(*x);
        }
    }

    let mut attaining: Option<(u32, usize)> = None;
    let mut closest_gap = f64::INFINITY;
    for (idx, (ones, _, v)) in candidates.iter().enumerate() {
        let gap = best.iter().zip(&v.values).map(|(b, x)| b - x).fold(0.0, f64::max);
        closest_gap = closest_gap.min(gap);
        if gap <= UNIFORM_OPTIMUM_TOLERANCE && attaining.is_none_or(|(o, _)| *ones < o) {
            attaining = Some((*ones, idx));
        }
    }
    let (_, idx) = attaining.ok_or(SolverError::NoUniformOptimum { gap: closest_gap })?;
    let policy = candidates.swap_remove(idx).1;
    Ok((ValueFunction::from_values(model, best), policy))
}
