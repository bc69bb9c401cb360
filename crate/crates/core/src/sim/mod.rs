//! Monte-Carlo simulation of a single UE against the parametric environment
//! and of a network of UEs trading tokens with each other.
//!
//! Every single-UE slot consumes exactly two uniforms from the generator:
//! one for the request/acceptance outcome and one for the next traffic type.
//! Two policies run from the same seed therefore see the same traffic
//! sequence and the same environment draws (common random numbers).

mod network;

pub use network::{
    network_fixed_point, run_network, run_network_with, EmpiricalEnv, FixedPointRound, NetworkConfig, NetworkOutcome,
    PairingRule, PolicySpec, UniformPairing,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Action, MdpModel, State};
use crate::solver::{value_iteration_restricted, Policy, SolverConfig, SolverError};

/// Generator used by all simulations.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Error, Clone)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// What happened in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotEvent {
    /// Traffic sent over the cellular link by choice or for lack of tokens.
    Cellular,
    /// D2D request accepted; one token spent.
    D2dServed,
    /// D2D request issued but nobody accepted; fell back to cellular.
    D2dRejected,
    /// Idle, accepting, and a request arrived; one token earned.
    RequestServed,
    /// Idle and accepting but no request arrived.
    NoRequest,
    /// Idle and refusing requests.
    Refused,
}

impl SlotEvent {
    pub const ALL: [SlotEvent; 6] = [
        SlotEvent::Cellular,
        SlotEvent::D2dServed,
        SlotEvent::D2dRejected,
        SlotEvent::RequestServed,
        SlotEvent::NoRequest,
        SlotEvent::Refused,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SlotEvent::Cellular => "cellular",
            SlotEvent::D2dServed => "d2d_served",
            SlotEvent::D2dRejected => "d2d_rejected",
            SlotEvent::RequestServed => "request_served",
            SlotEvent::NoRequest => "no_request",
            SlotEvent::Refused => "refused",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    pub fn token_delta(self) -> i8 {
        match self {
            SlotEvent::D2dServed => -1,
            SlotEvent::RequestServed => 1,
            _ => 0,
        }
    }
}

/// Outcome of one simulated slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub action: Action,
    pub next: State,
    pub reward: f64,
    pub event: SlotEvent,
}

/// Draws the next traffic type from the stationary distribution by inverse CDF.
pub fn sample_traffic(model: &MdpModel, u: f64) -> usize {
    let mut acc = 0.0;
    let last = model.num_types() - 1;
    for s in 0..last {
        acc += model.traffic.prob(s);
        if u < acc {
            return s;
        }
    }
    last
}

/// Resolves the request/acceptance outcome of an action. Forced states use
/// their forced action regardless of `action`.
pub fn resolve_event(model: &MdpModel, state: State, action: Action, u_env: f64) -> (Action, SlotEvent) {
    let action = model.forced_action(state).unwrap_or(action);
    let event = if state.is_idle() {
        if action.is_one() {
            SlotEvent::Refused
        } else if u_env < model.env.p_recv {
            SlotEvent::RequestServed
        } else {
            SlotEvent::NoRequest
        }
    } else if state.tokens > 0 && action.is_one() {
        if u_env < model.env.q_accept {
            SlotEvent::D2dServed
        } else {
            SlotEvent::D2dRejected
        }
    } else {
        SlotEvent::Cellular
    };
    (action, event)
}

/// Realized reward of an event: `+b_s` for a served D2D transmission, `-c`
/// for serving another UE, 0 otherwise.
pub fn realized_reward(model: &MdpModel, state: State, event: SlotEvent) -> f64 {
    match event {
        SlotEvent::D2dServed => model.traffic.benefit_of(state.traffic),
        SlotEvent::RequestServed => -model.cost,
        _ => 0.0,
    }
}

/// Samples one slot for a chosen action.
pub fn sample_transition(model: &MdpModel, state: State, action: Action, rng: &mut impl Rng) -> Step {
    let u_env: f64 = rng.gen();
    let u_type: f64 = rng.gen();
    let (action, event) = resolve_event(model, state, action, u_env);
    let tokens = (state.tokens as i64 + i64::from(event.token_delta())) as usize;
    Step {
        action,
        next: State::new(sample_traffic(model, u_type), tokens),
        reward: realized_reward(model, state, event),
        event,
    }
}

/// Samples one slot following `policy`.
pub fn step_single(model: &MdpModel, state: State, policy: &Policy, rng: &mut impl Rng) -> Step {
    sample_transition(model, state, policy.action(state), rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub slots: u64,
    pub rng_seed: u64,
    /// Starting wallet; `None` means `K / 2` rounded down.
    pub initial_tokens: Option<usize>,
    /// Starting traffic type; `None` draws it from the stationary distribution.
    pub initial_traffic: Option<usize>,
    /// Keep one record per slot in the trace.
    pub record_slots: bool,
}

impl SimConfig {
    pub fn new(slots: u64, rng_seed: u64) -> Self {
        Self {
            slots,
            rng_seed,
            initial_tokens: None,
            initial_traffic: None,
            record_slots: false,
        }
    }

    fn check(&self, model: &MdpModel) -> Result<(), SimError> {
        if self.slots < 1 {
            return Err(SimError::InvalidConfig("slots must be at least 1".into()));
        }
        if let Some(k) = self.initial_tokens {
            if k > model.token_cap {
                return Err(SimError::InvalidConfig(format!(
                    "initial tokens {k} exceed the cap {}",
                    model.token_cap
                )));
            }
        }
        if let Some(s) = self.initial_traffic {
            if s >= model.num_types() {
                return Err(SimError::InvalidConfig(format!(
                    "initial traffic type {s} does not exist"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: u64,
    pub state: State,
    pub action: Action,
    pub event: SlotEvent,
    pub reward: f64,
    pub token_delta: i8,
}

/// Per-slot records (optional) and run aggregates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimTrace {
    pub slots: u64,
    pub records: Vec<SlotRecord>,
    pub total_reward: f64,
    /// `sum_t beta^t r_t` over the simulated horizon.
    pub discounted_reward: f64,
    /// Tokens spent while holding each traffic type (index 0 stays 0).
    pub spend_by_type: Vec<u64>,
    pub earn_count: u64,
    pub event_counts: [u64; 6],
    pub final_state: State,
}

impl SimTrace {
    fn new(num_types: usize, start: State) -> Self {
        Self {
            slots: 0,
            records: Vec::new(),
            total_reward: 0.0,
            discounted_reward: 0.0,
            spend_by_type: vec![0; num_types],
            earn_count: 0,
            event_counts: [0; 6],
            final_state: start,
        }
    }

    fn push(&mut self, weight: f64, state: State, step: &Step, keep: bool) {
        if keep {
            self.records.push(SlotRecord {
                slot: self.slots,
                state,
                action: step.action,
                event: step.event,
                reward: step.reward,
                token_delta: step.event.token_delta(),
            });
        }
        self.slots += 1;
        self.total_reward += step.reward;
        self.discounted_reward += weight * step.reward;
        self.event_counts[step.event.index()] += 1;
        match step.event {
            SlotEvent::D2dServed => self.spend_by_type[state.traffic] += 1,
            SlotEvent::RequestServed => self.earn_count += 1,
            _ => {}
        }
        self.final_state = step.next;
    }

    pub fn average_reward(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.total_reward / self.slots as f64
        }
    }

    pub fn event_count(&self, event: SlotEvent) -> u64 {
        self.event_counts[event.index()]
    }

    pub fn total_spent(&self) -> u64 {
        self.spend_by_type.iter().sum()
    }

    /// Share of spent tokens per traffic type; all zeros if nothing was spent.
    pub fn spend_shares(&self) -> Vec<f64> {
        let total = self.total_spent();
        self.spend_by_type
            .iter()
            .map(|&n| if total == 0 { 0.0 } else { n as f64 / total as f64 })
            .collect()
    }
}

/// Runs one UE for `cfg.slots` slots under `policy`.
pub fn run_single(model: &MdpModel, policy: &Policy, cfg: &SimConfig) -> Result<SimTrace, SimError> {
    cfg.check(model)?;
    let mut rng = rng_from_seed(cfg.rng_seed);
    let tokens = cfg.initial_tokens.unwrap_or(model.token_cap / 2);
    let traffic = match cfg.initial_traffic {
        Some(s) => s,
        None => sample_traffic(model, rng.gen()),
    };
    let mut state = State::new(traffic, tokens);
    let mut trace = SimTrace::new(model.num_types(), state);
    if cfg.record_slots {
        trace.records.reserve(cfg.slots as usize);
    }
    let mut weight = 1.0;
    for _ in 0..cfg.slots {
        let step = step_single(model, state, policy, &mut rng);
        trace.push(weight, state, &step, cfg.record_slots);
        weight *= model.discount;
        state = step.next;
    }
    Ok(trace)
}

/// The comparison baseline: D2D mode whenever a token is held, with the
/// idle-state acceptance rule optimized by restricted value iteration.
pub fn build_greedy_policy(model: &MdpModel, cfg: &SolverConfig) -> Result<Policy, SolverError> {
    let fixed = greedy_restriction(model);
    Ok(value_iteration_restricted(model, cfg, &fixed)?.policy)
}

/// Restriction table pinning D2D mode at every state with traffic.
pub fn greedy_restriction(model: &MdpModel) -> Vec<Option<Action>> {
    model
        .enumerate_states()
        .into_iter()
        .map(|s| (!s.is_idle()).then_some(Action::ONE))
        .collect()
}
