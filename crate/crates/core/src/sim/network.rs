//! Multi-UE simulation where request and acceptance probabilities emerge
//! from the UEs' own policies instead of being fixed parameters.
//!
//! Each slot: UEs with traffic, tokens and a D2D decision send one request
//! each; every request is routed to one accepting idle UE by the pairing
//! rule; every receiver serves at most one of the requests routed to it.
//! A served pair moves exactly one token from requester to receiver. The
//! rest fall back to cellular. One matching round per slot.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{rng_from_seed, sample_traffic, SimError, SimRng, SimTrace, SlotEvent, Step};
use crate::model::{Action, EnvFactors, MdpModel, State};
use crate::solver::{value_iteration, Policy, SolverConfig};

/// How requests find receivers.
pub trait PairingRule {
    /// Picks the receiver of `requester`'s request among `acceptors`
    /// (non-empty); returns a position in `acceptors`.
    fn route(&self, requester: usize, acceptors: &[usize], rng: &mut SimRng) -> usize;
    /// Picks which of the routed requesters (non-empty) a receiver serves;
    /// returns a position in `requesters`.
    fn choose(&self, receiver: usize, requesters: &[usize], rng: &mut SimRng) -> usize;
}

/// Uniform routing and uniform choice among competing requests.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPairing;

impl PairingRule for UniformPairing {
    fn route(&self, _requester: usize, acceptors: &[usize], rng: &mut SimRng) -> usize {
        rng.gen_range(0..acceptors.len())
    }

    fn choose(&self, _receiver: usize, requesters: &[usize], rng: &mut SimRng) -> usize {
        rng.gen_range(0..requesters.len())
    }
}

/// Policy assignment for one UE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicySpec {
    /// Optimal policy for the UE's own model.
    Optimal,
    /// Greedy baseline for the UE's own model.
    Greedy,
    Custom(Policy),
}

impl PolicySpec {
    fn resolve(&self, model: &MdpModel, solver: &SolverConfig) -> Result<Policy, SimError> {
        Ok(match self {
            PolicySpec::Optimal => value_iteration(model, solver)?.policy,
            PolicySpec::Greedy => super::build_greedy_policy(model, solver)?,
            PolicySpec::Custom(p) => {
                if p.actions.len() != model.num_states() {
                    return Err(SimError::InvalidConfig("custom policy does not match the model".into()));
                }
                p.clone()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub num_ues: usize,
    /// One entry per UE, or a single entry shared by all.
    pub policies: Vec<PolicySpec>,
    pub slots: u64,
    pub rng_seed: u64,
    /// Starting wallet of every UE; `None` means `K / 2` rounded down.
    pub initial_tokens: Option<usize>,
    pub record_slots: bool,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl NetworkConfig {
    pub fn symmetric(num_ues: usize, policy: PolicySpec, slots: u64, rng_seed: u64) -> Self {
        Self {
            num_ues,
            policies: vec![policy],
            slots,
            rng_seed,
            initial_tokens: None,
            record_slots: false,
            solver: SolverConfig::default(),
        }
    }

    fn policy_spec(&self, ue: usize) -> &PolicySpec {
        if self.policies.len() == 1 {
            &self.policies[0]
        } else {
            &self.policies[ue]
        }
    }
}

/// Measured environment factors of one UE.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalEnv {
    /// Slots spent idle and accepting.
    pub accept_slots: u64,
    /// Of those, slots where at least one request was routed to the UE.
    pub requested_slots: u64,
    /// Requests issued.
    pub requests: u64,
    /// Of those, requests that were served.
    pub served: u64,
}

impl EmpiricalEnv {
    /// `p_hat`, or `None` if the UE never accepted.
    pub fn p_hat(&self) -> Option<f64> {
        ratio(self.requested_slots, self.accept_slots)
    }

    /// `q_hat`, or `None` if the UE never requested.
    pub fn q_hat(&self) -> Option<f64> {
        ratio(self.served, self.requests)
    }

    /// Binomial standard error of `p_hat`.
    pub fn p_se(&self) -> Option<f64> {
        self.p_hat().map(|p| (p * (1.0 - p) / self.accept_slots as f64).sqrt())
    }

    /// Binomial standard error of `q_hat`.
    pub fn q_se(&self) -> Option<f64> {
        self.q_hat().map(|q| (q * (1.0 - q) / self.requests as f64).sqrt())
    }

    /// Estimates clamped into the open unit interval so they form a valid model.
    pub fn as_env(&self, fallback: EnvFactors, floor: f64) -> EnvFactors {
        let clamp = |x: f64| x.clamp(floor, 1.0 - floor);
        EnvFactors::new(
            self.p_hat().map_or(fallback.p_recv, clamp),
            self.q_hat().map_or(fallback.q_accept, clamp),
        )
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkOutcome {
    pub traces: Vec<SimTrace>,
    pub env: Vec<EmpiricalEnv>,
    pub policies: Vec<Policy>,
    pub initial_total_tokens: usize,
    /// Smallest and largest system-wide token total seen at slot boundaries.
    pub min_total_tokens: usize,
    pub max_total_tokens: usize,
}

impl NetworkOutcome {
    pub fn tokens_conserved(&self) -> bool {
        self.min_total_tokens == self.initial_total_tokens && self.max_total_tokens == self.initial_total_tokens
    }
}

/// [`run_network_with`] using [`UniformPairing`].
pub fn run_network(models: &[MdpModel], cfg: &NetworkConfig) -> Result<NetworkOutcome, SimError> {
    run_network_with(models, cfg, &UniformPairing)
}

/// Simulates `cfg.num_ues` UEs. `models` holds one model per UE, or a single
/// model shared by all. Every UE must use the same token cap.
pub fn run_network_with(
    models: &[MdpModel],
    cfg: &NetworkConfig,
    pairing: &impl PairingRule,
) -> Result<NetworkOutcome, SimError> {
    let n = cfg.num_ues;
    if n < 2 {
        return Err(SimError::InvalidConfig("a network needs at least 2 UEs".into()));
    }
    if cfg.slots < 1 {
        return Err(SimError::InvalidConfig("slots must be at least 1".into()));
    }
    if !(models.len() == 1 || models.len() == n) {
        return Err(SimError::InvalidConfig(format!(
            "{} models given for {n} UEs",
            models.len()
        )));
    }
    if !(cfg.policies.len() == 1 || cfg.policies.len() == n) {
        return Err(SimError::InvalidConfig(format!(
            "{} policies given for {n} UEs",
            cfg.policies.len()
        )));
    }
    let model_of = |i: usize| if models.len() == 1 { &models[0] } else { &models[i] };
    let cap = models[0].token_cap;
    if models.iter().any(|m| m.token_cap != cap) {
        return Err(SimError::InvalidConfig("all UEs must share the token cap".into()));
    }
    let initial_tokens = cfg.initial_tokens.unwrap_or(cap / 2);
    if initial_tokens > cap {
        return Err(SimError::InvalidConfig(format!(
            "initial tokens {initial_tokens} exceed the cap {cap}"
        )));
    }

    let policies = (0..n)
        .map(|i| cfg.policy_spec(i).resolve(model_of(i), &cfg.solver))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = rng_from_seed(cfg.rng_seed);
    let mut states: Vec<State> = (0..n)
        .map(|i| State::new(sample_traffic(model_of(i), rng.gen()), initial_tokens))
        .collect();
    let mut traces: Vec<SimTrace> = states
        .iter()
        .map(|s| SimTrace::new(models[0].num_types(), *s))
        .collect();
    let mut env = vec![EmpiricalEnv::default(); n];
    let initial_total = initial_tokens * n;
    let (mut min_total, mut max_total) = (initial_total, initial_total);
    let mut weights = vec![1.0; n];

    let mut actions = vec![Action::ZERO; n];
    let mut requesters = Vec::with_capacity(n);
    let mut acceptors = Vec::with_capacity(n);
    let mut routed: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut events = vec![SlotEvent::Cellular; n];

    for _ in 0..cfg.slots {
        requesters.clear();
        acceptors.clear();
        for (i, state) in states.iter().enumerate() {
            let m = model_of(i);
            let a = m.forced_action(*state).unwrap_or(policies[i].action(*state));
            actions[i] = a;
            events[i] = if state.is_idle() {
                if a.is_one() {
                    SlotEvent::Refused
                } else {
                    acceptors.push(i);
                    SlotEvent::NoRequest
                }
            } else if state.tokens > 0 && a.is_one() {
                requesters.push(i);
                SlotEvent::D2dRejected
            } else {
                SlotEvent::Cellular
            };
        }

        if !acceptors.is_empty() {
            for &r in &requesters {
                let target = acceptors[pairing.route(r, &acceptors, &mut rng)];
                routed[target].push(r);
            }
        }
        for &a in &acceptors {
            env[a].accept_slots += 1;
            if routed[a].is_empty() {
                continue;
            }
            env[a].requested_slots += 1;
            let winner = routed[a][pairing.choose(a, &routed[a], &mut rng)];
            events[a] = SlotEvent::RequestServed;
            events[winner] = SlotEvent::D2dServed;
            routed[a].clear();
        }
        for &r in &requesters {
            env[r].requests += 1;
            if events[r] == SlotEvent::D2dServed {
                env[r].served += 1;
            }
        }

        let mut total = 0usize;
        for i in 0..n {
            let m = model_of(i);
            let state = states[i];
            let event = events[i];
            let tokens = (state.tokens as i64 + i64::from(event.token_delta())) as usize;
            let next = State::new(sample_traffic(m, rng.gen()), tokens);
            let step = Step {
                action: actions[i],
                next,
                reward: super::realized_reward(m, state, event),
                event,
            };
            traces[i].push(weights[i], state, &step, cfg.record_slots);
            weights[i] *= m.discount;
            states[i] = next;
            total += tokens;
        }
        min_total = min_total.min(total);
        max_total = max_total.max(total);
    }

    Ok(NetworkOutcome {
        traces,
        env,
        policies,
        initial_total_tokens: initial_total,
        min_total_tokens: min_total,
        max_total_tokens: max_total,
    })
}

/// One round of [`network_fixed_point`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointRound {
    pub round: usize,
    /// Environment factors each UE's policy was solved against.
    pub assumed: Vec<EnvFactors>,
    pub measured: Vec<EmpiricalEnv>,
    /// Number of UEs whose policy differs from the previous round.
    pub policy_changes: usize,
    pub average_reward: Vec<f64>,
}

/// Alternates network simulation and re-solving each UE against its measured
/// `p_hat`, `q_hat` for up to `rounds` rounds. Custom policies are kept.
/// Stops early when no policy changes; convergence is reported, not assumed.
pub fn network_fixed_point(
    models: &[MdpModel],
    cfg: &NetworkConfig,
    rounds: usize,
) -> Result<Vec<FixedPointRound>, SimError> {
    const FLOOR: f64 = 1e-3;
    let n = cfg.num_ues;
    let mut current: Vec<MdpModel> = (0..n)
        .map(|i| {
            if models.len() == 1 {
                models[0].clone()
            } else {
                models[i].clone()
            }
        })
        .collect();
    let mut previous: Option<Vec<Policy>> = None;
    let mut out = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let mut round_cfg = cfg.clone();
        round_cfg.rng_seed = cfg.rng_seed.wrapping_add(round as u64);
        let outcome = run_network(&current, &round_cfg)?;
        let policy_changes = previous.as_ref().map_or(n, |prev| {
            prev.iter().zip(&outcome.policies).filter(|(a, b)| a != b).count()
        });
        out.push(FixedPointRound {
            round,
            assumed: current.iter().map(|m| m.env).collect(),
            measured: outcome.env.clone(),
            policy_changes,
            average_reward: outcome.traces.iter().map(SimTrace::average_reward).collect(),
        });
        if previous.is_some() && policy_changes == 0 {
            break;
        }
        for (m, e) in current.iter_mut().zip(&outcome.env) {
            m.env = e.as_env(m.env, FLOOR);
        }
        previous = Some(outcome.policies);
    }
    Ok(out)
}
