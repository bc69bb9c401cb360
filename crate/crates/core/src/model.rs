//! Problem instance data model and MDP primitives.
//!
//! A UE's state is `(s, k)`: the traffic type of the current slot and the
//! number of tokens it holds. Type index 0 is the idle type `s0`; indices
//! `1..=N` are real traffic types ordered by strictly increasing benefit.
//!
//! The action is a single bit whose meaning depends on the traffic type:
//!
//! | state     | action 0          | action 1          |
//! |-----------|-------------------|-------------------|
//! | `s != s0` | cellular mode     | D2D mode          |
//! | `s == s0` | accept requests   | refuse requests   |

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that stationary probabilities sum to one.
pub const PROB_SUM_TOLERANCE: f64 = 1e-12;

/// Index of the idle traffic type.
pub const IDLE: usize = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("state ({traffic}, {tokens}) is outside the model (N = {num_traffic}, K = {token_cap})")]
    InvalidState {
        traffic: usize,
        tokens: usize,
        num_traffic: usize,
        token_cap: usize,
    },
    #[error("invalid model: {0}")]
    Invalid(ValidationReport),
}

/// A traffic type: index 0 is idle, `1..=N` carry traffic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficType {
    pub id: usize,
    pub label: String,
}

impl TrafficType {
    pub fn is_idle(&self) -> bool {
        self.id == IDLE
    }
}

/// Traffic types with their stationary probabilities and D2D benefits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficModel {
    pub types: Vec<TrafficType>,
    /// `stationary_prob[i]` is `p(s_i)`, including the idle type at index 0.
    pub stationary_prob: Vec<f64>,
    /// `benefit[i - 1]` is `b_{s_i}` for the non-idle types.
    pub benefit: Vec<f64>,
}

impl TrafficModel {
    /// Builds a traffic model with default labels `s0, s1, ...`.
    pub fn new(stationary_prob: Vec<f64>, benefit: Vec<f64>) -> Self {
        let types = (0..stationary_prob.len())
            .map(|id| TrafficType {
                id,
                label: format!("s{id}"),
            })
            .collect();
        Self {
            types,
            stationary_prob,
            benefit,
        }
    }

    pub fn with_labels(mut self, labels: &[&str]) -> Self {
        for (t, l) in self.types.iter_mut().zip(labels) {
            t.label = (*l).to_string();
        }
        self
    }

    /// Number of non-idle traffic types, `N`.
    pub fn num_traffic(&self) -> usize {
        self.stationary_prob.len().saturating_sub(1)
    }

    /// Number of traffic types including idle, `N + 1`.
    pub fn num_types(&self) -> usize {
        self.stationary_prob.len()
    }

    pub fn prob(&self, traffic: usize) -> f64 {
        self.stationary_prob[traffic]
    }

    /// D2D benefit of a traffic type; zero for the idle type.
    pub fn benefit_of(&self, traffic: usize) -> f64 {
        if traffic == IDLE {
            0.0
        } else {
            self.benefit[traffic - 1]
        }
    }

    pub fn label(&self, traffic: usize) -> &str {
        &self.types[traffic].label
    }

    pub fn max_benefit(&self) -> f64 {
        self.benefit.iter().copied().fold(0.0, f64::max)
    }

    fn check(&self, report: &mut ValidationReport) {
        let n = self.stationary_prob.len();
        if n < 2 {
            report.push("traffic", "at least one non-idle traffic type is required");
        }
        if self.types.len() != n {
            report.push(
                "traffic.types",
                format!("{} types listed but {} probabilities given", self.types.len(), n),
            );
        }
        for (i, t) in self.types.iter().enumerate() {
            if t.id != i {
                report.push("traffic.types", format!("type at position {i} has id {}", t.id));
            }
        }
        for (i, &p) in self.stationary_prob.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) {
                report.push(
                    "traffic.stationary_prob",
                    format!("p(s{i}) = {p} is not strictly inside (0, 1)"),
                );
            }
        }
        let sum: f64 = self.stationary_prob.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            report.push(
                "traffic.stationary_prob",
                format!("probabilities sum to {sum}, expected 1"),
            );
        }
        if self.benefit.len() + 1 != n {
            report.push(
                "traffic.benefit",
                format!(
                    "{} benefits given for {} non-idle types",
                    self.benefit.len(),
                    n.saturating_sub(1)
                ),
            );
        }
        if let Some(&first) = self.benefit.first() {
            if !(first > 0.0) {
                report.push("traffic.benefit", format!("b_s1 = {first} is not positive"));
            }
        }
        for (i, w) in self.benefit.windows(2).enumerate() {
            if !(w[0] < w[1]) {
                report.push(
                    "traffic.benefit",
                    format!(
                        "strict ordering violated: b_s{} = {} is not below b_s{} = {}",
                        i + 1,
                        w[0],
                        i + 2,
                        w[1]
                    ),
                );
            }
        }
    }
}

/// Environment factors: `p` is the chance an accepting idle UE receives a
/// request, `q` the chance a D2D request is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvFactors {
    pub p_recv: f64,
    pub q_accept: f64,
}

impl EnvFactors {
    pub fn new(p_recv: f64, q_accept: f64) -> Self {
        Self { p_recv, q_accept }
    }
}

/// A full problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpModel {
    pub traffic: TrafficModel,
    pub env: EnvFactors,
    /// Cost `c` of serving one D2D request.
    pub cost: f64,
    /// Discount factor `beta`.
    pub discount: f64,
    /// Token cap `K`.
    pub token_cap: usize,
}

/// One entry of a [`ValidationReport`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

/// Lists every violated model invariant.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, field: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.to_string(),
            message: message.into(),
        });
    }

    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{}: {}", v.field, v.message)?;
        }
        Ok(())
    }
}

/// A state `(s, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct State {
    pub traffic: usize,
    pub tokens: usize,
}

impl State {
    pub const fn new(traffic: usize, tokens: usize) -> Self {
        Self { traffic, tokens }
    }

    pub fn is_idle(&self) -> bool {
        self.traffic == IDLE
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(s{}, {})", self.traffic, self.tokens)
    }
}

/// Binary action. For a non-idle type, 1 selects D2D mode; for the idle
/// type, 1 refuses requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub struct Action(u8);

impl Action {
    pub const ZERO: Action = Action(0);
    pub const ONE: Action = Action(1);

    pub fn new(value: u8) -> Option<Self> {
        match value {
            0 | 1 => Some(Action(value)),
            _ => None,
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn is_one(self) -> bool {
        self.0 == 1
    }

    /// The action as a real number, for the algebraic forms of the kernel.
    pub fn as_f64(self) -> f64 {
        f64::from(self.0)
    }

    pub fn flipped(self) -> Self {
        Action(1 - self.0)
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a.0
    }
}

impl TryFrom<u8> for Action {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Action::new(v).ok_or_else(|| format!("action must be 0 or 1, got {v}"))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl MdpModel {
    pub fn new(traffic: TrafficModel, env: EnvFactors, cost: f64, discount: f64, token_cap: usize) -> Self {
        Self {
            traffic,
            env,
            cost,
            discount,
            token_cap,
        }
    }

    /// Checks every model invariant and lists the violated ones.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        self.traffic.check(&mut report);
        for (name, v) in [("env.p_recv", self.env.p_recv), ("env.q_accept", self.env.q_accept)] {
            if !(v > 0.0 && v < 1.0) {
                report.push(name, format!("{v} is not strictly inside (0, 1)"));
            }
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            report.push("discount", format!("{} is not strictly inside (0, 1)", self.discount));
        }
        if !(self.cost >= 0.0) || !self.cost.is_finite() {
            report.push("cost", format!("{} is not a nonnegative number", self.cost));
        }
        if self.token_cap < 1 {
            report.push("token_cap", "must be at least 1");
        }
        report
    }

    /// Returns the model if it is valid, otherwise the full report.
    pub fn validated(self) -> Result<Self, ModelError> {
        let report = self.validate();
        if report.is_valid() {
            Ok(self)
        } else {
            Err(ModelError::Invalid(report))
        }
    }

    pub fn num_types(&self) -> usize {
        self.traffic.num_types()
    }

    pub fn num_states(&self) -> usize {
        self.num_types() * (self.token_cap + 1)
    }

    /// Position of a state in the type-major enumeration order.
    pub fn index_of(&self, state: State) -> usize {
        state.traffic * (self.token_cap + 1) + state.tokens
    }

    pub fn state_at(&self, index: usize) -> State {
        State::new(index / (self.token_cap + 1), index % (self.token_cap + 1))
    }

    pub fn contains(&self, state: State) -> bool {
        state.traffic < self.num_types() && state.tokens <= self.token_cap
    }

    pub fn check_state(&self, state: State) -> Result<(), ModelError> {
        if self.contains(state) {
            Ok(())
        } else {
            Err(ModelError::InvalidState {
                traffic: state.traffic,
                tokens: state.tokens,
                num_traffic: self.traffic.num_traffic(),
                token_cap: self.token_cap,
            })
        }
    }

    /// All `(N + 1)(K + 1)` states, type-major then tokens ascending.
    pub fn enumerate_states(&self) -> Vec<State> {
        (0..self.num_states()).map(|i| self.state_at(i)).collect()
    }

    /// The single admissible action at states where the choice is forced:
    /// no tokens with traffic (cellular) and a full wallet when idle (refuse).
    pub fn forced_action(&self, state: State) -> Option<Action> {
        if state.is_idle() {
            (state.tokens == self.token_cap).then_some(Action::ONE)
        } else {
            (state.tokens == 0).then_some(Action::ZERO)
        }
    }

    /// Actions allowed at a state: the forced one, or both.
    pub fn admissible_actions(&self, state: State) -> Vec<Action> {
        match self.forced_action(state) {
            Some(a) => vec![a],
            None => vec![Action::ZERO, Action::ONE],
        }
    }

    /// Transition probability `P{(s', k') | (s, k), a}`.
    pub fn transition_prob(&self, from: State, action: Action, to: State) -> Result<f64, ModelError> {
        self.check_state(from)?;
        self.check_state(to)?;
        let a = action.as_f64();
        let ps = self.traffic.prob(to.traffic);
        let (k, k2) = (from.tokens, to.tokens);
        let q = self.env.q_accept;
        let p = self.env.p_recv;
        let prob = if !from.is_idle() {
            if k > 0 && k2 == k {
                ps * ((1.0 - a) + a * (1.0 - q))
            } else if k > 0 && k2 + 1 == k {
                ps * q * a
            } else if k == 0 && k2 == 0 {
                ps
            } else {
                0.0
            }
        } else if k < self.token_cap && k2 == k {
            ps * (a + (1.0 - a) * (1.0 - p))
        } else if k < self.token_cap && k2 == k + 1 {
            ps * p * (1.0 - a)
        } else if k == self.token_cap && k2 == k {
            ps
        } else {
            0.0
        };
        Ok(prob)
    }

    /// Expected one-slot reward `E{mu(s, k, a)}`.
    pub fn expected_reward(&self, state: State, action: Action) -> f64 {
        if state.is_idle() {
            -self.cost * self.env.p_recv * (1.0 - action.as_f64())
        } else if state.tokens > 0 {
            self.env.q_accept * action.as_f64() * self.traffic.benefit_of(state.traffic)
        } else {
            0.0
        }
    }

    /// Successor states with nonzero probability, in enumeration order.
    pub fn successor_distribution(&self, state: State, action: Action) -> Vec<(State, f64)> {
        let k = state.tokens;
        let mut token_moves: Vec<(usize, f64)> = Vec::with_capacity(2);
        if state.is_idle() {
            if k < self.token_cap && !action.is_one() {
                token_moves.push((k, 1.0 - self.env.p_recv));
                token_moves.push((k + 1, self.env.p_recv));
            } else {
                token_moves.push((k, 1.0));
            }
        } else if k > 0 && action.is_one() {
            token_moves.push((k - 1, self.env.q_accept));
            token_moves.push((k, 1.0 - self.env.q_accept));
        } else {
            token_moves.push((k, 1.0));
        }
        let mut out = Vec::with_capacity(self.num_types() * token_moves.len());
        for s2 in 0..self.num_types() {
            for &(k2, pk) in &token_moves {
                let prob = self.traffic.prob(s2) * pk;
                if prob > 0.0 {
                    out.push((State::new(s2, k2), prob));
                }
            }
        }
        out
    }
}
