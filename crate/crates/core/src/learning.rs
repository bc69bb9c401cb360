//! Tabular Q-learning for when the environment factors `p` and `q` are
//! unknown. The agent only sees states, its own actions, realized rewards
//! and next states, sampled from the same kernel as the simulator.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Action, MdpModel, State};
use crate::sim::{rng_from_seed, sample_transition};
use crate::solver::Policy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearningError {
    #[error("invalid learning config: {0}")]
    InvalidConfig(String),
}

/// Action values and visit counts for every admissible `(state, action)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub num_types: usize,
    pub token_cap: usize,
    q: Vec<[f64; 2]>,
    visits: Vec<[u64; 2]>,
    admissible: Vec<[bool; 2]>,
}

impl QTable {
    pub fn new(model: &MdpModel) -> Self {
        let admissible = model
            .enumerate_states()
            .into_iter()
            .map(|s| match model.forced_action(s) {
                Some(a) => [a == Action::ZERO, a == Action::ONE],
                None => [true, true],
            })
            .collect();
        Self {
            num_types: model.num_types(),
            token_cap: model.token_cap,
            q: vec![[0.0; 2]; model.num_states()],
            visits: vec![[0; 2]; model.num_states()],
            admissible,
        }
    }

    fn index(&self, s: State) -> usize {
        s.traffic * (self.token_cap + 1) + s.tokens
    }

    pub fn is_admissible(&self, s: State, a: Action) -> bool {
        self.admissible[self.index(s)][a.value() as usize]
    }

    /// `None` for an action that is not admissible at `s`.
    pub fn get(&self, s: State, a: Action) -> Option<f64> {
        let i = self.index(s);
        self.admissible[i][a.value() as usize].then(|| self.q[i][a.value() as usize])
    }

    pub fn visits(&self, s: State, a: Action) -> u64 {
        self.visits[self.index(s)][a.value() as usize]
    }

    /// Best admissible value at `s`.
    pub fn max_value(&self, s: State) -> f64 {
        let i = self.index(s);
        (0..2)
            .filter(|&a| self.admissible[i][a])
            .map(|a| self.q[i][a])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy admissible action; ties go to action 0.
    pub fn greedy_action(&self, s: State) -> Action {
        let i = self.index(s);
        match self.admissible[i] {
            [true, true] => {
                if self.q[i][1] > self.q[i][0] {
                    Action::ONE
                } else {
                    Action::ZERO
                }
            }
            [false, true] => Action::ONE,
            _ => Action::ZERO,
        }
    }

    pub fn greedy_policy(&self, model: &MdpModel) -> Policy {
        Policy::from_fn(model, |s| self.greedy_action(s))
    }

    /// One temporal-difference update of `Q(state, action)` toward
    /// `reward + discount * max_a' Q(next, a')`. Inadmissible actions are
    /// ignored.
    pub fn update(&mut self, state: State, action: Action, reward: f64, next: State, rate: f64, discount: f64) {
        let i = self.index(state);
        let a = action.value() as usize;
        if !self.admissible[i][a] {
            return;
        }
        let target = reward + discount * self.max_value(next);
        self.q[i][a] += rate * (target - self.q[i][a]);
        self.visits[i][a] += 1;
    }

    /// Largest absolute action value in the table.
    pub fn max_abs(&self) -> f64 {
        self.q
            .iter()
            .zip(&self.admissible)
            .flat_map(|(q, ok)| (0..2).filter(|&a| ok[a]).map(move |a| q[a].abs()))
            .fold(0.0, f64::max)
    }

    /// Rows of `(state, q0, q1)`; inadmissible entries are `None`.
    pub fn rows(&self) -> impl Iterator<Item = (State, Option<f64>, Option<f64>)> + '_ {
        let w = self.token_cap + 1;
        (0..self.q.len()).map(move |i| {
            let s = State::new(i / w, i % w);
            (
                s,
                self.admissible[i][0].then_some(self.q[i][0]),
                self.admissible[i][1].then_some(self.q[i][1]),
            )
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    /// Learning rate at the first visit of a `(state, action)` pair.
    pub initial_rate: f64,
    /// Rate at visit `n` is `initial_rate / (1 + n * rate_decay)`.
    pub rate_decay: f64,
    pub explore_start: f64,
    pub explore_end: f64,
    /// Fraction of the slot budget over which exploration decays linearly.
    pub explore_decay_fraction: f64,
    pub episodes: u64,
    pub slots_per_episode: u64,
    pub rng_seed: u64,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            initial_rate: 1.0,
            rate_decay: 0.01,
            explore_start: 1.0,
            explore_end: 0.05,
            explore_decay_fraction: 0.5,
            episodes: 2_000,
            slots_per_episode: 500,
            rng_seed: 0,
        }
    }
}

impl LearningConfig {
    pub fn budget(&self) -> u64 {
        self.episodes * self.slots_per_episode
    }

    pub fn validate(&self) -> Result<(), LearningError> {
        let in_unit = |x: f64| x > 0.0 && x <= 1.0;
        let in_closed = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(self.initial_rate) {
            return Err(LearningError::InvalidConfig(format!(
                "initial rate {} is outside (0, 1]",
                self.initial_rate
            )));
        }
        if !(self.rate_decay >= 0.0) {
            return Err(LearningError::InvalidConfig("rate decay must be nonnegative".into()));
        }
        if !in_closed(self.explore_start) || !in_closed(self.explore_end) {
            return Err(LearningError::InvalidConfig(
                "exploration rates must lie in [0, 1]".into(),
            ));
        }
        if !in_closed(self.explore_decay_fraction) {
            return Err(LearningError::InvalidConfig("decay fraction must lie in [0, 1]".into()));
        }
        if self.budget() < 1 {
            return Err(LearningError::InvalidConfig("slot budget must be at least 1".into()));
        }
        Ok(())
    }

    /// Exploration rate after `slot` slots of the total budget.
    pub fn exploration(&self, slot: u64) -> f64 {
        let horizon = self.explore_decay_fraction * self.budget() as f64;
        if horizon <= 0.0 || slot as f64 >= horizon {
            return self.explore_end;
        }
        let t = slot as f64 / horizon;
        self.explore_start + (self.explore_end - self.explore_start) * t
    }

    pub fn rate(&self, visits: u64) -> f64 {
        self.initial_rate / (1.0 + visits as f64 * self.rate_decay)
    }
}

/// One point of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: u64,
    /// Slots elapsed since training began, at the end of the episode.
    pub slot: u64,
    /// Discounted reward collected during the episode.
    pub discounted_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub qtable: QTable,
    pub policy: Policy,
    pub curve: Vec<CurvePoint>,
}

/// Epsilon-greedy Q-learning against a sampled environment. Each episode
/// starts from a uniformly random state so every state keeps being visited.
/// The discount factor is the model's; `p` and `q` are only used by the
/// environment sampler.
pub fn train(model: &MdpModel, cfg: &LearningConfig) -> Result<TrainingOutcome, LearningError> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.rng_seed);
    let mut qtable = QTable::new(model);
    let mut curve = Vec::with_capacity(cfg.episodes as usize);
    let mut slot = 0u64;
    for episode in 0..cfg.episodes {
        let mut state = model.state_at(rng.gen_range(0..model.num_states()));
        let mut discounted = 0.0;
        let mut weight = 1.0;
        for _ in 0..cfg.slots_per_episode {
            let explore = cfg.exploration(slot);
            let action = match model.forced_action(state) {
                Some(a) => a,
                None if rng.gen::<f64>() < explore => {
                    if rng.gen::<bool>() {
                        Action::ONE
                    } else {
                        Action::ZERO
                    }
                }
                None => qtable.greedy_action(state),
            };
            let step = sample_transition(model, state, action, &mut rng);
            let rate = cfg.rate(qtable.visits(state, step.action));
            qtable.update(state, step.action, step.reward, step.next, rate, model.discount);
            discounted += weight * step.reward;
            weight *= model.discount;
            state = step.next;
            slot += 1;
        }
        curve.push(CurvePoint {
            episode,
            slot,
            discounted_reward: discounted,
        });
    }
    let policy = qtable.greedy_policy(model);
    Ok(TrainingOutcome { qtable, policy, curve })
}
