//! Online deep Q-learning with experience replay, linear epsilon-greedy
//! annealing, and a periodically synchronized target network.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{TransitionRecord, TransitionSink};
use crate::env::{self, encode_state, Action, EnvConfig, PipeSpec, PipeState, ENCODED_STATE_LEN};
use crate::nn::{adam_step, Activation, AdamState, Gradients, MlpConfig, MlpParams, NnError};

/// Hyperparameters of an online training run. Defaults are the chosen
/// values of the case study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub buffer_capacity: usize,
    pub gamma: f64,
    pub epsilon_start: f64,
    /// Final exploration rate after annealing.
    pub epsilon_final: f64,
    /// Fraction of total env steps over which epsilon anneals linearly.
    pub exploration_fraction: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub batch_size: usize,
    /// Gradient update every this many env steps.
    pub train_every: usize,
    /// No gradient updates before this many env steps.
    pub learning_starts: usize,
    /// Target network sync period, in env steps.
    pub target_sync_every: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden_dims: vec![64, 64],
            activation: Activation::Relu,
            learning_rate: 1e-4,
            buffer_capacity: 50_000,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_final: 0.1,
            exploration_fraction: 0.1,
            episodes: 1000,
            steps_per_episode: 100,
            batch_size: 32,
            train_every: 4,
            learning_starts: 1000,
            target_sync_every: 1000,
            seed: 42,
        }
    }
}

impl DqnConfig {
    pub fn total_steps(&self) -> usize {
        self.episodes * self.steps_per_episode
    }

    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig {
            input_dim: ENCODED_STATE_LEN,
            hidden_dims: self.hidden_dims.clone(),
            output_dim: Action::COUNT,
            activation: self.activation,
            dropout_rate: 0.0,
        }
    }

    fn validate(&self) -> Result<(), DqnError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(DqnError::InvalidConfig(format!(
                "gamma {} outside [0,1]",
                self.gamma
            )));
        }
        if !(0.0 <= self.epsilon_final
            && self.epsilon_final <= self.epsilon_start
            && self.epsilon_start <= 1.0)
        {
            return Err(DqnError::InvalidConfig(format!(
                "need 0 <= epsilon_final <= epsilon_start <= 1, got {} and {}",
                self.epsilon_final, self.epsilon_start
            )));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.train_every == 0 {
            return Err(DqnError::InvalidConfig(
                "batch_size, buffer_capacity and train_every must be >= 1".into(),
            ));
        }
        if self.steps_per_episode == 0 || self.steps_per_episode > env::HORIZON as usize {
            return Err(DqnError::InvalidConfig(format!(
                "steps_per_episode must be in [1,{}]",
                env::HORIZON
            )));
        }
        if self.target_sync_every == 0 {
            return Err(DqnError::InvalidConfig(
                "target_sync_every must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum DqnError {
    InvalidConfig(String),
    EmptyRoster,
    /// train_step called before `learning_starts` env steps elapsed.
    BeforeLearningStarts {
        steps: usize,
        learning_starts: usize,
    },
    /// Not enough stored transitions to draw a batch.
    BufferTooSmall {
        len: usize,
        batch_size: usize,
    },
    Nn(NnError),
    Env(env::EnvError),
}

impl fmt::Display for DqnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DqnError::InvalidConfig(msg) => write!(f, "invalid dqn config: {msg}"),
            DqnError::EmptyRoster => write!(f, "pipe roster is empty"),
            DqnError::BeforeLearningStarts {
                steps,
                learning_starts,
            } => write!(
                f,
                "train_step at env step {steps}, before learning_starts {learning_starts}"
            ),
            DqnError::BufferTooSmall { len, batch_size } => {
                write!(
                    f,
                    "replay buffer holds {len} transitions, batch needs {batch_size}"
                )
            }
            DqnError::Nn(e) => write!(f, "network error: {e}"),
            DqnError::Env(e) => write!(f, "environment error: {e}"),
        }
    }
}

impl std::error::Error for DqnError {}

impl From<NnError> for DqnError {
    fn from(e: NnError) -> Self {
        DqnError::Nn(e)
    }
}

impl From<env::EnvError> for DqnError {
    fn from(e: env::EnvError) -> Self {
        DqnError::Env(e)
    }
}

/// One replay-buffer entry. `action` is the behavior action the agent
/// chose; sudden failures stay part of the environment's transition kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: [f64; ENCODED_STATE_LEN],
    pub action: Action,
    pub reward: f64,
    pub next_state: [f64; ENCODED_STATE_LEN],
    pub done: bool,
    pub raw_state: PipeState,
    pub raw_next_state: PipeState,
}

/// Fixed-capacity ring buffer with FIFO eviction and uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    entries: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        ReplayBuffer {
            entries: Vec::with_capacity(capacity.min(4096)),
            capacity,
            cursor: 0,
        }
    }

    pub fn push(&mut self, transition: Transition) {
        if self.entries.len() < self.capacity {
            self.entries.push(transition);
        } else {
            self.entries[self.cursor] = transition;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.entries[index]
    }

    /// Uniform (with replacement) sample of `batch_size` stored transitions.
    pub fn sample<'a>(&'a self, batch_size: usize, rng: &mut impl Rng) -> Vec<&'a Transition> {
        (0..batch_size)
            .map(|_| &self.entries[rng.random_range(0..self.entries.len())])
            .collect()
    }
}

/// Linear annealing from `epsilon_start` to `epsilon_final` over
/// `exploration_fraction * total_steps` env steps, constant afterwards.
pub fn epsilon_at(step: usize, cfg: &DqnConfig) -> f64 {
    let horizon = (cfg.exploration_fraction * cfg.total_steps() as f64).max(1.0);
    let frac = step as f64 / horizon;
    if frac >= 1.0 {
        cfg.epsilon_final
    } else {
        cfg.epsilon_start + (cfg.epsilon_final - cfg.epsilon_start) * frac
    }
}

/// Greedy action under the current Q-network; ties break toward the lowest
/// action code.
pub fn greedy_action(params: &MlpParams, encoded_state: &[f64]) -> Result<Action, NnError> {
    let q = params.forward_eval(encoded_state)?;
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    Ok(Action::from_code(best as u8).expect("q-head count equals action count"))
}

/// Epsilon-greedy action selection.
pub fn select_action(
    params: &MlpParams,
    encoded_state: &[f64],
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<Action, NnError> {
    if rng.random::<f64>() < epsilon {
        Ok(Action::from_code(rng.random_range(0..Action::COUNT as u8)).unwrap())
    } else {
        greedy_action(params, encoded_state)
    }
}

/// Bootstrap targets `r + gamma * max_a Q(s', a; target)` (plain `r` for
/// terminal transitions); only the target network is consulted.
pub fn td_targets(
    batch: &[&Transition],
    target_params: &MlpParams,
    gamma: f64,
) -> Result<Vec<f64>, NnError> {
    batch
        .iter()
        .map(|tr| {
            if tr.done {
                Ok(tr.reward)
            } else {
                let q = target_params.forward_eval(&tr.next_state)?;
                let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Ok(tr.reward + gamma * best)
            }
        })
        .collect()
}

/// One gradient update on a uniform replay batch. The squared TD error is
/// propagated through the taken action's Q-head only. Returns the batch
/// loss.
pub fn train_step(
    params: &mut MlpParams,
    target_params: &MlpParams,
    adam: &mut AdamState,
    buffer: &ReplayBuffer,
    cfg: &DqnConfig,
    env_steps: usize,
    rng: &mut impl Rng,
) -> Result<f64, DqnError> {
    if env_steps < cfg.learning_starts {
        return Err(DqnError::BeforeLearningStarts {
            steps: env_steps,
            learning_starts: cfg.learning_starts,
        });
    }
    if buffer.len() < cfg.batch_size {
        return Err(DqnError::BufferTooSmall {
            len: buffer.len(),
            batch_size: cfg.batch_size,
        });
    }

    let batch = buffer.sample(cfg.batch_size, rng);
    let targets = td_targets(&batch, target_params, cfg.gamma)?;
    let batch_len = batch.len() as f64;
    let mut grads = Gradients::zeros_like(params);
    let mut loss = 0.0;
    for (tr, &y) in batch.iter().zip(&targets) {
        let (q, cache) = params.forward_train(&tr.state, rng)?;
        let err = q[tr.action.code() as usize] - y;
        loss += err * err;
        let mut out_grad = vec![0.0; Action::COUNT];
        out_grad[tr.action.code() as usize] = 2.0 * err / batch_len;
        let g = params.backward(&cache, &out_grad)?;
        grads.add_assign(&g);
    }
    adam_step(params, &grads, adam)?;
    Ok(loss / batch_len)
}

/// Per-episode training log row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    /// Undiscounted reward sum of the episode.
    pub ret: f64,
    /// Rolling mean of returns over the trailing 20 episodes.
    pub rolling_mean: f64,
    pub rolling_std: f64,
    /// Exploration rate at the episode's end.
    pub epsilon: f64,
    /// Mean training loss of the episode, if any updates ran.
    pub loss_mean: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DqnTrainResult {
    pub params: MlpParams,
    pub log: Vec<EpisodeLog>,
}

const ROLLING_WINDOW: usize = 20;

fn rolling_stats(returns: &[f64]) -> (f64, f64) {
    let window = &returns[returns.len().saturating_sub(ROLLING_WINDOW)..];
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run a full online training session.
///
/// Every episode resets a uniformly sampled pipe from the roster. Every env
/// step feeds the replay buffer and `sink` (the raw material for offline
/// reuse). Gradient updates start after `learning_starts` steps and run
/// every `train_every` steps; the target network syncs every
/// `target_sync_every` steps. Fully deterministic for a given seed.
pub fn train(
    roster: &[PipeSpec],
    env_cfg: &EnvConfig,
    cfg: &DqnConfig,
    sink: &mut dyn TransitionSink,
) -> Result<DqnTrainResult, DqnError> {
    cfg.validate()?;
    if roster.is_empty() {
        return Err(DqnError::EmptyRoster);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = MlpParams::init(cfg.mlp_config(), &mut rng)?;
    let mut target = params.clone();
    let mut adam = AdamState::new(&params, cfg.learning_rate);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);

    let mut log = Vec::with_capacity(cfg.episodes);
    let mut returns = Vec::with_capacity(cfg.episodes);
    let mut env_steps = 0usize;

    for episode in 0..cfg.episodes {
        let spec = roster[rng.random_range(0..roster.len())].clone();
        let mut state = env::reset(&spec);
        let mut ep_return = 0.0;
        let mut losses = Vec::new();

        for _ in 0..cfg.steps_per_episode {
            let epsilon = epsilon_at(env_steps, cfg);
            let encoded = encode_state(&state);
            let action = select_action(&params, &encoded, epsilon, &mut rng)?;
            let outcome = env::step(&state, action, env_cfg, &mut rng)?;

            sink.record(TransitionRecord::from_step(
                episode, spec.id, &state, action, &outcome,
            ));
            buffer.push(Transition {
                state: encoded,
                action,
                reward: outcome.reward,
                next_state: encode_state(&outcome.next_state),
                done: outcome.done,
                raw_state: state,
                raw_next_state: outcome.next_state,
            });

            env_steps += 1;
            if env_steps >= cfg.learning_starts
                && env_steps % cfg.train_every == 0
                && buffer.len() >= cfg.batch_size
            {
                losses.push(train_step(
                    &mut params,
                    &target,
                    &mut adam,
                    &buffer,
                    cfg,
                    env_steps,
                    &mut rng,
                )?);
            }
            if env_steps % cfg.target_sync_every == 0 {
                target = params.clone();
            }

            ep_return += outcome.reward;
            state = outcome.next_state;
            if outcome.done {
                break;
            }
        }

        returns.push(ep_return);
        let (mean, std) = rolling_stats(&returns);
        log.push(EpisodeLog {
            episode,
            ret: ep_return,
            rolling_mean: mean,
            rolling_std: std,
            epsilon: epsilon_at(env_steps, cfg),
            loss_mean: if losses.is_empty() {
                None
            } else {
                Some(losses.iter().sum::<f64>() / losses.len() as f64)
            },
        });
    }

    Ok(DqnTrainResult { params, log })
}

/// Render the training log as CSV
/// (`episode,return,rolling_mean_20,rolling_std_20,epsilon,loss_mean`).
pub fn training_log_csv(log: &[EpisodeLog]) -> String {
    let mut out = String::from("episode,return,rolling_mean_20,rolling_std_20,epsilon,loss_mean\n");
    for row in log {
        let loss = row.loss_mean.map(|l| l.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.episode, row.ret, row.rolling_mean, row.rolling_std, row.epsilon, loss
        ));
    }
    out
}
