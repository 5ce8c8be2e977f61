//! Offline conservative Q-learning (discrete variant).
//!
//! Training touches only the stored dataset: the loss couples the usual
//! squared TD error with a conservative penalty, `logsumexp(Q(s,.)) -
//! Q(s, a_data)`, that pushes down Q-values for actions the behavior policy
//! never took. The simulator is used exclusively for the held-out
//! evaluation rollouts after each epoch.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_dataset, Dataset, DatasetError, TransitionRecord};
use crate::dqn::greedy_action;
use crate::env::{
    self, encode_state, Action, EnvConfig, EnvError, PipeSpec, PipeState, ENCODED_STATE_LEN,
    HORIZON,
};
use crate::nn::{adam_step, Activation, AdamState, Gradients, MlpConfig, MlpParams, NnError};
use crate::seeding::derive_seed;

/// Hyperparameters of an offline training run. Defaults are the chosen
/// values of the case study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CqlConfig {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    pub gamma: f64,
    /// Conservatism weight; 0 recovers plain Q-learning on the batch.
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Target network sync period, in gradient steps.
    pub target_sync_every: usize,
    /// Fraction of episodes assigned to the training split.
    pub train_fraction: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for CqlConfig {
    fn default() -> Self {
        CqlConfig {
            hidden_dims: vec![64, 64],
            activation: Activation::Relu,
            dropout: 0.1,
            gamma: 0.99,
            alpha: 1.0,
            learning_rate: 1e-4,
            epochs: 200,
            batch_size: 32,
            target_sync_every: 1000,
            train_fraction: 0.8,
            seed: 42,
        }
    }
}

impl CqlConfig {
    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig {
            input_dim: ENCODED_STATE_LEN,
            hidden_dims: self.hidden_dims.clone(),
            output_dim: Action::COUNT,
            activation: self.activation,
            dropout_rate: self.dropout,
        }
    }

    fn validate(&self) -> Result<(), CqlError> {
        if self.alpha < 0.0 {
            return Err(CqlError::InvalidConfig(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(CqlError::InvalidConfig(format!(
                "gamma {} outside [0,1]",
                self.gamma
            )));
        }
        if self.batch_size == 0 || self.target_sync_every == 0 {
            return Err(CqlError::InvalidConfig(
                "batch_size and target_sync_every must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum CqlError {
    InvalidConfig(String),
    EmptyDataset,
    /// A test episode references a pipe id missing from the roster.
    UnknownPipe {
        id: u32,
    },
    Dataset(DatasetError),
    Nn(NnError),
    Env(EnvError),
}

impl fmt::Display for CqlError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CqlError::InvalidConfig(msg) => write!(f, "invalid cql config: {msg}"),
            CqlError::EmptyDataset => write!(f, "offline dataset is empty"),
            CqlError::UnknownPipe { id } => {
                write!(f, "dataset references pipe {id} missing from the roster")
            }
            CqlError::Dataset(e) => write!(f, "dataset error: {e}"),
            CqlError::Nn(e) => write!(f, "network error: {e}"),
            CqlError::Env(e) => write!(f, "environment error: {e}"),
        }
    }
}

impl std::error::Error for CqlError {}

impl From<DatasetError> for CqlError {
    fn from(e: DatasetError) -> Self {
        CqlError::Dataset(e)
    }
}

impl From<NnError> for CqlError {
    fn from(e: NnError) -> Self {
        CqlError::Nn(e)
    }
}

impl From<EnvError> for CqlError {
    fn from(e: EnvError) -> Self {
        CqlError::Env(e)
    }
}

/// One dataset transition in network coordinates.
#[derive(Debug, Clone)]
pub struct CqlSample {
    pub state: [f64; ENCODED_STATE_LEN],
    pub action: Action,
    pub reward: f64,
    pub next_state: [f64; ENCODED_STATE_LEN],
    pub done: bool,
}

impl CqlSample {
    pub fn from_record(rec: &TransitionRecord) -> CqlSample {
        let state = PipeState {
            age: rec.age,
            material: rec.material,
            lambda_eff: rec.lambda_eff,
            pf: rec.pf,
            t: rec.t,
        };
        let next_state = PipeState {
            age: rec.next_age,
            material: rec.material,
            lambda_eff: rec.lambda_eff,
            pf: rec.next_pf,
            t: rec.t + 1,
        };
        CqlSample {
            state: encode_state(&state),
            action: rec.action,
            reward: rec.reward,
            next_state: encode_state(&next_state),
            done: rec.done,
        }
    }
}

fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Conservative penalty for one state: `logsumexp(q_row) - q_row[a_data]`.
/// Always non-negative since logsumexp dominates every entry.
pub fn conservative_penalty(q_row: &[f64], data_action: Action) -> f64 {
    logsumexp(q_row) - q_row[data_action.code() as usize]
}

/// Loss components of a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    /// `alpha * penalty + td`.
    pub total: f64,
    /// `0.5 * mean squared TD error`.
    pub td: f64,
    /// Mean conservative penalty (unweighted by alpha).
    pub penalty: f64,
}

fn td_target(sample: &CqlSample, target_params: &MlpParams, gamma: f64) -> Result<f64, NnError> {
    if sample.done {
        Ok(sample.reward)
    } else {
        let q = target_params.forward_eval(&sample.next_state)?;
        let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(sample.reward + gamma * best)
    }
}

/// Evaluate the CQL loss on a batch without touching parameters (dropout
/// inactive, so the result is deterministic).
pub fn cql_loss(
    batch: &[CqlSample],
    params: &MlpParams,
    target_params: &MlpParams,
    cfg: &CqlConfig,
) -> Result<LossParts, NnError> {
    let n = batch.len() as f64;
    let mut td_sum = 0.0;
    let mut penalty_sum = 0.0;
    for sample in batch {
        let q = params.forward_eval(&sample.state)?;
        let y = td_target(sample, target_params, cfg.gamma)?;
        let err = q[sample.action.code() as usize] - y;
        td_sum += err * err;
        penalty_sum += conservative_penalty(&q, sample.action);
    }
    let td = 0.5 * td_sum / n;
    let penalty = penalty_sum / n;
    Ok(LossParts {
        total: cfg.alpha * penalty + td,
        td,
        penalty,
    })
}

fn softmax(q: &[f64]) -> Vec<f64> {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = q.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// One gradient step on a minibatch (dropout active). Returns the loss
/// parts measured on the dropout-perturbed forward passes.
fn train_minibatch(
    batch: &[&CqlSample],
    params: &mut MlpParams,
    target_params: &MlpParams,
    adam: &mut AdamState,
    cfg: &CqlConfig,
    rng: &mut impl Rng,
) -> Result<LossParts, NnError> {
    let n = batch.len() as f64;
    let mut grads = Gradients::zeros_like(params);
    let mut td_sum = 0.0;
    let mut penalty_sum = 0.0;
    for sample in batch {
        let (q, cache) = params.forward_train(&sample.state, rng)?;
        let y = td_target(sample, target_params, cfg.gamma)?;
        let a = sample.action.code() as usize;
        let err = q[a] - y;
        td_sum += err * err;
        penalty_sum += conservative_penalty(&q, sample.action);

        // d/dq of [alpha*(logsumexp(q) - q_a) + 0.5*(q_a - y)^2] / n.
        let probs = softmax(&q);
        let mut out_grad: Vec<f64> = probs.iter().map(|p| cfg.alpha * p / n).collect();
        out_grad[a] += (-cfg.alpha + err) / n;
        let g = params.backward(&cache, &out_grad)?;
        grads.add_assign(&g);
    }
    adam_step(params, &grads, adam)?;
    let td = 0.5 * td_sum / n;
    let penalty = penalty_sum / n;
    Ok(LossParts {
        total: cfg.alpha * penalty + td,
        td,
        penalty,
    })
}

/// Per-epoch log row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub total_loss: f64,
    pub td_loss: f64,
    pub penalty: f64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
}

#[derive(Debug, Clone)]
pub struct CqlTrainResult {
    pub params: MlpParams,
    pub log: Vec<EpochLog>,
}

/// Mean Q-value over the dataset's logged state-action pairs (evaluation
/// mode). Tracks how conservative the learned value function is.
pub fn mean_dataset_q(params: &MlpParams, records: &[TransitionRecord]) -> Result<f64, NnError> {
    let mut sum = 0.0;
    for rec in records {
        let sample = CqlSample::from_record(rec);
        let q = params.forward_eval(&sample.state)?;
        sum += q[sample.action.code() as usize];
    }
    Ok(sum / records.len() as f64)
}

/// Greedy rollout of `params` on one pipe; returns the undiscounted return.
fn greedy_rollout(
    params: &MlpParams,
    spec: &PipeSpec,
    env_cfg: &EnvConfig,
    rng: &mut impl Rng,
) -> Result<f64, CqlError> {
    let mut state = env::reset(spec);
    let mut ret = 0.0;
    for _ in 0..HORIZON {
        let action = greedy_action(params, &encode_state(&state))?;
        let outcome = env::step(&state, action, env_cfg, rng)?;
        ret += outcome.reward;
        state = outcome.next_state;
    }
    Ok(ret)
}

/// Initial pipe of every test episode, in episode order.
fn test_episode_pipes<'a>(
    test: &[TransitionRecord],
    roster: &'a [PipeSpec],
) -> Result<Vec<&'a PipeSpec>, CqlError> {
    let mut pipes = Vec::new();
    for rec in test {
        if rec.t == 0 {
            let spec = roster
                .iter()
                .find(|s| s.id == rec.pipe_id)
                .ok_or(CqlError::UnknownPipe { id: rec.pipe_id })?;
            pipes.push(spec);
        }
    }
    Ok(pipes)
}

/// Train an offline agent on a stored dataset.
///
/// The dataset splits 80/20 at episode granularity; each epoch runs one
/// Adam step per shuffled train minibatch (dropout active), then evaluates
/// the current greedy policy by rolling it out in the simulator from every
/// test episode's initial pipe. Gradient computation never touches the
/// environment; rollout randomness is fixed per test episode so epochs are
/// compared under common random numbers.
pub fn train_offline(
    dataset: &Dataset,
    cfg: &CqlConfig,
    roster: &[PipeSpec],
    env_cfg: &EnvConfig,
) -> Result<CqlTrainResult, CqlError> {
    cfg.validate()?;
    if dataset.records.is_empty() {
        return Err(CqlError::EmptyDataset);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_recs, test_recs) = split_dataset(&dataset.records, cfg.train_fraction, &mut rng)?;
    let train: Vec<CqlSample> = train_recs.iter().map(CqlSample::from_record).collect();
    let test_pipes = test_episode_pipes(&test_recs, roster)?;

    let mut params = MlpParams::init(cfg.mlp_config(), &mut rng)?;
    let mut target = params.clone();
    let mut adam = AdamState::new(&params, cfg.learning_rate);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grad_steps = 0usize;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossParts {
            total: 0.0,
            td: 0.0,
            penalty: 0.0,
        };
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&CqlSample> = chunk.iter().map(|&i| &train[i]).collect();
            let parts = train_minibatch(&batch, &mut params, &target, &mut adam, cfg, &mut rng)?;
            sums.total += parts.total;
            sums.td += parts.td;
            sums.penalty += parts.penalty;
            batches += 1;
            grad_steps += 1;
            if grad_steps % cfg.target_sync_every == 0 {
                target = params.clone();
            }
        }

        let mut returns = Vec::with_capacity(test_pipes.len());
        for (i, spec) in test_pipes.iter().enumerate() {
            let mut eval_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xE7A1, i as u64));
            returns.push(greedy_rollout(&params, spec, env_cfg, &mut eval_rng)?);
        }
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;

        let b = batches.max(1) as f64;
        log.push(EpochLog {
            epoch,
            total_loss: sums.total / b,
            td_loss: sums.td / b,
            penalty: sums.penalty / b,
            eval_return_mean: mean,
            eval_return_std: var.sqrt(),
        });
    }

    Ok(CqlTrainResult { params, log })
}

/// Learning curves of one offline run per source dataset, all trained with
/// identical config and seed.
#[derive(Debug, Clone)]
pub struct SourceComparison {
    pub random: CqlTrainResult,
    pub near_expert: CqlTrainResult,
    pub expert: CqlTrainResult,
}

pub fn compare_sources(
    random: &Dataset,
    near_expert: &Dataset,
    expert: &Dataset,
    cfg: &CqlConfig,
    roster: &[PipeSpec],
    env_cfg: &EnvConfig,
) -> Result<SourceComparison, CqlError> {
    Ok(SourceComparison {
        random: train_offline(random, cfg, roster, env_cfg)?,
        near_expert: train_offline(near_expert, cfg, roster, env_cfg)?,
        expert: train_offline(expert, cfg, roster, env_cfg)?,
    })
}

/// Render the epoch log as CSV
/// (`epoch,total_loss,td_loss,penalty,eval_return_mean,eval_return_std`).
pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let mut out =
        String::from("epoch,total_loss,td_loss,penalty,eval_return_mean,eval_return_std\n");
    for row in log {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.epoch,
            row.total_loss,
            row.td_loss,
            row.penalty,
            row.eval_return_mean,
            row.eval_return_std
        ));
    }
    out
}
