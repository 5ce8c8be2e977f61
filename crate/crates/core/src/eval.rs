//! Rollout harness: runs any policy (trained model or baseline) across the
//! pipe roster and computes the comparison metrics.
//!
//! Intervention cost counts only the physical spend of executed actions
//! (0.5 per maintain, 0.8 per replace, forced replacements included); the
//! reward's penalty entries and `-pf` term are excluded so baselines and
//! agents compare on the same footing. `avg_pf` is the time-average of the
//! observed failure probability over the whole horizon.

use std::fmt;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{baseline_action, BaselineKind};
use crate::dqn::greedy_action;
use crate::env::{self, encode_state, Action, EnvConfig, EnvError, PipeSpec, PipeState, HORIZON};
use crate::nn::MlpParams;
use crate::seeding::derive_seed;

pub const MAINTAIN_COST: f64 = 0.5;
pub const REPLACE_COST: f64 = 0.8;

/// Anything that can pick an action for a pipe state.
pub trait Policy {
    fn name(&self) -> &str;
    fn act(&self, state: &PipeState, rng: &mut dyn RngCore) -> Action;
}

/// Greedy policy of a trained Q-network (no exploration, dropout off).
pub struct ModelPolicy {
    name: String,
    params: MlpParams,
}

impl ModelPolicy {
    pub fn new(name: impl Into<String>, params: MlpParams) -> ModelPolicy {
        ModelPolicy {
            name: name.into(),
            params,
        }
    }
}

impl Policy for ModelPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn act(&self, state: &PipeState, _rng: &mut dyn RngCore) -> Action {
        greedy_action(&self.params, &encode_state(state))
            .expect("encoded state always matches the network input dim")
    }
}

/// A baseline strategy as a [`Policy`].
pub struct BaselinePolicy {
    kind: BaselineKind,
}

impl BaselinePolicy {
    pub fn new(kind: BaselineKind) -> BaselinePolicy {
        BaselinePolicy { kind }
    }
}

impl Policy for BaselinePolicy {
    fn name(&self) -> &str {
        self.kind.as_str()
    }

    fn act(&self, state: &PipeState, rng: &mut dyn RngCore) -> Action {
        baseline_action(self.kind, state, rng)
    }
}

/// One recorded step of a rollout. `state` is the state the policy
/// observed (pre-transition).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub state: PipeState,
    pub executed_action: Action,
    pub reward: f64,
    pub mc: f64,
    pub pf_penalty: f64,
    pub sudden_failure: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub pipe_id: u32,
    pub steps: Vec<TraceStep>,
}

impl EpisodeTrace {
    pub fn episode_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Run one full episode of `policy` on `spec`.
pub fn rollout(
    policy: &dyn Policy,
    spec: &PipeSpec,
    env_cfg: &EnvConfig,
    rng: &mut dyn RngCore,
) -> Result<EpisodeTrace, EnvError> {
    let mut state = env::reset(spec);
    let mut steps = Vec::with_capacity(HORIZON as usize);
    for _ in 0..HORIZON {
        let action = policy.act(&state, rng);
        let outcome = env::step(&state, action, env_cfg, rng)?;
        steps.push(TraceStep {
            state,
            executed_action: outcome.executed_action,
            reward: outcome.reward,
            mc: outcome.mc,
            pf_penalty: outcome.pf_penalty,
            sudden_failure: outcome.sudden_failure,
        });
        state = outcome.next_state;
    }
    Ok(EpisodeTrace {
        pipe_id: spec.id,
        steps,
    })
}

/// Physical intervention spend of a trace: 0.5 per executed maintain, 0.8
/// per executed replace (sudden-failure replacements included).
pub fn intervention_cost(trace: &EpisodeTrace) -> f64 {
    trace
        .steps
        .iter()
        .map(|s| match s.executed_action {
            Action::DoNothing => 0.0,
            Action::Maintain => MAINTAIN_COST,
            Action::Replace => REPLACE_COST,
        })
        .sum()
}

/// Aggregate metrics of one policy over the whole roster.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyReport {
    pub policy: String,
    pub episodes_per_pipe: usize,
    /// Mean per-episode intervention cost.
    pub avg_intervention_cost: f64,
    /// Mean observed pf over all timesteps, episodes, and pipes.
    pub avg_pf: f64,
    pub n_do_nothing: u64,
    pub n_maintain: u64,
    pub n_replace: u64,
    /// Replacements per pipe per episode.
    pub replace_per_pipe: f64,
    /// `(1 - avg_pf) / avg_intervention_cost`; absent when the policy never
    /// spends anything.
    pub cost_effectiveness: Option<f64>,
}

/// Per-pipe breakdown row.
#[derive(Debug, Clone, PartialEq)]
pub struct PipeReport {
    pub policy: String,
    pub pipe_id: u32,
    pub avg_intervention_cost: f64,
    pub avg_pf: f64,
    pub n_do_nothing: u64,
    pub n_maintain: u64,
    pub n_replace: u64,
}

#[derive(Debug, Clone)]
pub struct EvaluationOutcome {
    pub report: PolicyReport,
    pub per_pipe: Vec<PipeReport>,
}

#[derive(Debug)]
pub enum EvalError {
    EmptyRoster,
    Env(EnvError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::EmptyRoster => write!(f, "pipe roster is empty"),
            EvalError::Env(e) => write!(f, "environment error: {e}"),
        }
    }
}

impl std::error::Error for EvalError {}

impl From<EnvError> for EvalError {
    fn from(e: EnvError) -> Self {
        EvalError::Env(e)
    }
}

/// Evaluate a policy over `episodes_per_pipe` episodes of every pipe.
///
/// Each rollout draws its RNG stream from `(master_seed, pipe_id, episode)`,
/// so results do not depend on evaluation order.
pub fn evaluate_policy(
    policy: &dyn Policy,
    roster: &[PipeSpec],
    episodes_per_pipe: usize,
    env_cfg: &EnvConfig,
    master_seed: u64,
) -> Result<EvaluationOutcome, EvalError> {
    if roster.is_empty() {
        return Err(EvalError::EmptyRoster);
    }
    let mut per_pipe = Vec::with_capacity(roster.len());
    let mut total_cost = 0.0;
    let mut total_pf = 0.0;
    let mut counts = [0u64; 3];

    for spec in roster {
        let mut pipe_cost = 0.0;
        let mut pipe_pf = 0.0;
        let mut pipe_counts = [0u64; 3];
        for episode in 0..episodes_per_pipe {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(master_seed, spec.id as u64, episode as u64));
            let trace = rollout(policy, spec, env_cfg, &mut rng)?;
            pipe_cost += intervention_cost(&trace);
            for step in &trace.steps {
                pipe_pf += step.state.pf;
                pipe_counts[step.executed_action.code() as usize] += 1;
            }
        }
        total_cost += pipe_cost;
        total_pf += pipe_pf;
        for (t, p) in counts.iter_mut().zip(pipe_counts) {
            *t += p;
        }
        let pipe_episodes = episodes_per_pipe as f64;
        per_pipe.push(PipeReport {
            policy: policy.name().to_string(),
            pipe_id: spec.id,
            avg_intervention_cost: pipe_cost / pipe_episodes,
            avg_pf: pipe_pf / (pipe_episodes * HORIZON as f64),
            n_do_nothing: pipe_counts[0],
            n_maintain: pipe_counts[1],
            n_replace: pipe_counts[2],
        });
    }

    let episodes = (roster.len() * episodes_per_pipe) as f64;
    let avg_intervention_cost = total_cost / episodes;
    let avg_pf = total_pf / (episodes * HORIZON as f64);
    let report = PolicyReport {
        policy: policy.name().to_string(),
        episodes_per_pipe,
        avg_intervention_cost,
        avg_pf,
        n_do_nothing: counts[0],
        n_maintain: counts[1],
        n_replace: counts[2],
        replace_per_pipe: counts[2] as f64 / episodes,
        cost_effectiveness: if avg_intervention_cost > 0.0 {
            Some((1.0 - avg_pf) / avg_intervention_cost)
        } else {
            None
        },
    };
    Ok(EvaluationOutcome { report, per_pipe })
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Comparison table (`metrics.csv`) over several policy reports.
pub fn metrics_csv(reports: &[PolicyReport]) -> String {
    let mut out = String::from(
        "policy,avg_cost,avg_pf,n_do_nothing,n_maintain,n_replace,replace_per_pipe,cost_effectiveness\n",
    );
    for r in reports {
        let ce = r
            .cost_effectiveness
            .map(|v| v.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_field(&r.policy),
            r.avg_intervention_cost,
            r.avg_pf,
            r.n_do_nothing,
            r.n_maintain,
            r.n_replace,
            r.replace_per_pipe,
            ce
        ));
    }
    out
}

/// Per-pipe breakdown (`perpipe.csv`).
pub fn perpipe_csv(rows: &[PipeReport]) -> String {
    let mut out =
        String::from("policy,pipe_id,avg_cost,avg_pf,n_do_nothing,n_maintain,n_replace\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            csv_field(&r.policy),
            r.pipe_id,
            r.avg_intervention_cost,
            r.avg_pf,
            r.n_do_nothing,
            r.n_maintain,
            r.n_replace
        ));
    }
    out
}

/// Plot data (`plotdata.csv`): a cost-vs-pf scatter series plus a
/// cost-effectiveness bar series (policies without a defined
/// cost-effectiveness are omitted from the bar series).
pub fn plotdata_csv(reports: &[PolicyReport]) -> String {
    let mut out = String::from("series,policy,x,y\n");
    for r in reports {
        out.push_str(&format!(
            "cost_vs_pf,{},{},{}\n",
            csv_field(&r.policy),
            r.avg_intervention_cost,
            r.avg_pf
        ));
    }
    let mut bar_idx = 0usize;
    for r in reports {
        if let Some(ce) = r.cost_effectiveness {
            out.push_str(&format!(
                "cost_effectiveness,{},{},{}\n",
                csv_field(&r.policy),
                bar_idx,
                ce
            ));
            bar_idx += 1;
        }
    }
    out
}

/// Rendered comparison artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub metrics_csv: String,
    pub plotdata_csv: String,
}

pub fn compare(reports: &[PolicyReport]) -> Comparison {
    Comparison {
        metrics_csv: metrics_csv(reports),
        plotdata_csv: plotdata_csv(reports),
    }
}
