//! Logged transition datasets: the static data consumed by offline
//! training.
//!
//! File format is JSON Lines: the first line is the [`DatasetHeader`],
//! every following line one [`TransitionRecord`]. Doubles are written with
//! shortest-round-trip formatting, so a write/read cycle is value-exact.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dqn::{self, DqnConfig, DqnError};
use crate::env::{self, encode_state, Action, EnvConfig, Material, PipeSpec, StepOutcome, HORIZON};
use crate::nn::MlpParams;
use crate::seeding::derive_seed;

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Policy family that generated a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourcePolicy {
    Random,
    NearExpert,
    Expert,
}

impl fmt::Display for SourcePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SourcePolicy::Random => "random",
            SourcePolicy::NearExpert => "near-expert",
            SourcePolicy::Expert => "expert",
        };
        f.write_str(s)
    }
}

impl FromStr for SourcePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(SourcePolicy::Random),
            "near-expert" | "near_expert" => Ok(SourcePolicy::NearExpert),
            "expert" => Ok(SourcePolicy::Expert),
            other => Err(format!("unknown source policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub source_policy: SourcePolicy,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub seed: u64,
    pub roster_checksum: u64,
}

/// One logged transition. `action` is the action chosen by the behavior
/// policy; when `sudden_failure` is set the environment executed a forced
/// replacement instead and the reward was computed with `pf = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRecord {
    pub episode: usize,
    pub t: u32,
    pub pipe_id: u32,
    pub age: u32,
    pub material: Material,
    pub lambda_eff: f64,
    pub pf: f64,
    pub action: Action,
    pub reward: f64,
    pub mc: f64,
    pub next_age: u32,
    pub next_pf: f64,
    pub done: bool,
    pub sudden_failure: bool,
}

impl TransitionRecord {
    pub fn from_step(
        episode: usize,
        pipe_id: u32,
        state: &crate::env::PipeState,
        chosen: Action,
        outcome: &StepOutcome,
    ) -> TransitionRecord {
        TransitionRecord {
            episode,
            t: state.t,
            pipe_id,
            age: state.age,
            material: state.material,
            lambda_eff: state.lambda_eff,
            pf: state.pf,
            action: chosen,
            reward: outcome.reward,
            mc: outcome.mc,
            next_age: outcome.next_state.age,
            next_pf: outcome.next_state.pf,
            done: outcome.done,
            sudden_failure: outcome.sudden_failure,
        }
    }

    /// The pf the reward was computed against: 1.0 on sudden failure,
    /// otherwise the observed state pf.
    pub fn effective_pf(&self) -> f64 {
        if self.sudden_failure {
            1.0
        } else {
            self.pf
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<TransitionRecord>,
}

#[derive(Debug)]
pub enum DatasetError {
    Io(std::io::Error),
    /// Line failed to parse as JSON. Line numbers are 1-based file lines.
    Parse {
        line: usize,
        message: String,
    },
    MissingHeader,
    VersionMismatch {
        expected: u32,
        got: u32,
    },
    /// Header count disagrees with the number of records in the body.
    CountMismatch {
        expected: usize,
        got: usize,
    },
    /// A record violates a dataset invariant; `index` is the 0-based record
    /// position.
    Invariant {
        index: usize,
        reason: String,
    },
    TooFewEpisodes {
        have: usize,
    },
    InvalidFraction(f64),
    /// Near-expert collection failed inside the training run.
    Train(DqnError),
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::Io(e) => write!(f, "dataset io error: {e}"),
            DatasetError::Parse { line, message } => {
                write!(f, "dataset parse error at line {line}: {message}")
            }
            DatasetError::MissingHeader => write!(f, "dataset file has no header line"),
            DatasetError::VersionMismatch { expected, got } => {
                write!(f, "dataset format version {got}, expected {expected}")
            }
            DatasetError::CountMismatch { expected, got } => {
                write!(f, "header promises {expected} records, found {got}")
            }
            DatasetError::Invariant { index, reason } => {
                write!(f, "record {index} violates invariant: {reason}")
            }
            DatasetError::TooFewEpisodes { have } => {
                write!(f, "need at least 2 episodes to split, have {have}")
            }
            DatasetError::InvalidFraction(v) => {
                write!(f, "train fraction must be in (0,1), got {v}")
            }
            DatasetError::Train(e) => write!(f, "near-expert collection failed: {e}"),
        }
    }
}

impl std::error::Error for DatasetError {}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::Io(e)
    }
}

/// FNV-1a checksum of the roster contents, recorded in dataset headers so a
/// dataset can be matched to the roster that produced it.
pub fn roster_checksum(roster: &[PipeSpec]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for spec in roster {
        eat(format!(
            "{},{},{},{}\n",
            spec.id, spec.age0, spec.material, spec.length_m
        )
        .as_bytes());
    }
    hash
}

const INVARIANT_TOL: f64 = 1e-9;

fn check_record(
    index: usize,
    rec: &TransitionRecord,
    steps_per_episode: usize,
) -> Result<(), DatasetError> {
    let fail = |reason: String| Err(DatasetError::Invariant { index, reason });
    if rec.t as usize >= steps_per_episode {
        return fail(format!("t={} outside [0,{})", rec.t, steps_per_episode));
    }
    let should_be_done = rec.t as usize == steps_per_episode - 1;
    if rec.done != should_be_done {
        return fail(format!("done={} inconsistent with t={}", rec.done, rec.t));
    }
    if !(rec.lambda_eff.is_finite() && rec.lambda_eff > 0.0) {
        return fail(format!("lambda_eff={} not positive", rec.lambda_eff));
    }
    if !(0.0..=1.0).contains(&rec.pf) || !(0.0..=1.0).contains(&rec.next_pf) {
        return fail("pf outside [0,1]".into());
    }
    if !(-2.0 - INVARIANT_TOL..=INVARIANT_TOL).contains(&rec.reward) {
        return fail(format!("reward {} outside [-2,0]", rec.reward));
    }
    // Reward decomposition: reward = mc - pf, with pf forced to 1 on a
    // sudden failure.
    let expected = rec.mc - rec.effective_pf();
    if (rec.reward - expected).abs() > INVARIANT_TOL {
        return fail(format!(
            "reward {} != mc - pf = {expected} (sudden_failure={})",
            rec.reward, rec.sudden_failure
        ));
    }
    // pf consistency with the exponential lifetime model.
    let pf = 1.0 - (-rec.lambda_eff * rec.age as f64).exp();
    if (rec.pf - pf).abs() > INVARIANT_TOL {
        return fail(format!("pf {} != 1-exp(-lambda*age) = {pf}", rec.pf));
    }
    let next_pf = 1.0 - (-rec.lambda_eff * rec.next_age as f64).exp();
    if (rec.next_pf - next_pf).abs() > INVARIANT_TOL {
        return fail(format!(
            "next_pf {} != 1-exp(-lambda*next_age) = {next_pf}",
            rec.next_pf
        ));
    }
    Ok(())
}

/// Validate header/record consistency and every record invariant.
pub fn validate(dataset: &Dataset) -> Result<(), DatasetError> {
    let header = &dataset.header;
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(DatasetError::VersionMismatch {
            expected: DATASET_FORMAT_VERSION,
            got: header.format_version,
        });
    }
    let expected = header.episodes * header.steps_per_episode;
    if dataset.records.len() != expected {
        return Err(DatasetError::CountMismatch {
            expected,
            got: dataset.records.len(),
        });
    }
    for (index, rec) in dataset.records.iter().enumerate() {
        check_record(index, rec, header.steps_per_episode)?;
    }
    Ok(())
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &dataset.header).map_err(|e| DatasetError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    w.write_all(b"\n")?;
    for (i, rec) in dataset.records.iter().enumerate() {
        serde_json::to_writer(&mut w, rec).map_err(|e| DatasetError::Parse {
            line: i + 2,
            message: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read and fully validate a dataset. Errors name the offending line or
/// record index.
pub fn read_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header_line = lines.next().ok_or(DatasetError::MissingHeader)??;
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| DatasetError::Parse {
            line: 1,
            message: e.to_string(),
        })?;
    let mut records = Vec::with_capacity(header.episodes.saturating_mul(header.steps_per_episode));
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TransitionRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                line: i + 2,
                message: e.to_string(),
            })?;
        records.push(rec);
    }
    let dataset = Dataset { header, records };
    validate(&dataset)?;
    Ok(dataset)
}

/// Split records into train/test at episode granularity: whole episodes are
/// assigned to one side, the episode order is shuffled by `rng`, and the
/// train side gets `floor(fraction * n_episodes)` episodes (at least one
/// episode lands on each side).
pub fn split_dataset(
    records: &[TransitionRecord],
    train_fraction: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<TransitionRecord>, Vec<TransitionRecord>), DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(train_fraction));
    }
    let mut episodes: Vec<usize> = Vec::new();
    for rec in records {
        if !episodes.contains(&rec.episode) {
            episodes.push(rec.episode);
        }
    }
    if episodes.len() < 2 {
        return Err(DatasetError::TooFewEpisodes {
            have: episodes.len(),
        });
    }
    episodes.shuffle(rng);
    let n_train =
        ((train_fraction * episodes.len() as f64).floor() as usize).clamp(1, episodes.len() - 1);
    let train_ids: std::collections::HashSet<usize> = episodes[..n_train].iter().copied().collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for rec in records {
        if train_ids.contains(&rec.episode) {
            train.push(rec.clone());
        } else {
            test.push(rec.clone());
        }
    }
    Ok((train, test))
}

/// Sink that receives every transition produced by a training or collection
/// run, in order.
pub trait TransitionSink {
    fn record(&mut self, rec: TransitionRecord);
}

impl TransitionSink for Vec<TransitionRecord> {
    fn record(&mut self, rec: TransitionRecord) {
        self.push(rec);
    }
}

/// Discards everything.
pub struct NullSink;

impl TransitionSink for NullSink {
    fn record(&mut self, _rec: TransitionRecord) {}
}

/// Behavior policy used by [`collect`].
pub enum CollectSource<'a> {
    /// Uniformly random actions.
    Random,
    /// Greedy actions from a frozen trained model.
    Expert(&'a MlpParams),
    /// Transitions logged while training an online agent with this
    /// configuration (the epsilon-greedy trajectory mix).
    NearExpert(&'a DqnConfig),
}

impl CollectSource<'_> {
    fn policy(&self) -> SourcePolicy {
        match self {
            CollectSource::Random => SourcePolicy::Random,
            CollectSource::Expert(_) => SourcePolicy::Expert,
            CollectSource::NearExpert(_) => SourcePolicy::NearExpert,
        }
    }
}

/// Collect a dataset of `episodes` full episodes on the roster.
///
/// Each episode samples a pipe uniformly and runs the behavior policy for
/// the full horizon. For the near-expert source this runs an online
/// training session (with `episodes` and `seed` overriding the supplied
/// config) and keeps everything its sink saw.
pub fn collect(
    source: CollectSource<'_>,
    roster: &[PipeSpec],
    episodes: usize,
    env_cfg: &EnvConfig,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    let header = DatasetHeader {
        format_version: DATASET_FORMAT_VERSION,
        source_policy: source.policy(),
        episodes,
        steps_per_episode: HORIZON as usize,
        seed,
        roster_checksum: roster_checksum(roster),
    };

    let records = match source {
        CollectSource::NearExpert(cfg) => {
            let mut train_cfg = cfg.clone();
            train_cfg.episodes = episodes;
            train_cfg.seed = seed;
            let mut sink: Vec<TransitionRecord> = Vec::with_capacity(episodes * HORIZON as usize);
            dqn::train(roster, env_cfg, &train_cfg, &mut sink).map_err(DatasetError::Train)?;
            sink
        }
        CollectSource::Random | CollectSource::Expert(_) => {
            let mut records = Vec::with_capacity(episodes * HORIZON as usize);
            for episode in 0..episodes {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xC0, episode as u64));
                let spec = &roster[rng.random_range(0..roster.len())];
                let mut state = env::reset(spec);
                for _ in 0..HORIZON {
                    let action = match &source {
                        CollectSource::Random => {
                            Action::from_code(rng.random_range(0..Action::COUNT as u8)).unwrap()
                        }
                        CollectSource::Expert(params) => {
                            dqn::greedy_action(params, &encode_state(&state))
                                .map_err(|e| DatasetError::Train(DqnError::Nn(e)))?
                        }
                        CollectSource::NearExpert(_) => unreachable!(),
                    };
                    let outcome = env::step(&state, action, env_cfg, &mut rng)
                        .expect("episode stays within horizon");
                    records.push(TransitionRecord::from_step(
                        episode, spec.id, &state, action, &outcome,
                    ));
                    state = outcome.next_state;
                }
            }
            records
        }
    };

    let dataset = Dataset { header, records };
    validate(&dataset)?;
    Ok(dataset)
}
