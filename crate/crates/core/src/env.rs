//! Stochastic simulator of a single water pipe deteriorating over a
//! 100-year episode and responding to maintenance actions.
//!
//! A pipe's failure probability follows an exponential lifetime model,
//! `pf = 1 - exp(-lambda_eff * age)`, where `lambda_eff` is the material's
//! base failure rate (per km per year) scaled by pipe length. Each step the
//! agent picks one of three actions; with 5% probability per step the pipe
//! suffers a sudden failure that forces a replacement regardless of the
//! chosen action.

use std::cell::Cell;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fixed episode length in years. Episodes end when `t` reaches this value
/// and for no other reason; failures do not terminate an episode.
pub const HORIZON: u32 = 100;

/// Length of the numeric state encoding fed to the Q-network:
/// `[age/100, onehot(material) x4, lambda_eff, pf]`.
pub const ENCODED_STATE_LEN: usize = 7;

thread_local! {
    static ENV_STEPS: Cell<u64> = const { Cell::new(0) };
}

/// Number of simulator steps taken on the current thread since it started.
///
/// Instrumentation point for the strict-offline contract: offline training
/// must not advance this counter during gradient computation.
pub fn thread_env_steps() -> u64 {
    ENV_STEPS.with(|c| c.get())
}

/// Pipe material. The base failure rate (failures per km per year) is a
/// fixed property of the material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    AsbestosCement,
    DuctileIron,
    GrayCastIron,
    Pvc,
}

impl Material {
    pub const ALL: [Material; 4] = [
        Material::AsbestosCement,
        Material::DuctileIron,
        Material::GrayCastIron,
        Material::Pvc,
    ];

    /// Base failure rate in failures per km per year.
    pub fn base_failure_rate_per_km(self) -> f64 {
        match self {
            Material::AsbestosCement => 0.06,
            Material::DuctileIron => 0.02,
            Material::GrayCastIron => 0.07,
            Material::Pvc => 0.015,
        }
    }

    /// Position of this material in the one-hot block of the state encoding.
    pub fn one_hot_index(self) -> usize {
        match self {
            Material::AsbestosCement => 0,
            Material::DuctileIron => 1,
            Material::GrayCastIron => 2,
            Material::Pvc => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Material::AsbestosCement => "asbestos_cement",
            Material::DuctileIron => "ductile_iron",
            Material::GrayCastIron => "gray_cast_iron",
            Material::Pvc => "pvc",
        }
    }
}

impl fmt::Display for Material {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Material {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "asbestos_cement" => Ok(Material::AsbestosCement),
            "ductile_iron" => Ok(Material::DuctileIron),
            "gray_cast_iron" => Ok(Material::GrayCastIron),
            "pvc" => Ok(Material::Pvc),
            other => Err(format!("unknown material {other:?}")),
        }
    }
}

/// Static attributes of one pipe as listed in the roster file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipeSpec {
    pub id: u32,
    /// Age in years at the start of an episode.
    pub age0: u32,
    pub material: Material,
    /// Pipe length in meters; must be strictly positive.
    pub length_m: f64,
}

impl PipeSpec {
    /// Effective failure rate in failures per year:
    /// base rate (per km) scaled by length in km.
    pub fn lambda_eff(&self) -> f64 {
        self.material.base_failure_rate_per_km() * self.length_m / 1000.0
    }
}

/// Dynamic MDP state of a pipe. `pf` is always recomputed from
/// `lambda_eff` and `age`; it is never carried stale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipeState {
    pub age: u32,
    pub material: Material,
    pub lambda_eff: f64,
    pub pf: f64,
    /// Episode timestep in `[0, HORIZON]`.
    pub t: u32,
}

/// Maintenance action. The integer codes are part of the dataset file
/// format and must not change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Action {
    DoNothing = 0,
    Maintain = 1,
    Replace = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::DoNothing, Action::Maintain, Action::Replace];
    pub const COUNT: usize = 3;

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Action> {
        match code {
            0 => Some(Action::DoNothing),
            1 => Some(Action::Maintain),
            2 => Some(Action::Replace),
            _ => None,
        }
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a.code()
    }
}

impl TryFrom<u8> for Action {
    type Error = String;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        Action::from_code(code).ok_or_else(|| format!("invalid action code {code}"))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::DoNothing => "do_nothing",
            Action::Maintain => "maintain",
            Action::Replace => "replace",
        };
        f.write_str(s)
    }
}

/// Everything produced by one simulator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_state: PipeState,
    /// `mc + pf_penalty`.
    pub reward: f64,
    /// Maintenance-cost component of the reward.
    pub mc: f64,
    /// `-pf` term of the reward (`-1.0` on a sudden failure).
    pub pf_penalty: f64,
    pub sudden_failure: bool,
    /// Action actually applied; differs from the chosen action only when a
    /// sudden failure forces a replacement.
    pub executed_action: Action,
    pub done: bool,
}

/// Tunable environment parameters.
///
/// Maintenance buys a modest, variable improvement: the default `U(1,3)`
/// age reduction keeps maintain strictly weaker than replacement (which
/// restores age 1) while still better than doing nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Per-step probability of an exogenous sudden failure.
    pub sudden_failure_prob: f64,
    /// Lower bound of the uniform age reduction applied by `Maintain`.
    pub maintain_years_min: f64,
    /// Upper bound of the uniform age reduction applied by `Maintain`.
    pub maintain_years_max: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            sudden_failure_prob: 0.05,
            maintain_years_min: 1.0,
            maintain_years_max: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvError {
    /// Non-finite or negative input to a probability computation.
    Domain(String),
    /// `step` called on a state whose episode already ended.
    EpisodeDone,
}

impl fmt::Display for EnvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvError::Domain(msg) => write!(f, "domain error: {msg}"),
            EnvError::EpisodeDone => write!(f, "episode is done; reset before stepping again"),
        }
    }
}

impl std::error::Error for EnvError {}

#[derive(Debug)]
pub enum RosterError {
    Io(std::io::Error),
    Parse { line: usize, reason: String },
}

impl fmt::Display for RosterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RosterError::Io(e) => write!(f, "roster io error: {e}"),
            RosterError::Parse { line, reason } => {
                write!(f, "roster parse error at line {line}: {reason}")
            }
        }
    }
}

impl std::error::Error for RosterError {}

impl From<std::io::Error> for RosterError {
    fn from(e: std::io::Error) -> Self {
        RosterError::Io(e)
    }
}

/// Failure probability of a pipe of the given age under the exponential
/// lifetime model: `1 - exp(-lambda_eff * age)`.
pub fn failure_probability(lambda_eff: f64, age_years: f64) -> Result<f64, EnvError> {
    if !lambda_eff.is_finite() || lambda_eff < 0.0 {
        return Err(EnvError::Domain(format!(
            "lambda_eff must be finite and non-negative, got {lambda_eff}"
        )));
    }
    if !age_years.is_finite() || age_years < 0.0 {
        return Err(EnvError::Domain(format!(
            "age must be finite and non-negative, got {age_years}"
        )));
    }
    Ok(pf_value(lambda_eff, age_years))
}

/// Trusted-input variant used internally where state invariants already
/// guarantee the domain.
fn pf_value(lambda_eff: f64, age_years: f64) -> f64 {
    1.0 - (-lambda_eff * age_years).exp()
}

/// Maintenance-cost component of the reward. Total over all `(action, pf)`
/// pairs; the -1 penalty takes precedence over the do-nothing zero when the
/// pipe is near failure (`pf > 0.9`).
pub fn maintenance_cost(action: Action, pf: f64) -> f64 {
    match action {
        Action::DoNothing => {
            if pf > 0.9 {
                -1.0
            } else {
                0.0
            }
        }
        Action::Maintain => {
            if pf > 0.5 {
                -0.5
            } else {
                -1.0
            }
        }
        Action::Replace => {
            if pf > 0.5 {
                -0.8
            } else {
                -1.0
            }
        }
    }
}

/// Step reward and its maintenance-cost component:
/// `reward = maintenance_cost(action, pf) - pf`.
pub fn reward(action: Action, pf: f64) -> (f64, f64) {
    let mc = maintenance_cost(action, pf);
    (mc - pf, mc)
}

/// Initial state for an episode on the given pipe.
pub fn reset(spec: &PipeSpec) -> PipeState {
    let lambda_eff = spec.lambda_eff();
    PipeState {
        age: spec.age0,
        material: spec.material,
        lambda_eff,
        pf: pf_value(lambda_eff, spec.age0 as f64),
        t: 0,
    }
}

/// Advance the pipe by one year.
///
/// One uniform draw decides sudden failure before the agent action applies.
/// On a sudden failure the executed action is `Replace`, the reward is
/// computed with `pf = 1.0`, and the pipe age resets to 1. Otherwise the
/// chosen action applies: do-nothing ages the pipe by one year, maintain
/// subtracts an integer-rounded `U(min, max)` draw (clamped so age stays
/// at least 1), replace resets the age to 1. The reward always uses the
/// pre-transition `pf` the agent observed.
pub fn step(
    state: &PipeState,
    action: Action,
    cfg: &EnvConfig,
    rng: &mut (impl Rng + ?Sized),
) -> Result<StepOutcome, EnvError> {
    if state.t >= HORIZON {
        return Err(EnvError::EpisodeDone);
    }
    if !(cfg.maintain_years_min >= 0.0 && cfg.maintain_years_min <= cfg.maintain_years_max) {
        return Err(EnvError::Domain(format!(
            "maintain bounds must satisfy 0 <= min <= max, got {}..{}",
            cfg.maintain_years_min, cfg.maintain_years_max
        )));
    }
    if !(0.0..=1.0).contains(&cfg.sudden_failure_prob) {
        return Err(EnvError::Domain(format!(
            "sudden_failure_prob must be in [0,1], got {}",
            cfg.sudden_failure_prob
        )));
    }
    ENV_STEPS.with(|c| c.set(c.get() + 1));

    let sudden = rng.random::<f64>() < cfg.sudden_failure_prob;
    let (executed, reward_pf) = if sudden {
        (Action::Replace, 1.0)
    } else {
        (action, state.pf)
    };

    let next_age = if sudden {
        1
    } else {
        match action {
            Action::DoNothing => state.age + 1,
            Action::Maintain => {
                let cut = rng
                    .random_range(cfg.maintain_years_min..=cfg.maintain_years_max)
                    .round();
                let reduced = state.age as f64 - cut;
                if reduced < 1.0 {
                    1
                } else {
                    reduced as u32
                }
            }
            Action::Replace => 1,
        }
    };

    let (r, mc) = reward(executed, reward_pf);
    let t_next = state.t + 1;
    let next_state = PipeState {
        age: next_age,
        material: state.material,
        lambda_eff: state.lambda_eff,
        pf: pf_value(state.lambda_eff, next_age as f64),
        t: t_next,
    };
    Ok(StepOutcome {
        next_state,
        reward: r,
        mc,
        pf_penalty: -reward_pf,
        sudden_failure: sudden,
        executed_action: executed,
        done: t_next == HORIZON,
    })
}

/// Numeric encoding of a state for the Q-network:
/// `[age/100, onehot(material) x4, lambda_eff, pf]`.
///
/// The ordering is part of the model file contract. One-hot slots follow
/// `Material::one_hot_index`: asbestos cement, ductile iron, gray cast
/// iron, PVC.
pub fn encode_state(state: &PipeState) -> [f64; ENCODED_STATE_LEN] {
    let mut v = [0.0; ENCODED_STATE_LEN];
    v[0] = state.age as f64 / 100.0;
    v[1 + state.material.one_hot_index()] = 1.0;
    v[5] = state.lambda_eff;
    v[6] = state.pf;
    v
}

/// Load a pipe roster from a CSV file with header `id,age,material,length`.
pub fn load_pipes(path: &Path) -> Result<Vec<PipeSpec>, RosterError> {
    let text = fs::read_to_string(path)?;
    parse_pipes(&text)
}

/// Parse roster CSV text. Lengths are meters and must be strictly positive;
/// material strings are the closed set accepted by [`Material::from_str`].
pub fn parse_pipes(text: &str) -> Result<Vec<PipeSpec>, RosterError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(RosterError::Parse {
        line: 1,
        reason: "empty file, expected header id,age,material,length".into(),
    })?;
    if header.trim() != "id,age,material,length" {
        return Err(RosterError::Parse {
            line: 1,
            reason: format!(
                "bad header {:?}, expected id,age,material,length",
                header.trim()
            ),
        });
    }

    let mut specs = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(RosterError::Parse {
                line: line_no,
                reason: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let id: u32 = fields[0].parse().map_err(|e| RosterError::Parse {
            line: line_no,
            reason: format!("bad id {:?}: {e}", fields[0]),
        })?;
        let age0: u32 = fields[1].parse().map_err(|e| RosterError::Parse {
            line: line_no,
            reason: format!("bad age {:?}: {e}", fields[1]),
        })?;
        let material = Material::from_str(fields[2]).map_err(|reason| RosterError::Parse {
            line: line_no,
            reason,
        })?;
        let length_m: f64 = fields[3].parse().map_err(|e| RosterError::Parse {
            line: line_no,
            reason: format!("bad length {:?}: {e}", fields[3]),
        })?;
        if !length_m.is_finite() || length_m <= 0.0 {
            return Err(RosterError::Parse {
                line: line_no,
                reason: format!("length must be positive, got {length_m}"),
            });
        }
        specs.push(PipeSpec {
            id,
            age0,
            material,
            length_m,
        });
    }
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn no_sudden() -> EnvConfig {
        EnvConfig {
            sudden_failure_prob: 0.0,
            ..EnvConfig::default()
        }
    }

    fn state_with_pf(pf_target: f64) -> PipeState {
        // Invert the lifetime model at lambda = 0.1 so the state carries a consistent pf.
        let lambda = 0.1;
        let age = (-(1.0 - pf_target).ln() / lambda).round().max(0.0) as u32;
        PipeState {
            age,
            material: Material::DuctileIron,
            lambda_eff: lambda,
            pf: pf_value(lambda, age as f64),
            t: 10,
        }
    }

    #[test]
    fn failure_probability_matches_table_rows() {
        // Pipe 1: asbestos cement, 2365 m, age 44.
        let pf = failure_probability(0.06 * 2.365, 44.0).unwrap();
        assert!((pf - 0.998).abs() < 0.001);
        // Pipe 5 per the lifetime model (the printed table value deviates).
        let pf5 = failure_probability(0.02 * 1.968, 32.0).unwrap();
        assert!((pf5 - 0.716).abs() < 0.001);
    }

    #[test]
    fn failure_probability_zero_age() {
        assert_eq!(failure_probability(0.5, 0.0).unwrap(), 0.0);
        assert_eq!(failure_probability(1e-9, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn failure_probability_rejects_bad_inputs() {
        assert!(failure_probability(-0.1, 4.0).is_err());
        assert!(failure_probability(0.1, -4.0).is_err());
        assert!(failure_probability(f64::NAN, 4.0).is_err());
        assert!(failure_probability(0.1, f64::INFINITY).is_err());
    }

    #[test]
    fn maintenance_cost_examples() {
        assert_eq!(maintenance_cost(Action::Maintain, 0.6), -0.5);
        assert_eq!(maintenance_cost(Action::DoNothing, 0.0), 0.0);
        assert_eq!(maintenance_cost(Action::DoNothing, 0.95), -1.0);
        assert_eq!(maintenance_cost(Action::Replace, 0.4), -1.0);
        // Boundaries are exclusive on the cheap side.
        assert_eq!(maintenance_cost(Action::DoNothing, 0.9), 0.0);
        assert_eq!(maintenance_cost(Action::Maintain, 0.5), -1.0);
        assert_eq!(maintenance_cost(Action::Replace, 0.5), -1.0);
        assert_eq!(maintenance_cost(Action::Replace, 0.95), -0.8);
    }

    #[test]
    fn maintenance_cost_partition_is_total() {
        // Every (action, pf) grid point lands in exactly one case.
        for action in Action::ALL {
            for i in 0..=10 {
                let pf = i as f64 / 10.0;
                let mc = maintenance_cost(action, pf);
                let expected = match action {
                    Action::DoNothing if pf > 0.9 => -1.0,
                    Action::DoNothing => 0.0,
                    Action::Maintain if pf > 0.5 => -0.5,
                    Action::Maintain => -1.0,
                    Action::Replace if pf > 0.5 => -0.8,
                    Action::Replace => -1.0,
                };
                assert_eq!(mc, expected, "action {action:?} pf {pf}");
            }
        }
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward(Action::Maintain, 0.6), (-1.1, -0.5));
        assert_eq!(reward(Action::DoNothing, 0.0), (0.0, 0.0));
        let (r, mc) = reward(Action::Replace, 0.95);
        assert!((r - (-1.75)).abs() < 1e-12);
        assert_eq!(mc, -0.8);
    }

    #[test]
    fn reset_matches_roster_rows() {
        let pipe16 = PipeSpec {
            id: 16,
            age0: 2,
            material: Material::Pvc,
            length_m: 1527.0,
        };
        let s = reset(&pipe16);
        assert!((s.pf - 0.045).abs() < 0.001);
        assert_eq!(s.age, 2);
        assert_eq!(s.t, 0);

        let pipe3 = PipeSpec {
            id: 3,
            age0: 6,
            material: Material::AsbestosCement,
            length_m: 1908.0,
        };
        assert!((reset(&pipe3).pf - 0.497).abs() < 0.001);

        let newborn = PipeSpec {
            id: 99,
            age0: 0,
            material: Material::Pvc,
            length_m: 100.0,
        };
        assert_eq!(reset(&newborn).pf, 0.0);
    }

    #[test]
    fn encode_state_layout() {
        let s = reset(&PipeSpec {
            id: 16,
            age0: 2,
            material: Material::Pvc,
            length_m: 1527.0,
        });
        let v = encode_state(&s);
        assert_eq!(v[0], 0.02);
        assert_eq!(&v[1..5], &[0.0, 0.0, 0.0, 1.0]);
        assert!((v[5] - 0.022905).abs() < 1e-12);
        assert!((v[6] - 0.045).abs() < 0.001);
    }

    #[test]
    fn encode_state_one_hot_sums_to_one() {
        for material in Material::ALL {
            let s = PipeState {
                age: 10,
                material,
                lambda_eff: 0.05,
                pf: pf_value(0.05, 10.0),
                t: 0,
            };
            let v = encode_state(&s);
            let onehot_sum: f64 = v[1..5].iter().sum();
            assert_eq!(onehot_sum, 1.0);
        }
    }

    #[test]
    fn step_age_transitions() {
        let cfg = no_sudden();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = PipeState {
            age: 40,
            material: Material::GrayCastIron,
            lambda_eff: 0.1,
            pf: pf_value(0.1, 40.0),
            t: 3,
        };

        let out = step(&s, Action::Replace, &cfg, &mut rng).unwrap();
        assert_eq!(out.next_state.age, 1);
        assert!(!out.sudden_failure);
        assert_eq!(out.executed_action, Action::Replace);

        let out = step(&s, Action::DoNothing, &cfg, &mut rng).unwrap();
        assert_eq!(out.next_state.age, 41);

        // Default bounds U(1,3).
        for _ in 0..50 {
            let out = step(&s, Action::Maintain, &cfg, &mut rng).unwrap();
            assert!(
                (37..=39).contains(&out.next_state.age),
                "age {}",
                out.next_state.age
            );
        }

        // Wider bounds via config.
        let wide = EnvConfig {
            sudden_failure_prob: 0.0,
            maintain_years_min: 5.0,
            maintain_years_max: 10.0,
        };
        for _ in 0..50 {
            let out = step(&s, Action::Maintain, &wide, &mut rng).unwrap();
            assert!(
                (30..=35).contains(&out.next_state.age),
                "age {}",
                out.next_state.age
            );
        }
    }

    #[test]
    fn step_maintain_clamps_age_to_one() {
        let cfg = no_sudden();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = PipeState {
            age: 3,
            material: Material::Pvc,
            lambda_eff: 0.02,
            pf: pf_value(0.02, 3.0),
            t: 0,
        };
        for _ in 0..20 {
            let out = step(&s, Action::Maintain, &cfg, &mut rng).unwrap();
            assert!(out.next_state.age >= 1);
        }
    }

    #[test]
    fn step_reward_uses_pre_transition_pf() {
        let cfg = no_sudden();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = state_with_pf(0.6);
        let out = step(&s, Action::Maintain, &cfg, &mut rng).unwrap();
        let (expected_r, expected_mc) = reward(Action::Maintain, s.pf);
        assert_eq!(out.reward, expected_r);
        assert_eq!(out.mc, expected_mc);
        assert_eq!(out.pf_penalty, -s.pf);
    }

    #[test]
    fn step_reward_components_add_up() {
        let cfg = EnvConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = PipeSpec {
            id: 1,
            age0: 44,
            material: Material::AsbestosCement,
            length_m: 2365.0,
        };
        let mut s = reset(&spec);
        for i in 0..100 {
            let action = Action::ALL[i % 3];
            let out = step(&s, action, &cfg, &mut rng).unwrap();
            assert!((out.reward - (out.mc + out.pf_penalty)).abs() < 1e-15);
            assert!((-2.0..=0.0).contains(&out.reward));
            s = out.next_state;
        }
    }

    #[test]
    fn step_sudden_failure_forces_replacement() {
        let cfg = EnvConfig {
            sudden_failure_prob: 1.0,
            ..EnvConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = state_with_pf(0.2);
        let out = step(&s, Action::DoNothing, &cfg, &mut rng).unwrap();
        assert!(out.sudden_failure);
        assert_eq!(out.executed_action, Action::Replace);
        assert_eq!(out.next_state.age, 1);
        assert_eq!(out.mc, -0.8);
        assert_eq!(out.pf_penalty, -1.0);
        assert!((out.reward - (-1.8)).abs() < 1e-15);
    }

    #[test]
    fn step_rejects_bad_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = state_with_pf(0.3);
        let reversed = EnvConfig {
            maintain_years_min: 5.0,
            maintain_years_max: 2.0,
            ..EnvConfig::default()
        };
        assert!(matches!(
            step(&s, Action::Maintain, &reversed, &mut rng),
            Err(EnvError::Domain(_))
        ));
        let bad_prob = EnvConfig {
            sudden_failure_prob: 1.5,
            ..EnvConfig::default()
        };
        assert!(matches!(
            step(&s, Action::DoNothing, &bad_prob, &mut rng),
            Err(EnvError::Domain(_))
        ));
    }

    #[test]
    fn step_done_at_horizon_and_error_after() {
        let cfg = no_sudden();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = PipeSpec {
            id: 13,
            age0: 15,
            material: Material::Pvc,
            length_m: 1650.0,
        };
        let mut s = reset(&spec);
        for i in 0..HORIZON {
            let out = step(&s, Action::DoNothing, &cfg, &mut rng).unwrap();
            assert_eq!(out.done, i + 1 == HORIZON);
            s = out.next_state;
        }
        assert_eq!(
            step(&s, Action::DoNothing, &cfg, &mut rng),
            Err(EnvError::EpisodeDone)
        );
    }

    #[test]
    fn do_nothing_trajectory_is_monotone() {
        let cfg = no_sudden();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let spec = PipeSpec {
            id: 16,
            age0: 2,
            material: Material::Pvc,
            length_m: 1527.0,
        };
        let mut s = reset(&spec);
        for _ in 0..HORIZON {
            let out = step(&s, Action::DoNothing, &cfg, &mut rng).unwrap();
            assert_eq!(out.next_state.age, s.age + 1);
            assert!(out.next_state.pf >= s.pf);
            s = out.next_state;
        }
    }

    #[test]
    fn trajectories_are_deterministic_under_seed() {
        let cfg = EnvConfig::default();
        let spec = PipeSpec {
            id: 9,
            age0: 11,
            material: Material::GrayCastIron,
            length_m: 2017.0,
        };
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = reset(&spec);
            let mut trace = Vec::new();
            for i in 0..HORIZON {
                let action = Action::ALL[(i % 3) as usize];
                let out = step(&s, action, &cfg, &mut rng).unwrap();
                trace.push(out);
                s = out.next_state;
            }
            trace
        };
        assert_eq!(run(99), run(99));
        assert_ne!(run(99), run(100));
    }

    #[test]
    fn sudden_failure_long_run_frequency() {
        let cfg = EnvConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let spec = PipeSpec {
            id: 7,
            age0: 25,
            material: Material::DuctileIron,
            length_m: 2405.0,
        };
        let mut failures = 0u64;
        let mut steps = 0u64;
        while steps < 100_000 {
            let mut s = reset(&spec);
            for _ in 0..HORIZON {
                let out = step(&s, Action::DoNothing, &cfg, &mut rng).unwrap();
                failures += out.sudden_failure as u64;
                steps += 1;
                s = out.next_state;
            }
        }
        let freq = failures as f64 / steps as f64;
        assert!((freq - 0.05).abs() < 0.005, "observed {freq}");
    }

    #[test]
    fn thread_step_counter_advances_with_steps() {
        let cfg = no_sudden();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = state_with_pf(0.1);
        let before = thread_env_steps();
        let _ = step(&s, Action::DoNothing, &cfg, &mut rng).unwrap();
        assert_eq!(thread_env_steps(), before + 1);
    }

    #[test]
    fn bundled_roster_loads_and_round_trips() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/pipes.csv");
        let specs = load_pipes(Path::new(path)).unwrap();
        assert_eq!(specs.len(), 16);
        assert_eq!(specs[0].id, 1);
        assert_eq!(specs[0].material, Material::AsbestosCement);
        assert_eq!(specs[15].length_m, 1527.0);
        for spec in &specs {
            assert!(spec.lambda_eff() > 0.0);
        }
    }

    #[test]
    fn parse_pipes_header_only_is_empty() {
        assert!(parse_pipes("id,age,material,length\n").unwrap().is_empty());
    }

    #[test]
    fn parse_pipes_rejects_unknown_material() {
        let err = parse_pipes("id,age,material,length\n1,10,steel,100\n").unwrap_err();
        match err {
            RosterError::Parse { line, reason } => {
                assert_eq!(line, 2);
                assert!(reason.contains("steel"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_pipes_rejects_bad_rows() {
        assert!(parse_pipes("id,age,material,length\n1,10,pvc,0\n").is_err());
        assert!(parse_pipes("id,age,material,length\n1,10,pvc\n").is_err());
        assert!(parse_pipes("id,age,material,length\n1,-3,pvc,100\n").is_err());
        assert!(parse_pipes("id,material,length\n").is_err());
    }

    proptest! {
        // Ranges keep lambda * age <= 30 so the exponential stays clear of
        // f64 saturation at 1.0; the roster never gets near that region.
        #[test]
        fn pf_stays_in_unit_interval(lambda in 1e-6f64..0.2, age in 0u32..150) {
            let pf = failure_probability(lambda, age as f64).unwrap();
            prop_assert!((0.0..1.0).contains(&pf));
        }

        #[test]
        fn pf_increases_in_both_arguments(lambda in 1e-3f64..0.2, age in 1u32..140) {
            let pf = failure_probability(lambda, age as f64).unwrap();
            prop_assert!(failure_probability(lambda * 1.5, age as f64).unwrap() > pf);
            prop_assert!(failure_probability(lambda, age as f64 + 1.0).unwrap() > pf);
        }

        #[test]
        fn reward_is_bounded(action_code in 0u8..3, pf in 0.0f64..=1.0) {
            let action = Action::from_code(action_code).unwrap();
            let (r, mc) = reward(action, pf);
            prop_assert!((-2.0..=0.0).contains(&r));
            prop_assert!((-1.0..=0.0).contains(&mc));
        }
    }
}
