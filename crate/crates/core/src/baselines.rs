//! Non-learning comparison policies. All of them run in the same simulator
//! as the trained agents, including the sudden-failure process.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};

use crate::env::{Action, PipeState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    /// Scheduled maintain every 5 years.
    Maintain5,
    /// Scheduled maintain every 10 years.
    Maintain10,
    /// Replace once `pf >= 0.95`.
    Corrective,
    /// Maintain (the cheapest intervention) once `pf >= 0.80`.
    Greedy,
    /// Uniformly random action; used for dataset generation.
    Random,
    /// Never intervenes; the failure-probability ceiling reference.
    NoIntervention,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::Maintain5,
        BaselineKind::Maintain10,
        BaselineKind::Corrective,
        BaselineKind::Greedy,
        BaselineKind::Random,
        BaselineKind::NoIntervention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Maintain5 => "maintain-5",
            BaselineKind::Maintain10 => "maintain-10",
            BaselineKind::Corrective => "corrective",
            BaselineKind::Greedy => "greedy",
            BaselineKind::Random => "random",
            BaselineKind::NoIntervention => "none",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "maintain-5" => Ok(BaselineKind::Maintain5),
            "maintain-10" => Ok(BaselineKind::Maintain10),
            "corrective" => Ok(BaselineKind::Corrective),
            "greedy" => Ok(BaselineKind::Greedy),
            "random" => Ok(BaselineKind::Random),
            "none" => Ok(BaselineKind::NoIntervention),
            other => Err(format!(
                "unknown strategy {other:?}, expected maintain-5|maintain-10|corrective|greedy|random|none"
            )),
        }
    }
}

/// What the preventive schedules anchor on: the episode calendar (default)
/// or the pipe's age.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PreventiveAnchor {
    #[default]
    Calendar,
    Age,
}

/// Action of a baseline policy in the given state. Only `Random` consumes
/// randomness; every other kind is a pure function of `(kind, state)`.
pub fn baseline_action(kind: BaselineKind, state: &PipeState, rng: &mut dyn RngCore) -> Action {
    baseline_action_anchored(kind, state, PreventiveAnchor::Calendar, rng)
}

pub fn baseline_action_anchored(
    kind: BaselineKind,
    state: &PipeState,
    anchor: PreventiveAnchor,
    rng: &mut dyn RngCore,
) -> Action {
    let tick = match anchor {
        PreventiveAnchor::Calendar => state.t,
        PreventiveAnchor::Age => state.age,
    };
    match kind {
        BaselineKind::Maintain5 => {
            if tick > 0 && tick % 5 == 0 {
                Action::Maintain
            } else {
                Action::DoNothing
            }
        }
        BaselineKind::Maintain10 => {
            if tick > 0 && tick % 10 == 0 {
                Action::Maintain
            } else {
                Action::DoNothing
            }
        }
        BaselineKind::Corrective => {
            if state.pf >= 0.95 {
                Action::Replace
            } else {
                Action::DoNothing
            }
        }
        BaselineKind::Greedy => {
            if state.pf >= 0.80 {
                Action::Maintain
            } else {
                Action::DoNothing
            }
        }
        BaselineKind::Random => {
            Action::from_code(rng.random_range(0..Action::COUNT as u8)).unwrap()
        }
        BaselineKind::NoIntervention => Action::DoNothing,
    }
}
