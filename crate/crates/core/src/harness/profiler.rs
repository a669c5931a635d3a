//! Wall-clock phase timers with strict LIFO nesting.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    /// Whole time step.
    Total,
    LevelSet,
    /// Predictor: convective and diffusive fluxes and stage updates.
    Fluxes,
    Pressure,
    /// Projection, pressure update and boundary refresh.
    Update,
    Subgrid,
    TimeStep,
}

impl Phase {
    pub const ALL: [Phase; 7] =
        [Phase::Total, Phase::LevelSet, Phase::Fluxes, Phase::Pressure, Phase::Update, Phase::Subgrid, Phase::TimeStep];

    pub fn label(self) -> &'static str {
        match self {
            Phase::Total => "T_TT",
            Phase::LevelSet => "T_LS",
            Phase::Fluxes => "T_CD",
            Phase::Pressure => "T_P",
            Phase::Update => "T_up",
            Phase::Subgrid => "T_SGS",
            Phase::TimeStep => "T_dt",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfilerError {
    #[error("stopping {stopped:?} while {innermost:?} is the innermost open timer")]
    NestingViolation { stopped: Phase, innermost: Option<Phase> },
}

/// Accumulated seconds per phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes(pub [f64; 7]);

impl PhaseTimes {
    pub fn get(&self, p: Phase) -> f64 {
        self.0[p.slot()]
    }

    pub fn add(&mut self, p: Phase, secs: f64) {
        self.0[p.slot()] += secs;
    }
}

#[derive(Debug, Default)]
pub struct Profiler {
    stack: Vec<(Phase, Instant)>,
    acc: PhaseTimes,
}

impl Profiler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn start(&mut self, p: Phase) {
        self.stack.push((p, Instant::now()));
    }

    /// Close the innermost timer, which must be `p`. Returns its elapsed seconds.
    pub fn stop(&mut self, p: Phase) -> Result<f64, ProfilerError> {
        match self.stack.last() {
            Some((top, _)) if *top == p => {
                let (_, t0) = self.stack.pop().expect("non-empty");
                let dt = t0.elapsed().as_secs_f64();
                self.acc.add(p, dt);
                Ok(dt)
            }
            other => Err(ProfilerError::NestingViolation { stopped: p, innermost: other.map(|(q, _)| *q) }),
        }
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    pub fn elapsed(&self, p: Phase) -> f64 {
        self.acc.get(p)
    }

    /// Return accumulated times and reset them; open timers keep running.
    pub fn take(&mut self) -> PhaseTimes {
        std::mem::take(&mut self.acc)
    }
}
