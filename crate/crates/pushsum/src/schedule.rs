//! Step-size schedules.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("step size must be finite and positive, got {0}")]
    NonPositive(f64),
}

/// `Constant { gamma }` or `Diminishing { v }` with `gamma_t = v / (t + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant { gamma: f64 },
    Diminishing { v: f64 },
}

impl StepSchedule {
    pub fn constant(gamma: f64) -> Result<Self, ScheduleError> {
        check(gamma)?;
        Ok(StepSchedule::Constant { gamma })
    }

    pub fn diminishing(v: f64) -> Result<Self, ScheduleError> {
        check(v)?;
        Ok(StepSchedule::Diminishing { v })
    }

    /// Step size used at iteration `t` (0-based).
    pub fn gamma(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant { gamma } => gamma,
            StepSchedule::Diminishing { v } => v / (t as f64 + 1.0),
        }
    }

    /// The schedule's scale parameter (`gamma` or `v`).
    pub fn scale(&self) -> f64 {
        match *self {
            StepSchedule::Constant { gamma } => gamma,
            StepSchedule::Diminishing { v } => v,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, StepSchedule::Constant { .. })
    }

    /// Warning text when the largest step exceeds `2/L`, the convex step limit.
    pub fn convex_step_warning(&self, l: f64) -> Option<String> {
        let largest = self.gamma(0);
        (l > 0.0 && largest > 2.0 / l).then(|| {
            format!("largest step {largest} exceeds 2/L = {} for L = {l}", 2.0 / l)
        })
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSchedule::Constant { gamma } => write!(f, "constant({gamma})"),
            StepSchedule::Diminishing { v } => write!(f, "diminishing({v})"),
        }
    }
}

fn check(x: f64) -> Result<(), ScheduleError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(ScheduleError::NonPositive(x))
    }
}
