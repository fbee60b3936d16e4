//! Fixed-step ("bang-bang") field estimator and drive-frequency feedforward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{sensitivity, QubitEncoding, MU_B_OVER_H};

/// Unit in which the gain `α` is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepReference {
    /// `step = α·h/(τ·μ_B)`.
    #[default]
    BohrMagneton,
    /// `step = α·h/(τ·g·|Δm|·μ_B)` for the sensing encoding: `α` is the
    /// fraction of a full Ramsey fringe of the sensing qubit moved per update.
    Fringe,
}

/// Current field estimate and the fixed step applied per outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoState {
    /// Gauss.
    pub estimate: f64,
    pub alpha: f64,
    /// Ramsey probe time of the sensing qubit, seconds.
    pub probe_time: f64,
    /// Gauss.
    step: f64,
}

impl ServoState {
    /// Estimator starting at zero with `step = α·h/(τ·μ_B)`.
    pub fn new(alpha: f64, probe_time: f64) -> Result<Self> {
        Self::with_reference(
            alpha,
            probe_time,
            StepReference::BohrMagneton,
            &QubitEncoding::MONITOR_M,
        )
    }

    pub fn with_reference(
        alpha: f64,
        probe_time: f64,
        reference: StepReference,
        sensing: &QubitEncoding,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::domain("alpha", alpha, "(0, inf)"));
        }
        if !(probe_time > 0.0 && probe_time.is_finite()) {
            return Err(Error::domain("probe_time", probe_time, "(0, inf) s"));
        }
        let step = match reference {
            StepReference::BohrMagneton => alpha * (1.0 / MU_B_OVER_H) / probe_time,
            StepReference::Fringe => alpha / sensitivity(sensing)? / probe_time,
        };
        Ok(Self {
            estimate: 0.0,
            alpha,
            probe_time,
            step,
        })
    }

    pub fn with_estimate(mut self, estimate: f64) -> Self {
        self.estimate = estimate;
        self
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Moves the estimate up one step on outcome 1 (measured phase positive,
    /// field above the estimate) and down one step on outcome 0.
    #[must_use]
    pub fn update(self, outcome: bool) -> Self {
        let estimate = if outcome {
            self.estimate + self.step
        } else {
            self.estimate - self.step
        };
        Self { estimate, ..self }
    }

    /// Drive frequencies for both qubits at `b_static + estimate`.
    pub fn feedforward(&self, b_static: f64) -> Result<DriveFrequencies> {
        let b = b_static + self.estimate;
        Ok(DriveFrequencies {
            data_hz: sensitivity(&QubitEncoding::DATA_G)? * b,
            monitor_hz: sensitivity(&QubitEncoding::MONITOR_M)? * b,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveFrequencies {
    pub data_hz: f64,
    pub monitor_hz: f64,
}
