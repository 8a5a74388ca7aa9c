//! Inference-budget arithmetic: window/stride trade-offs and the
//! end-to-end time-budget chain. All budgets are integer nanoseconds so
//! feasibility comparisons never drift.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchedError {
    #[error("deployment infeasible: sensing + transmit delay ({spent_ns} ns) consumes the {horizon_ns} ns horizon")]
    Infeasible { horizon_ns: u64, spent_ns: u64 },
    #[error("stride {stride} exceeds receptive field {receptive_field}")]
    StrideExceedsWindow { stride: u64, receptive_field: u64 },
}

/// Receptive field / stride plan for a windowed model over a stream.
///
/// The per-inference budget is the stride expressed in time:
/// `stride / input_rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    /// Window length consumed per inference, in samples.
    pub receptive_field: u64,
    /// Advance between consecutive windows, in samples.
    pub stride: u64,
    pub input_rate_hz: f64,
}

impl WindowPlan {
    pub fn new(receptive_field: u64, stride: u64, input_rate_hz: f64) -> Result<Self, SchedError> {
        if stride < 1 || stride > receptive_field {
            return Err(SchedError::StrideExceedsWindow {
                stride,
                receptive_field,
            });
        }
        assert!(input_rate_hz > 0.0, "input rate must be positive");
        Ok(WindowPlan {
            receptive_field,
            stride,
            input_rate_hz,
        })
    }

    /// Time budget per inference, rounded to integer nanoseconds.
    pub fn budget_per_inference_ns(&self) -> u64 {
        (self.stride as f64 * 1e9 / self.input_rate_hz).round() as u64
    }

    /// Predictions per second under this plan.
    pub fn prediction_rate_hz(&self) -> f64 {
        self.input_rate_hz / self.stride as f64
    }
}

/// The end-to-end deadline chain: how much of the forecasting horizon
/// remains for the model after sensing and actuation transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetChain {
    pub horizon_ns: u64,
    pub sensing_delay_ns: u64,
    pub transmit_delay_ns: u64,
    pub remaining_ns: u64,
}

impl BudgetChain {
    pub fn new(
        horizon_ns: u64,
        sensing_delay_ns: u64,
        transmit_delay_ns: u64,
    ) -> Result<Self, SchedError> {
        let remaining_ns = compute_budget(horizon_ns, sensing_delay_ns, transmit_delay_ns)?;
        Ok(BudgetChain {
            horizon_ns,
            sensing_delay_ns,
            transmit_delay_ns,
            remaining_ns,
        })
    }
}

/// Remaining model budget: horizon minus sensing minus transmit delay.
/// Zero or negative means the deployment cannot meet the horizon.
pub fn compute_budget(
    horizon_ns: u64,
    sensing_delay_ns: u64,
    transmit_delay_ns: u64,
) -> Result<u64, SchedError> {
    let spent = sensing_delay_ns + transmit_delay_ns;
    match horizon_ns.checked_sub(spent) {
        Some(remaining) if remaining > 0 => Ok(remaining),
        _ => Err(SchedError::Infeasible {
            horizon_ns,
            spent_ns: spent,
        }),
    }
}

/// Scale the stride k-fold: k-times the budget, k-times sparser predictions.
pub fn scale_stride(plan: &WindowPlan, k: u64) -> Result<WindowPlan, SchedError> {
    assert!(k >= 1, "scale factor must be >= 1");
    WindowPlan::new(plan.receptive_field, plan.stride * k, plan.input_rate_hz)
}

/// Feasibility of a measured pipeline against its plan and deadline chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feasibility {
    /// Keeps up with the arrival rate and fits the horizon.
    Realtime,
    /// Fits the horizon but cannot keep up with the stride budget.
    OverBudget,
    /// Latency alone exceeds what the horizon leaves for the model.
    HorizonViolating,
}

pub fn classify_feasibility(
    plan: &WindowPlan,
    measured_latency_ns: u64,
    chain: &BudgetChain,
) -> Feasibility {
    if measured_latency_ns > chain.remaining_ns {
        Feasibility::HorizonViolating
    } else if measured_latency_ns > plan.budget_per_inference_ns() {
        Feasibility::OverBudget
    } else {
        Feasibility::Realtime
    }
}
