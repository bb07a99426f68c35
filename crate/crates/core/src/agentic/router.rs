//! Threshold routing and stop rules for the refinement loop.

use serde::{Deserialize, Serialize};

use crate::domain::{Metric, MetricsReport, OrchestratorConfig, RoutingPriority};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    ImproveSensitivity,
    ImproveSpecificity,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StopReason {
    ThresholdsMet,
    MaxIterations,
    SensitivityPlateau,
    /// The routed improver had no misclassified cases to learn from.
    NoCases,
    /// An improver or summarizer produced nothing usable.
    RefinementFailed,
    /// Expert session closed by the reviewer.
    Closed,
    /// Expert session closed by service shutdown.
    Interrupted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RefinementAction {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
}

impl RefinementAction {
    pub const IMPROVE_SENSITIVITY: Self = Self { kind: ActionKind::ImproveSensitivity, stop_reason: None };
    pub const IMPROVE_SPECIFICITY: Self = Self { kind: ActionKind::ImproveSpecificity, stop_reason: None };

    pub const fn stop(reason: StopReason) -> Self {
        Self { kind: ActionKind::Stop, stop_reason: Some(reason) }
    }

    pub fn is_stop(&self) -> bool {
        self.kind == ActionKind::Stop
    }
}

/// A report that has already been routed, with the action taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutedStep {
    pub report: MetricsReport,
    pub action: RefinementAction,
}

fn below(m: Metric, threshold: f64) -> bool {
    !m.at_least(threshold)
}

/// Decides what the loop does after evaluating iteration `iteration_index`
/// (0 is the baseline prompt).
///
/// In order:
/// 1. both metrics at threshold: stop, thresholds met;
/// 2. `iteration_index >= max_iterations` refinements done: stop;
/// 3. the previous step targeted sensitivity and sensitivity moved by less
///    than the delta: stop on plateau;
/// 4. otherwise improve whichever metric is below threshold, sensitivity
///    first unless the config says otherwise.
///
/// Undefined metrics count as below threshold. An undefined sensitivity on
/// either side of the plateau comparison never triggers the plateau stop.
pub fn route(
    report: &MetricsReport,
    history: &[RoutedStep],
    config: &OrchestratorConfig,
    iteration_index: u32,
) -> RefinementAction {
    let sens_low = below(report.sensitivity, config.sensitivity_threshold);
    let spec_low = below(report.specificity, config.specificity_threshold);
    if !sens_low && !spec_low {
        return RefinementAction::stop(StopReason::ThresholdsMet);
    }
    if iteration_index >= config.max_iterations {
        return RefinementAction::stop(StopReason::MaxIterations);
    }
    if let Some(prev) = history.last() {
        if prev.action.kind == ActionKind::ImproveSensitivity {
            if let (Some(now), Some(before)) = (report.sensitivity.value(), prev.report.sensitivity.value()) {
                if (now - before).abs() < config.sensitivity_delta_stop {
                    return RefinementAction::stop(StopReason::SensitivityPlateau);
                }
            }
        }
    }
    match (sens_low, spec_low, config.priority) {
        (true, true, RoutingPriority::SpecificityFirst) => RefinementAction::IMPROVE_SPECIFICITY,
        (true, _, _) => RefinementAction::IMPROVE_SENSITIVITY,
        _ => RefinementAction::IMPROVE_SPECIFICITY,
    }
}
