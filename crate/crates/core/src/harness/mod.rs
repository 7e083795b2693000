//! Scenario configuration, synthetic instances, the end-to-end pipeline and
//! report emission.

pub mod config;
pub mod instance;
pub mod report;
pub mod scenario;
pub mod synth;

use std::fmt;

use thiserror::Error;

pub use config::{InputSpec, ScenarioConfig, SweepAxis};
pub use instance::{min_time_plan, Instance};
pub use report::{emit_failures, emit_report, read_report_rows, AssignmentRow, OrgCostRow, ReportRow};
pub use scenario::{
    plan_travel_time, run_scenario, run_with_instance, sweep, CellFailure, PlanSource, RunSettings, ScenarioReport,
    SweepCell,
};
pub use synth::{synthesize_instance, SynthInstance, SynthSpec};

/// Pipeline stage an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Routes,
    Baseline,
    Tables,
    Layout,
    Relaxed,
    Projection,
    Report,
    Synthesis,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "loading inputs",
            Stage::Routes => "enumerating routes",
            Stage::Baseline => "equilibrium baseline",
            Stage::Tables => "route time tables",
            Stage::Layout => "problem layout",
            Stage::Relaxed => "relaxed solve",
            Stage::Projection => "binary projection",
            Stage::Report => "writing reports",
            Stage::Synthesis => "instance synthesis",
        })
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("{stage}: {message}")]
    Invalid { stage: Stage, message: String },
}

impl HarnessError {
    pub fn stage(stage: Stage, source: impl std::error::Error + Send + Sync + 'static) -> Self {
        HarnessError::Stage {
            stage,
            source: Box::new(source),
        }
    }

    pub fn invalid(stage: Stage, message: impl Into<String>) -> Self {
        HarnessError::Invalid {
            stage,
            message: message.into(),
        }
    }

    /// Whether the failure is a proven infeasibility of the inputs.
    pub fn is_infeasible(&self) -> bool {
        let HarnessError::Stage { source, .. } = self else {
            return false;
        };
        matches!(
            source.downcast_ref::<crate::admm::AdmmError>(),
            Some(crate::admm::AdmmError::Infeasible { .. })
        ) || matches!(
            source.downcast_ref::<crate::projection::ProjectionError>(),
            Some(crate::projection::ProjectionError::Infeasible { .. })
        )
    }

    pub fn is_diverged(&self) -> bool {
        let HarnessError::Stage { source, .. } = self else {
            return false;
        };
        matches!(
            source.downcast_ref::<crate::admm::AdmmError>(),
            Some(crate::admm::AdmmError::Diverged { .. })
        )
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
