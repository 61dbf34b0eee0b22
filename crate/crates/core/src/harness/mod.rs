//! Desk-scale reproductions: calibration, drinking sessions, analysis and plots.

pub mod analysis;
pub mod calibration;
pub mod config;
pub mod pipeline;
pub mod plots;
pub mod session;

use thiserror::Error;

pub use analysis::{ArmMetrics, Comparison, MetricsReport, SeriesSummary, TacgSeries};
pub use calibration::{run_calibration, CalibrationReport, JarResult};
pub use config::{ArmConfig, Outage, OutageKind, ScenarioConfig, ScenarioKind};
pub use pipeline::{run_pipeline, Integrity, PipelineRun};
pub use session::{analyze, calibrate, plot, run_session, SessionOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad input; nothing was started.
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Runtime(_) => 3,
        }
    }
}
