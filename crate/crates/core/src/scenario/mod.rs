//! Declarative scenarios: configuration, execution and artifacts.

pub mod config;
pub mod output;
pub mod run;

pub use config::{load_config, parse_config, parse_config_in, ScenarioConfig, ScenarioKind};
pub use output::{write_artifacts, ArtifactPaths, RunOutcome, RunSummary, Verdict};
pub use run::run_scenario;
