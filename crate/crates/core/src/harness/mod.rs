//! Monte-Carlo benchmark: profiles, scenario runner, metrics and reports.

pub mod metrics;
pub mod profile;
pub mod report;
pub mod scenario;

pub use metrics::{iqr, median, nrmse, quantile, Summary};
pub use report::emit_report;
pub use scenario::{run_scenario, Method, RunReport, RunSettings, ScenarioConfig};
