//! Scenario configuration and the discrete-event network simulation.

pub mod config;
pub mod dataset;
pub mod oracle;
pub mod run;
pub mod stability;

pub use config::{Scenario, ScenarioConfig};
pub use dataset::{MemorySink, RunMetadata, TagDataset, TagSink};
pub use oracle::{expected_fourfold_rate, ExpectedRate};
pub use run::{run_scenario, run_scenario_into};
pub use stability::{run_stability, StabilitySample};
