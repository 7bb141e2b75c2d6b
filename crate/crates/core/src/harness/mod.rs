//! Scenario files, batch runs, reports, plot data and the acceptance
//! suite.

pub mod acceptance;
mod bundled;
mod config;
mod plot;
mod report;
mod stats;
mod sweep;

pub use bundled::{bundled, bundled_names, bundled_text, BUNDLED};
pub use config::{
    ChannelSection, ClockSection, ConfigError, Expectations, LineSection, ProtocolSection,
    ScenarioConfig, SeriesSection,
};
pub use plot::{emit_plot_data, PlotError};
pub use report::{run_scenario, Check, MsqTable, Outcome, RunReport};
pub use stats::ks_two_sample;
pub use sweep::{sweep, sweep_table, with_parameter, SeedPolicy, SweepRow};
