//! Sparse superposition simulator.

mod machine;
mod run;
mod state;

pub use machine::{measure_partition, rotation_phase, Limits, Machine, SimError, StepInfo};
pub use run::{
    sample_ensemble, Event, EventReport, Histogram, Member, Outcome, RunReport, RunResult, RunStats, SampleResult,
    StatsReport,
};
pub use state::{MachineConfig, Memory, QState};
