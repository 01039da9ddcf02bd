//! Experiment drivers: feasibility sweeps, closed-loop tracking,
//! reachability probes and the double-integrator worked example.

pub mod appendix;
pub mod grid;
pub mod reach;
pub mod tracking;

pub use appendix::{appendix_example, AppendixCase, AppendixReport, AppendixSide};
pub use grid::{feasibility_grid, Cell, GridPoint, GridResult, GridSpec, HorizonSummary, Verdict};
pub use reach::{reachability_probe, ProbeCase, ProbeReport};
pub use tracking::{run_receding_horizon, TrackingConfig, TrajectoryLog, TrajectoryRow};
