//! Guidance-equation integration, screen arrivals, and collapse.

mod integrator;
mod trajectory;

pub use integrator::{locate_crossing, step_adaptive, step_from, substep, GuidanceField, Segment, StepResult};
pub use trajectory::{
    evolve_free, run_trajectory, run_trajectory_pair, Arrival, DetectionRecord, PathSample, Side, Status,
    TrajectoryDiagnostics, TrajectoryOutcome,
};
