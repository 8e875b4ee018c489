//! Benchmark systems, closed-loop simulation and trajectory records.

mod builtin;
mod integrate;
mod law;
mod system;
mod trajectory;

pub use builtin::{builtin_basis, builtin_domain, make_builtin_system, BuiltinSystem, QUADROTOR_INERTIA};
pub use integrate::{add_measurement_noise, simulate, simulation_count, DIVERGENCE_BOUND};
pub use law::{ControlLaw, FeedbackFn};
pub use system::{DriftFn, DynamicalSystem, InputMap, InputMapFn};
pub use trajectory::{Trajectory, TrajectoryMeta};

/// Default sampling interval, seconds.
pub const DEFAULT_DT: f64 = 1e-3;

/// Copy of `sys` with input map `(1 + scale) g`.
pub fn perturb_input_dynamics(sys: &DynamicalSystem, scale: f64) -> crate::Result<DynamicalSystem> {
    sys.perturb_input_dynamics(scale)
}
