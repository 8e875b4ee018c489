//! Forward optimal control: Riccati oracle, off-policy integral policy
//! iteration and policy comparison.

mod distance;
mod irl;
mod riccati;

pub use distance::{max_policy_deviation, normalized_gain_error, policy_distance, PolicyDistance};
pub use irl::{
    bellman_residual, collect_learner_data, forward_solve, forward_solve_count, integral_rl_solve, integral_rl_solve_known_input, linearized_initial_gain,
    window_integrals, CostSpec, ForwardOptions, GainModel, ValuePolicyPair, WindowIntegrals,
};
pub use riccati::{is_hurwitz, lyapunov, solve_riccati, RiccatiSolution};
