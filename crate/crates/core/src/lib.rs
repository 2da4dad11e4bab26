//! Finite-element discretization, time stepping, observability and HUM
//! boundary control for `i u_t + u_xx - u_xxxx = 0` on a star graph.
//!
//! Edge 1 occupies `(-l_1, 0)` and carries no control; edges `2..N` occupy
//! `(0, l_j)` and are driven through the tip derivative `u_j'(l_j) = h_j(t)`.
//! The vertex couples the edges through `u_1(0) = α_j u_j(0)` and
//! `u_1'(0) = Σ_j u_j'(0) / α_j`.

pub mod error;
pub mod fem_assembly;
pub mod hermite;
pub mod hum;
pub mod linalg;
pub mod multiplier_checks;
pub mod observability;
pub mod propagator;
pub mod star_graph;

pub use error::{Error, Result};
pub use fem_assembly::{assemble, build_space, DiscreteGraphSpace, GraphMatrices, GraphState};
pub use propagator::{solve_adjoint, solve_forward, step, ControlSignal, Propagator, Trajectory};
pub use star_graph::{t_min, validate_config, StarGraphConfig, ValidationReport, Violation};
pub use hum::{free_final_state, hum_solve, null_control, HumResult, HumSummary};
pub use multiplier_checks::{conservation_report, morawetz_residual, IdentityReport, MultiplierFunction};
pub use observability::{c_theory, lambda_min, GramianDiagnostics};
