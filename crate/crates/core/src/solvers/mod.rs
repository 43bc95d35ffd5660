//! Minimal and non-minimal solvers.
//!
//! The minimal solvers recover a relative pose, or a homography, from a
//! single affine correspondence when the gravity direction is known in both
//! views. Point-based refitting and nonlinear refinement serve local
//! optimization.

mod dlt;
mod eight_point;
mod gravity;
mod one_ac;
mod polynomial;
mod refine;

pub use dlt::{fit_homography_dlt, solve_homography_4pc};
pub use eight_point::refit_essential_8pt;
pub use gravity::{
    align_to_gravity, build_gravity_problem, determinant_polynomial, hidden_variable_matrix,
    y_rotation, GravityAlignedProblem,
};
pub use one_ac::{
    plane_from_pose, solve_homography_1ac_gravity, solve_pose_1ac_gravity, PoseCandidate,
    SolverOutput,
};
pub use polynomial::{real_roots, Degree6Polynomial};
pub use refine::{refine_pose_nonlinear, refine_pose_robust};
