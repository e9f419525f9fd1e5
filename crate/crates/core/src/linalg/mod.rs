//! Dense matrix kernels for the LQ study: Riccati and Lyapunov solvers,
//! spectral radius and definiteness tests.

mod eigen;
mod matrix;
mod riccati;
mod spectral;

pub use eigen::{symmetric_eigenvalues, symmetric_extremes};
pub use matrix::{dist2, norm2, DenseMatrix};
pub use riccati::{
    dare_residual, lqr, lqr_gain, lyapunov_residual, solve_dare, solve_discrete_lyapunov,
};
pub use spectral::{power_iteration_radius, spectral_radius};
