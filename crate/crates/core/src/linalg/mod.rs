//! Sparse symmetric positive-definite linear algebra and a small
//! quasi-Newton minimizer.

mod lbfgs;
mod sparse;

pub(crate) use lbfgs::lbfgs;
pub use sparse::{solve_dirichlet, solve_spd, Cholesky, CsrMatrix, TripletMatrix, DIRECT_SOLVE_LIMIT};
