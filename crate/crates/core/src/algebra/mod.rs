//! Algebraic machinery: independence of expert partials, the r_bar polynomial system,
//! derivative-structure polynomials for squared experts, and the polynomial-limit system.

mod independence;
mod limit;
mod lm;
mod polysys;
mod ppoly;

pub use independence::{
    independence_basis_size, independence_check, DependenceWitness, IndependenceReport, Verdict,
};
pub use limit::{
    limit_system_coefficients, limit_system_residuals, rtilde_bracket, LimitFamily, RtildeBracket,
    RtildeBudget,
};
pub use polysys::{
    poly_system_residual, rbar, solve_poly_system, Certificate, PolySystemInstance, RbarResult,
    SearchBudget, SearchStatus, SOLVED_TOL, UNSOLVED_TOL,
};
pub use ppoly::{p_polynomials, PPolyTable};
