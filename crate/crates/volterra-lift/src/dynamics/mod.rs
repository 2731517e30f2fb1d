//! Simulation of the lifted equation and the Volterra equation it
//! represents.
//!
//! The observation process X = μ[Y] of a lifted path solves the Volterra
//! equation with the discretized kernel, and this module keeps that
//! statement checkable at machine precision: [`simulate_lift`] and
//! [`simulate_svie_direct`] consume identical Brownian increments under
//! matched endpoint rules, [`equivalence_gap`] measures their distance, and
//! [`stochastic_convolution`] exposes the discrete convolution identity on
//! its own. [`picard_solve`] reconstructs the same path as a fixed point of
//! the mild-solution map, and [`apriori_bound_check`] estimates the energy
//! functional controlled by the a priori bound.

mod coeffs;
pub(crate) mod engine;
mod picard;

pub use coeffs::{CoeffFn, Coefficients};
pub use engine::{
    apriori_bound_check, equivalence_gap, simulate_ensemble, simulate_lift,
    simulate_lift_indexed, simulate_svie_direct, step_lift, stochastic_convolution,
    AprioriReport, EnsembleStats, GapReport, InitialCondition, KernelSource, Scheme, SimConfig,
    SimPath,
};
pub use picard::{fixed_point_residual, picard_constants, picard_solve, PicardReport};
