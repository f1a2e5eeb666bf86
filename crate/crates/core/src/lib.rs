//! Strictly optimal sequential tests between two simple hypotheses.
//!
//! The optimal test minimizing the expected run-length under H0 subject to
//! error-probability constraints is obtained from a linear program over the
//! Lagrange multipliers and a discretized cost-to-go function. The crate
//! builds the discretization (`grid`, `kernels`), solves the program
//! (`lp_core`, `design`), checks the result against independent oracles
//! (`verify`) and validates it by simulation (`simulate`).

pub mod cli;
pub mod config;
pub mod dense;
pub mod design;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod linsolve;
pub mod lp_core;
pub mod models;
pub mod normal;
pub mod simulate;
pub mod sparse;
pub mod verify;
