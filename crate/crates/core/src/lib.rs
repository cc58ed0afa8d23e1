//! Moderately interacting particle systems for nonlinear Fokker-Planck
//! equations with singular interaction kernels.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod cutoff;
pub mod experiments;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod kr;
pub mod measures;
pub mod mollifier;
pub mod particles;
pub mod pde;
pub mod quadrature;
pub mod rates;
pub mod rng;
