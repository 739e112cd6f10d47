//! Spin-motion dynamics of trapped ions driven by a two-mode spin-dependent force.
//!
//! * [`fock`]: truncated number-state numerics
//! * [`dynamics`]: closed forms for one ion, two radial modes
//! * [`ms`]: two-ion Molmer-Sorensen observables
//! * [`oracle`]: numerically exact propagation used to check the closed forms
//! * [`estimation`]: blue-sideband and parity fitting
//! * [`expdata`]: synthetic data, schedules and file formats
//! * [`cli`]: the `ecs-motion` command line

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod expdata;
pub mod fock;
pub mod lsq;
pub mod ms;
pub mod oracle;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
