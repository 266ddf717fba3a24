//! Numerics for periodic homogenization of monotone parabolic problems with
//! several spatial and temporal microscales.
//!
//! Pipeline: [`scale`] classifies the scale functions, [`cell`] solves the
//! local problems for a frozen macroscopic gradient, [`effective`] averages
//! the flux into the homogenized b, [`macro_solver`] integrates the
//! homogenized equation and [`dns`] solves the oscillating problem directly
//! for comparison.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration and
//! the command line live in the `multihom` crate.
#![no_std]

extern crate alloc;

pub mod cell;
pub mod dns;
pub mod effective;
pub mod expr;
pub mod flux;
pub mod linalg;
pub mod macro_solver;
pub mod scale;

pub use expr::{Expr, ExprError};
