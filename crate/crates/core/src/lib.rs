//! Margin-based GAN and classifier experiments on a small reverse-mode
//! autodiff engine, with brute-force oracles for every quantity that has
//! a closed form.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod models;
pub mod objectives;
pub mod oracles;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
