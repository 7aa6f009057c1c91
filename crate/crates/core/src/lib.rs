// SPDX-License-Identifier: Apache-2.0
pub mod counterexamples;
pub mod error;
pub mod experiment;
pub mod filters;
pub mod grid;
pub mod harness;
pub mod maximal;
pub mod multiplier;
pub mod norms;
pub mod region;
pub mod selfcheck;

pub use error::{Error, Result};
