//! One-shot architecture search with a prioritized path board.
//!
//! A weight-sharing supernet is trained by single-path uniform sampling
//! while a fixed-size board of high-performing, low-complexity paths acts
//! as a pool of teachers. Each sampled subnetwork distills from the board
//! entry a small meta network scores as most complementary; the meta
//! network itself learns from the student's post-update validation loss.
//! The final architecture is read directly off the board.

pub mod board;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluator;
pub mod matcher;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod space;
pub mod supernet;
pub mod trainer;

pub use error::{Error, Result};
