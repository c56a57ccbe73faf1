//! Real-time unfolding of tubular surfaces from posed RGB-D frames.

pub mod centerline;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod frames;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod navigation;
pub mod replay;
pub mod session;
pub mod simulator;
pub mod unfolding;

pub use error::{Error, Result};
