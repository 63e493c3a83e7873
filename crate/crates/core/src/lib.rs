//! Barrier-function coordination of bicycle-model vehicles.
//!
//! A leader and a group of followers drive to individual destinations while
//! staying inside a shared connectivity disc and keeping a minimum separation,
//! even when some vehicles have stopped responding to control and move on
//! their own. See the README for the scenario format and CLI.

pub mod barrier;
pub mod cli;
pub mod control;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod presets;
pub mod sim;

pub use error::{Error, Result};
