//! Zero-dynamics attacks on second-order consensus networks and their
//! detection by strategic topology switching with a Luenberger observer.

pub mod error;
pub mod graph;
pub mod linalg;
pub mod observer;
pub mod scenario;
pub mod schedule;
pub mod sim;
pub mod zda;

pub use error::{Error, Result};
