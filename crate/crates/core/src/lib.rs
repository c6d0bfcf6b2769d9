//! District heating network models and combined heat and power dispatch.
//!
//! Pipelines carry heat with a transport delay tracked through water-mass
//! windows; buildings store heat in walls and room air. The dispatch problem
//! couples both with a power system and is solved by generalized Benders
//! decomposition over the pipe mass flows.

pub mod building;
pub mod dispatch;
pub mod error;
pub mod export;
pub mod hydraulics;
pub mod model;
pub mod pipe;
pub mod simulation;

pub use error::{Error, Result};
pub use model::{load_instance, parse_instance, DispatchInstance};
