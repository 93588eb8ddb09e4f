pub mod dynwbc;
pub mod error;
pub mod geometry;
pub mod model;
pub mod kinwbc;
pub mod qpsolve;
pub mod safety;
pub mod scenario;
pub mod sim;
pub mod trajectory;

pub use error::{Error, Result};
