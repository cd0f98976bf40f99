pub mod corrector;
pub mod ensemble;
pub mod error;
pub mod fluxcor;
pub mod lattice;
pub mod solver;
pub mod stats;
pub mod twoscale;

pub use error::{Error, Result};
