pub mod error;
pub mod autodiff;
pub mod checkpoint;
pub mod diff;
pub mod embedding;
pub mod features;
pub mod frames;
pub mod layout;
pub mod params;
pub mod report;
pub mod run;
pub mod sampler;
pub mod scf;
pub mod system;
pub mod train;
pub mod wavefunction;

pub use error::{Error, Result};
