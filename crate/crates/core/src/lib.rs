//! Active-RIS integrated sensing and communication: DoA Cramér-Rao bound minimization by
//! alternating a semidefinite transmit step with a majorization-minimization reflection step.

// Links the system OpenBLAS that backs the SDP solver's dense factorizations.
use openblas_src as _;

pub mod config;
pub mod conic;
pub mod crb;
pub mod driver;
pub mod error;
pub mod initializer;
pub mod linalg;
pub mod model;
pub mod precoder;
pub mod reflector;
pub mod scenario;
pub mod selftest;
pub mod sweep;

pub use conic::{ClarabelBackend, ConicBackend, ConicProgram, ConicSolution, ConicStatus};
pub use driver::{BcdOptions, DesignResult, DesignStatus, Variant};
pub use error::{Error, Result};
pub use model::{EchoModel, Precoder, ReflectVector};
pub use scenario::{ChannelSet, Scenario};
