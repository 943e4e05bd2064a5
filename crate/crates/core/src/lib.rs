//! Monte Carlo diffuse reflectance simulation for a homogeneous turbid slab,
//! with Henyey-Greenstein and tabulated phase functions, a Gaussian-mixture
//! phase function representation, dataset generation and evaluation tools.
//!
//! Module map:
//!
//! * [`phase`]: analytic and tabulated phase functions, sampling, anisotropy.
//! * [`gmm`]: Gaussian-mixture phase functions on the shared angular grid,
//!   decoding of regressor outputs and a direct least-squares fit.
//! * [`transport`]: the photon-packet simulator and the reflectance image.
//! * [`dataset`]: tissue properties, dataset definitions and generation.
//! * [`analysis`]: profiles, dissimilarity matrices, rank-sum tests,
//!   rendering and metric aggregation.
//! * [`io`]: on-disk formats shared with external tools.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod gmm;
pub mod io;
pub mod phase;
pub mod quadrature;
pub mod transport;

pub use error::{Error, Result};
pub use gmm::{DiscretePdf, GmmParams, ThetaGrid};
pub use phase::{HgPhase, Phase, PhaseFunction, TabulatedPhase};
pub use transport::{GridSpec, OpticalMedium, ReflectanceImage, SimulationConfig, Tallies};
