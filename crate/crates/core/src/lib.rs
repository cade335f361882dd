//! Phase-space solver and verification harness for the linear
//! semiconductor Boltzmann equation on a slab with Maxwell walls.

pub mod boundary;
pub mod collision;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod kl;
pub mod linalg;
pub mod output;
pub mod poisson;
pub mod scenario;
pub mod transport;
pub mod uq;
pub mod velocity;
pub mod verify;

pub use boundary::{MaxwellBc, SlabMesh, Wall};
pub use collision::{assemble_kernel, CollisionKernel, CrossSectionSpec, SigmaFamily, ZCoupling};
pub use config::{load_config, RunConfig};
pub use diagnostics::{ConstantsLedger, EntropyReport};
pub use error::{Error, Result};
pub use kl::{CovarianceKernel, KlBasis};
pub use poisson::{PotentialFamily, PotentialSpec};
pub use transport::{InitialData, KineticState, Problem, Solver, SolverConfig};
pub use uq::{HierarchyRun, UqConfig};
pub use velocity::{build_grid, GridKind, VelocityGrid, VelocitySpace};
