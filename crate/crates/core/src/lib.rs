//! Monte Carlo laboratory for random walks in random environment.
//!
//! Environments are never stored: the kernel at a site is a pure function of
//! the environment seed and the site, so walks sharing an environment can be
//! simulated independently and replayed from their seeds alone.

pub mod cli;
pub mod env;
pub mod error;
pub mod numeric;
pub mod paths;
pub mod prf;
pub mod regen;
pub mod stats;
pub mod walk;

pub use env::{CachePolicy, EnvironmentHandle, EnvironmentModel, Family, JumpSet, LatticePoint, ModelSpec, SiteKernel};
pub use error::{Error, Result};
pub use prf::SeedSchedule;
pub use regen::{ConfirmationPolicy, JointRegenRecord, RegenerationRecord, TailHandling};
pub use walk::{simulate_pair, simulate_walk, Trajectory, TrajectoryPair};
