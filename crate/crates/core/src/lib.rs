//! Causal discovery on purely observational data.
//!
//! The pipeline turns a single observational dataset into several
//! "environments" per covariate by fitting a one-feature decision tree against
//! the target and treating each leaf as an environment. Invariant causal
//! prediction then searches covariate subsets whose regression residuals look
//! the same in every environment:
//!
//! * [`sem`] simulates linear structural equation models and exposes the
//!   built-in benchmark models with their ground-truth graphs.
//! * [`stats`] holds the two-sample tests and p-value corrections.
//! * [`envgen`] fits the environment trees and checks for distribution shift.
//! * [`regress`] is least squares with an intercept.
//! * [`icp`] runs the two discovery variants (full power set, and capped
//!   subsets with voting).
//! * [`eval`] rebuilds whole graphs over repeated simulations and scores them.
//! * [`io`] reads and writes datasets and models, and exports reports and graphs.

pub mod envgen;
pub mod error;
pub mod eval;
pub mod icp;
pub mod io;
pub mod regress;
pub mod sem;
pub mod stats;

pub use envgen::{EnvironmentPartition, TreeMode, TreeModel};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use icp::{DiscoveryResult, IcpParams, Method, SubsetTestResult};
pub use io::GraphDocument;
pub use regress::OlsFit;
pub use sem::{CausalGraph, Dataset, Equation, NoiseSpec, SemSpec, VariableKind};
pub use stats::{PValue, TestReport};
