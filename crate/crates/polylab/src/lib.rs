//! polylab: a simulation laboratory for directed polymers in random
//! environment.
//!
//! The crate computes polymer endpoint measures exactly by transfer-matrix
//! dynamic programming, measures epsilon-atom localization of the predictive
//! distribution, estimates quenched free energies and greedy path constants
//! by Monte Carlo over environment replicas, and numerically verifies the
//! constrained-simplex minimization lemmas the localization bounds rest on.
//!
//! Modules:
//! - [`env`]: environment laws, analytic metadata, counter-based field.
//! - [`dp`]: lattice kernels (measure recursion, max-plus recursion,
//!   truncated Hamiltonians, brute-force path oracle).
//! - [`atoms`]: epsilon-atom reports and Cesaro localization statistics.
//! - [`fenergy`]: free-energy / greedy-constant estimators, phase scans,
//!   martingale diagnostics, oriented percolation threshold estimation.
//! - [`simplex`]: Monte Carlo objectives and constrained minimization on the
//!   probability simplex.
//! - [`cli`]: experiment runner, file formats, verification suites.

pub mod atoms;
pub mod cli;
pub mod dp;
pub mod env;
pub mod fenergy;
pub mod lattice;
pub(crate) mod numeric;
pub mod simplex;

pub use lattice::Site;
