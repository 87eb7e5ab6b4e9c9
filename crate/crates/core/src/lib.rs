//! Robust fitting of nonlinear models in the presence of outliers.
//!
//! The objective is the sum of the `p` smallest squared residuals. It is
//! minimized by a Levenberg-Marquardt method ([`solver`]), and the number of
//! trusted points `p` is estimated by running the solver over a range of `p`
//! with multistart and voting among the resulting solutions ([`voting`]).
//!
//! ```
//! use raff_core::{raff_fit, BuiltinModel, Dataset, VotingParams};
//!
//! let mut pairs: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
//! pairs[4].1 = 100.0;
//! let data = Dataset::from_pairs(&pairs).unwrap();
//! let params = VotingParams { n_starts: 5, ..Default::default() };
//! let report = raff_fit(&data, &BuiltinModel::Linear, &params).unwrap();
//! assert_eq!(report.outlier_indices, vec![4]);
//! ```

pub mod datagen;
pub mod error;
pub mod linalg;
pub mod lovo;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod solver;
pub mod voting;

pub use datagen::{OutlierScale, Protocol};
pub use error::{Error, EvalError, Result};
pub use lovo::{active_jacobian, lovo_gradient, select_active, sp_value, ActiveSet, LovoProblem};
pub use model::{builtin_model, BuiltinModel, Dataset, FnModel, Model, Observation};
pub use parallel::Execution;
pub use solver::{solve, solve_traced, Acceptance, SolverOutcome, SolverParams, Status, TraceEntry};
pub use voting::{raff_fit, FitReport, VotingParams};
