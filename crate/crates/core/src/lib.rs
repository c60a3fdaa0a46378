//! Gaussian copula imputation for incomplete tables of mixed continuous,
//! ordinal and truncated variables.
//!
//! A typical run fits a [`CopulaModel`] and fills the missing cells:
//!
//! ```
//! use copula_impute::{fit_standard, imputer::impute_single, DataTable, FitConfig};
//!
//! let table = DataTable::from_rows(vec![
//!     vec![Some(1.0), Some(2.0)],
//!     vec![Some(2.0), None],
//!     vec![Some(3.0), Some(5.0)],
//!     vec![None, Some(4.0)],
//! ])?;
//! let model = fit_standard(&table, &FitConfig::default())?;
//! let out = impute_single(&model, &table)?;
//! assert_eq!(out.imputed.n_observed(), 8);
//! # Ok::<(), copula_impute::Error>(())
//! ```

pub mod data;
pub mod em;
pub mod error;
pub mod evaluation;
pub mod imputer;
pub mod latent;
pub mod linalg;
pub mod lowrank;
pub mod marginal;
pub mod normal;
pub mod streaming;

pub use data::{detect_variable_types, DataTable, TypeTag, VariableType};
pub use em::{fit, fit_minibatch_offline, fit_standard, CopulaModel, FitConfig, StepSize, TrainingMode};
pub use error::{Error, Result};
pub use imputer::{CiKind, ImputationResult};
pub use lowrank::{fit_lrgc, LowRankParams};
pub use marginal::{fit_marginal, LatentInterval, Marginal};
pub use streaming::{init_stream, StreamConfig, StreamState};
