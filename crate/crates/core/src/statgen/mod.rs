//! Synthetic data, Lasso warm starts and design diagnostics.

pub mod design;
pub mod lasso;
pub mod synthetic;

pub use design::{beta_min_check, coherence, restricted_eig, BetaMinReport, DesignMeasure, SupportSearch};
pub use lasso::{default_lambda, lasso_fit, warm_start, SupportSource, WarmStartConfig};
pub use synthetic::{gen_synthetic, suggest_prior, Design, Response, SyntheticSpec};
