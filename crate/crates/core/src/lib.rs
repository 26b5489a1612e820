//! Classical and robust (MCD-based) discriminant analysis with
//! outlier-aware prediction and per-case diagnostics.

pub mod data;
pub mod estimators;
pub mod special;
pub mod discriminant;
pub mod diagnostics;
pub mod viz;
