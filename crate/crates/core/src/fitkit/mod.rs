//! Bounded multi-peak least-squares fitting.

pub mod fit;
pub mod lm;
pub mod model;
pub mod splitting;
pub mod templates;

pub use fit::{fit_peaks, FitOptions, FitResult, FitStatus, FittedParam, FittedPeak};
pub use model::{Link, Param, PeakModelSpec, PeakParam, PeakSpec};
pub use splitting::{splitting_report, Splitting, SplittingReport};
pub use templates::{template, template_by_name, TemplateName, TemplateSeed};
