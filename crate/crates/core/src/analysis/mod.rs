//! Post-hoc analyses: agreement between expert predictions and 2-D
//! projections of learned representations, with SVG renderings.

mod agreement;
mod pca;
pub mod svg;

pub use agreement::{
    krippendorff_alpha, mean_off_diagonal, pairwise_agreement, pairwise_from_predictions,
    AgreementMatrix, PredictionMatrix,
};
pub use pca::{jacobi_eigen, pca_project, Eigen, ProjectionResult, Split};
