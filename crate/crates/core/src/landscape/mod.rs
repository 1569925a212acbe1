//! Critical points of the deep linear loss: closed-form optima, constructive
//! saddles, Hessian-based classification, loss-preserving rank perturbations
//! and a plain gradient-descent harness.

mod classify;
mod construct;
mod optimum;
mod perturb;
mod train;

pub use classify::{
    classify_point, necessary_conditions_report, CriticalPointReport, Diagnostic, Label, LayerConditions,
    NecessaryConditionsReport,
};
pub use construct::{construct_bad_saddle, construct_indefinite_point, construct_index_set_critical_point};
pub use optimum::{
    critical_product_representation, factorize_product, global_minimum, optimal_loss, GlobalMinimum,
    ProductRepresentation,
};
pub use perturb::{loss_preserving_rank_perturbation, PerturbationMethod, PerturbationOutcome, PerturbationStatus};
pub use train::{train_gd, GdConfig, GdOutcome, GdRecord, GdStatus};

use crate::linalg::{self, Mat};

/// Orthogonal projector onto the column space of `m`.
pub(crate) fn column_projector(m: &Mat, rel_tol: f64) -> Mat {
    let q = linalg::range_basis(m, rel_tol);
    &q * q.transpose()
}
