//! Loss-surface geometry of deep linear networks.
//!
//! The crate computes exact gradients and Kronecker-structured Hessians of the
//! squared loss `½‖W_{H+1}⋯W_1 X − Y‖²_F`, constructs global minima and the
//! characteristic saddle points of the landscape, classifies critical points
//! by their Hessian spectrum, and checks the expectation reduction of a
//! stochastic-ReLU path model to the linear network.

pub mod derivatives;
pub mod error;
pub mod landscape;
pub mod linalg;
pub mod model;
pub mod nonlinear;
pub mod text;

pub use derivatives::{
    fd_gradient, fd_hessian, full_hessian, gradient, hessian_diag_block, hessian_offdiag_block_k1,
    BlockProvenance, BlockRange, GradientBlocks, HessianMatrix, Provenance,
};
pub use error::{Error, Result};
pub use landscape::{
    classify_point, construct_bad_saddle, construct_indefinite_point, construct_index_set_critical_point,
    critical_product_representation, factorize_product, global_minimum, loss_preserving_rank_perturbation,
    necessary_conditions_report, train_gd, CriticalPointReport, GdConfig, GdOutcome, GdStatus, GlobalMinimum, Label,
    NecessaryConditionsReport, PerturbationOutcome,
};
pub use linalg::{kron, pseudoinverse, rank_tol, sym_eig, Mat, ToleranceConfig};
pub use model::{
    check_assumptions, data_spectrum, error_matrix, forward, loss, AssumptionFlags, DataSpectrum, DatasetPair,
    NetworkShape, WeightStack,
};
pub use nonlinear::{enumerate_paths, expected_loss, mc_expectation, relu_path_output_sampled, PathModel};

