use serde::Serialize;

use crate::derivatives::{full_hessian, gradient};
use crate::error::Result;
use crate::linalg::{self, ToleranceConfig};
use crate::model::{self, AssumptionFlags, DatasetPair, WeightStack};

use super::column_projector;
use super::optimum::optimal_loss;

/// Relative tolerance for the equalities and inclusions in the
/// necessary-condition report.
const CONDITION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    GlobalMin,
    StrictSaddle,
    DegenerateSaddle,
    NonCritical,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::GlobalMin => "GLOBAL_MIN",
            Label::StrictSaddle => "STRICT_SADDLE",
            Label::DegenerateSaddle => "DEGENERATE_SADDLE",
            Label::NonCritical => "NON_CRITICAL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Diagnostic {
    /// Some data hypothesis fails; labels are computed but not backed by theory.
    AssumptionsUnverified { violations: Vec<String> },
    /// Critical, positive semidefinite Hessian, loss above the optimum and
    /// `rank(W_H ⋯ W_2) = p`: a non-global local minimum candidate.
    TheoremViolation { loss_gap: f64, interior_rank: usize, p: usize },
}

/// Conditions attached to layer `k ∈ 2..=H+1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerConditions {
    pub k: usize,
    /// `R((W_{k−1} ⋯ W_2)ᵀ) ⊆ R(CᵀC)`.
    pub range_inclusion_holds: bool,
    pub range_inclusion_residual: f64,
    /// `X r W_{H+1} ⋯ W_{k+1} = 0`.
    pub xr_annihilation_holds: bool,
    pub xr_annihilation_norm: f64,
    /// `rank(W_{H+1} ⋯ W_k) ≥ rank(W_{k−1} ⋯ W_2)`.
    pub rank_inequality_holds: bool,
    pub rank_upper: usize,
    pub rank_lower: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NecessaryConditionsReport {
    pub layers: Vec<LayerConditions>,
    pub p_bar: usize,
    /// `C (CᵀC)⁻ Cᵀ = U_p̄ U_p̄ᵀ`; false when `X Xᵀ` is singular.
    pub projector_is_top: bool,
    /// `None` when `X Xᵀ` is singular.
    pub projector_residual: Option<f64>,
    pub xr_zero: bool,
    pub xr_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalPointReport {
    pub grad_norm: f64,
    pub loss_value: f64,
    pub global_min_loss: f64,
    pub hessian_min_eig: f64,
    pub hessian_max_eig: f64,
    pub p_bar: usize,
    pub label: Label,
    pub assumption_flags: AssumptionFlags,
    /// All data hypotheses hold.
    pub verified: bool,
    pub margin: f64,
    /// Half-width of the zero band for Hessian eigenvalues.
    pub eig_band: f64,
    /// `rank(W_H ⋯ W_2)`.
    pub interior_rank: usize,
    pub p: usize,
    pub condition_report: NecessaryConditionsReport,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn necessary_conditions_report(
    w: &WeightStack,
    data: &DatasetPair,
    cfg: &ToleranceConfig,
) -> Result<NecessaryConditionsReport> {
    data.check_shape(w.shape())?;
    let shape = w.shape();
    let top = shape.num_layers();
    let c = w.top_product();
    let p_bar = linalg::rank_tol(&c, cfg);
    let ctc = c.transpose() * &c;
    let proj_ctc = column_projector(&ctc, cfg.rank_rel_tol);
    let x = data.x();
    let r = model::error_matrix(w, data)?;
    let xr = x * &r;
    let xr_scale = (x.norm() * r.norm()).max(1.0);

    let mut layers = Vec::with_capacity(top - 1);
    for k in 2..=top {
        let m = w.product(k - 1, 2);
        let mt = m.transpose();
        let range_residual = (&mt - &proj_ctc * &mt).norm();
        let a = w.product(top, k + 1);
        let ann = (&xr * &a).norm();
        let rank_upper = linalg::rank_tol(&w.product(top, k), cfg);
        let rank_lower = linalg::rank_tol(&m, cfg);
        layers.push(LayerConditions {
            k,
            range_inclusion_holds: range_residual <= CONDITION_TOL * m.norm().max(1.0),
            range_inclusion_residual: range_residual,
            xr_annihilation_holds: ann <= CONDITION_TOL * xr_scale * a.norm().max(1.0),
            xr_annihilation_norm: ann,
            rank_inequality_holds: rank_upper >= rank_lower,
            rank_upper,
            rank_lower,
        });
    }

    let spectrum = model::data_spectrum(data, cfg);
    let projector_residual = spectrum.decomposition.as_ref().map(|dec| {
        let pc = column_projector(&c, cfg.rank_rel_tol);
        let u = dec.eigvectors.columns(0, p_bar);
        (pc - u * u.transpose()).norm()
    });
    let xr_norm = xr.norm();
    Ok(NecessaryConditionsReport {
        layers,
        p_bar,
        projector_is_top: projector_residual.is_some_and(|v| v <= CONDITION_TOL),
        projector_residual,
        xr_zero: xr_norm <= CONDITION_TOL * xr_scale,
        xr_norm,
    })
}

/// Classification margin above the optimal loss.
pub(crate) fn loss_margin(loss_star: f64) -> f64 {
    1e-6_f64.max(1e-6 * loss_star)
}

pub fn classify_point(w: &WeightStack, data: &DatasetPair, cfg: &ToleranceConfig) -> Result<CriticalPointReport> {
    cfg.validate()?;
    data.check_shape(w.shape())?;
    let shape = w.shape();
    let grad_norm = gradient(w, data)?.stacked_norm;
    let loss_value = model::loss(w, data)?;
    let global_min_loss = optimal_loss(shape, data, cfg)?;
    let hessian = full_hessian(w, data, cfg)?;
    let eigs = hessian.eigenvalues();
    let hessian_max_eig = eigs.first().copied().unwrap_or(0.0);
    let hessian_min_eig = eigs.last().copied().unwrap_or(0.0);
    let condition_report = necessary_conditions_report(w, data, cfg)?;
    let flags = model::check_assumptions(data, cfg);

    let margin = loss_margin(global_min_loss);
    let eig_band = cfg.eig_zero_tol * hessian_max_eig.abs().max(1.0);
    let critical = grad_norm <= cfg.grad_crit_tol * (1.0 + loss_value);
    let above_optimum = loss_value > global_min_loss + margin;
    let psd = hessian_min_eig >= -eig_band;
    let label = if !critical {
        Label::NonCritical
    } else if !above_optimum {
        Label::GlobalMin
    } else if !psd {
        Label::StrictSaddle
    } else {
        Label::DegenerateSaddle
    };

    let top = shape.num_layers();
    let interior_rank = linalg::rank_tol(&w.product(top - 1, 2), cfg);
    let mut diagnostics = Vec::new();
    if !flags.all_hold() {
        diagnostics.push(Diagnostic::AssumptionsUnverified {
            violations: flags.violations().into_iter().map(String::from).collect(),
        });
    }
    if critical && psd && above_optimum && interior_rank == shape.p() {
        diagnostics.push(Diagnostic::TheoremViolation {
            loss_gap: loss_value - global_min_loss,
            interior_rank,
            p: shape.p(),
        });
    }

    Ok(CriticalPointReport {
        grad_norm,
        loss_value,
        global_min_loss,
        hessian_min_eig,
        hessian_max_eig,
        p_bar: condition_report.p_bar,
        label,
        assumption_flags: flags,
        verified: flags.all_hold(),
        margin,
        eig_band,
        interior_rank,
        p: shape.p(),
        condition_report,
        diagnostics,
    })
}
