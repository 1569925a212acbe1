use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, ToleranceConfig};
use crate::model::{self, DatasetPair, WeightStack};

use super::column_projector;

/// Random null-space draws tried after the deterministic construction.
const RANDOM_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMethod {
    /// Null directions outside `col(W_k ⋯ W_1)` paired with rows of
    /// `W_{k−1} ⋯ W_1` outside its row space.
    RowSelection,
    /// Seeded Gaussian combination of null-space basis vectors.
    RandomNullCombination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PerturbationStatus {
    RankIncreased { before: usize, after: usize },
    /// No draw raised the rank; the last loss-preserving perturbation is
    /// still applied.
    RankSaturated { rank: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationOutcome {
    #[serde(skip)]
    pub weights: WeightStack,
    pub layer: usize,
    pub status: PerturbationStatus,
    pub method: PerturbationMethod,
    /// Candidates evaluated, including the deterministic one.
    pub attempts: usize,
    pub delta_norm: f64,
    pub null_dim: usize,
    pub loss_before: f64,
    pub loss_after: f64,
}

fn scaled(delta: Mat, epsilon: f64) -> Option<Mat> {
    let n = delta.norm();
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    // Shrink slightly so rounding cannot push the norm past epsilon.
    Some(delta * (epsilon * (1.0 - 4.0 * f64::EPSILON) / n))
}

/// Perturbs layer `k` by `Δ` with `W_{H+1} ⋯ W_{k+1} Δ = 0`, `‖Δ‖_F ≤ ε`,
/// leaving the end-to-end product unchanged while trying to raise
/// `rank(W_k ⋯ W_1)`.
pub fn loss_preserving_rank_perturbation(
    w: &WeightStack,
    data: &DatasetPair,
    k: usize,
    epsilon: f64,
    seed: u64,
    cfg: &ToleranceConfig,
) -> Result<PerturbationOutcome> {
    let shape = w.shape();
    shape.check_layer(k)?;
    data.check_shape(shape)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive and finite, got {epsilon}")));
    }
    let top = shape.num_layers();
    let upstream = w.product(top, k + 1);
    let null = linalg::null_space(&upstream, cfg.rank_rel_tol);
    if null.ncols() == 0 {
        return Err(Error::NoNullSpace { layer: k });
    }
    let below = w.product(k - 1, 1);
    let current = w.layer(k) * &below;
    let rank_before = linalg::rank_tol(&current, cfg);
    let loss_before = model::loss(w, data)?;

    let rank_after = |delta: &Mat| linalg::rank_tol(&((w.layer(k) + delta) * &below), cfg);
    let mut candidates: Vec<(Mat, PerturbationMethod)> = Vec::new();

    // Deterministic candidate: D Eᵀ B† with D ⊆ null(A_k) outside col(T) and
    // E ⊆ row(B) outside row(T).
    let outside_col = &null - column_projector(&current, cfg.rank_rel_tol) * &null;
    let coeffs = linalg::range_basis(&outside_col.transpose(), cfg.rank_rel_tol);
    let rows_b = linalg::range_basis(&below.transpose(), cfg.rank_rel_tol);
    let rows_new = &rows_b - column_projector(&current.transpose(), cfg.rank_rel_tol) * &rows_b;
    let rows_new = linalg::range_basis(&rows_new, cfg.rank_rel_tol);
    let s = coeffs.ncols().min(rows_new.ncols());
    if s > 0 {
        let d = &null * coeffs.columns(0, s);
        let delta = d * rows_new.columns(0, s).transpose() * linalg::pseudoinverse_with(&below, cfg.rank_rel_tol);
        if let Some(delta) = scaled(delta, epsilon) {
            candidates.push((delta, PerturbationMethod::RowSelection));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Option<(Mat, PerturbationMethod, usize)> = None;
    let mut attempts = 0;
    let mut last = None;
    let mut random_left = RANDOM_ATTEMPTS;
    loop {
        let (delta, method) = if let Some(c) = candidates.pop() {
            c
        } else if random_left > 0 {
            random_left -= 1;
            let gamma = Mat::from_fn(null.ncols(), below.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
            match scaled(&null * gamma, epsilon) {
                Some(d) => (d, PerturbationMethod::RandomNullCombination),
                None => continue,
            }
        } else {
            break;
        };
        attempts += 1;
        let after = rank_after(&delta);
        if after > rank_before {
            chosen = Some((delta, method, after));
            break;
        }
        last = Some((delta, method));
    }

    let (delta, method, status) = match chosen {
        Some((d, m, after)) => (d, m, PerturbationStatus::RankIncreased { before: rank_before, after }),
        None => {
            let (d, m) = last.expect("at least one random draw is nonzero");
            (d, m, PerturbationStatus::RankSaturated { rank: rank_before })
        }
    };
    let mut out = w.clone();
    out.set_layer(k, w.layer(k) + &delta)?;
    let loss_after = model::loss(&out, data)?;
    Ok(PerturbationOutcome {
        weights: out,
        layer: k,
        status,
        method,
        attempts,
        delta_norm: delta.norm(),
        null_dim: null.ncols(),
        loss_before,
        loss_after,
    })
}
