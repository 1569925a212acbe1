use serde::Serialize;

use crate::error::{shape_err, Error, Result};
use crate::linalg::{self, Mat, ToleranceConfig};
use crate::model::{self, DatasetPair, NetworkShape, WeightStack};

/// Closed-form global minimum for a shape and dataset.
#[derive(Debug, Clone)]
pub struct GlobalMinimum {
    pub weights: WeightStack,
    /// `U_p̂ U_p̂ᵀ Y Xᵀ (X Xᵀ)⁻¹`.
    pub product: Mat,
    /// `½ (tr(Y Yᵀ) − Σ_{k ≤ p̂} Λ_{k,k})`.
    pub loss_star: f64,
    /// Loss evaluated directly at `weights`.
    pub loss_evaluated: f64,
}

/// Optimal loss `½ (tr(Y Yᵀ) − Σ_{k ≤ p̂} Λ_{k,k})` over all weights of `shape`.
///
/// Requires only that `X Xᵀ` is invertible.
pub fn optimal_loss(shape: &NetworkShape, data: &DatasetPair, cfg: &ToleranceConfig) -> Result<f64> {
    data.check_shape(shape)?;
    let spec = model::data_spectrum(data, cfg);
    let dec = spec.decomposition()?;
    let top: f64 = dec.eigvalues.iter().take(shape.p_hat()).sum();
    let tr = data.y().norm_squared();
    Ok((0.5 * (tr - top)).max(0.0))
}

pub fn global_minimum(shape: &NetworkShape, data: &DatasetPair, cfg: &ToleranceConfig) -> Result<GlobalMinimum> {
    data.check_shape(shape)?;
    let spec = model::data_spectrum(data, cfg);
    spec.flags.require()?;
    let dec = spec.decomposition()?;
    let u = dec.eigvectors.columns(0, shape.p_hat()).into_owned();
    let product = &u * u.transpose() * &dec.ls_map;
    let weights = factorize_product(&product, shape, cfg)?;
    let loss_evaluated = model::loss(&weights, data)?;
    Ok(GlobalMinimum {
        weights,
        product,
        loss_star: optimal_loss(shape, data, cfg)?,
        loss_evaluated,
    })
}

/// Realizes a `d_y × d_x` matrix as `W_{H+1} ⋯ W_1`.
///
/// With the thin SVD `target = U S Vᵀ` of rank `ρ ≤ p`, every layer carries
/// `S^{1/(H+1)}` on its leading `ρ × ρ` block: `W_1 = S^{1/(H+1)} Vᵀ`,
/// `W_{H+1} = U S^{1/(H+1)}`, interior layers diagonal. Entries beyond the
/// first `ρ` rows/columns are zero.
pub fn factorize_product(target: &Mat, shape: &NetworkShape, cfg: &ToleranceConfig) -> Result<WeightStack> {
    if target.shape() != (shape.dy(), shape.dx()) {
        return Err(shape_err(
            "factorize_product",
            format!("{}x{}", shape.dy(), shape.dx()),
            format!("{}x{}", target.nrows(), target.ncols()),
        ));
    }
    linalg::ensure_finite(target, "factorize_product")?;
    let rank = linalg::rank_tol(target, cfg);
    if rank > shape.p() {
        return Err(Error::RankExceedsWidth { rank, p: shape.p() });
    }
    let mut w = WeightStack::zeros(shape);
    if rank == 0 {
        return Ok(w);
    }
    let svd = target.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let depth = shape.num_layers() as f64;
    let roots: Vec<f64> = order[..rank].iter().map(|&i| svd.singular_values[i].powf(1.0 / depth)).collect();

    let top = shape.num_layers();
    let mut first = Mat::zeros(shape.width(1), shape.dx());
    let mut last = Mat::zeros(shape.dy(), shape.width(top - 1));
    for (slot, (&i, &root)) in order.iter().zip(&roots).enumerate() {
        first.set_row(slot, &(vt.row(i) * root));
        last.set_column(slot, &(u.column(i) * root));
    }
    w.set_layer(1, first)?;
    w.set_layer(top, last)?;
    for k in 2..top {
        let (r, c) = shape.layer_shape(k);
        let mut mid = Mat::zeros(r, c);
        for (slot, &root) in roots.iter().enumerate() {
            mid[(slot, slot)] = root;
        }
        w.set_layer(k, mid)?;
    }
    Ok(w)
}

/// Both sides of the critical-point identity
/// `W_{H+1} ⋯ W_1 = C (CᵀC)⁻ Cᵀ Y Xᵀ (X Xᵀ)⁻¹` with `C = W_{H+1} ⋯ W_2`.
#[derive(Debug, Clone, Serialize)]
pub struct ProductRepresentation {
    #[serde(skip)]
    pub predicted: Mat,
    #[serde(skip)]
    pub actual: Mat,
    /// Frobenius distance between the two sides.
    pub residual: f64,
    /// `max(1, ‖Y Xᵀ (X Xᵀ)⁻¹‖_F)`.
    pub scale: f64,
}

pub fn critical_product_representation(
    w: &WeightStack,
    data: &DatasetPair,
    cfg: &ToleranceConfig,
) -> Result<ProductRepresentation> {
    data.check_shape(w.shape())?;
    let ls = model::least_squares_map(data, cfg).ok_or(Error::SingularGram)?;
    let c = w.top_product();
    let ctc_pinv = linalg::pseudoinverse_with(&(c.transpose() * &c), cfg.rank_rel_tol);
    let predicted = &c * ctc_pinv * c.transpose() * &ls;
    let actual = w.end_to_end();
    Ok(ProductRepresentation {
        residual: (&predicted - &actual).norm(),
        scale: ls.norm().max(1.0),
        predicted,
        actual,
    })
}
