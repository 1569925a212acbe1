use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Error, Result};
use crate::linalg::{self, Mat, ToleranceConfig};
use crate::model::{self, DatasetPair, NetworkShape, WeightStack};

use super::optimum::factorize_product;

/// A degenerate ("bad") saddle: `W_1 = ⋯ = W_H = 0` with a free top layer.
///
/// The gradient vanishes for any `W_{H+1}`. The Hessian vanishes when the
/// end-to-end product has no second-order term, which needs three zero
/// factors: for `H ≥ 3` any top layer works (default: seeded standard
/// normal), for `H = 2` the top layer must satisfy `X Yᵀ W_3 = 0` (default:
/// zero) because `δW_3 δW_2 δW_1` is not the only route: `W_3 δW_2 δW_1` is
/// second order.
pub fn construct_bad_saddle(
    shape: &NetworkShape,
    data: &DatasetPair,
    top_layer: Option<Mat>,
    seed: u64,
    cfg: &ToleranceConfig,
) -> Result<WeightStack> {
    data.check_shape(shape)?;
    let h = shape.hidden_layers();
    if h < 2 {
        return Err(Error::InvalidParameter(
            "bad saddles need at least two hidden layers; with one hidden layer every saddle has a negative Hessian eigenvalue".into(),
        ));
    }
    if linalg::rank_tol(data.y(), cfg) == 0 {
        return Err(Error::InvalidParameter("Y is zero, so W_1 = ... = W_H = 0 is a global minimum".into()));
    }
    let top = shape.num_layers();
    let (r, c) = shape.layer_shape(top);
    let top_layer = match top_layer {
        Some(t) => {
            if t.shape() != (r, c) {
                return Err(shape_err("top layer", format!("{r}x{c}"), format!("{}x{}", t.nrows(), t.ncols())));
            }
            t
        }
        None if h >= 3 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Mat::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
        }
        None => Mat::zeros(r, c),
    };
    if h == 2 {
        let x = data.x();
        let cross = x * data.y().transpose() * &top_layer;
        let scale = (x.norm() * data.y().norm() * top_layer.norm()).max(1.0);
        if cross.norm() > 1e-12 * scale {
            return Err(Error::InvalidParameter(
                "with two hidden layers the top layer must satisfy X Y^T W_3 = 0 for the Hessian to vanish".into(),
            ));
        }
    }
    let mut w = WeightStack::zeros(shape);
    w.set_layer(top, top_layer)?;
    Ok(w)
}

fn rectangular_identity(r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// Critical point with `W_{H+1} = W_1 = 0` and interior layers set to
/// rectangular identities, so the interior product has rank `≥ 1`. For
/// `H = 1` the interior product is `I_{d_1}`.
pub fn construct_indefinite_point(
    shape: &NetworkShape,
    data: &DatasetPair,
    cfg: &ToleranceConfig,
) -> Result<WeightStack> {
    data.check_shape(shape)?;
    let xyt = data.x() * data.y().transpose();
    if linalg::rank_tol(&xyt, cfg) == 0 {
        return Err(Error::Assumption("X Y^T = 0; the construction needs rank(X Y^T) >= 1".into()));
    }
    let mut w = WeightStack::zeros(shape);
    for k in 2..shape.num_layers() {
        let (r, c) = shape.layer_shape(k);
        w.set_layer(k, rectangular_identity(r, c))?;
    }
    Ok(w)
}

/// Critical point realizing `U_I U_Iᵀ Y Xᵀ (X Xᵀ)⁻¹` for a 1-based ascending
/// index set `I` of eigenvectors of `Σ`.
pub fn construct_index_set_critical_point(
    data: &DatasetPair,
    shape: &NetworkShape,
    index_set: &[usize],
    cfg: &ToleranceConfig,
) -> Result<WeightStack> {
    data.check_shape(shape)?;
    if index_set.len() > shape.p_hat() {
        return Err(Error::IndexSetTooLarge { len: index_set.len(), budget: shape.p_hat() });
    }
    let dy = shape.dy();
    let mut prev = 0;
    for &i in index_set {
        if i == 0 || i > dy || i <= prev {
            return Err(Error::InvalidIndex { index: i, dy });
        }
        prev = i;
    }
    let spec = model::data_spectrum(data, cfg);
    spec.flags.require()?;
    let dec = spec.decomposition()?;
    let mut proj = Mat::zeros(dy, dy);
    for &i in index_set {
        let u = dec.eigvectors.column(i - 1);
        proj += u * u.transpose();
    }
    factorize_product(&(proj * &dec.ls_map), shape, cfg)
}
