//! Exact gradient and block Hessian of the squared loss, written with
//! Kronecker products, plus central finite-difference oracles.
//!
//! Parameters are stacked as `(vec(W_{H+1}ᵀ), …, vec(W_1ᵀ))`. Because
//! `vec(W_kᵀ)` is the row-major flattening of `W_k`, entry `W_k[i, j]` sits at
//! offset `i * d_{k-1} + j` inside its block.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, kron, Mat, ToleranceConfig, DEFAULT_ELEMENT_BUDGET};
use crate::model::{self, DatasetPair, NetworkShape, WeightStack};

/// Gradient of the loss, one block per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBlocks {
    /// `blocks[k - 1]` has the shape of `W_k`.
    pub blocks: Vec<Mat>,
    /// Euclidean norm of the stacked gradient.
    pub stacked_norm: f64,
}

impl GradientBlocks {
    fn from_blocks(blocks: Vec<Mat>) -> Self {
        let stacked_norm = blocks.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt();
        Self { blocks, stacked_norm }
    }

    pub fn block(&self, k: usize) -> &Mat {
        &self.blocks[k - 1]
    }

    /// Stacked in the parameter order `(W_{H+1}, …, W_1)`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for b in self.blocks.iter().rev() {
            for r in 0..b.nrows() {
                out.extend(b.row(r).iter());
            }
        }
        out
    }
}

/// How a Hessian block was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytic,
    FiniteDifference,
}

/// Rows/columns `[start, start + len)` hold the parameters of `W_layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRange {
    pub layer: usize,
    pub start: usize,
    pub len: usize,
}

/// Origin of block `(row_layer, col_layer)`, i.e. the derivative of the
/// `W_row_layer` gradient with respect to `W_col_layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockProvenance {
    pub row_layer: usize,
    pub col_layer: usize,
    pub source: Provenance,
}

#[derive(Debug, Clone)]
pub struct HessianMatrix {
    pub dim: usize,
    /// Symmetrized matrix.
    pub matrix: Mat,
    /// Ordered `W_{H+1}, …, W_1`.
    pub block_index: Vec<BlockRange>,
    pub provenance: Vec<BlockProvenance>,
    /// `‖H − Hᵀ‖_F / ‖H‖_F` measured before symmetrization (0 for `H = 0`).
    pub asymmetry: f64,
    /// Largest block-relative discrepancy between analytic blocks and their
    /// finite-difference counterparts (0 when no analytic block exists).
    pub analytic_fd_discrepancy: f64,
}

/// JSON sidecar written next to an exported Hessian.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HessianSidecar {
    pub dim: usize,
    pub block_index: Vec<BlockRange>,
    pub provenance: Vec<BlockProvenance>,
    pub asymmetry: f64,
    pub analytic_fd_discrepancy: f64,
}

impl HessianMatrix {
    pub fn range(&self, layer: usize) -> BlockRange {
        *self.block_index.iter().find(|b| b.layer == layer).expect("layer in block index")
    }

    /// Block `(row_layer, col_layer)` of the symmetrized matrix.
    pub fn block(&self, row_layer: usize, col_layer: usize) -> Mat {
        let r = self.range(row_layer);
        let c = self.range(col_layer);
        self.matrix.view((r.start, c.start), (r.len, c.len)).into_owned()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::sym_eig(&self.matrix).map(|e| e.values).unwrap_or_default()
    }

    pub fn sidecar(&self) -> HessianSidecar {
        HessianSidecar {
            dim: self.dim,
            block_index: self.block_index.clone(),
            provenance: self.provenance.clone(),
            asymmetry: self.asymmetry,
            analytic_fd_discrepancy: self.analytic_fd_discrepancy,
        }
    }
}

pub fn block_layout(shape: &NetworkShape) -> Vec<BlockRange> {
    let mut start = 0;
    (1..=shape.num_layers())
        .rev()
        .map(|layer| {
            let (r, c) = shape.layer_shape(layer);
            let b = BlockRange { layer, start, len: r * c };
            start += r * c;
            b
        })
        .collect()
}

fn check(w: &WeightStack, data: &DatasetPair) -> Result<()> {
    data.check_shape(w.shape())
}

/// `A_k = W_{H+1} ⋯ W_{k+1}` (identity for `k = H + 1`).
fn upstream(w: &WeightStack, k: usize) -> Mat {
    w.product(w.shape().num_layers(), k + 1)
}

/// `B_k = W_{k-1} ⋯ W_1 X` (just `X` for `k = 1`).
fn downstream(w: &WeightStack, x: &Mat, k: usize) -> Mat {
    w.product(k - 1, 1) * x
}

fn unvec_rows(v: &[f64], rows: usize, cols: usize) -> Mat {
    Mat::from_row_slice(rows, cols, v)
}

/// Analytic gradient: block `k` is the reshape of
/// `(A_k ⊗ B_kᵀ)ᵀ vec(r)` with `A_k = W_{H+1}⋯W_{k+1}`, `B_k = W_{k-1}⋯W_1 X`.
pub fn gradient(w: &WeightStack, data: &DatasetPair) -> Result<GradientBlocks> {
    check(w, data)?;
    let r = model::error_matrix(w, data)?;
    // nalgebra storage is column-major, so the slice is vec(r).
    let vec_r = nalgebra::DVector::from_column_slice(r.as_slice());
    let shape = w.shape();
    let blocks = (1..=shape.num_layers())
        .map(|k| {
            let a = upstream(w, k);
            let b = downstream(w, data.x(), k);
            let kr = kron(&a, &b.transpose())?;
            let g = kr.transpose() * &vec_r;
            let (rows, cols) = shape.layer_shape(k);
            Ok(unvec_rows(g.as_slice(), rows, cols))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradientBlocks::from_blocks(blocks))
}

/// Diagonal block `(A_kᵀ A_k) ⊗ (B_k B_kᵀ)`.
pub fn hessian_diag_block(w: &WeightStack, data: &DatasetPair, k: usize) -> Result<Mat> {
    check(w, data)?;
    w.shape().check_layer(k)?;
    let a = upstream(w, k);
    let b = downstream(w, data.x(), k);
    kron(&(a.transpose() * &a), &(&b * b.transpose()))
}

/// Cross block between `W_1` (rows) and `W_k` (columns), `k ≥ 2`:
///
/// `(Cᵀ A_k ⊗ X B_kᵀ) + [Mᵀ ⊗ X] [I ⊗ (r A_k)_{·,1} ⋯ I ⊗ (r A_k)_{·,d_k}]`
/// with `M = W_{k-1} ⋯ W_2`.
pub fn hessian_offdiag_block_k1(w: &WeightStack, data: &DatasetPair, k: usize) -> Result<Mat> {
    check(w, data)?;
    let shape = w.shape();
    if k < 2 || k > shape.num_layers() {
        return Err(Error::LayerIndex { index: k, lo: 2, hi: shape.num_layers() });
    }
    let x = data.x();
    let c = w.top_product();
    let a = upstream(w, k);
    let b = downstream(w, x, k);
    let first = kron(&(c.transpose() * &a), &(x * b.transpose()))?;

    let r = model::error_matrix(w, data)?;
    let ra = &r * &a; // m × d_k
    let middle = w.product(k - 1, 2); // d_{k-1} × d_1
    let left = kron(&middle.transpose(), x)?;
    let d_prev = shape.width(k - 1);
    let eye = Mat::identity(d_prev, d_prev);
    let cols = (0..shape.width(k))
        .map(|t| kron(&eye, &ra.columns(t, 1).into_owned()))
        .collect::<Result<Vec<_>>>()?;
    let m = data.m();
    let mut bracket = Mat::zeros(d_prev * m, d_prev * shape.width(k));
    for (t, blk) in cols.iter().enumerate() {
        bracket.view_mut((0, t * d_prev), (d_prev * m, d_prev)).copy_from(blk);
    }
    Ok(first + left * bracket)
}

fn param_steps(theta: &[f64], step: f64) -> Vec<f64> {
    theta.iter().map(|t| step * (1.0 + t.abs())).collect()
}

/// `(f(+h) − f(−h)) / 2h` for a function of the offset.
fn central_difference(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

fn loss_at(shape: &NetworkShape, theta: &[f64], data: &DatasetPair) -> f64 {
    let w = WeightStack::from_vector(shape, theta).expect("length matches shape");
    model::loss(&w, data).expect("shape checked by caller")
}

fn gradient_at(shape: &NetworkShape, theta: &[f64], data: &DatasetPair) -> Vec<f64> {
    let w = WeightStack::from_vector(shape, theta).expect("length matches shape");
    gradient(&w, data).expect("shape checked by caller").to_vector()
}

fn check_step(step: f64) -> Result<()> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("finite-difference step must be > 0, got {step}")))
    }
}

fn check_budget(n: usize) -> Result<()> {
    let requested = n.saturating_mul(n);
    if requested > DEFAULT_ELEMENT_BUDGET {
        return Err(Error::Budget { requested, budget: DEFAULT_ELEMENT_BUDGET });
    }
    Ok(())
}

/// Central differences of the loss, step `step * (1 + |θ_j|)` per parameter.
pub fn fd_gradient(w: &WeightStack, data: &DatasetPair, step: f64) -> Result<GradientBlocks> {
    check(w, data)?;
    check_step(step)?;
    let shape = w.shape();
    let theta = w.to_vector();
    let h = param_steps(&theta, step);
    let g: Vec<f64> = (0..theta.len())
        .into_par_iter()
        .map(|j| {
            let probe = |off: f64| {
                let mut t = theta.clone();
                t[j] += off;
                loss_at(shape, &t, data)
            };
            central_difference(probe, h[j])
        })
        .collect();
    let gw = WeightStack::from_vector(shape, &g)?;
    Ok(GradientBlocks::from_blocks(gw.layers().to_vec()))
}

/// Second differences of the loss. All blocks are tagged finite-difference.
pub fn fd_hessian(w: &WeightStack, data: &DatasetPair, step: f64) -> Result<HessianMatrix> {
    check(w, data)?;
    check_step(step)?;
    let shape = w.shape();
    let theta = w.to_vector();
    let n = theta.len();
    check_budget(n)?;
    let h = param_steps(&theta, step);
    let l0 = loss_at(shape, &theta, data);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            let mut t = theta.clone();
            for (j, out) in row.iter_mut().enumerate() {
                if i == j {
                    t[i] = theta[i] + h[i];
                    let up = loss_at(shape, &t, data);
                    t[i] = theta[i] - h[i];
                    let dn = loss_at(shape, &t, data);
                    t[i] = theta[i];
                    *out = (up - 2.0 * l0 + dn) / (h[i] * h[i]);
                } else {
                    let mut eval = |si: f64, sj: f64| {
                        t[i] = theta[i] + si * h[i];
                        t[j] = theta[j] + sj * h[j];
                        let v = loss_at(shape, &t, data);
                        t[i] = theta[i];
                        t[j] = theta[j];
                        v
                    };
                    let v = eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0);
                    *out = v / (4.0 * h[i] * h[j]);
                }
            }
            row
        })
        .collect();
    let raw = Mat::from_fn(n, n, |i, j| rows[i][j]);
    let layout = block_layout(shape);
    let provenance = all_pairs(&layout)
        .map(|(a, b)| BlockProvenance { row_layer: a, col_layer: b, source: Provenance::FiniteDifference })
        .collect();
    Ok(finish(raw, layout, provenance, 0.0))
}

/// Jacobian of the analytic gradient by central differences; column `j` is
/// `∂g/∂θ_j`.
pub fn fd_gradient_jacobian(w: &WeightStack, data: &DatasetPair, step: f64) -> Result<Mat> {
    check(w, data)?;
    check_step(step)?;
    let shape = w.shape();
    let theta = w.to_vector();
    let n = theta.len();
    check_budget(n)?;
    let h = param_steps(&theta, step);
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut t = theta.clone();
            t[j] = theta[j] + h[j];
            let up = gradient_at(shape, &t, data);
            t[j] = theta[j] - h[j];
            let dn = gradient_at(shape, &t, data);
            up.iter().zip(&dn).map(|(u, d)| (u - d) / (2.0 * h[j])).collect()
        })
        .collect();
    Ok(Mat::from_fn(n, n, |i, j| cols[j][i]))
}

fn all_pairs(layout: &[BlockRange]) -> impl Iterator<Item = (usize, usize)> + '_ {
    layout.iter().flat_map(move |a| layout.iter().map(move |b| (a.layer, b.layer)))
}

fn finish(raw: Mat, block_index: Vec<BlockRange>, provenance: Vec<BlockProvenance>, disc: f64) -> HessianMatrix {
    let norm = raw.norm();
    let asymmetry = if norm == 0.0 { 0.0 } else { (&raw - raw.transpose()).norm() / norm };
    let matrix = (&raw + raw.transpose()) * 0.5;
    HessianMatrix {
        dim: matrix.nrows(),
        matrix,
        block_index,
        provenance,
        asymmetry,
        analytic_fd_discrepancy: disc,
    }
}

/// Block-relative discrepancy `max|a − b| / max(max|a|, max|b|)`; zero when
/// both blocks vanish, absolute when both are below `1e-12`.
pub fn block_relative_error(a: &Mat, b: &Mat) -> f64 {
    let diff = linalg::max_abs(&(a - b));
    let scale = linalg::max_abs(a).max(linalg::max_abs(b));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Full Hessian. Diagonal and `(k, 1)` / `(1, k)` blocks are analytic and
/// cross-checked against finite differences of the analytic gradient; every
/// other block is taken from those finite differences.
pub fn full_hessian(w: &WeightStack, data: &DatasetPair, cfg: &ToleranceConfig) -> Result<HessianMatrix> {
    check(w, data)?;
    let shape = w.shape();
    let n = shape.num_params();
    check_budget(n)?;
    let fd = fd_gradient_jacobian(w, data, cfg.fd_step)?;
    let layout = block_layout(shape);
    let mut raw = Mat::zeros(n, n);
    let mut provenance = Vec::new();
    let mut disc = 0.0_f64;
    for ra in &layout {
        for cb in &layout {
            let (a, b) = (ra.layer, cb.layer);
            let fd_block = fd.view((ra.start, cb.start), (ra.len, cb.len)).into_owned();
            let analytic = if a == b {
                Some(hessian_diag_block(w, data, a)?)
            } else if a == 1 {
                Some(hessian_offdiag_block_k1(w, data, b)?)
            } else if b == 1 {
                Some(hessian_offdiag_block_k1(w, data, a)?.transpose())
            } else {
                None
            };
            let (block, source) = match analytic {
                Some(blk) => {
                    disc = disc.max(block_relative_error(&blk, &fd_block));
                    (blk, Provenance::Analytic)
                }
                None => (fd_block, Provenance::FiniteDifference),
            };
            raw.view_mut((ra.start, cb.start), (ra.len, cb.len)).copy_from(&block);
            provenance.push(BlockProvenance { row_layer: a, col_layer: b, source });
        }
    }
    Ok(finish(raw, layout, provenance, disc))
}
