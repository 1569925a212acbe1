//! Path-decomposition model of a network whose hidden units are gated by
//! independent Bernoulli activations, and Monte-Carlo estimates of its
//! expected output.
//!
//! Each output `Ŷ_{j,i}` is `q Σ_p X_{i₀(p), i} Z_{(i,j,p)} Π_k w^{(k)}_{(j,p)}`
//! where a path `p = (i₀, i₁, …, i_H)` picks an input unit and one unit per
//! hidden layer. With `q = 1/ρ` the expectation over `Z` is the linear
//! network output `W_{H+1} ⋯ W_1 X`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{shape_err, Error, Result};
use crate::linalg::Mat;
use crate::model::{DatasetPair, NetworkShape, WeightStack};

/// Largest number of paths per output that will be materialized.
pub const PATH_BUDGET: usize = 1_000_000;

/// Number of independently seeded shards a Monte-Carlo run is split into.
/// Fixed so results do not depend on the thread count.
pub const MC_SHARDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathModel {
    pub shape: NetworkShape,
    /// `Ψ = d_x · Π_{k=1..H} d_k`.
    pub psi_per_output: usize,
    pub rho: f64,
    pub q: f64,
    pub seed: u64,
}

impl PathModel {
    /// `q` defaults to `1/ρ`.
    pub fn new(shape: NetworkShape, rho: f64, q: Option<f64>, seed: u64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidParameter(format!("rho must lie in (0, 1], got {rho}")));
        }
        let q = q.unwrap_or(1.0 / rho);
        if !q.is_finite() {
            return Err(Error::InvalidParameter(format!("q must be finite, got {q}")));
        }
        let psi_per_output = path_count(&shape)?;
        Ok(Self { shape, psi_per_output, rho, q, seed })
    }
}

fn path_count(shape: &NetworkShape) -> Result<usize> {
    let widths = &shape.widths()[..shape.num_layers()];
    let total = widths.iter().try_fold(1usize, |acc, &w| acc.checked_mul(w));
    match total {
        Some(t) if t <= PATH_BUDGET => Ok(t),
        _ => Err(Error::Budget { requested: total.unwrap_or(usize::MAX), budget: PATH_BUDGET }),
    }
}

/// All paths `(i₀, …, i_H)` in lexicographic order, stored flat.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSet {
    len: usize,
    indices: Vec<usize>,
}

impl PathSet {
    /// Number of paths per output unit.
    pub fn count(&self) -> usize {
        self.indices.len().checked_div(self.len).unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.indices.chunks_exact(self.len)
    }
}

pub fn enumerate_paths(shape: &NetworkShape) -> Result<PathSet> {
    let psi = path_count(shape)?;
    let widths = &shape.widths()[..shape.num_layers()];
    let len = widths.len();
    let mut indices = Vec::with_capacity(psi * len);
    let mut cur = vec![0usize; len];
    for _ in 0..psi {
        indices.extend_from_slice(&cur);
        for pos in (0..len).rev() {
            cur[pos] += 1;
            if cur[pos] < widths[pos] {
                break;
            }
            cur[pos] = 0;
        }
    }
    Ok(PathSet { len, indices })
}

/// `(first-layer input index, weight product)` per output and path.
struct PathWeights {
    inputs: Vec<usize>,
    /// Row-major `d_y × Ψ`.
    products: Vec<f64>,
    psi: usize,
}

fn path_weights(w: &WeightStack) -> Result<PathWeights> {
    let shape = w.shape();
    let paths = enumerate_paths(shape)?;
    let h = shape.hidden_layers();
    let top = w.layer(h + 1);
    let psi = paths.count();
    let mut inputs = Vec::with_capacity(psi);
    let mut inner = Vec::with_capacity(psi);
    for p in paths.iter() {
        inputs.push(p[0]);
        inner.push((1..=h).map(|k| w.layer(k)[(p[k], p[k - 1])]).product::<f64>());
    }
    let mut products = Vec::with_capacity(shape.dy() * psi);
    for j in 0..shape.dy() {
        products.extend(paths.iter().zip(&inner).map(|(p, &v)| top[(j, p[h])] * v));
    }
    Ok(PathWeights { inputs, products, psi })
}

fn check_inputs(model: &PathModel, w: &WeightStack, x: &Mat) -> Result<()> {
    if w.shape() != &model.shape {
        return Err(shape_err("path model weights", model.shape.to_string(), w.shape().to_string()));
    }
    if x.nrows() != model.shape.dx() {
        return Err(shape_err("input rows", model.shape.dx().to_string(), x.nrows().to_string()));
    }
    Ok(())
}

/// Draws `Z` in the order sample, output, path and accumulates one output.
fn draw<R: Rng>(model: &PathModel, pw: &PathWeights, x: &Mat, dy: usize, rng: &mut R) -> Mat {
    let m = x.ncols();
    let mut out = Mat::zeros(dy, m);
    for i in 0..m {
        for j in 0..dy {
            let row = &pw.products[j * pw.psi..(j + 1) * pw.psi];
            let mut acc = 0.0;
            for (p, &wp) in row.iter().enumerate() {
                if rng.random::<f64>() < model.rho {
                    acc += x[(pw.inputs[p], i)] * wp;
                }
            }
            out[(j, i)] = model.q * acc;
        }
    }
    out
}

/// One Monte-Carlo draw of the gated network output.
pub fn relu_path_output_sampled(model: &PathModel, w: &WeightStack, x: &Mat, sample_seed: u64) -> Result<Mat> {
    check_inputs(model, w, x)?;
    let pw = path_weights(w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    Ok(draw(model, &pw, x, model.shape.dy(), &mut rng))
}

/// All-active path sum (`Z ≡ 1`, `q = 1`).
pub fn path_sum(w: &WeightStack, x: &Mat) -> Result<Mat> {
    let model = PathModel::new(w.shape().clone(), 1.0, Some(1.0), 0)?;
    relu_path_output_sampled(&model, w, x, 0)
}

#[derive(Debug, Clone, Serialize)]
pub struct McEstimate {
    #[serde(skip)]
    pub mean: Mat,
    #[serde(skip)]
    pub stderr: Mat,
    pub n_samples: usize,
    pub shards: usize,
}

/// Running mean and sum of squared deviations.
struct Moments {
    n: usize,
    mean: Mat,
    m2: Mat,
}

impl Moments {
    fn new(r: usize, c: usize) -> Self {
        Self { n: 0, mean: Mat::zeros(r, c), m2: Mat::zeros(r, c) }
    }

    fn push(&mut self, x: &Mat) {
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        for ((mu, m2), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x.iter()) {
            let d = v - *mu;
            *mu += d * inv;
            *m2 += d * (v - *mu);
        }
    }

    fn merge(mut self, other: Moments) -> Moments {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other;
        }
        let n = self.n + other.n;
        let (na, nb) = (self.n as f64, other.n as f64);
        for (((mu, m2), &mb), &m2b) in
            self.mean.iter_mut().zip(self.m2.iter_mut()).zip(other.mean.iter()).zip(other.m2.iter())
        {
            let d = mb - *mu;
            *mu += d * nb / n as f64;
            *m2 += m2b + d * d * na * nb / n as f64;
        }
        self.n = n;
        self
    }
}

/// Entrywise sample mean and standard error of `n_samples` draws.
///
/// The draws are split over [`MC_SHARDS`] shards; shard `s` uses a ChaCha8
/// stream `s` keyed by the model seed, and shards are merged in order.
pub fn mc_expectation(model: &PathModel, w: &WeightStack, x: &Mat, n_samples: usize) -> Result<McEstimate> {
    if n_samples < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 samples, got {n_samples}")));
    }
    check_inputs(model, w, x)?;
    let pw = path_weights(w)?;
    let dy = model.shape.dy();
    let m = x.ncols();
    let shards: Vec<Moments> = (0..MC_SHARDS)
        .into_par_iter()
        .map(|s| {
            let count = n_samples / MC_SHARDS + usize::from(s < n_samples % MC_SHARDS);
            let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
            rng.set_stream(s as u64);
            let mut acc = Moments::new(dy, m);
            for _ in 0..count {
                acc.push(&draw(model, &pw, x, dy, &mut rng));
            }
            acc
        })
        .collect();
    let total = shards.into_iter().fold(Moments::new(dy, m), Moments::merge);
    let n = total.n as f64;
    let stderr = total.m2.map(|v| (v.max(0.0) / (n - 1.0) / n).sqrt());
    Ok(McEstimate { mean: total.mean, stderr, n_samples, shards: MC_SHARDS })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpectedLoss {
    /// `½ ‖mean − Y‖²_F` with the Monte-Carlo mean.
    pub value: f64,
    /// First-order propagated standard error `‖(mean − Y) ∘ stderr‖_F`.
    pub stderr: f64,
    /// `½ Σ stderr²`, the expected upward bias of `value`.
    pub bias: f64,
    pub estimate: McEstimate,
}

pub fn expected_loss(model: &PathModel, w: &WeightStack, data: &DatasetPair, n_samples: usize) -> Result<ExpectedLoss> {
    data.check_shape(&model.shape)?;
    let estimate = mc_expectation(model, w, data.x(), n_samples)?;
    let resid = &estimate.mean - data.y();
    let value = 0.5 * resid.norm_squared();
    let stderr = resid.component_mul(&estimate.stderr).norm();
    let bias = 0.5 * estimate.stderr.norm_squared();
    Ok(ExpectedLoss { value, stderr, bias, estimate })
}
