//! Network shapes, datasets, the deep linear forward map, the squared loss
//! and the data spectrum `Σ = Y Xᵀ (X Xᵀ)⁻¹ X Yᵀ`.

use std::path::Path;

use nalgebra::linalg::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{self, Mat, ToleranceConfig};
use crate::text;

/// ChaCha stream used by [`WeightStack::seeded`].
pub const INIT_STREAM: u64 = 1 << 32;

/// Layer widths `(d_x, d_1, …, d_H, d_y)` of a deep linear network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    widths: Vec<usize>,
}

impl NetworkShape {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::InvalidParameter(format!(
                "a network needs at least one hidden layer (3 widths), got {} widths",
                widths.len()
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidParameter("all widths must be >= 1".into()));
        }
        Ok(Self { widths })
    }

    /// Parses a comma-separated width list such as `2,1,2`.
    pub fn parse(s: &str) -> Result<Self> {
        let widths = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidParameter(format!("invalid width {t:?} in shape {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(widths)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Number of hidden layers `H`.
    pub fn hidden_layers(&self) -> usize {
        self.widths.len() - 2
    }

    /// Number of weight matrices, `H + 1`.
    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// `d_k` for `k` in `0..=H+1`.
    pub fn width(&self, k: usize) -> usize {
        self.widths[k]
    }

    pub fn dx(&self) -> usize {
        self.widths[0]
    }

    pub fn dy(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Smallest hidden width.
    pub fn p(&self) -> usize {
        self.widths[1..self.widths.len() - 1].iter().copied().min().unwrap()
    }

    /// `min(p, d_y)`, the largest rank the end-to-end map can reach.
    pub fn p_hat(&self) -> usize {
        self.p().min(self.dy())
    }

    /// Shape `(d_k, d_{k-1})` of layer `k` (1-based).
    pub fn layer_shape(&self, k: usize) -> (usize, usize) {
        (self.widths[k], self.widths[k - 1])
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        (1..=self.num_layers()).map(|k| self.widths[k] * self.widths[k - 1]).sum()
    }

    pub fn check_layer(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.num_layers() {
            return Err(Error::LayerIndex { index: k, lo: 1, hi: self.num_layers() });
        }
        Ok(())
    }
}

impl std::fmt::Display for NetworkShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

/// Weights `W_1, …, W_{H+1}` with `W_k` of shape `d_k × d_{k-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStack {
    shape: NetworkShape,
    layers: Vec<Mat>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    widths: Vec<usize>,
    layers: Vec<String>,
}

impl WeightStack {
    /// `layers[0]` is `W_1`, `layers[H]` is `W_{H+1}`.
    pub fn new(shape: NetworkShape, layers: Vec<Mat>) -> Result<Self> {
        if layers.len() != shape.num_layers() {
            return Err(shape_err("weight stack", format!("{} layers", shape.num_layers()), layers.len()));
        }
        for (i, w) in layers.iter().enumerate() {
            let (r, c) = shape.layer_shape(i + 1);
            if w.shape() != (r, c) {
                return Err(shape_err(
                    "weight stack layer",
                    format!("W_{} {}x{}", i + 1, r, c),
                    format!("{}x{}", w.nrows(), w.ncols()),
                ));
            }
            linalg::ensure_finite(w, "weight layer")?;
        }
        Ok(Self { shape, layers })
    }

    pub fn zeros(shape: &NetworkShape) -> Self {
        let layers = (1..=shape.num_layers())
            .map(|k| {
                let (r, c) = shape.layer_shape(k);
                Mat::zeros(r, c)
            })
            .collect();
        Self { shape: shape.clone(), layers }
    }

    /// Entries drawn i.i.d. from `N(0, scale²)`.
    pub fn random<R: Rng + ?Sized>(shape: &NetworkShape, scale: f64, rng: &mut R) -> Self {
        let layers = (1..=shape.num_layers())
            .map(|k| {
                let (r, c) = shape.layer_shape(k);
                Mat::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        Self { shape: shape.clone(), layers }
    }

    /// [`WeightStack::random`] driven by ChaCha8 keyed by `seed` on
    /// [`INIT_STREAM`], a stream no Monte-Carlo shard uses.
    pub fn seeded(shape: &NetworkShape, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        Self::random(shape, scale, &mut rng)
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    /// Layer `W_k`, 1-based.
    pub fn layer(&self, k: usize) -> &Mat {
        &self.layers[k - 1]
    }

    pub fn layers(&self) -> &[Mat] {
        &self.layers
    }

    /// Replaces `W_k`; the new matrix must keep the layer's shape.
    pub fn set_layer(&mut self, k: usize, w: Mat) -> Result<()> {
        self.shape.check_layer(k)?;
        if w.shape() != self.layers[k - 1].shape() {
            return Err(shape_err(
                "set_layer",
                format!("{:?}", self.layers[k - 1].shape()),
                format!("{:?}", w.shape()),
            ));
        }
        self.layers[k - 1] = w;
        Ok(())
    }

    /// `W_hi ⋯ W_lo`; when `hi < lo` this is the identity `I_{d_hi}`.
    pub fn product(&self, hi: usize, lo: usize) -> Mat {
        if hi < lo {
            let d = self.shape.width(hi);
            return Mat::identity(d, d);
        }
        let mut acc = self.layers[hi - 1].clone();
        for k in (lo..hi).rev() {
            acc *= &self.layers[k - 1];
        }
        acc
    }

    /// End-to-end map `W_{H+1} ⋯ W_1`.
    pub fn end_to_end(&self) -> Mat {
        self.product(self.shape.num_layers(), 1)
    }

    /// `C = W_{H+1} ⋯ W_2`.
    pub fn top_product(&self) -> Mat {
        self.product(self.shape.num_layers(), 2)
    }

    /// Parameters stacked as `(vec(W_{H+1}ᵀ), …, vec(W_1ᵀ))`; `vec(W_kᵀ)` is
    /// the row-major flattening of `W_k`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.shape.num_params());
        for w in self.layers.iter().rev() {
            for r in 0..w.nrows() {
                out.extend(w.row(r).iter());
            }
        }
        out
    }

    pub fn from_vector(shape: &NetworkShape, v: &[f64]) -> Result<Self> {
        if v.len() != shape.num_params() {
            return Err(shape_err("parameter vector", shape.num_params(), v.len()));
        }
        let mut layers = vec![Mat::zeros(0, 0); shape.num_layers()];
        let mut off = 0;
        for k in (1..=shape.num_layers()).rev() {
            let (r, c) = shape.layer_shape(k);
            layers[k - 1] = Mat::from_row_slice(r, c, &v[off..off + r * c]);
            off += r * c;
        }
        Ok(Self { shape: shape.clone(), layers })
    }

    /// Writes one matrix file per layer (`W1.txt`, …) plus `manifest.json`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io { path: dir.display().to_string(), message: e.to_string() };
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut names = Vec::new();
        for (i, w) in self.layers.iter().enumerate() {
            let name = format!("W{}.txt", i + 1);
            text::write_matrix(&dir.join(&name), w)?;
            names.push(name);
        }
        let manifest = Manifest { widths: self.shape.widths().to_vec(), layers: names };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), json + "\n").map_err(io)
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        let src = std::fs::read_to_string(&mpath)
            .map_err(|e| Error::Io { path: mpath.display().to_string(), message: e.to_string() })?;
        let manifest: Manifest = serde_json::from_str(&src)
            .map_err(|e| Error::Parse { path: mpath.display().to_string(), line: e.line(), message: e.to_string() })?;
        let shape = NetworkShape::new(manifest.widths)?;
        let layers = manifest
            .layers
            .iter()
            .map(|name| text::read_matrix(&dir.join(name)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(shape, layers)
    }
}

/// Training data: inputs `X` (`d_x × m`) and targets `Y` (`d_y × m`).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    x: Mat,
    y: Mat,
}

impl DatasetPair {
    pub fn new(x: Mat, y: Mat) -> Result<Self> {
        if x.ncols() != y.ncols() || x.ncols() == 0 {
            return Err(shape_err(
                "dataset",
                format!("X and Y with equal column count m >= 1 (X has {})", x.ncols()),
                format!("Y with {} columns", y.ncols()),
            ));
        }
        linalg::ensure_finite(&x, "X")?;
        linalg::ensure_finite(&y, "Y")?;
        Ok(Self { x, y })
    }

    pub fn load(x_path: &Path, y_path: &Path) -> Result<Self> {
        Self::new(text::read_matrix(x_path)?, text::read_matrix(y_path)?)
    }

    pub fn x(&self) -> &Mat {
        &self.x
    }

    pub fn y(&self) -> &Mat {
        &self.y
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    pub fn dx(&self) -> usize {
        self.x.nrows()
    }

    pub fn dy(&self) -> usize {
        self.y.nrows()
    }

    pub fn check_shape(&self, shape: &NetworkShape) -> Result<()> {
        if shape.dx() != self.dx() || shape.dy() != self.dy() {
            return Err(shape_err(
                "network shape vs data",
                format!("d_x={} d_y={}", self.dx(), self.dy()),
                format!("d_x={} d_y={}", shape.dx(), shape.dy()),
            ));
        }
        Ok(())
    }
}

/// Fixed small instances used throughout the examples and tests.
pub mod reference {
    use super::*;

    /// `X = I₂`, `Y = diag(1, 2)`; `Σ = diag(1, 4)`.
    pub fn data() -> DatasetPair {
        let x = Mat::identity(2, 2);
        let y = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        DatasetPair::new(x, y).expect("reference data is well formed")
    }

    /// One hidden unit: widths `(2, 1, 2)`.
    pub fn r1_shape() -> NetworkShape {
        NetworkShape::new(vec![2, 1, 2]).unwrap()
    }

    /// Two hidden layers of width 2: widths `(2, 2, 2, 2)`.
    pub fn r2_shape() -> NetworkShape {
        NetworkShape::new(vec![2, 2, 2, 2]).unwrap()
    }
}

/// `Ȳ(W, X) = W_{H+1} ⋯ W_1 X`.
pub fn forward(w: &WeightStack, x: &Mat) -> Result<Mat> {
    if x.nrows() != w.shape().dx() {
        return Err(shape_err("forward", format!("X with {} rows", w.shape().dx()), format!("{} rows", x.nrows())));
    }
    Ok(w.end_to_end() * x)
}

fn check_pair(w: &WeightStack, data: &DatasetPair) -> Result<()> {
    data.check_shape(w.shape())
}

/// `½ ‖Ȳ(W, X) − Y‖²_F`.
pub fn loss(w: &WeightStack, data: &DatasetPair) -> Result<f64> {
    check_pair(w, data)?;
    let resid = forward(w, data.x())? - data.y();
    Ok(0.5 * resid.iter().map(|v| v * v).sum::<f64>())
}

/// Error matrix `r = (Ȳ(W, X) − Y)ᵀ`, shape `m × d_y`.
pub fn error_matrix(w: &WeightStack, data: &DatasetPair) -> Result<Mat> {
    check_pair(w, data)?;
    Ok((forward(w, data.x())? - data.y()).transpose())
}

/// Flags for the hypotheses under which the landscape theorems hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionFlags {
    pub xxt_full_rank: bool,
    pub xyt_full_rank: bool,
    pub distinct_eigs: bool,
    pub dy_le_dx: bool,
}

impl AssumptionFlags {
    pub fn all_hold(&self) -> bool {
        self.xxt_full_rank && self.xyt_full_rank && self.distinct_eigs && self.dy_le_dx
    }

    pub fn violations(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if !self.xxt_full_rank {
            v.push("X X^T is not full rank");
        }
        if !self.xyt_full_rank {
            v.push("X Y^T is not full rank");
        }
        if !self.distinct_eigs {
            v.push("Sigma does not have d_y distinct eigenvalues");
        }
        if !self.dy_le_dx {
            v.push("d_y > d_x");
        }
        v
    }

    pub fn require(&self) -> Result<()> {
        if self.all_hold() {
            Ok(())
        } else {
            Err(Error::Assumption(self.violations().join("; ")))
        }
    }
}

/// `Σ` with its descending eigendecomposition `Σ = U Λ Uᵀ`.
#[derive(Debug, Clone)]
pub struct SigmaDecomposition {
    pub sigma: Mat,
    /// `Λ_{1,1} ≥ … ≥ Λ_{d_y,d_y}`.
    pub eigvalues: Vec<f64>,
    /// `U = [u_1, …, u_{d_y}]`.
    pub eigvectors: Mat,
    /// Least-squares map `Y Xᵀ (X Xᵀ)⁻¹`.
    pub ls_map: Mat,
}

#[derive(Debug, Clone)]
pub struct DataSpectrum {
    pub flags: AssumptionFlags,
    /// `None` when `X Xᵀ` is singular.
    pub decomposition: Option<SigmaDecomposition>,
}

impl DataSpectrum {
    pub fn decomposition(&self) -> Result<&SigmaDecomposition> {
        self.decomposition.as_ref().ok_or(Error::SingularGram)
    }
}

/// Least-squares map `Y Xᵀ (X Xᵀ)⁻¹` via a Cholesky solve, `None` if `X Xᵀ`
/// is not numerically positive definite.
pub fn least_squares_map(data: &DatasetPair, cfg: &ToleranceConfig) -> Option<Mat> {
    let x = data.x();
    let xxt = x * x.transpose();
    if linalg::rank_tol(&xxt, cfg) < data.dx() {
        return None;
    }
    let chol = Cholesky::new(xxt)?;
    let xyt = x * data.y().transpose();
    // (X Xᵀ)⁻¹ X Yᵀ, transposed.
    Some(chol.solve(&xyt).transpose())
}

fn distinct(values: &[f64], cfg: &ToleranceConfig) -> bool {
    let scale = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        return false;
    }
    values.windows(2).all(|w| w[0] - w[1] > cfg.eig_zero_tol * scale)
}

pub fn data_spectrum(data: &DatasetPair, cfg: &ToleranceConfig) -> DataSpectrum {
    let x = data.x();
    let xyt = x * data.y().transpose();
    let mut flags = AssumptionFlags {
        xxt_full_rank: false,
        xyt_full_rank: linalg::rank_tol(&xyt, cfg) == data.dx().min(data.dy()),
        distinct_eigs: false,
        dy_le_dx: data.dy() <= data.dx(),
    };
    let Some(ls_map) = least_squares_map(data, cfg) else {
        return DataSpectrum { flags, decomposition: None };
    };
    flags.xxt_full_rank = true;
    let sigma = &ls_map * xyt;
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let eig = linalg::sym_eig(&sigma).expect("Sigma is square");
    flags.distinct_eigs = distinct(&eig.values, cfg);
    DataSpectrum {
        flags,
        decomposition: Some(SigmaDecomposition {
            sigma,
            eigvalues: eig.values,
            eigvectors: eig.vectors,
            ls_map,
        }),
    }
}

pub fn check_assumptions(data: &DatasetPair, cfg: &ToleranceConfig) -> AssumptionFlags {
    data_spectrum(data, cfg).flags
}
