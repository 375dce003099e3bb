//! The network-wide stochastic signal: mixture-model sampling, per-node
//! channel slicing, and second-order statistics.
//!
//! The signal model is `y(t) = A·d(t) + n(t)` with independent Gaussian
//! entries, `d ∈ R^Q` the latent source vector and `n ∈ R^M` sensor noise.
//! Gaussian parameters are written as variances: `N(0, 0.5)` means mean 0,
//! variance 0.5.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DansfError, Result};
use crate::linalg;

/// Channel counts per node and the stacking order of the network-wide signal.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ChannelLayout {
    per_node: Vec<usize>,
    offsets: Vec<usize>,
}

impl ChannelLayout {
    pub fn new(per_node: Vec<usize>) -> Result<Self> {
        if per_node.is_empty() || per_node.iter().any(|&m| m == 0) {
            return Err(DansfError::InvalidConfig(
                "every node needs at least one channel".into(),
            ));
        }
        let mut offsets = Vec::with_capacity(per_node.len());
        let mut acc = 0;
        for &m in &per_node {
            offsets.push(acc);
            acc += m;
        }
        Ok(Self { per_node, offsets })
    }

    pub fn uniform(num_nodes: usize, channels_per_node: usize) -> Result<Self> {
        Self::new(vec![channels_per_node; num_nodes])
    }

    pub fn num_nodes(&self) -> usize {
        self.per_node.len()
    }

    /// Channel count of node `k` (1-based).
    pub fn node_channels(&self, k: usize) -> usize {
        self.per_node[k - 1]
    }

    /// Total channel count `M = Σ M_k`.
    pub fn total(&self) -> usize {
        self.offsets.last().unwrap() + self.per_node.last().unwrap()
    }

    /// Row range of node `k` within the stacked signal.
    pub fn node_range(&self, k: usize) -> Result<std::ops::Range<usize>> {
        if k < 1 || k > self.per_node.len() {
            return Err(DansfError::NodeOutOfRange {
                node: k,
                num_nodes: self.per_node.len(),
            });
        }
        let start = self.offsets[k - 1];
        Ok(start..start + self.per_node[k - 1])
    }
}

/// Slice the `M_k` rows belonging to node `k` out of a stacked matrix.
pub fn node_rows(stacked: &DMatrix<f64>, k: usize, layout: &ChannelLayout) -> Result<DMatrix<f64>> {
    if stacked.nrows() != layout.total() {
        return Err(DansfError::DimensionMismatch(format!(
            "stacked matrix has {} rows, layout expects {}",
            stacked.nrows(),
            layout.total()
        )));
    }
    let range = layout.node_range(k)?;
    Ok(stacked.rows(range.start, range.len()).into_owned())
}

/// Gaussian mixture model `y(t) = A·d(t) + n(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    mixing: DMatrix<f64>,
    var_source: f64,
    var_noise: f64,
}

impl MixtureModel {
    pub fn new(mixing: DMatrix<f64>, var_source: f64, var_noise: f64) -> Result<Self> {
        if !(var_source > 0.0) {
            return Err(DansfError::InvalidConfig(format!(
                "source variance must be positive, got {var_source}"
            )));
        }
        if !(var_noise >= 0.0) {
            return Err(DansfError::InvalidConfig(format!(
                "noise variance must be non-negative, got {var_noise}"
            )));
        }
        Ok(Self {
            mixing,
            var_source,
            var_noise,
        })
    }

    /// Random mixing matrix with `N(0, var_mixing)` entries.
    pub fn random(
        num_channels: usize,
        num_sources: usize,
        var_mixing: f64,
        var_source: f64,
        var_noise: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, var_mixing.sqrt())
            .map_err(|e| DansfError::InvalidConfig(e.to_string()))?;
        let mixing = DMatrix::from_fn(num_channels, num_sources, |_, _| dist.sample(&mut rng));
        Self::new(mixing, var_source, var_noise)
    }

    pub fn mixing(&self) -> &DMatrix<f64> {
        &self.mixing
    }

    pub fn num_sources(&self) -> usize {
        self.mixing.ncols()
    }

    pub fn num_channels(&self) -> usize {
        self.mixing.nrows()
    }

    pub fn var_source(&self) -> f64 {
        self.var_source
    }

    pub fn var_noise(&self) -> f64 {
        self.var_noise
    }

    /// Cross-covariance `R_yd = E[y dᵀ] = var_d · A` between the stacked
    /// signal and the latent sources.
    pub fn cross_covariance(&self) -> DMatrix<f64> {
        &self.mixing * self.var_source
    }
}

/// A block of `N` time samples of the stacked signal, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBatch {
    data: DMatrix<f64>,
    layout: ChannelLayout,
}

impl SignalBatch {
    pub fn new(data: DMatrix<f64>, layout: ChannelLayout) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(DansfError::InvalidConfig("batch needs at least one sample".into()));
        }
        if data.nrows() != layout.total() {
            return Err(DansfError::DimensionMismatch(format!(
                "batch has {} rows, layout expects {}",
                data.nrows(),
                layout.total()
            )));
        }
        Ok(Self { data, layout })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn layout(&self) -> &ChannelLayout {
        &self.layout
    }

    pub fn num_samples(&self) -> usize {
        self.data.ncols()
    }

    /// The `M_k × N` sample block of node `k`.
    pub fn node_block(&self, k: usize) -> Result<DMatrix<f64>> {
        node_rows(&self.data, k, &self.layout)
    }

    /// Binary export: header `(M, N)` as 64-bit little-endian counts, then
    /// column-major 64-bit floats.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&(self.data.nrows() as u64).to_le_bytes())?;
        w.write_all(&(self.data.ncols() as u64).to_le_bytes())?;
        // DMatrix stores column-major, so the raw slice is already in order.
        for v in self.data.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Inverse of [`SignalBatch::write_binary`]; the layout is not part of
    /// the format and must be supplied.
    pub fn read_binary(mut r: impl Read, layout: ChannelLayout) -> Result<Self> {
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let m = u64::from_le_bytes(buf8) as usize;
        r.read_exact(&mut buf8)?;
        let n = u64::from_le_bytes(buf8) as usize;
        let mut values = vec![0.0f64; m * n];
        for v in values.iter_mut() {
            r.read_exact(&mut buf8)?;
            *v = f64::from_le_bytes(buf8);
        }
        Self::new(DMatrix::from_column_slice(m, n, &values), layout)
    }
}

/// Draw `N` i.i.d. samples of `y = A·d + n`. Deterministic per seed.
pub fn sample_batch(
    model: &MixtureModel,
    layout: &ChannelLayout,
    num_samples: usize,
    rng_seed: u64,
) -> Result<SignalBatch> {
    let (batch, _) = sample_batch_with_sources(model, layout, num_samples, rng_seed)?;
    Ok(batch)
}

/// Like [`sample_batch`] but also returns the latent source block `d`
/// (`Q × N`), which node-specific target signals are derived from.
pub fn sample_batch_with_sources(
    model: &MixtureModel,
    layout: &ChannelLayout,
    num_samples: usize,
    rng_seed: u64,
) -> Result<(SignalBatch, DMatrix<f64>)> {
    if num_samples == 0 {
        return Err(DansfError::InvalidConfig("batch needs at least one sample".into()));
    }
    if model.num_channels() != layout.total() {
        return Err(DansfError::DimensionMismatch(format!(
            "model has {} channels, layout expects {}",
            model.num_channels(),
            layout.total()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let q = model.num_sources();
    let src = Normal::new(0.0, model.var_source().sqrt())
        .map_err(|e| DansfError::InvalidConfig(e.to_string()))?;
    let sources = DMatrix::from_fn(q, num_samples, |_, _| src.sample(&mut rng));
    let mut data = model.mixing() * &sources;
    if model.var_noise() > 0.0 {
        let noise = Normal::new(0.0, model.var_noise().sqrt())
            .map_err(|e| DansfError::InvalidConfig(e.to_string()))?;
        for v in data.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    Ok((SignalBatch::new(data, layout.clone())?, sources))
}

/// How a covariance estimate was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovKind {
    Exact,
    Sampled(usize),
}

/// Symmetric positive-semidefinite covariance with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    r: DMatrix<f64>,
    kind: CovKind,
}

impl CovarianceEstimate {
    pub fn new(mut r: DMatrix<f64>, kind: CovKind) -> Result<Self> {
        if r.nrows() != r.ncols() {
            return Err(DansfError::DimensionMismatch(format!(
                "covariance must be square, got {}x{}",
                r.nrows(),
                r.ncols()
            )));
        }
        linalg::symmetrize(&mut r);
        Ok(Self { r, kind })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn kind(&self) -> CovKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    /// Default diagonal regularization: zero for exact statistics,
    /// `1e-10 · trace(R)/M` for sampled ones.
    pub fn default_ridge(&self) -> f64 {
        match self.kind {
            CovKind::Exact => 0.0,
            CovKind::Sampled(_) => 1e-10 * self.r.trace() / self.r.nrows() as f64,
        }
    }

    /// A copy with `delta · I` added to the diagonal.
    pub fn with_ridge(&self, delta: f64) -> Self {
        let mut r = self.r.clone();
        for i in 0..r.nrows() {
            r[(i, i)] += delta;
        }
        Self { r, kind: self.kind }
    }
}

/// Analytic covariance `R_yy = var_d·AAᵀ + var_n·I` of the mixture model.
pub fn exact_covariance(model: &MixtureModel) -> CovarianceEstimate {
    let m = model.num_channels();
    let r = model.mixing() * model.mixing().transpose() * model.var_source()
        + DMatrix::identity(m, m) * model.var_noise();
    CovarianceEstimate::new(r, CovKind::Exact).expect("square by construction")
}

/// Biased sample covariance `R = (1/N)·Y·Yᵀ` of a batch.
pub fn sample_covariance(batch: &SignalBatch) -> CovarianceEstimate {
    let n = batch.num_samples() as f64;
    let r = batch.data() * batch.data().transpose() / n;
    CovarianceEstimate::new(r, CovKind::Sampled(batch.num_samples())).expect("square by construction")
}
