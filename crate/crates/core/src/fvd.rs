//! Fréchet Video Distance.
//!
//! Each video is embedded by a [`FeatureExtractor`], each set of embeddings
//! is summarised by its mean and unbiased covariance, and the two Gaussians
//! are compared with the Fréchet distance
//!
//! ```text
//! |mu_a - mu_b|^2 + Tr(S_a) + Tr(S_b) - 2 Tr sqrt(S_a^1/2 S_b S_a^1/2)
//! ```
//!
//! The last term equals `2 Tr sqrt(S_a S_b)`; the symmetric form lets the
//! square root come from a plain eigendecomposition.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Video};
use crate::digest::Fingerprint;
use crate::error::{Error, Result};

/// Eigenvalues of the matrices under the square root may dip below zero by
/// rounding; below this they are treated as a real failure.
pub const EIGEN_TOLERANCE: f64 = 1e-4;
/// Scores this close below zero are clamped to zero.
pub const SCORE_TOLERANCE: f64 = 1e-6;

/// Maps a video to a fixed-length feature vector. Must be deterministic.
pub trait FeatureExtractor: Sync {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn features(&self, video: &Video) -> Result<Vec<f64>>;
}

/// Mean-pools a video over a `time x rows x cols` grid per channel, then
/// applies a fixed Gaussian random projection drawn from `seed`.
#[derive(Debug, Clone)]
pub struct SeededProjection {
    seed: u64,
    grid: (usize, usize, usize),
    channels: usize,
    dim: usize,
    /// `(dim, pooled)`, scaled by `1 / sqrt(pooled)`.
    projection: DMatrix<f64>,
}

impl SeededProjection {
    pub const DEFAULT_DIM: usize = 64;

    /// 4 time bins, 4x4 spatial cells, projected to `dim` features.
    pub fn new(seed: u64, channels: usize, dim: usize) -> Self {
        Self::with_grid(seed, channels, dim, (4, 4, 4))
    }

    pub fn with_grid(seed: u64, channels: usize, dim: usize, grid: (usize, usize, usize)) -> Self {
        let pooled = grid.0 * grid.1 * grid.2 * channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (pooled as f64).sqrt();
        let projection = DMatrix::from_fn(dim, pooled, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scale
        });
        Self {
            seed,
            grid,
            channels,
            dim,
            projection,
        }
    }

    fn pool(&self, video: &Video) -> Result<DVector<f64>> {
        let (n, h, w, c) = video.frames().dim();
        let (gt, gh, gw) = self.grid;
        if c != self.channels || n < gt || h < gh || w < gw {
            return Err(Error::Contract(format!(
                "{n}x{h}x{w}x{c} video does not fit a {gt}x{gh}x{gw} grid over {} channels",
                self.channels
            )));
        }
        let mut sums = vec![0.0; gt * gh * gw * c];
        let mut counts = vec![0usize; gt * gh * gw];
        for ((f, r, col, ch), &v) in video.frames().indexed_iter() {
            let cell = ((f * gt / n) * gh + r * gh / h) * gw + col * gw / w;
            sums[cell * c + ch] += v as f64;
            if ch == 0 {
                counts[cell] += 1;
            }
        }
        Ok(DVector::from_iterator(
            sums.len(),
            sums.iter()
                .enumerate()
                .map(|(i, s)| s / counts[i / c] as f64),
        ))
    }
}

impl FeatureExtractor for SeededProjection {
    fn id(&self) -> String {
        let (t, h, w) = self.grid;
        format!(
            "seeded-projection/{}/{t}x{h}x{w}x{}/{}",
            self.seed, self.channels, self.dim
        )
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, video: &Video) -> Result<Vec<f64>> {
        Ok((&self.projection * self.pool(video)?)
            .iter()
            .copied()
            .collect())
    }
}

/// One feature row per video, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: DMatrix<f64>,
    pub extractor_id: String,
}

pub fn extract_features(
    videos: &Dataset,
    extractor: &dyn FeatureExtractor,
) -> Result<FeatureMatrix> {
    let first = videos.videos()[0].frames().dim();
    if let Some(v) = videos.videos().iter().find(|v| v.frames().dim() != first) {
        return Err(Error::Contract(format!(
            "video {} is shaped {:?}, expected {first:?}",
            v.source_id(),
            v.frames().dim()
        )));
    }
    let rows: Vec<Vec<f64>> = videos
        .videos()
        .par_iter()
        .map(|v| extractor.features(v))
        .collect::<Result<_>>()?;
    let d = extractor.dim();
    if let Some(r) = rows
        .iter()
        .find(|r| r.len() != d || r.iter().any(|x| !x.is_finite()))
    {
        return Err(Error::Contract(format!(
            "extractor returned {} values (finite: {}), expected {d}",
            r.len(),
            r.iter().all(|x| x.is_finite())
        )));
    }
    Ok(FeatureMatrix {
        rows: DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]),
        extractor_id: extractor.id(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn digest(&self) -> String {
        let mut fp = Fingerprint::new();
        fp.str("gaussian-stats").u64(self.dim() as u64);
        for v in self.mu.iter().chain(self.sigma.iter()) {
            fp.f64(*v);
        }
        fp.finish()
    }
}

/// Column mean and unbiased covariance (divisor `n - 1`), symmetrised.
pub fn gaussian_stats(features: &FeatureMatrix) -> Result<GaussianStats> {
    let x = &features.rows;
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance needs at least 2 feature rows, got {n}"
        )));
    }
    let mu = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.mean()));
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let s = centered.transpose() * &centered / (n - 1) as f64;
    let sigma = (&s + s.transpose()) * 0.5;
    Ok(GaussianStats { mu, sigma })
}

/// Square root of a symmetric positive semidefinite matrix. Eigenvalues
/// down to `-EIGEN_TOLERANCE` are treated as zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if let Some(bad) = eig.eigenvalues.iter().find(|&&l| l < -EIGEN_TOLERANCE) {
        return Err(Error::NumericalDegeneracy(format!(
            "matrix has eigenvalue {bad:e}, not positive semidefinite"
        )));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `S_a^1/2 S_b S_a^1/2`, symmetric and similar to `S_a S_b`.
pub fn symmetrized_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ra = psd_sqrt(a)?;
    let m = &ra * b * &ra;
    Ok((&m + m.transpose()) * 0.5)
}

pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim()
        || a.sigma.shape() != (a.dim(), a.dim())
        || b.sigma.shape() != (b.dim(), b.dim())
    {
        return Err(Error::Contract(format!(
            "comparing {}-dimensional and {}-dimensional statistics",
            a.dim(),
            b.dim()
        )));
    }
    if a == b {
        return Ok(0.0);
    }
    let mean_term = (&a.mu - &b.mu).norm_squared();
    let m = symmetrized_product(&a.sigma, &b.sigma)?;
    let eig = SymmetricEigen::new(m).eigenvalues;
    if let Some(bad) = eig.iter().find(|&&l| l < -EIGEN_TOLERANCE) {
        return Err(Error::NumericalDegeneracy(format!(
            "covariance product has eigenvalue {bad:e}"
        )));
    }
    let tr_sqrt: f64 = eig.iter().map(|l| l.max(0.0).sqrt()).sum();
    let score = mean_term + a.sigma.trace() + b.sigma.trace() - 2.0 * tr_sqrt;
    if score < -SCORE_TOLERANCE {
        return Err(Error::NumericalDegeneracy(format!(
            "Fréchet distance came out as {score:e}"
        )));
    }
    Ok(score.max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FvdReport {
    pub score: f64,
    pub real_stats: GaussianStats,
    pub gen_stats: GaussianStats,
    pub extractor_id: String,
    pub real_count: usize,
    pub generated_count: usize,
}

/// What `eval-fvd` writes to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FvdSummary {
    pub score: f64,
    pub real_count: usize,
    pub generated_count: usize,
    pub extractor_id: String,
    pub feature_dim: usize,
    pub real_stats_digest: String,
    pub gen_stats_digest: String,
}

impl FvdReport {
    pub fn summary(&self) -> FvdSummary {
        FvdSummary {
            score: self.score,
            real_count: self.real_count,
            generated_count: self.generated_count,
            extractor_id: self.extractor_id.clone(),
            feature_dim: self.real_stats.dim(),
            real_stats_digest: self.real_stats.digest(),
            gen_stats_digest: self.gen_stats.digest(),
        }
    }
}

pub fn compute_fvd(
    real: &Dataset,
    generated: &Dataset,
    extractor: &dyn FeatureExtractor,
) -> Result<FvdReport> {
    let real_features = extract_features(real, extractor)?;
    let gen_features = extract_features(generated, extractor)?;
    let real_stats = gaussian_stats(&real_features)?;
    let gen_stats = gaussian_stats(&gen_features)?;
    let score = frechet_distance(&real_stats, &gen_stats)?;
    Ok(FvdReport {
        score,
        real_stats,
        gen_stats,
        extractor_id: extractor.id(),
        real_count: real.len(),
        generated_count: generated.len(),
    })
}
