//! Fréchet distance, FID/rFID and histogram Jensen-Shannon divergence.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nets::Autoencoder;
use crate::rng::Streams;

/// Eigenvalues above this (negative) floor are treated as rounding noise.
const EIG_FLOOR: f64 = -1e-8;
pub const DEFAULT_BINS: usize = 64;

/// Mean and unbiased covariance of a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

impl GaussianStats {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>, n: usize) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(Error::shape("gaussian_stats", &[d, d], &[cov.len()]));
        }
        Ok(GaussianStats {
            mean: DVector::from_vec(mean),
            cov: DMatrix::from_row_slice(d, d, &cov),
            n,
        })
    }

    /// Estimates from `[n, d]` samples. Accumulation runs in sample order.
    pub fn from_samples(x: &Tensor) -> Result<Self> {
        let (n, d) = match x.shape() {
            [n, d] if *n > 0 => (*n, *d),
            s => return Err(Error::Data(format!("need a non-empty [n,d] sample matrix, got {s:?}"))),
        };
        let mut mean = vec![0.0; d];
        for i in 0..n {
            mean.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut centered = vec![0.0; d];
        for i in 0..n {
            centered.iter_mut().zip(x.row(i)).zip(&mean).for_each(|((c, v), m)| *c = v - m);
            for a in 0..d {
                let ca = centered[a];
                for b in a..d {
                    cov[(a, b)] += ca * centered[b];
                }
            }
        }
        let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
        for a in 0..d {
            for b in a..d {
                let v = cov[(a, b)] / denom;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        Ok(GaussianStats {
            mean: DVector::from_vec(mean),
            cov,
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frechet {
    pub value: f64,
    /// Set when either sample count does not exceed the feature dimension, in
    /// which case a covariance estimate is rank deficient.
    pub under_sampled: bool,
}

fn sym_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if let Some(v) = eig.eigenvalues.iter().find(|v| **v < EIG_FLOOR * scale) {
        return Err(Error::Numerical(format!("{what} has negative eigenvalue {v}")));
    }
    Ok(eig)
}

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m, "covariance")?;
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `‖μ1-μ2‖² + Tr(C1 + C2 - 2 (C1 C2)^{1/2})`, with the trace of the square
/// root taken from the symmetric matrix `C1^{1/2} C2 C1^{1/2}`.
pub fn frechet_distance(s1: &GaussianStats, s2: &GaussianStats) -> Result<Frechet> {
    let d = s1.dim();
    if s2.dim() != d {
        return Err(Error::shape("frechet_distance", &[d], &[s2.dim()]));
    }
    let diff = &s1.mean - &s2.mean;
    let r1 = psd_sqrt(&s1.cov)?;
    let inner = &r1 * &s2.cov * &r1;
    let eig = sym_eigen(&inner, "covariance product")?;
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let value = diff.norm_squared() + s1.cov.trace() + s2.cov.trace() - 2.0 * tr_sqrt;
    let scale = 1.0 + s1.cov.trace() + s2.cov.trace();
    if value < -1e-6 * scale {
        return Err(Error::Numerical(format!("Fréchet distance evaluated to {value}")));
    }
    Ok(Frechet {
        value: value.max(0.0),
        under_sampled: s1.n <= d || s2.n <= d,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FeatureKind {
    PixelFlatten,
    RandomProjection { dim: usize, seed: u64 },
    AeEncoder,
}

impl Default for FeatureKind {
    fn default() -> Self {
        FeatureKind::RandomProjection { dim: 64, seed: 0 }
    }
}

/// Maps images (or any `[n, ...]` batch) to `[n, d]` feature rows.
#[derive(Debug, Clone)]
pub enum FeatureExtractor {
    PixelFlatten,
    RandomProjection { matrix: Tensor, seed: u64 },
    AeEncoder(Box<Autoencoder>),
}

impl FeatureExtractor {
    /// Fixed Gaussian projection `[in_dim, dim]` with entries `N(0, 1/in_dim)`.
    pub fn random_projection(in_dim: usize, dim: usize, seed: u64) -> Self {
        let mut rng = Streams::new(seed).stream("feature-projection");
        let matrix = crate::autodiff::lecun_normal(&[in_dim, dim], in_dim, &mut rng);
        FeatureExtractor::RandomProjection { matrix, seed }
    }

    /// Builds the extractor for `kind`; `ae` is required for [`FeatureKind::AeEncoder`].
    pub fn from_kind(kind: &FeatureKind, in_dim: usize, ae: Option<&Autoencoder>) -> Result<Self> {
        Ok(match kind {
            FeatureKind::PixelFlatten => FeatureExtractor::PixelFlatten,
            FeatureKind::RandomProjection { dim, seed } => Self::random_projection(in_dim, *dim, *seed),
            FeatureKind::AeEncoder => FeatureExtractor::AeEncoder(Box::new(
                ae.ok_or_else(|| Error::Config("ae-encoder features need a trained autoencoder".into()))?.clone(),
            )),
        })
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            FeatureExtractor::PixelFlatten => FeatureKind::PixelFlatten,
            FeatureExtractor::RandomProjection { matrix, seed } => FeatureKind::RandomProjection {
                dim: matrix.shape()[1],
                seed: *seed,
            },
            FeatureExtractor::AeEncoder(_) => FeatureKind::AeEncoder,
        }
    }

    pub fn extract(&self, x: &Tensor) -> Result<Tensor> {
        let n = *x.shape().first().ok_or_else(|| Error::Data("empty sample batch".into()))?;
        let flat = x.reshape(&[n, x.len() / n.max(1)])?;
        match self {
            FeatureExtractor::PixelFlatten => Ok(flat),
            FeatureExtractor::RandomProjection { matrix, .. } => crate::autodiff::kernels::matmul(&flat, matrix),
            FeatureExtractor::AeEncoder(ae) => ae.encode(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub fid: f64,
    pub n_real: usize,
    pub n_fake: usize,
    pub dim: usize,
    pub under_sampled: bool,
}

/// FID between two sample sets under a shared extractor.
pub fn fid(real: &Tensor, fake: &Tensor, extractor: &FeatureExtractor) -> Result<FidReport> {
    let fr = extractor.extract(real)?;
    let ff = extractor.extract(fake)?;
    let (s1, s2) = (GaussianStats::from_samples(&fr)?, GaussianStats::from_samples(&ff)?);
    let f = frechet_distance(&s1, &s2)?;
    Ok(FidReport {
        fid: f.value,
        n_real: s1.n,
        n_fake: s2.n,
        dim: s1.dim(),
        under_sampled: f.under_sampled,
    })
}

/// Anything that maps images to reconstructions of the same shape.
pub trait Reconstructor {
    fn reconstruct(&self, images: &Tensor) -> Result<Tensor>;
}

/// FID between a set of images and their reconstructions.
pub fn rfid(ae: &dyn Reconstructor, images: &Tensor, extractor: &FeatureExtractor) -> Result<FidReport> {
    let rec = ae.reconstruct(images)?;
    fid(images, &rec, extractor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JsdSpace {
    /// Pixels in `[0, 1]`.
    Raw,
    /// Latent features in `[-1, 1]`.
    Feature,
}

impl JsdSpace {
    pub fn range(self) -> (f64, f64) {
        match self {
            JsdSpace::Raw => (0.0, 1.0),
            JsdSpace::Feature => (-1.0, 1.0),
        }
    }
}

fn histogram(x: &Tensor, dim: usize, col: usize, lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let n = x.len() / dim;
    let mut h = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for i in 0..n {
        let v = x.data()[i * dim + col];
        let b = ((v - lo) / width).floor();
        let b = if b.is_nan() { 0 } else { (b.max(0.0) as usize).min(bins - 1) };
        h[b] += 1.0;
    }
    h.iter_mut().for_each(|c| *c /= n as f64);
    h
}

fn kl_term(p: f64, m: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / m).ln()
    }
}

/// Per-dimension histogram JSD (natural log), averaged over dimensions. Samples
/// are `[n, ...]`; values outside the space's range land in the edge bins.
pub fn jsd(p: &Tensor, q: &Tensor, space: JsdSpace, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::Config(format!("JSD needs at least 2 bins, got {bins}")));
    }
    let (np, nq) = (p.shape().first().copied().unwrap_or(0), q.shape().first().copied().unwrap_or(0));
    if np == 0 || nq == 0 {
        return Err(Error::Data("JSD needs non-empty sample sets".into()));
    }
    let dim = p.len() / np;
    if q.len() / nq != dim {
        return Err(Error::shape("jsd", p.shape(), q.shape()));
    }
    let (lo, hi) = space.range();
    let mut total = 0.0;
    for col in 0..dim {
        let hp = histogram(p, dim, col, lo, hi, bins);
        let hq = histogram(q, dim, col, lo, hi, bins);
        let mut d = 0.0;
        for (a, b) in hp.iter().zip(&hq) {
            let m = 0.5 * (a + b);
            d += 0.5 * (kl_term(*a, m) + kl_term(*b, m));
        }
        total += d;
    }
    Ok(total / dim as f64)
}

/// Metric summary between two image sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fid: f64,
    pub jsd_raw: f64,
    /// Feature-space JSD on encoder latents; absent without an autoencoder.
    pub jsd_feat: Option<f64>,
    pub n_real: usize,
    pub n_fake: usize,
    pub under_sampled: bool,
    pub bins: usize,
    pub extractor: FeatureKind,
}

pub fn compare_images(
    real: &Tensor,
    fake: &Tensor,
    extractor: &FeatureExtractor,
    encoder: Option<&Autoencoder>,
    bins: usize,
) -> Result<MetricsReport> {
    let f = fid(real, fake, extractor)?;
    let jsd_feat = match encoder {
        Some(ae) => Some(jsd(&ae.encode(real)?, &ae.encode(fake)?, JsdSpace::Feature, bins)?),
        None => None,
    };
    Ok(MetricsReport {
        fid: f.fid,
        jsd_raw: jsd(real, fake, JsdSpace::Raw, bins)?,
        jsd_feat,
        n_real: f.n_real,
        n_fake: f.n_fake,
        under_sampled: f.under_sampled,
        bins,
        extractor: extractor.kind(),
    })
}
