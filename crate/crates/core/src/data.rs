//! Image datasets: the LQGD binary format, seeded sub-selection, epoch
//! batching and procedurally generated stand-in data.
//!
//! Images are stored `[n, H, W, C]` with pixels in `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::Streams;

pub const MAGIC: &[u8; 4] = b"LQGD";
const PIXEL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    images: Tensor,
    pub source: String,
    pub seed: Option<u64>,
}

impl ImageDataset {
    /// Validates shape and pixel range. Pixels within `1e-6` outside `[0,1]`
    /// are clamped.
    pub fn new(images: Tensor, source: impl Into<String>) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::Data(format!("images must be [n,H,W,C], got {:?}", images.shape())));
        }
        let mut images = images;
        for v in images.data_mut() {
            if !v.is_finite() || *v < -PIXEL_TOL || *v > 1.0 + PIXEL_TOL {
                return Err(Error::Data(format!("pixel value {v} outside [0,1]")));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(ImageDataset {
            images,
            source: source.into(),
            seed: None,
        })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(H, W, C)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn image_len(&self) -> usize {
        let (h, w, c) = self.dims();
        h * w * c
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.images.data()[i * n..(i + 1) * n]
    }

    /// Stacks the listed images into `[k, H, W, C]`.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let (h, w, c) = self.dims();
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::new(vec![indices.len(), h, w, c], data).expect("gathered length matches")
    }

    pub fn select(&self, indices: &[usize]) -> ImageDataset {
        ImageDataset {
            images: self.gather(indices),
            source: self.source.clone(),
            seed: self.seed,
        }
    }

    /// `n` images drawn without replacement from the `seed` stream.
    pub fn subselect(&self, n: usize, seed: u64) -> Result<ImageDataset> {
        let idx = subselect_indices(self.len(), n, seed)?;
        let mut out = self.select(&idx);
        out.seed = Some(seed);
        Ok(out)
    }

    /// Splits off the last `round(len * val_fraction)` images for validation.
    pub fn split(&self, val_fraction: f64) -> Result<(ImageDataset, ImageDataset)> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::Config(format!("validation fraction {val_fraction} not in [0,1)")));
        }
        let n_val = (self.len() as f64 * val_fraction).round() as usize;
        let n_train = self.len() - n_val;
        let train: Vec<usize> = (0..n_train).collect();
        let val: Vec<usize> = (n_train..self.len()).collect();
        Ok((self.select(&train), self.select(&val)))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        let (h, wd, c) = self.dims();
        for d in [self.len(), h, wd, c] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in self.images.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read, source: &str) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Data("file too short for header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Data(format!("bad magic {magic:?}, expected LQGD")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| Error::Data("truncated header".into()))?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let total = dims.iter().product::<usize>();
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != total * 4 {
            return Err(Error::Data(format!(
                "header declares {total} values ({:?}) but payload holds {} bytes",
                dims,
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Self::new(Tensor::new(dims.to_vec(), data)?, source)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Self::read_from(&mut BufReader::new(f), &path.display().to_string())
    }
}

pub fn subselect_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::Data(format!("cannot select {n} images from {len}")));
    }
    let mut rng = Streams::new(seed).stream("subselect");
    Ok(index::sample(&mut rng, len, n).into_vec())
}

/// Shuffled batches covering `0..len` exactly once; the order depends only on
/// `(seed, epoch)`. The last batch may be short.
pub fn epoch_batches(len: usize, batch: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = Streams::new(seed).split_index("shuffle", epoch).stream("perm");
    order.shuffle(&mut rng);
    order.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    GaussianBlobs,
    StripedFields,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-blobs" => Ok(SynthKind::GaussianBlobs),
            "striped-fields" => Ok(SynthKind::StripedFields),
            _ => Err(Error::Config(format!("unknown synthetic kind {s:?}"))),
        }
    }
}

pub const SYNTH_SIDE: usize = 28;
pub const SYNTH_CHANNELS: usize = 3;
pub const SYNTH_CLASSES: usize = 4;

const PALETTE: [[f64; 3]; SYNTH_CLASSES] = [
    [0.85, 0.25, 0.20],
    [0.20, 0.75, 0.30],
    [0.25, 0.35, 0.90],
    [0.90, 0.85, 0.25],
];

/// Procedural 28x28x3 images in four classes, with class labels. Pixels are
/// rounded to `f32` so the in-memory data survives an LQGD round trip.
pub fn synth_dataset_labeled(n: usize, seed: u64, kind: SynthKind) -> Result<(ImageDataset, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Config("synthetic dataset needs n >= 1".into()));
    }
    let mut rng = Streams::new(seed).stream("synth");
    let noise = Normal::new(0.0, 0.04).expect("valid sigma");
    let side = SYNTH_SIDE;
    let mut data = Vec::with_capacity(n * side * side * SYNTH_CHANNELS);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.gen_range(0..SYNTH_CLASSES);
        labels.push(class);
        let color = PALETTE[class];
        let intensity: f64 = rng.gen_range(0.7..1.0);
        match kind {
            SynthKind::GaussianBlobs => {
                let (qx, qy) = ((class % 2) as f64, (class / 2) as f64);
                let cx = 7.0 + 14.0 * qx + rng.gen_range(-2.0..2.0);
                let cy = 7.0 + 14.0 * qy + rng.gen_range(-2.0..2.0);
                let sigma: f64 = rng.gen_range(3.0..5.0);
                for y in 0..side {
                    for x in 0..side {
                        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                        let a = intensity * (-d2 / (2.0 * sigma * sigma)).exp();
                        for c in color {
                            data.push(pixel(0.1 + 0.8 * a * c + noise.sample(&mut rng)));
                        }
                    }
                }
            }
            SynthKind::StripedFields => {
                let angle = class as f64 * std::f64::consts::FRAC_PI_4;
                let period: f64 = rng.gen_range(5.0..8.0);
                let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let (s, co) = angle.sin_cos();
                for y in 0..side {
                    for x in 0..side {
                        let t = (x as f64 * co + y as f64 * s) * std::f64::consts::TAU / period + phase;
                        let a = intensity * 0.5 * (1.0 + t.sin());
                        for c in color {
                            data.push(pixel(0.05 + 0.9 * a * c + noise.sample(&mut rng)));
                        }
                    }
                }
            }
        }
    }
    let images = Tensor::new(vec![n, side, side, SYNTH_CHANNELS], data)?;
    let mut ds = ImageDataset::new(images, format!("synth:{kind:?}"))?;
    ds.seed = Some(seed);
    Ok((ds, labels))
}

pub fn synth_dataset(n: usize, seed: u64, kind: SynthKind) -> Result<ImageDataset> {
    synth_dataset_labeled(n, seed, kind).map(|(d, _)| d)
}

fn pixel(v: f64) -> f64 {
    v.clamp(0.0, 1.0) as f32 as f64
}
