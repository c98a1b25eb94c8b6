use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{lecun_normal, AdamConfig, AdamState, Checkpoint, ConvGeom, DType, Graph, ParamSet, Tensor, Var};
use crate::data::{epoch_batches, ImageDataset};
use crate::error::{Error, Result};
use crate::metrics::{rfid, FeatureExtractor, FeatureKind, Reconstructor};
use crate::rng::{StreamRng, Streams};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const EVAL_CHUNK: usize = 128;

/// Convolutional autoencoder geometry. Field names follow the JSON config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub conv_channels: [usize; 2],
    pub fc_width: usize,
    pub d_z: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dropout: f64,
    pub batchnorm: bool,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            height: 28,
            width: 28,
            channels: 3,
            conv_channels: [64, 128],
            fc_width: 1024,
            d_z: 24,
            kernel: 4,
            stride: 2,
            padding: 1,
            dropout: 0.0,
            batchnorm: true,
        }
    }
}

impl AeConfig {
    fn geom(&self) -> ConvGeom {
        ConvGeom {
            stride: self.stride,
            pad: self.padding,
        }
    }

    /// Spatial sizes after the first and second convolution.
    pub fn feature_hw(&self) -> Result<[(usize, usize); 2]> {
        let g = self.geom();
        let k = self.kernel;
        if self.stride == 0 || self.height + 2 * self.padding < k || self.width + 2 * self.padding < k {
            return Err(Error::Config("kernel larger than padded image".into()));
        }
        let h1 = (g.out_len(self.height, k), g.out_len(self.width, k));
        if h1.0 + 2 * self.padding < k || h1.1 + 2 * self.padding < k {
            return Err(Error::Config("kernel larger than first feature map".into()));
        }
        let h2 = (g.out_len(h1.0, k), g.out_len(h1.1, k));
        Ok([h1, h2])
    }

    pub fn flat_dim(&self) -> Result<usize> {
        let [_, (h, w)] = self.feature_hw()?;
        Ok(self.conv_channels[1] * h * w)
    }

    pub fn validate(&self) -> Result<()> {
        let [h1, h2] = self.feature_hw()?;
        let (g, k) = (self.geom(), self.kernel);
        let up1 = (g.transposed_len(h2.0, k), g.transposed_len(h2.1, k));
        let up2 = (g.transposed_len(h1.0, k), g.transposed_len(h1.1, k));
        if up1 != h1 || up2 != (self.height, self.width) {
            return Err(Error::Config(format!(
                "decoder does not mirror encoder: {}x{} -> {h1:?} -> {h2:?} -> {up1:?} -> {up2:?}",
                self.height, self.width
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate {} not in [0,1)", self.dropout)));
        }
        if self.d_z == 0 || self.fc_width == 0 || self.conv_channels.contains(&0) {
            return Err(Error::Config("autoencoder widths must be positive".into()));
        }
        Ok(())
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// Exponential moving averages of batch-norm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    fn new(c: usize) -> Self {
        RunningStats {
            mean: vec![0.0; c],
            var: vec![1.0; c],
        }
    }

    fn update(&mut self, mean: &[f64], var: &[f64], count: usize) {
        let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        for (r, m) in self.mean.iter_mut().zip(mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in self.var.iter_mut().zip(var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
        }
    }
}

/// Forward-pass mode. Training uses batch statistics and, when the dropout rate
/// is positive, fresh masks from `rng`.
pub struct Pass<'a> {
    pub train: bool,
    pub rng: Option<&'a mut StreamRng>,
    /// Batch mean/variance and element count per batch-norm layer, in order.
    pub batch_stats: Vec<(Vec<f64>, Vec<f64>, usize)>,
}

impl<'a> Pass<'a> {
    pub fn eval() -> Self {
        Pass {
            train: false,
            rng: None,
            batch_stats: Vec::new(),
        }
    }

    pub fn train(rng: Option<&'a mut StreamRng>) -> Self {
        Pass {
            train: true,
            rng,
            batch_stats: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub config: AeConfig,
    pub params: ParamSet,
    /// Encoder conv 1, encoder conv 2, decoder deconv 1.
    pub running: Vec<RunningStats>,
}

fn layout(cfg: &AeConfig) -> Result<Vec<(String, Vec<usize>, usize)>> {
    let [c1, c2] = cfg.conv_channels;
    let (c, k, fc, dz) = (cfg.channels, cfg.kernel, cfg.fc_width, cfg.d_z);
    let flat = cfg.flat_dim()?;
    let mut out: Vec<(String, Vec<usize>, usize)> = Vec::new();
    let mut layer = |name: &str, w: Vec<usize>, fan_in: usize, ch: usize, bn: bool| {
        out.push((format!("{name}.w"), w, fan_in));
        out.push((format!("{name}.b"), vec![ch], 0));
        if bn {
            out.push((format!("{name}.bn.gamma"), vec![ch], 0));
            out.push((format!("{name}.bn.beta"), vec![ch], 0));
        }
    };
    let bn = cfg.batchnorm;
    layer("enc.conv1", vec![c1, c, k, k], c * k * k, c1, bn);
    layer("enc.conv2", vec![c2, c1, k, k], c1 * k * k, c2, bn);
    layer("enc.fc1", vec![flat, fc], flat, fc, false);
    layer("enc.fc2", vec![fc, dz], fc, dz, false);
    layer("dec.fc1", vec![dz, fc], dz, fc, false);
    layer("dec.fc2", vec![fc, flat], fc, flat, false);
    layer("dec.deconv1", vec![c2, c1, k, k], c2 * k * k, c1, bn);
    layer("dec.deconv2", vec![c1, c, k, k], c1 * k * k, c, false);
    Ok(out)
}

fn build(cfg: &AeConfig, mut init: impl FnMut(&[usize], usize) -> Tensor) -> Result<ParamSet> {
    cfg.validate()?;
    let mut params = ParamSet::new();
    for (name, shape, fan_in) in layout(cfg)? {
        let t = if fan_in > 0 {
            init(&shape, fan_in)
        } else if name.ends_with(".gamma") {
            Tensor::ones(&shape)
        } else {
            Tensor::zeros(&shape)
        };
        params.push(name, t);
    }
    Ok(params)
}

/// `[n,H,W,C]` to `[n,C,H,W]`.
pub fn nhwc_to_nchw(x: &Tensor) -> Result<Tensor> {
    let [n, h, w, c] = dims4(x)?;
    let src = x.data();
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                for ch in 0..c {
                    out[((b * c + ch) * h + y) * w + xx] = src[((b * h + y) * w + xx) * c + ch];
                }
            }
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}

/// `[n,C,H,W]` to `[n,H,W,C]`.
pub fn nchw_to_nhwc(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = dims4(x)?;
    let src = x.data();
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[((b * h + y) * w + xx) * c + ch] = src[((b * c + ch) * h + y) * w + xx];
                }
            }
        }
    }
    Tensor::new(vec![n, h, w, c], out)
}

fn dims4(x: &Tensor) -> Result<[usize; 4]> {
    x.shape()
        .try_into()
        .map_err(|_| Error::shape("image_layout", x.shape(), &[0, 0, 0, 0]))
}

impl Autoencoder {
    pub fn new(config: AeConfig, rng: &mut StreamRng) -> Result<Self> {
        let params = build(&config, |shape, fan_in| lecun_normal(shape, fan_in, rng))?;
        Ok(Self::with_params(config, params))
    }

    pub fn zeros(config: AeConfig) -> Result<Self> {
        let params = build(&config, |shape, _| Tensor::zeros(shape))?;
        Ok(Self::with_params(config, params))
    }

    fn with_params(config: AeConfig, params: ParamSet) -> Self {
        let [c1, c2] = config.conv_channels;
        Autoencoder {
            running: vec![RunningStats::new(c1), RunningStats::new(c2), RunningStats::new(c1)],
            config,
            params,
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|(_, t)| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    fn var(&self, vars: &[Var], name: &str) -> Var {
        let i = self.params.names().iter().position(|n| *n == name).expect("known parameter name");
        vars[i]
    }

    fn channel_bias(g: &mut Graph, y: Var, b: Var) -> Result<Var> {
        let shape = g.shape(y).to_vec();
        let b = g.reshape(b, &[1, shape[1], 1, 1])?;
        let b = g.broadcast_to(b, &shape)?;
        g.add(y, b)
    }

    fn norm(&self, g: &mut Graph, vars: &[Var], name: &str, slot: usize, y: Var, pass: &mut Pass) -> Result<Var> {
        if !self.config.batchnorm {
            return Ok(y);
        }
        let gamma = self.var(vars, &format!("{name}.bn.gamma"));
        let beta = self.var(vars, &format!("{name}.bn.beta"));
        if pass.train {
            let count = g.value(y).len() / g.shape(y)[1];
            let (out, m, v) = g.batch_norm(y, gamma, beta, BN_EPS)?;
            pass.batch_stats.push((m, v, count));
            Ok(out)
        } else {
            let r = &self.running[slot];
            g.batch_norm_fixed(y, gamma, beta, &r.mean, &r.var, BN_EPS)
        }
    }

    fn dropout(&self, g: &mut Graph, x: Var, pass: &mut Pass) -> Result<Var> {
        let p = self.config.dropout;
        if !pass.train || p == 0.0 {
            return Ok(x);
        }
        let rng = pass
            .rng
            .as_deref_mut()
            .ok_or_else(|| Error::Config("dropout in training mode needs a random stream".into()))?;
        let shape = g.shape(x).to_vec();
        let keep = 1.0 / (1.0 - p);
        let n = shape.iter().product();
        let mask = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        g.dropout(x, Tensor::new(shape, mask)?)
    }

    fn dense(&self, g: &mut Graph, vars: &[Var], name: &str, x: Var) -> Result<Var> {
        let w = self.var(vars, &format!("{name}.w"));
        let b = self.var(vars, &format!("{name}.b"));
        g.linear(x, w, b)
    }

    /// Encoder on `[n,C,H,W]` input; output `[n, d_z]` in `[-1, 1]`.
    pub fn encode_graph(&self, g: &mut Graph, vars: &[Var], x: Var, pass: &mut Pass) -> Result<Var> {
        let c = &self.config;
        let s = g.shape(x);
        if s.len() != 4 || s[1..] != [c.channels, c.height, c.width] {
            return Err(Error::shape("ae_encode", s, &[0, c.channels, c.height, c.width]));
        }
        let geom = c.geom();
        let mut h = x;
        for (i, name) in ["enc.conv1", "enc.conv2"].into_iter().enumerate() {
            let w = self.var(vars, &format!("{name}.w"));
            let b = self.var(vars, &format!("{name}.b"));
            h = g.conv2d(h, w, geom)?;
            h = Self::channel_bias(g, h, b)?;
            h = self.norm(g, vars, name, i, h, pass)?;
            h = g.relu(h);
        }
        let n = g.shape(h)[0];
        h = g.reshape(h, &[n, c.flat_dim()?])?;
        h = self.dense(g, vars, "enc.fc1", h)?;
        h = g.relu(h);
        h = self.dropout(g, h, pass)?;
        h = self.dense(g, vars, "enc.fc2", h)?;
        Ok(g.tanh(h))
    }

    /// Decoder on `[n, d_z]`; output `[n,C,H,W]` in `[0, 1]`.
    pub fn decode_graph(&self, g: &mut Graph, vars: &[Var], z: Var, pass: &mut Pass) -> Result<Var> {
        let c = &self.config;
        let s = g.shape(z);
        if s.len() != 2 || s[1] != c.d_z {
            return Err(Error::shape("ae_decode", s, &[0, c.d_z]));
        }
        let n = s[0];
        let [_, (h2, w2)] = c.feature_hw()?;
        let geom = c.geom();
        let mut h = self.dense(g, vars, "dec.fc1", z)?;
        h = g.relu(h);
        h = self.dropout(g, h, pass)?;
        h = self.dense(g, vars, "dec.fc2", h)?;
        h = g.relu(h);
        h = g.reshape(h, &[n, c.conv_channels[1], h2, w2])?;
        let w = self.var(vars, "dec.deconv1.w");
        let b = self.var(vars, "dec.deconv1.b");
        h = g.conv_transpose2d(h, w, geom)?;
        h = Self::channel_bias(g, h, b)?;
        h = self.norm(g, vars, "dec.deconv1", 2, h, pass)?;
        h = g.relu(h);
        let w = self.var(vars, "dec.deconv2.w");
        let b = self.var(vars, "dec.deconv2.b");
        h = g.conv_transpose2d(h, w, geom)?;
        h = Self::channel_bias(g, h, b)?;
        Ok(g.sigmoid(h))
    }

    /// Mean squared reconstruction error of `[n,H,W,C]` images.
    pub fn loss_graph(&self, g: &mut Graph, vars: &[Var], images: &Tensor, pass: &mut Pass) -> Result<Var> {
        let x = g.constant(nhwc_to_nchw(images)?);
        let z = self.encode_graph(g, vars, x, pass)?;
        let y = self.decode_graph(g, vars, z, pass)?;
        let d = g.sub(y, x)?;
        let sq = g.mul(d, d)?;
        g.mean(sq)
    }

    fn check_images(&self, images: &Tensor) -> Result<()> {
        let c = &self.config;
        match images.shape() {
            [_, h, w, ch] if (*h, *w, *ch) == (c.height, c.width, c.channels) => Ok(()),
            s => Err(Error::Data(format!(
                "expected images [n,{},{},{}], got {s:?}",
                c.height, c.width, c.channels
            ))),
        }
    }

    fn chunked(&self, x: &Tensor, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
        let n = x.shape()[0];
        let row = x.len() / n.max(1);
        let mut data = Vec::new();
        let mut shape = Vec::new();
        for start in (0..n).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(n);
            let mut s = x.shape().to_vec();
            s[0] = end - start;
            let chunk = Tensor::new(s, x.data()[start * row..end * row].to_vec())?;
            let out = f(&chunk)?;
            shape = out.shape().to_vec();
            data.extend(out.into_data());
        }
        if n == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        shape[0] = n;
        Tensor::new(shape, data)
    }

    /// Evaluation-mode latents of `[n,H,W,C]` images.
    pub fn encode(&self, images: &Tensor) -> Result<Tensor> {
        self.check_images(images)?;
        self.chunked(images, |x| {
            let mut g = Graph::new();
            let vars = self.bind(&mut g, false);
            let xv = g.constant(nhwc_to_nchw(x)?);
            let z = self.encode_graph(&mut g, &vars, xv, &mut Pass::eval())?;
            Ok(g.value(z).clone())
        })
    }

    /// Evaluation-mode images `[n,H,W,C]` from `[n, d_z]` latents.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.chunked(z, |zc| {
            let mut g = Graph::new();
            let vars = self.bind(&mut g, false);
            let zv = g.constant(zc.clone());
            let y = self.decode_graph(&mut g, &vars, zv, &mut Pass::eval())?;
            nchw_to_nhwc(g.value(y))
        })
    }

    pub fn mse(&self, images: &Tensor) -> Result<f64> {
        let rec = self.reconstruct(images)?;
        let sq: f64 = rec.data().iter().zip(images.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(sq / images.len() as f64)
    }

    pub fn update_running(&mut self, stats: &[(Vec<f64>, Vec<f64>, usize)]) {
        for (r, (m, v, n)) in self.running.iter_mut().zip(stats) {
            r.update(m, v, *n);
        }
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) {
        ckpt.push_params("ae.", &self.params);
        for (i, r) in self.running.iter().enumerate() {
            ckpt.push(format!("ae_bn.{i}.mean"), DType::F64, Tensor::from_vec(r.mean.clone()));
            ckpt.push(format!("ae_bn.{i}.var"), DType::F64, Tensor::from_vec(r.var.clone()));
        }
    }

    pub fn from_checkpoint(config: AeConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut ae = Self::zeros(config)?;
        ae.params.assign(&ckpt.params_with_prefix("ae."))?;
        for (i, r) in ae.running.iter_mut().enumerate() {
            let m = ckpt.require(&format!("ae_bn.{i}.mean"))?;
            let v = ckpt.require(&format!("ae_bn.{i}.var"))?;
            if m.len() != r.mean.len() || v.len() != r.var.len() {
                return Err(Error::Checkpoint(format!("running statistics {i} have the wrong size")));
            }
            r.mean = m.data().to_vec();
            r.var = v.data().to_vec();
        }
        Ok(ae)
    }
}

impl Reconstructor for Autoencoder {
    fn reconstruct(&self, images: &Tensor) -> Result<Tensor> {
        self.check_images(images)?;
        self.chunked(images, |x| {
            let mut g = Graph::new();
            let vars = self.bind(&mut g, false);
            let xv = g.constant(nhwc_to_nchw(x)?);
            let mut pass = Pass::eval();
            let z = self.encode_graph(&mut g, &vars, xv, &mut pass)?;
            let y = self.decode_graph(&mut g, &vars, z, &mut pass)?;
            nchw_to_nhwc(g.value(y))
        })
    }
}

/// Autoencoder optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    pub extractor: FeatureKind,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        AeTrainConfig {
            epochs: 100,
            batch_size: 12,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            validation_fraction: 0.1,
            seed: 42,
            extractor: FeatureKind::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeEpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub rfid: Option<f64>,
}

/// Trains on the first 90% (by default) of `dataset`, evaluating validation MSE
/// and rFID after every epoch.
pub fn train_ae(
    config: AeConfig,
    train: &AeTrainConfig,
    dataset: &ImageDataset,
    mut on_epoch: impl FnMut(&AeEpochRecord),
) -> Result<(Autoencoder, Vec<AeEpochRecord>)> {
    if dataset.is_empty() {
        return Err(Error::Data("autoencoder training needs a non-empty dataset".into()));
    }
    let (h, w, c) = dataset.dims();
    if (h, w, c) != (config.height, config.width, config.channels) {
        return Err(Error::Data(format!(
            "dataset images are {h}x{w}x{c}, autoencoder expects {}x{}x{}",
            config.height, config.width, config.channels
        )));
    }
    if train.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let streams = Streams::new(train.seed);
    let mut ae = Autoencoder::new(config, &mut streams.stream("ae-init"))?;
    let (train_set, val_set) = dataset.split(train.validation_fraction)?;
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let extractor = FeatureExtractor::from_kind(&train.extractor, ae.config.image_len(), None)?;
    let adam_cfg = AdamConfig {
        weight_decay: train.weight_decay,
        ..AdamConfig::new(train.learning_rate, train.beta1, train.beta2)
    };
    let mut adam = AdamState::new(adam_cfg, &ae.params);
    let mut history = Vec::with_capacity(train.epochs);
    let mut step = 0u64;
    for epoch in 0..train.epochs {
        let mut sum = 0.0;
        for batch in epoch_batches(train_set.len(), train.batch_size, train.seed, epoch as u64) {
            let images = train_set.gather(&batch);
            let mut g = Graph::new();
            let vars = ae.bind(&mut g, true);
            let mut rng = streams.split_index("ae-dropout", step).stream("mask");
            let mut pass = Pass::train(Some(&mut rng));
            let loss = ae.loss_graph(&mut g, &vars, &images, &mut pass)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("autoencoder loss at epoch {epoch}"),
                });
            }
            let grads = g.gradients(loss, &vars)?;
            adam.step(&mut ae.params, &grads)?;
            let stats = std::mem::take(&mut pass.batch_stats);
            ae.update_running(&stats);
            sum += lv * batch.len() as f64;
            step += 1;
        }
        let (val_mse, rfid_v) = if val_set.len() >= 2 {
            let v = val_set.images();
            (Some(ae.mse(v)?), Some(rfid(&ae, v, &extractor)?.fid))
        } else {
            (None, None)
        };
        let rec = AeEpochRecord {
            epoch,
            train_mse: sum / train_set.len() as f64,
            val_mse,
            rfid: rfid_v,
        };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok((ae, history))
}
