use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generator::{Generator, GeneratorSpec, LatentGenerator};
use super::steps::{critic_step, generator_step};
use crate::autodiff::{AdamConfig, AdamState, Checkpoint, DType, Tensor};
use crate::data::epoch_batches;
use crate::error::{Error, Result};
use crate::metrics::{fid, jsd, FeatureExtractor, JsdSpace, DEFAULT_BINS};
use crate::nets::{Autoencoder, Mlp, MlpConfig};
use crate::rng::{standard_normal_vec, Streams};

pub const STEPS_FILE: &str = "steps.csv";
pub const EVALS_FILE: &str = "evals.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.lqg";
const STEPS_HEADER: &str = "step,loss_d,loss_g,wasserstein,gp";
const EVALS_HEADER: &str = "step,fid,jsd_raw,jsd_feat";

/// Adversarial training settings. Defaults follow the reference protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanTrainConfig {
    pub generator: GeneratorSpec,
    pub critic_hidden: [usize; 2],
    pub n_critic: usize,
    pub n_gen: usize,
    pub lambda_gp: f64,
    pub epochs: usize,
    /// Optional cap on generator updates, applied on top of `epochs`.
    pub max_gen_steps: Option<u64>,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub clip: f64,
    /// Generator updates between evaluations (and checkpoints).
    pub eval_interval: u64,
    pub eval_cohort: usize,
    pub jsd_bins: usize,
    pub seed: u64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            generator: GeneratorSpec::default(),
            critic_hidden: [125, 62],
            n_critic: 5,
            n_gen: 1,
            lambda_gp: 1.0,
            epochs: 10_000,
            max_gen_steps: None,
            batch_size: 256,
            lr_g: 0.0005,
            lr_d: 0.0008,
            beta1: 0.5,
            beta2: 0.999,
            weight_decay: 0.0,
            clip: 5.0,
            eval_interval: 100,
            eval_cohort: 2000,
            jsd_bins: DEFAULT_BINS,
            seed: 42,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n_critic < 1 || self.n_gen < 1 {
            return bad("n_critic and n_gen must be >= 1");
        }
        if !(self.lambda_gp >= 0.0) {
            return bad("lambda_gp must be >= 0");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be > 0");
        }
        if self.eval_interval == 0 || self.eval_cohort < 2 || self.jsd_bins < 2 {
            return bad("eval_interval >= 1, eval_cohort >= 2 and jsd_bins >= 2 required");
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }

    pub fn critic_config(&self, d_z: usize) -> MlpConfig {
        MlpConfig::critic(d_z, self.critic_hidden)
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::new(lr, self.beta1, self.beta2)
        }
    }
}

/// Losses logged after each generator update. Critic terms are averaged over
/// the critic updates made on the same real batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub wasserstein: f64,
    pub gp: f64,
}

impl StepRecord {
    fn csv(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.loss_d, self.loss_g, self.wasserstein, self.gp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub fid: f64,
    /// `NaN` when training without images.
    pub jsd_raw: f64,
    pub jsd_feat: f64,
}

impl EvalRecord {
    fn csv(&self) -> String {
        format!("{},{},{},{}", self.step, self.fid, self.jsd_raw, self.jsd_feat)
    }
}

/// Reference data for periodic evaluation.
pub struct EvalSetup<'a> {
    pub real_latents: Tensor,
    pub real_images: Option<Tensor>,
    pub decoder: Option<&'a Autoencoder>,
    /// Applied to images when a decoder is present, otherwise to latents.
    pub extractor: FeatureExtractor,
}

impl<'a> EvalSetup<'a> {
    /// Latent-space evaluation on the first `cohort` rows of `real`.
    pub fn latents(real: &Tensor, cohort: usize) -> Result<Self> {
        Ok(EvalSetup {
            real_latents: head_rows(real, cohort)?,
            real_images: None,
            decoder: None,
            extractor: FeatureExtractor::PixelFlatten,
        })
    }

    /// Image-space evaluation: generated latents are decoded and compared with
    /// `images`; `latents` are the encodings of the same images.
    pub fn images(latents: &Tensor, images: &Tensor, decoder: &'a Autoencoder, extractor: FeatureExtractor, cohort: usize) -> Result<Self> {
        Ok(EvalSetup {
            real_latents: head_rows(latents, cohort)?,
            real_images: Some(head_rows(images, cohort)?),
            decoder: Some(decoder),
            extractor,
        })
    }
}

fn head_rows(t: &Tensor, n: usize) -> Result<Tensor> {
    let rows = t.shape().first().copied().unwrap_or(0);
    let k = n.min(rows);
    let row = t.len() / rows.max(1);
    let mut shape = t.shape().to_vec();
    shape[0] = k;
    Tensor::new(shape, t.data()[..k * row].to_vec())
}

pub fn gather_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let row = t.len() / t.shape()[0];
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    let mut data = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    Tensor::new(shape, data).expect("row count matches")
}

pub struct TrainOutcome {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub generator: Generator,
    pub critic: Mlp,
    pub critic_updates: u64,
    pub generator_updates: u64,
}

/// All state needed to continue a run.
pub struct Trainer {
    pub config: GanTrainConfig,
    pub generator: Generator,
    pub critic: Mlp,
    adam_g: AdamState,
    adam_d: AdamState,
    streams: Streams,
    eval_noise: Tensor,
    batches_done: u64,
    gen_steps: u64,
}

impl Trainer {
    pub fn new(config: GanTrainConfig, d_z: usize) -> Result<Self> {
        config.validate()?;
        let streams = Streams::new(config.seed);
        let generator = config.generator.build(d_z, &mut streams.stream("generator-init"))?;
        let critic = Mlp::new(config.critic_config(d_z), &mut streams.stream("critic-init"));
        let adam_g = AdamState::new(config.adam(config.lr_g), generator.params());
        let adam_d = AdamState::new(config.adam(config.lr_d), &critic.params);
        let nd = generator.noise_dim();
        let eval_noise = Tensor::new(
            vec![config.eval_cohort, nd],
            standard_normal_vec(&mut streams.stream("eval-noise"), config.eval_cohort * nd),
        )?;
        Ok(Trainer {
            config,
            generator,
            critic,
            adam_g,
            adam_d,
            streams,
            eval_noise,
            batches_done: 0,
            gen_steps: 0,
        })
    }

    pub fn generator_updates(&self) -> u64 {
        self.adam_g.step_count()
    }

    pub fn critic_updates(&self) -> u64 {
        self.adam_d.step_count()
    }

    pub fn gen_steps(&self) -> u64 {
        self.gen_steps
    }

    fn noise(&self, name: &str, index: u64, rows: usize) -> Result<Tensor> {
        let nd = self.generator.noise_dim();
        let mut rng = self.streams.split_index(name, index).stream("noise");
        Tensor::new(vec![rows, nd], standard_normal_vec(&mut rng, rows * nd))
    }

    /// Runs `n_critic` critic updates and `n_gen` generator updates on one real
    /// batch, returning one record per generator update.
    pub fn train_batch(&mut self, z_real: &Tensor) -> Result<Vec<StepRecord>> {
        let rows = z_real.shape()[0];
        let cfg = &self.config;
        let (mut ld, mut lw, mut lgp) = (0.0, 0.0, 0.0);
        for j in 0..cfg.n_critic as u64 {
            let idx = self.batches_done * cfg.n_critic as u64 + j;
            let noise = self.noise("critic-noise", idx, rows)?;
            let z_fake = self.generator.generate(&noise)?;
            let mut gp_rng = self.streams.split_index("gp", idx).stream("eps");
            let s = critic_step(&mut self.critic, &mut self.adam_d, z_real, &z_fake, cfg.lambda_gp, cfg.clip, &mut gp_rng)
                .map_err(|e| with_step(e, self.gen_steps + 1))?;
            ld += s.loss_d;
            lw += s.wasserstein;
            lgp += s.gp;
        }
        let k = cfg.n_critic as f64;
        let mut out = Vec::with_capacity(cfg.n_gen);
        for j in 0..cfg.n_gen as u64 {
            let idx = self.batches_done * self.config.n_gen as u64 + j;
            let noise = self.noise("gen-noise", idx, rows)?;
            let loss_g = generator_step(&mut self.generator, &mut self.adam_g, &self.critic, &noise, self.config.clip)
                .map_err(|e| with_step(e, self.gen_steps + 1))?;
            self.gen_steps += 1;
            out.push(StepRecord {
                step: self.gen_steps,
                loss_d: ld / k,
                loss_g,
                wasserstein: lw / k,
                gp: lgp / k,
            });
        }
        self.batches_done += 1;
        Ok(out)
    }

    /// Metrics of the fixed evaluation cohort at the current step.
    pub fn evaluate(&self, eval: &EvalSetup) -> Result<EvalRecord> {
        let z = self.generator.generate(&self.eval_noise)?;
        let bins = self.config.jsd_bins;
        let jsd_feat = jsd(&eval.real_latents, &z, JsdSpace::Feature, bins)?;
        let (fid_v, jsd_raw) = match (eval.decoder, &eval.real_images) {
            (Some(dec), Some(real)) => {
                let fake = dec.decode(&z)?;
                (fid(real, &fake, &eval.extractor)?.fid, jsd(real, &fake, JsdSpace::Raw, bins)?)
            }
            _ => (fid(&eval.real_latents, &z, &eval.extractor)?.fid, f64::NAN),
        };
        Ok(EvalRecord {
            step: self.gen_steps,
            fid: fid_v,
            jsd_raw,
            jsd_feat,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.push(
            "train.state",
            DType::F64,
            Tensor::from_vec(vec![self.batches_done as f64, self.gen_steps as f64]),
        );
        self.generator.to_checkpoint(&mut c);
        c.push_params("critic.", &self.critic.params);
        self.adam_g.to_checkpoint("adam_g.", &mut c);
        self.adam_d.to_checkpoint("adam_d.", &mut c);
        c
    }

    pub fn restore(&mut self, c: &Checkpoint) -> Result<()> {
        let s = c.require("train.state")?.data().to_vec();
        if s.len() != 2 {
            return Err(Error::Checkpoint("train.state must hold [batches, steps]".into()));
        }
        self.generator.load(c)?;
        self.critic.params.assign(&c.params_with_prefix("critic."))?;
        self.adam_g = AdamState::from_checkpoint(self.adam_g.config, self.generator.params(), "adam_g.", c)?;
        self.adam_d = AdamState::from_checkpoint(self.adam_d.config, &self.critic.params, "adam_d.", c)?;
        self.batches_done = s[0] as u64;
        self.gen_steps = s[1] as u64;
        Ok(())
    }
}

fn with_step(e: Error, step: u64) -> Error {
    match e {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("{context} at generator step {step}"),
        },
        other => other,
    }
}

struct RunFiles {
    dir: PathBuf,
}

impl RunFiles {
    fn open(dir: &Path, resume_step: Option<u64>) -> Result<(Self, Vec<StepRecord>, Vec<EvalRecord>)> {
        fs::create_dir_all(dir)?;
        let files = RunFiles { dir: dir.to_path_buf() };
        let (steps, evals) = match resume_step {
            Some(upto) => {
                let steps: Vec<StepRecord> = read_steps(&dir.join(STEPS_FILE))?.into_iter().filter(|r| r.step <= upto).collect();
                let evals: Vec<EvalRecord> = read_evals(&dir.join(EVALS_FILE))?.into_iter().filter(|r| r.step <= upto).collect();
                (steps, evals)
            }
            None => (Vec::new(), Vec::new()),
        };
        let mut s = String::from(STEPS_HEADER);
        s.push('\n');
        for r in &steps {
            s.push_str(&r.csv());
            s.push('\n');
        }
        fs::write(dir.join(STEPS_FILE), s)?;
        let mut e = String::from(EVALS_HEADER);
        e.push('\n');
        for r in &evals {
            e.push_str(&r.csv());
            e.push('\n');
        }
        fs::write(dir.join(EVALS_FILE), e)?;
        Ok((files, steps, evals))
    }

    fn append(&self, file: &str, line: &str) -> Result<()> {
        let mut f = OpenOptions::new().append(true).open(self.dir.join(file))?;
        writeln!(f, "{line}")?;
        Ok(())
    }

    fn checkpoint(&self, c: &Checkpoint) -> Result<()> {
        let tmp = self.dir.join(format!("{CHECKPOINT_FILE}.tmp"));
        c.save(&tmp)?;
        fs::rename(tmp, self.dir.join(CHECKPOINT_FILE))?;
        Ok(())
    }
}

fn parse_fields(line: &str, n: usize, path: &Path) -> Result<Vec<f64>> {
    let v: Vec<f64> = line
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Data(format!("{}: bad line {line:?}: {e}", path.display())))?;
    if v.len() != n {
        return Err(Error::Data(format!("{}: expected {n} fields in {line:?}", path.display())));
    }
    Ok(v)
}

pub fn read_steps(path: &Path) -> Result<Vec<StepRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let v = parse_fields(l, 5, path)?;
            Ok(StepRecord {
                step: v[0] as u64,
                loss_d: v[1],
                loss_g: v[2],
                wasserstein: v[3],
                gp: v[4],
            })
        })
        .collect()
}

pub fn read_evals(path: &Path) -> Result<Vec<EvalRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let v = parse_fields(l, 4, path)?;
            Ok(EvalRecord {
                step: v[0] as u64,
                fid: v[1],
                jsd_raw: v[2],
                jsd_feat: v[3],
            })
        })
        .collect()
}

/// Full adversarial training on a pool of real latents `[N, d_z]`.
///
/// Each epoch walks the pool in shuffled batches; every batch receives
/// `n_critic` critic updates followed by `n_gen` generator updates. With
/// `out_dir`, records stream to CSV files and a checkpoint is written at every
/// evaluation; an existing checkpoint there is resumed from.
pub fn train(
    config: &GanTrainConfig,
    real: &Tensor,
    eval: &EvalSetup,
    out_dir: Option<&Path>,
    mut on_eval: impl FnMut(&EvalRecord),
) -> Result<TrainOutcome> {
    let (n, d_z) = match real.shape() {
        [n, d] if *n >= 2 => (*n, *d),
        s => return Err(Error::Data(format!("need at least 2 real latents [N,d], got {s:?}"))),
    };
    let mut trainer = Trainer::new(config.clone(), d_z)?;
    let ckpt_path = out_dir.map(|d| d.join(CHECKPOINT_FILE));
    let resume = match &ckpt_path {
        Some(p) if p.exists() => {
            trainer.restore(&Checkpoint::load(p)?)?;
            Some(trainer.gen_steps)
        }
        _ => None,
    };
    let (files, mut steps, mut evals) = match out_dir {
        Some(d) => {
            let (f, s, e) = RunFiles::open(d, resume)?;
            (Some(f), s, e)
        }
        None => (None, Vec::new(), Vec::new()),
    };
    let batches_of = |epoch: usize| -> Vec<Vec<usize>> {
        epoch_batches(n, config.batch_size, config.seed, epoch as u64)
            .into_iter()
            .filter(|b| b.len() >= 2)
            .collect()
    };
    let per_epoch = batches_of(0).len() as u64;
    let budget_left = |t: &Trainer| config.max_gen_steps.is_none_or(|m| t.gen_steps < m);
    let start_epoch = (trainer.batches_done / per_epoch) as usize;
    let mut skip = (trainer.batches_done % per_epoch) as usize;
    'outer: for epoch in start_epoch..config.epochs {
        for batch in batches_of(epoch).into_iter().skip(skip) {
            if !budget_left(&trainer) {
                break 'outer;
            }
            let z_real = gather_rows(real, &batch);
            let records = trainer.train_batch(&z_real)?;
            let mut evaluated = false;
            for r in records {
                if let Some(f) = &files {
                    f.append(STEPS_FILE, &r.csv())?;
                }
                steps.push(r);
                if r.step % config.eval_interval == 0 {
                    let e = trainer.evaluate(eval)?;
                    if let Some(f) = &files {
                        f.append(EVALS_FILE, &e.csv())?;
                    }
                    on_eval(&e);
                    evals.push(e);
                    evaluated = true;
                }
            }
            if evaluated {
                if let Some(f) = &files {
                    f.checkpoint(&trainer.to_checkpoint())?;
                }
            }
        }
        skip = 0;
    }
    if let Some(f) = &files {
        f.checkpoint(&trainer.to_checkpoint())?;
    }
    Ok(TrainOutcome {
        steps,
        evals,
        critic_updates: trainer.critic_updates(),
        generator_updates: trainer.generator_updates(),
        generator: trainer.generator,
        critic: trainer.critic,
    })
}

