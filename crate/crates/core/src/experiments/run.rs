use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::optimality::{detect_optimality, Optimality, OptimalityThresholds};
use crate::autodiff::{Checkpoint, Tensor};
use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::gan::{read_evals, read_steps, train, EvalRecord, EvalSetup, GanTrainConfig, ToyTarget, EVALS_FILE, STEPS_FILE};
use crate::metrics::{FeatureExtractor, FeatureKind};
use crate::nets::{train_ae, AeConfig, AeTrainConfig, Autoencoder, MlpConfig};

pub const CONFIG_FILE: &str = "config.json";
pub const VERDICT_FILE: &str = "verdict.json";
pub const AE_CHECKPOINT_FILE: &str = "ae.lqg";

/// Image data compressed by an autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSource {
    /// Dataset file in the native image format.
    pub dataset: PathBuf,
    /// Random subset size drawn with the run seed; all images when absent.
    #[serde(default)]
    pub n_images: Option<usize>,
    #[serde(default)]
    pub ae: AeConfig,
    #[serde(default)]
    pub ae_train: AeTrainConfig,
    /// Pretrained autoencoder; trained per seed when absent.
    #[serde(default)]
    pub ae_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Toy(ToyTarget),
    Images(ImageSource),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Toy(ToyTarget::default())
    }
}

impl DataSource {
    pub fn latent_dim(&self) -> usize {
        match self {
            DataSource::Toy(t) => t.latent_dim(),
            DataSource::Images(s) => s.ae.d_z,
        }
    }
}

/// Everything one training run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: GanTrainConfig,
    pub data: DataSource,
    pub thresholds: OptimalityThresholds,
    /// Image features for evaluation when training on images.
    pub extractor: FeatureKind,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let d_z = self.data.latent_dim();
        self.train.generator.param_count(d_z)?;
        if let DataSource::Images(s) = &self.data {
            s.ae.validate()?;
        }
        Ok(())
    }
}

/// Real data for a run: latents, and for image sources the images and the
/// autoencoder that maps between the two.
pub struct PreparedData {
    pub latents: Tensor,
    pub images: Option<Tensor>,
    pub ae: Option<Autoencoder>,
}

/// Builds the real latent pool. For image sources without a pretrained
/// autoencoder one is trained with `seed` and cached in `cache_dir`.
pub fn prepare_data(source: &DataSource, seed: u64, cache_dir: &Path) -> Result<PreparedData> {
    match source {
        DataSource::Toy(t) => Ok(PreparedData {
            latents: t.pool()?,
            images: None,
            ae: None,
        }),
        DataSource::Images(s) => {
            let mut ds = ImageDataset::load(&s.dataset)?;
            if let Some(n) = s.n_images {
                ds = ds.subselect(n, seed)?;
            }
            let ae = match &s.ae_checkpoint {
                Some(p) => Autoencoder::from_checkpoint(s.ae.clone(), &Checkpoint::load(p)?)?,
                None => {
                    let path = cache_dir.join(AE_CHECKPOINT_FILE);
                    if path.exists() {
                        Autoencoder::from_checkpoint(s.ae.clone(), &Checkpoint::load(&path)?)?
                    } else {
                        let train_cfg = AeTrainConfig {
                            seed,
                            ..s.ae_train.clone()
                        };
                        let (ae, _) = train_ae(s.ae.clone(), &train_cfg, &ds, |_| {})?;
                        fs::create_dir_all(cache_dir)?;
                        let mut c = Checkpoint::new();
                        ae.to_checkpoint(&mut c);
                        let tmp = path.with_extension("tmp");
                        c.save(&tmp)?;
                        fs::rename(tmp, &path)?;
                        ae
                    }
                }
            };
            let latents = ae.encode(ds.images())?;
            Ok(PreparedData {
                latents,
                images: Some(ds.images().clone()),
                ae: Some(ae),
            })
        }
    }
}

/// Outcome of one run as stored in its verdict file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub seed: u64,
    pub generator_params: usize,
    pub critic_params: usize,
    /// Generator capacity the run is grouped under.
    pub x: usize,
    /// The capacity being swept.
    pub capacity: usize,
    pub generator_steps: u64,
    pub optimality: Option<Optimality>,
    /// Why there is no verdict: a failed run or a series too short to judge.
    pub note: Option<String>,
}

/// A run summary together with its time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub summary: RunSummary,
    pub evals: Vec<EvalRecord>,
    pub loss_d: Vec<f64>,
    pub loss_g: Vec<f64>,
}

impl ExperimentRecord {
    pub fn fid_series(&self) -> (Vec<u64>, Vec<f64>) {
        self.evals.iter().map(|e| (e.step, e.fid)).unzip()
    }

    /// Recomputes the verdict under `th`; failed runs keep none.
    pub fn judge(&mut self, th: &OptimalityThresholds) {
        if self.summary.generator_steps == 0 && self.evals.is_empty() {
            return;
        }
        let (steps, fid) = self.fid_series();
        match detect_optimality(&steps, &fid, th) {
            Ok(o) => {
                self.summary.optimality = Some(o);
                self.summary.note = None;
            }
            Err(e) => {
                self.summary.optimality = None;
                self.summary.note = Some(e.to_string());
            }
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let summary: RunSummary = serde_json::from_str(&fs::read_to_string(dir.join(VERDICT_FILE))?)?;
        let read_or_empty = |name: &str| dir.join(name).exists();
        let evals = if read_or_empty(EVALS_FILE) { read_evals(&dir.join(EVALS_FILE))? } else { Vec::new() };
        let steps = if read_or_empty(STEPS_FILE) { read_steps(&dir.join(STEPS_FILE))? } else { Vec::new() };
        Ok(ExperimentRecord {
            summary,
            evals,
            loss_d: steps.iter().map(|s| s.loss_d).collect(),
            loss_g: steps.iter().map(|s| s.loss_g).collect(),
        })
    }
}

/// Identity of a run within a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLabel {
    pub run_id: String,
    pub x: usize,
    pub capacity: usize,
}

/// Writes `config.json` (verbatim when `raw` is given), trains with resume,
/// judges the FID series and writes `verdict.json`.
pub fn execute_run(cfg: &RunConfig, raw: Option<&str>, data: &PreparedData, dir: &Path, label: &RunLabel) -> Result<ExperimentRecord> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let text = match raw {
        Some(r) => r.to_string(),
        None => serde_json::to_string_pretty(cfg)? + "\n",
    };
    let cfg_path = dir.join(CONFIG_FILE);
    if cfg_path.exists() {
        let existing: RunConfig = serde_json::from_str(&fs::read_to_string(&cfg_path)?)?;
        if &existing != cfg {
            return Err(Error::Config(format!("{} holds a different run configuration", dir.display())));
        }
    } else {
        fs::write(&cfg_path, text)?;
    }

    let d_z = data.latents.shape()[1];
    let extractor;
    let eval = match (&data.images, &data.ae) {
        (Some(images), Some(ae)) => {
            extractor = FeatureExtractor::from_kind(&cfg.extractor, ae.config.image_len(), Some(ae))?;
            EvalSetup::images(&data.latents, images, ae, extractor, cfg.train.eval_cohort)?
        }
        _ => EvalSetup::latents(&data.latents, cfg.train.eval_cohort)?,
    };
    let mut summary = RunSummary {
        run_id: label.run_id.clone(),
        seed: cfg.train.seed,
        generator_params: cfg.train.generator.param_count(d_z)?,
        critic_params: MlpConfig::critic(d_z, cfg.train.critic_hidden).param_count(),
        x: label.x,
        capacity: label.capacity,
        generator_steps: 0,
        optimality: None,
        note: None,
    };
    let mut record = match train(&cfg.train, &data.latents, &eval, Some(dir), |_| {}) {
        Ok(out) => {
            summary.generator_steps = out.steps.last().map_or(0, |s| s.step);
            ExperimentRecord {
                summary,
                evals: out.evals,
                loss_d: out.steps.iter().map(|s| s.loss_d).collect(),
                loss_g: out.steps.iter().map(|s| s.loss_g).collect(),
            }
        }
        Err(e @ Error::NonFinite { .. }) => {
            summary.note = Some(e.to_string());
            let rec = ExperimentRecord {
                summary,
                evals: Vec::new(),
                loss_d: Vec::new(),
                loss_g: Vec::new(),
            };
            fs::write(dir.join(VERDICT_FILE), serde_json::to_string_pretty(&rec.summary)?)?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    record.judge(&cfg.thresholds);
    fs::write(dir.join(VERDICT_FILE), serde_json::to_string_pretty(&record.summary)? + "\n")?;
    Ok(record)
}
