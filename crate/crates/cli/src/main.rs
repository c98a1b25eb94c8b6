use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use lqgan::autodiff::{Checkpoint, Tensor};
use lqgan::data::{synth_dataset, ImageDataset, SynthKind};
use lqgan::experiments::{
    analyze, detect_optimality, execute_run, load_sweep, prepare_data, run_sweep, DataSource, ImageSource, OptimalityThresholds, RunConfig,
    RunLabel, SweepPlan, CONFIG_FILE, FIT_FILE,
};
use lqgan::gan::{read_evals, GeneratorSpec, LatentGenerator, ToyTarget, CHECKPOINT_FILE, EVALS_FILE};
use lqgan::metrics::{compare_images, FeatureExtractor, FeatureKind, DEFAULT_BINS};
use lqgan::nets::{train_ae, AeConfig, AeTrainConfig, Autoencoder, MlpConfig};
use lqgan::rng::{standard_normal_vec, Streams};
use lqgan::Error;

const SEED_ENV: &str = "LQG_SEED";
const AE_CONFIG_FILE: &str = "config.json";
const AE_DATA_FILE: &str = "data.lqgd";
const AE_EPOCHS_FILE: &str = "epochs.csv";

#[derive(Parser)]
#[command(name = "lqgan", version, about = "Latent style-based quantum GAN toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural image dataset.
    GenData {
        #[arg(long, default_value = "gaussian-blobs")]
        kind: SynthKind,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a CSV of flattened HWC images (one per row) into a dataset.
    Convert(ConvertArgs),
    /// Train the convolutional autoencoder.
    TrainAe {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a GAN in latent space.
    TrainGan(TrainGanArgs),
    /// Draw samples from a trained run.
    Sample {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output prefix; writes `<out>.csv` latents plus `<out>.lqgd` and `<out>.png` when images exist.
        #[arg(long)]
        out: PathBuf,
    },
    /// FID and JSD between two datasets.
    Metrics {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
        /// `pixel-flatten`, `random-projection` or `ae-encoder`.
        #[arg(long, default_value = "random-projection")]
        extractor: String,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        /// Autoencoder directory; enables feature-space JSD.
        #[arg(long)]
        ae: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
    /// Run a capacity sweep.
    Sweep {
        #[arg(long, conflicts_with = "desk")]
        plan: Option<PathBuf>,
        /// Use the built-in reduced plan.
        #[arg(long)]
        desk: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Recompute selections and the scaling fit of a sweep.
    FitScaling {
        #[arg(long)]
        sweep: PathBuf,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Re-judge the FID series of a finished run.
    Verdict {
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 28)]
    height: usize,
    #[arg(long, default_value_t = 28)]
    width: usize,
    /// Channels per pixel in the input rows.
    #[arg(long, default_value_t = 4)]
    channels: usize,
    /// Leading channels kept.
    #[arg(long, default_value_t = 3)]
    keep: usize,
    /// Divisor mapping input values to [0,1].
    #[arg(long, default_value_t = 255.0)]
    scale: f64,
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct TrainGanArgs {
    /// Run configuration JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// `quantum` or `classical`.
    #[arg(long)]
    gen: Option<String>,
    #[arg(long)]
    qubits: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Classical generator widths `N1,N2`.
    #[arg(long, value_parser = parse_pair)]
    hidden: Option<[usize; 2]>,
    /// Critic widths `N1,N2`.
    #[arg(long, value_parser = parse_pair)]
    critic: Option<[usize; 2]>,
    /// Autoencoder directory from `train-ae`; the synthetic latent target is used otherwise.
    #[arg(long)]
    ae: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_interval: Option<u64>,
    #[arg(long)]
    eval_cohort: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    tau_sigma: Option<f64>,
    #[arg(long)]
    tau_min: Option<f64>,
    #[arg(long)]
    burn_in: Option<f64>,
}

impl ThresholdArgs {
    fn apply(&self, mut th: OptimalityThresholds) -> OptimalityThresholds {
        th.window = self.window.unwrap_or(th.window);
        th.tau_sigma = self.tau_sigma.unwrap_or(th.tau_sigma);
        th.tau_min = self.tau_min.unwrap_or(th.tau_min);
        th.burn_in_fraction = self.burn_in.unwrap_or(th.burn_in_fraction);
        th
    }
}

/// Autoencoder training configuration as read by `train-ae`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct AeRunConfig {
    ae: AeConfig,
    train: AeTrainConfig,
    /// Random subset size; the whole dataset when absent.
    n_images: Option<usize>,
}

fn parse_pair(s: &str) -> Result<[usize; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([a.parse().map_err(|e| format!("{e}"))?, b.parse().map_err(|e| format!("{e}"))?]),
        _ => Err(format!("expected N1,N2, got {s:?}")),
    }
}

fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an integer")))?)),
        Err(_) => Ok(None),
    }
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())).into())
}

fn print_json(v: &impl Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn gen_data(kind: SynthKind, n: usize, seed: u64, out: &Path) -> anyhow::Result<()> {
    let ds = synth_dataset(n, seed, kind)?;
    ds.save(out)?;
    print_json(&serde_json::json!({ "out": out, "n": ds.len(), "dims": ds.dims() }))
}

fn convert(a: &ConvertArgs) -> anyhow::Result<()> {
    if a.keep == 0 || a.keep > a.channels || !(a.scale > 0.0) {
        return Err(Error::Config(format!("cannot keep {} of {} channels with scale {}", a.keep, a.channels, a.scale)).into());
    }
    let row_len = a.height * a.width * a.channels;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(&a.input)
        .map_err(|e| Error::Data(format!("{}: {e}", a.input.display())))?;
    let mut data = Vec::new();
    let mut n = 0;
    for (i, rec) in reader.records().enumerate() {
        if a.limit.is_some_and(|l| n >= l) {
            break;
        }
        let rec = rec.map_err(|e| Error::Data(format!("row {i}: {e}")))?;
        if rec.len() != row_len {
            return Err(Error::Data(format!("row {i} has {} values, expected {row_len}", rec.len())).into());
        }
        for (j, field) in rec.iter().enumerate() {
            if j % a.channels < a.keep {
                let v: f64 = field.trim().parse().map_err(|_| Error::Data(format!("row {i}: bad value {field:?}")))?;
                data.push(v / a.scale);
            }
        }
        n += 1;
    }
    let images = Tensor::new(vec![n, a.height, a.width, a.keep], data)?;
    let ds = ImageDataset::new(images, a.input.display().to_string())?;
    ds.save(&a.out)?;
    print_json(&serde_json::json!({ "out": a.out, "n": n, "dims": ds.dims() }))
}

fn train_ae_cmd(config: Option<&Path>, data: &Path, out: &Path) -> anyhow::Result<()> {
    let raw = match config {
        Some(p) => read_text(p)?,
        None => serde_json::to_string_pretty(&AeRunConfig::default())?,
    };
    let mut cfg: AeRunConfig = serde_json::from_str(&raw).map_err(Error::from)?;
    cfg.ae.validate()?;
    let mut persisted = raw;
    if let Some(seed) = env_seed()? {
        cfg.train.seed = seed;
        persisted = serde_json::to_string_pretty(&cfg)?;
    }
    let mut ds = ImageDataset::load(data)?;
    if let Some(n) = cfg.n_images {
        ds = ds.subselect(n, cfg.train.seed)?;
    }
    fs::create_dir_all(out)?;
    fs::write(out.join(AE_CONFIG_FILE), persisted)?;
    ds.save(out.join(AE_DATA_FILE))?;
    let mut log = String::from("epoch,train_mse,val_mse,rfid\n");
    let (ae, records) = train_ae(cfg.ae.clone(), &cfg.train, &ds, |r| {
        eprintln!("epoch {} train_mse {:.6} val_mse {:?} rfid {:?}", r.epoch, r.train_mse, r.val_mse, r.rfid);
    })?;
    for r in &records {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        log.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_mse, opt(r.val_mse), opt(r.rfid)));
    }
    fs::write(out.join(AE_EPOCHS_FILE), log)?;
    let mut c = Checkpoint::new();
    ae.to_checkpoint(&mut c);
    c.save(out.join(lqgan::experiments::AE_CHECKPOINT_FILE))?;
    print_json(&records.last())
}

fn load_ae_dir(dir: &Path) -> anyhow::Result<(AeRunConfig, Autoencoder)> {
    let cfg: AeRunConfig = serde_json::from_str(&read_text(&dir.join(AE_CONFIG_FILE))?).map_err(Error::from)?;
    let ckpt = Checkpoint::load(dir.join(lqgan::experiments::AE_CHECKPOINT_FILE))?;
    let ae = Autoencoder::from_checkpoint(cfg.ae.clone(), &ckpt)?;
    Ok((cfg, ae))
}

fn train_gan(a: &TrainGanArgs) -> anyhow::Result<()> {
    let (mut cfg, raw) = match &a.config {
        Some(p) => {
            let text = read_text(p)?;
            (RunConfig::from_json(&text)?, Some(text))
        }
        None => (RunConfig::default(), None),
    };
    let before = cfg.clone();
    if let Some(dir) = &a.ae {
        let (ae_cfg, _) = load_ae_dir(dir)?;
        cfg.data = DataSource::Images(ImageSource {
            dataset: dir.join(AE_DATA_FILE),
            n_images: None,
            ae: ae_cfg.ae,
            ae_train: ae_cfg.train,
            ae_checkpoint: Some(dir.join(lqgan::experiments::AE_CHECKPOINT_FILE)),
        });
    }
    let t = &mut cfg.train;
    match a.gen.as_deref() {
        None => {}
        Some("quantum") => {
            let (q, l) = match t.generator {
                GeneratorSpec::Quantum { qubits, layers } => (qubits, layers),
                _ => (12, 2),
            };
            t.generator = GeneratorSpec::Quantum {
                qubits: a.qubits.unwrap_or(q),
                layers: a.layers.unwrap_or(l),
            };
        }
        Some("classical") => {
            let h = a.hidden.ok_or_else(|| Error::Config("--gen classical needs --hidden N1,N2".into()))?;
            t.generator = GeneratorSpec::Classical {
                noise_dim: lqgan::nets::DEFAULT_NOISE_DIM,
                hidden: h,
            };
        }
        Some(other) => return Err(Error::Config(format!("unknown generator kind {other:?}")).into()),
    }
    if a.gen.is_none() && (a.qubits.is_some() || a.layers.is_some()) {
        if let GeneratorSpec::Quantum { qubits, layers } = &mut t.generator {
            *qubits = a.qubits.unwrap_or(*qubits);
            *layers = a.layers.unwrap_or(*layers);
        }
    }
    if let Some(c) = a.critic {
        t.critic_hidden = c;
    }
    if let Some(s) = a.steps {
        t.max_gen_steps = Some(s);
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    if let Some(e) = a.eval_interval {
        t.eval_interval = e;
    }
    if let Some(c) = a.eval_cohort {
        t.eval_cohort = c;
    }
    if let Some(s) = a.seed.or(env_seed()?) {
        t.seed = s;
    }
    if let (DataSource::Toy(toy), GeneratorSpec::Quantum { qubits, .. }) = (&mut cfg.data, &cfg.train.generator) {
        *toy = ToyTarget { qubits: *qubits, ..*toy };
    }
    cfg.validate()?;
    let raw = if cfg == before { raw } else { None };

    let data = prepare_data(&cfg.data, cfg.train.seed, &a.out)?;
    let d_z = data.latents.shape()[1];
    let label = RunLabel {
        run_id: a.out.file_name().map_or_else(|| "run".into(), |n| n.to_string_lossy().into_owned()),
        x: cfg.train.generator.param_count(d_z)?,
        capacity: MlpConfig::critic(d_z, cfg.train.critic_hidden).param_count(),
    };
    let record = execute_run(&cfg, raw.as_deref(), &data, &a.out, &label)?;
    let last = record.evals.last();
    print_json(&serde_json::json!({
        "run": a.out,
        "summary": record.summary,
        "last_eval": last,
    }))
}

fn sample(run: &Path, n: usize, seed: u64, out: &Path) -> anyhow::Result<()> {
    let cfg = RunConfig::from_json(&read_text(&run.join(CONFIG_FILE))?)?;
    let d_z = cfg.data.latent_dim();
    let mut gen = cfg.train.generator.build(d_z, &mut Streams::new(0).stream("unused"))?;
    gen.load(&Checkpoint::load(run.join(CHECKPOINT_FILE))?)?;
    let nd = gen.noise_dim();
    let noise = Tensor::new(vec![n, nd], standard_normal_vec(&mut Streams::new(seed).stream("sample-noise"), n * nd))?;
    let z = gen.generate(&noise)?;
    let mut csv = String::new();
    for i in 0..n {
        let row: Vec<String> = z.row(i).iter().map(f64::to_string).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let latents_path = out.with_extension("csv");
    fs::write(&latents_path, csv)?;
    let mut written = vec![latents_path];
    if let DataSource::Images(src) = &cfg.data {
        let ckpt = src.ae_checkpoint.clone().unwrap_or_else(|| run.join(lqgan::experiments::AE_CHECKPOINT_FILE));
        let ae = Autoencoder::from_checkpoint(src.ae.clone(), &Checkpoint::load(ckpt)?)?;
        let images = ae.decode(&z)?;
        let ds = ImageDataset::new(images.map(|v| v.clamp(0.0, 1.0)), format!("sample of {}", run.display()))?;
        let lqgd = out.with_extension("lqgd");
        ds.save(&lqgd)?;
        let png = out.with_extension("png");
        write_grid(&ds, &png)?;
        written.push(lqgd);
        written.push(png);
    }
    print_json(&serde_json::json!({ "n": n, "files": written }))
}

/// Tiles the first three channels of every image into a square-ish grid.
fn write_grid(ds: &ImageDataset, path: &Path) -> anyhow::Result<()> {
    let (h, w, c) = ds.dims();
    let n = ds.len();
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let rows = n.div_ceil(cols);
    let mut img = image::RgbImage::new((cols * w) as u32, (rows * h) as u32);
    for k in 0..n {
        let px = ds.image(k);
        let (oy, ox) = ((k / cols) * h, (k % cols) * w);
        for y in 0..h {
            for x in 0..w {
                let at = |ch: usize| (px[(y * w + x) * c + ch.min(c - 1)] * 255.0).round() as u8;
                img.put_pixel((ox + x) as u32, (oy + y) as u32, image::Rgb([at(0), at(1), at(2)]));
            }
        }
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn metrics(real: &Path, fake: &Path, extractor: &str, dim: usize, ae_dir: Option<&Path>, bins: usize) -> anyhow::Result<()> {
    let real = ImageDataset::load(real)?;
    let fake = ImageDataset::load(fake)?;
    if real.dims() != fake.dims() {
        return Err(Error::Data(format!("image sizes differ: {:?} vs {:?}", real.dims(), fake.dims())).into());
    }
    let ae = match ae_dir {
        Some(d) => Some(load_ae_dir(d)?.1),
        None => None,
    };
    let kind = match extractor {
        "pixel-flatten" => FeatureKind::PixelFlatten,
        "random-projection" => FeatureKind::RandomProjection { dim, seed: 0 },
        "ae-encoder" => FeatureKind::AeEncoder,
        other => return Err(Error::Config(format!("unknown extractor {other:?}")).into()),
    };
    let ex = FeatureExtractor::from_kind(&kind, real.image_len(), ae.as_ref())?;
    let report = compare_images(real.images(), fake.images(), &ex, ae.as_ref(), bins)?;
    print_json(&report)
}

fn sweep(plan: Option<&Path>, desk: bool, out: &Path, workers: usize) -> anyhow::Result<()> {
    let plan: SweepPlan = match (plan, desk) {
        (Some(p), _) => serde_json::from_str(&read_text(p)?).map_err(Error::from)?,
        (None, true) => SweepPlan::desk(),
        (None, false) => bail!(Error::Config("pass --plan FILE or --desk".into())),
    };
    let outcome = run_sweep(&plan, out, workers, |id, r| match r {
        Ok(rec) => eprintln!(
            "{id}: {}",
            rec.summary
                .optimality
                .map_or_else(|| rec.summary.note.clone().unwrap_or_default(), |o| format!("{:?}", o.verdict))
        ),
        Err(e) => eprintln!("{id}: failed: {e}"),
    })?;
    for (id, e) in &outcome.failures {
        eprintln!("run {id} failed: {e}");
    }
    print_json(&outcome.analysis)?;
    match outcome.analysis.first_error() {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn fit_scaling(root: &Path, th: &ThresholdArgs) -> anyhow::Result<()> {
    let (plan, records) = load_sweep(root)?;
    let analysis = analyze(&records, &th.apply(plan.base.thresholds));
    fs::write(root.join(FIT_FILE), serde_json::to_string_pretty(&analysis)? + "\n")?;
    print_json(&analysis)?;
    match analysis.first_error() {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn verdict(run: &Path, th: &ThresholdArgs) -> anyhow::Result<()> {
    let cfg = RunConfig::from_json(&read_text(&run.join(CONFIG_FILE))?)?;
    let evals = read_evals(&run.join(EVALS_FILE))?;
    let (steps, fid): (Vec<u64>, Vec<f64>) = evals.iter().map(|e| (e.step, e.fid)).unzip();
    let o = detect_optimality(&steps, &fid, &th.apply(cfg.thresholds))?;
    print_json(&o)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { kind, n, seed, out } => gen_data(kind, n, env_seed()?.unwrap_or(seed), &out),
        Command::Convert(a) => convert(&a),
        Command::TrainAe { config, data, out } => train_ae_cmd(config.as_deref(), &data, &out),
        Command::TrainGan(a) => train_gan(&a),
        Command::Sample { run, n, seed, out } => sample(&run, n, seed, &out),
        Command::Metrics {
            real,
            fake,
            extractor,
            dim,
            ae,
            bins,
        } => metrics(&real, &fake, &extractor, dim, ae.as_deref(), bins),
        Command::Sweep { plan, desk, out, workers } => sweep(plan.as_deref(), desk, &out, workers),
        Command::FitScaling { sweep, thresholds } => fit_scaling(&sweep, &thresholds),
        Command::Verdict { run, thresholds } => verdict(&run, &thresholds),
    }
}

fn exit_code(kind: &str) -> u8 {
    match kind {
        "config" => 2,
        "numerical" => 4,
        "no_optimum" => 5,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e.downcast_ref::<Error>() {
                Some(Error::Shape { .. }) => "config",
                Some(err) => err.kind(),
                None => "data",
            };
            let code = exit_code(kind);
            let msg = format!("{e:#}");
            eprintln!("{}", serde_json::json!({ "error": kind, "message": msg, "exit_code": code }));
            ExitCode::from(code)
        }
    }
}
