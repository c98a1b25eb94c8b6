use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_exponential, ScalingFit, ScalingPoint};
use super::optimality::{select_optimal_capacity, CapacityResult, OptimalityThresholds};
use super::run::{execute_run, prepare_data, DataSource, ExperimentRecord, PreparedData, RunConfig, RunLabel, VERDICT_FILE};
use crate::error::{Error, Result};
use crate::gan::{GeneratorSpec, ToyTarget};
use crate::nets::{MlpConfig, DEFAULT_NOISE_DIM};
use crate::quantum::count_params;

pub const PLAN_FILE: &str = "plan.json";
pub const FIT_FILE: &str = "scaling_fit.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Critic size swept for each quantum generator.
    Critic,
    /// Classical generator size swept against a fixed critic per quantum generator.
    ClassicalGenerator,
}

/// One quantum generator shape with the grid swept against it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    pub qubits: usize,
    pub layers: usize,
    /// Critic sizes on the critic axis, classical generator sizes otherwise.
    pub grid: Vec<[usize; 2]>,
    /// Fixed critic on the classical axis; resolved from `critic_sweep` when absent.
    #[serde(default)]
    pub critic: Option<[usize; 2]>,
}

impl SweepEntry {
    pub fn params(&self) -> Result<usize> {
        count_params(self.qubits, self.layers)
    }

    fn tag(&self) -> String {
        format!("q{}l{}", self.qubits, self.layers)
    }
}

/// A grid of runs. `base` supplies every setting that is not swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub axis: SweepAxis,
    pub entries: Vec<SweepEntry>,
    pub seeds: Vec<u64>,
    /// Finished critic-axis sweep supplying the fixed critics of a classical-axis plan.
    #[serde(default)]
    pub critic_sweep: Option<PathBuf>,
    #[serde(default)]
    pub base: RunConfig,
}

/// `[min, three evenly spaced interior sizes with N2 = N1/2, max]`.
pub fn span_grid(min: [usize; 2], max: [usize; 2]) -> Vec<[usize; 2]> {
    let mut grid = vec![min];
    for k in 1..4 {
        let n1 = min[0] + (max[0] - min[0]) * k / 4;
        let n1 = (n1 + 12) / 25 * 25;
        grid.push([n1, n1 / 2]);
    }
    grid.push(max);
    grid.dedup();
    grid
}

/// Reference critic bounds `(min, max)` for a 12-qubit generator with `layers` layers.
pub fn reference_critic_bounds(layers: usize) -> Option<([usize; 2], [usize; 2])> {
    match layers {
        2 => Some(([75, 36], [350, 175])),
        4 => Some(([125, 62], [800, 400])),
        6 => Some(([350, 175], [900, 450])),
        8 => Some(([1000, 500], [1500, 750])),
        _ => None,
    }
}

/// Reference classical generator bounds `(min, max)` for the critic matched to `layers`.
pub fn reference_generator_bounds(layers: usize) -> Option<([usize; 2], [usize; 2])> {
    match layers {
        2 => Some(([50, 25], [400, 200])),
        4 => Some(([100, 50], [700, 350])),
        6 => Some(([300, 150], [1200, 600])),
        8 => Some(([600, 300], [2000, 1000])),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct Job {
    pub label: RunLabel,
    pub config: RunConfig,
}

impl SweepPlan {
    /// Critic sweep over `L ∈ {2,4,6,8}` at 12 qubits spanning the reference bounds.
    pub fn reference_critic() -> Self {
        SweepPlan {
            axis: SweepAxis::Critic,
            entries: [2, 4, 6, 8]
                .iter()
                .map(|&l| {
                    let (lo, hi) = reference_critic_bounds(l).expect("reference depth");
                    SweepEntry {
                        qubits: 12,
                        layers: l,
                        grid: span_grid(lo, hi),
                        critic: None,
                    }
                })
                .collect(),
            seeds: vec![42, 43, 44],
            critic_sweep: None,
            base: RunConfig::default(),
        }
    }

    /// Classical generator sweep against the critics chosen by `critic_sweep`,
    /// with the classical learning rates.
    pub fn reference_classical(critic_sweep: PathBuf) -> Self {
        let mut base = RunConfig::default();
        base.train.lr_d = 0.0005;
        base.train.lr_g = 0.0001;
        SweepPlan {
            axis: SweepAxis::ClassicalGenerator,
            entries: [2, 4, 6, 8]
                .iter()
                .map(|&l| {
                    let (lo, hi) = reference_generator_bounds(l).expect("reference depth");
                    SweepEntry {
                        qubits: 12,
                        layers: l,
                        grid: span_grid(lo, hi),
                        critic: None,
                    }
                })
                .collect(),
            seeds: vec![42, 43, 44],
            critic_sweep: Some(critic_sweep),
            base,
        }
    }

    /// Reduced sweep: 4 to 10 qubits at two layers on the synthetic latent
    /// target, small critics and short runs.
    pub fn desk() -> Self {
        let mut base = RunConfig::default();
        base.train.max_gen_steps = Some(600);
        base.train.batch_size = 32;
        base.train.eval_interval = 15;
        base.train.eval_cohort = 500;
        base.thresholds.window = 10;
        base.data = DataSource::Toy(ToyTarget {
            pool: 512,
            ..ToyTarget::default()
        });
        SweepPlan {
            axis: SweepAxis::Critic,
            entries: [4, 6, 8, 10]
                .iter()
                .map(|&q| SweepEntry {
                    qubits: q,
                    layers: 2,
                    grid: vec![[4, 2], [16, 8], [64, 32]],
                    critic: None,
                })
                .collect(),
            seeds: vec![0, 1, 2],
            critic_sweep: None,
            base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one entry and one seed".into()));
        }
        for e in &self.entries {
            e.params()?;
            if e.grid.len() < 2 {
                return Err(Error::Config(format!("grid of {} needs at least 2 sizes", e.tag())));
            }
            if self.axis == SweepAxis::ClassicalGenerator && e.critic.is_none() && self.critic_sweep.is_none() {
                return Err(Error::Config(format!("{} has no fixed critic and the plan names no critic sweep", e.tag())));
            }
            if let DataSource::Images(s) = &self.base.data {
                if 2 * e.qubits != s.ae.d_z {
                    return Err(Error::Config(format!("{} qubits do not match latent dimension {}", e.qubits, s.ae.d_z)));
                }
            }
        }
        self.base.train.validate()
    }

    /// Fills missing fixed critics from the critic sweep: per entry, the
    /// critic size chosen for most seeds, ties going to the smaller size.
    pub fn resolve_critics(&mut self) -> Result<()> {
        if self.axis != SweepAxis::ClassicalGenerator || self.entries.iter().all(|e| e.critic.is_some()) {
            return Ok(());
        }
        let root = self
            .critic_sweep
            .clone()
            .ok_or_else(|| Error::Config("classical axis needs fixed critics or a critic sweep".into()))?;
        let (plan, records) = load_sweep(&root)?;
        let analysis = analyze(&records, &plan.base.thresholds);
        for e in self.entries.iter_mut().filter(|e| e.critic.is_none()) {
            let source = plan
                .entries
                .iter()
                .find(|p| p.qubits == e.qubits && p.layers == e.layers)
                .ok_or_else(|| Error::Config(format!("critic sweep has no entry for {}", e.tag())))?;
            let x = source.params()?;
            let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
            for s in analysis.selections.iter().filter(|s| s.x == x) {
                if let Some(c) = s.optimal_capacity {
                    *votes.entry(c).or_default() += 1;
                }
            }
            let best = votes.values().map(|n| *n).max().unwrap_or(0);
            let capacity = votes
                .iter()
                .find(|(_, n)| **n == best)
                .map(|(c, _)| *c)
                .ok_or_else(|| Error::NoOptimum(format!("critic sweep found no optimum for {}", e.tag())))?;
            let d_z = 2 * e.qubits;
            e.critic = source.grid.iter().copied().find(|h| MlpConfig::critic(d_z, *h).param_count() == capacity);
        }
        Ok(())
    }

    /// Every run of the plan with its configuration. Fixed critics must be resolved.
    pub fn jobs(&self) -> Result<Vec<Job>> {
        self.validate()?;
        let mut jobs = Vec::new();
        for e in &self.entries {
            let x = e.params()?;
            let d_z = 2 * e.qubits;
            for &seed in &self.seeds {
                let mut cfg = self.base.clone();
                cfg.train.seed = seed;
                if let DataSource::Toy(t) = &mut cfg.data {
                    t.qubits = e.qubits;
                }
                for &h in &e.grid {
                    let mut cfg = cfg.clone();
                    let (run_id, capacity) = match self.axis {
                        SweepAxis::Critic => {
                            cfg.train.generator = GeneratorSpec::Quantum {
                                qubits: e.qubits,
                                layers: e.layers,
                            };
                            cfg.train.critic_hidden = h;
                            (format!("{}_d{}x{}_s{seed}", e.tag(), h[0], h[1]), MlpConfig::critic(d_z, h).param_count())
                        }
                        SweepAxis::ClassicalGenerator => {
                            let c = e
                                .critic
                                .ok_or_else(|| Error::Config(format!("fixed critic for {} is unresolved", e.tag())))?;
                            cfg.train.generator = GeneratorSpec::Classical {
                                noise_dim: DEFAULT_NOISE_DIM,
                                hidden: h,
                            };
                            cfg.train.critic_hidden = c;
                            (
                                format!("{}_g{}x{}_d{}x{}_s{seed}", e.tag(), h[0], h[1], c[0], c[1]),
                                cfg.train.generator.param_count(d_z)?,
                            )
                        }
                    };
                    jobs.push(Job {
                        label: RunLabel { run_id, x, capacity },
                        config: cfg,
                    });
                }
            }
        }
        Ok(jobs)
    }
}

/// Optimal capacity chosen for one generator capacity and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub x: usize,
    pub seed: u64,
    pub optimal_capacity: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAnalysis {
    pub selections: Vec<Selection>,
    pub fit: Option<ScalingFit>,
    pub fit_error: Option<String>,
}

impl SweepAnalysis {
    /// The first selection failure, or the fit failure.
    pub fn first_error(&self) -> Option<Error> {
        if let Some(s) = self.selections.iter().find(|s| s.optimal_capacity.is_none()) {
            return Some(Error::NoOptimum(format!(
                "x = {}, seed {}: {}",
                s.x,
                s.seed,
                s.error.clone().unwrap_or_default()
            )));
        }
        self.fit_error.as_ref().map(|e| Error::Config(e.clone()))
    }
}

/// Judges every record under `th`, selects the optimal capacity per
/// generator capacity and seed, and fits the exponential scaling law.
pub fn analyze(records: &[ExperimentRecord], th: &OptimalityThresholds) -> SweepAnalysis {
    let mut groups: BTreeMap<(usize, u64), Vec<CapacityResult>> = BTreeMap::new();
    for r in records {
        let mut r = r.clone();
        r.judge(th);
        groups.entry((r.summary.x, r.summary.seed)).or_default().push(CapacityResult {
            capacity: r.summary.capacity,
            optimality: r.summary.optimality,
        });
    }
    let mut selections = Vec::new();
    let mut points = Vec::new();
    for ((x, seed), results) in groups {
        match select_optimal_capacity(&results, th) {
            Ok(c) => {
                points.push(ScalingPoint {
                    x: x as f64,
                    y: c as f64,
                    seed,
                });
                selections.push(Selection {
                    x,
                    seed,
                    optimal_capacity: Some(c),
                    error: None,
                });
            }
            Err(e) => selections.push(Selection {
                x,
                seed,
                optimal_capacity: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let (fit, fit_error) = match fit_exponential(&points) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    SweepAnalysis {
        selections,
        fit,
        fit_error,
    }
}

pub struct SweepOutcome {
    pub records: Vec<ExperimentRecord>,
    /// Runs that raised an error, by run id.
    pub failures: Vec<(String, String)>,
    pub analysis: SweepAnalysis,
}

/// Runs every job of `plan` under `root` on `workers` threads. Runs that
/// already have a verdict are loaded instead of retrained and interrupted runs
/// resume from their checkpoints. A failing run is recorded and the rest of
/// the sweep continues.
pub fn run_sweep(plan: &SweepPlan, root: &Path, workers: usize, on_done: impl Fn(&str, &Result<ExperimentRecord>) + Sync) -> Result<SweepOutcome> {
    let mut plan = plan.clone();
    plan.resolve_critics()?;
    let plan = &plan;
    let jobs = plan.jobs()?;
    fs::create_dir_all(root)?;
    let plan_path = root.join(PLAN_FILE);
    if plan_path.exists() {
        let existing: SweepPlan = serde_json::from_str(&fs::read_to_string(&plan_path)?)?;
        if &existing != plan {
            return Err(Error::Config(format!("{} holds a different sweep plan", root.display())));
        }
    } else {
        fs::write(&plan_path, serde_json::to_string_pretty(plan)? + "\n")?;
    }

    let mut data: BTreeMap<(u64, usize), PreparedData> = BTreeMap::new();
    for j in &jobs {
        let key = (j.config.train.seed, j.config.data.latent_dim());
        if let std::collections::btree_map::Entry::Vacant(e) = data.entry(key) {
            let cache = root.join(format!("ae_s{}", key.0));
            e.insert(prepare_data(&j.config.data, key.0, &cache)?);
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<(String, Result<ExperimentRecord>)> = pool.install(|| {
        jobs.par_iter()
            .map(|j| {
                let dir = root.join(&j.label.run_id);
                let res = if dir.join(VERDICT_FILE).exists() {
                    ExperimentRecord::load(&dir)
                } else {
                    let d = &data[&(j.config.train.seed, j.config.data.latent_dim())];
                    execute_run(&j.config, None, d, &dir, &j.label)
                };
                on_done(&j.label.run_id, &res);
                (j.label.run_id.clone(), res)
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(rec) if rec.summary.generator_steps > 0 => records.push(rec),
            Ok(rec) => failures.push((id, rec.summary.note.unwrap_or_else(|| "no training steps".into()))),
            Err(e) => failures.push((id, e.to_string())),
        }
    }
    let analysis = analyze(&records, &plan.base.thresholds);
    fs::write(root.join(FIT_FILE), serde_json::to_string_pretty(&analysis)? + "\n")?;
    Ok(SweepOutcome {
        records,
        failures,
        analysis,
    })
}

/// Loads the plan and every finished run under `root`.
pub fn load_sweep(root: &Path) -> Result<(SweepPlan, Vec<ExperimentRecord>)> {
    let plan: SweepPlan = serde_json::from_str(&fs::read_to_string(root.join(PLAN_FILE))?)?;
    let mut records = Vec::new();
    for j in plan.jobs()? {
        let dir = root.join(&j.label.run_id);
        if dir.join(VERDICT_FILE).exists() {
            let rec = ExperimentRecord::load(&dir)?;
            if rec.summary.generator_steps > 0 {
                records.push(rec);
            }
        }
    }
    Ok((plan, records))
}
