use lqgan::experiments::*;
use lqgan::gan::{GeneratorSpec, ToyTarget};
use lqgan::Error;

fn steps(n: usize, every: u64) -> Vec<u64> {
    (0..n as u64).map(|i| i * every).collect()
}

/// Deterministic noise in `[-1, 1]`.
fn jitter(i: usize) -> f64 {
    let x = ((i as f64) * 12.9898).sin() * 43758.5453;
    2.0 * (x - x.floor()) - 1.0
}

/// Oscillation until step 4000, then a plateau at `level` with 1% jitter.
fn transitional(level: f64) -> Vec<f64> {
    (0..101)
        .map(|i| if i < 40 { level * (3.0 + (0.7 * i as f64).sin()) } else { level * (1.0 + 0.01 * jitter(i)) })
        .collect()
}

fn stable(level: f64) -> Vec<f64> {
    (0..101).map(|i| level * (1.0 + 0.01 * jitter(i))).collect()
}

fn chaotic(level: f64) -> Vec<f64> {
    (0..101).map(|i| level * (2.0 + (0.9 * i as f64).sin())).collect()
}

#[test]
fn transitional_series_reports_transition_near_4000() {
    let o = detect_optimality(&steps(101, 100), &transitional(1.0), &OptimalityThresholds::default()).unwrap();
    assert_eq!(o.verdict, Verdict::Transitional);
    let t = o.transition_step.unwrap();
    assert!((3600..=4400).contains(&t), "t* = {t}");
}

#[test]
fn verdicts_are_invariant_under_rescaling() {
    let th = OptimalityThresholds::default();
    for series in [transitional(1.0), stable(1.0), chaotic(1.0)] {
        let a = detect_optimality(&steps(101, 100), &series, &th).unwrap();
        let scaled: Vec<f64> = series.iter().map(|v| v * 37.5).collect();
        let b = detect_optimality(&steps(101, 100), &scaled, &th).unwrap();
        assert_eq!(a.verdict, b.verdict);
        assert_eq!(a.transition_step, b.transition_step);
    }
}

fn judged(capacity: usize, series: &[f64]) -> CapacityResult {
    CapacityResult {
        capacity,
        optimality: Some(detect_optimality(&steps(series.len(), 100), series, &OptimalityThresholds::default()).unwrap()),
    }
}

#[test]
fn selection_rules() {
    let th = OptimalityThresholds::default();
    let only_largest = [judged(10, &chaotic(1.0)), judged(20, &chaotic(1.0)), judged(30, &stable(1.0))];
    assert_eq!(select_optimal_capacity(&only_largest, &th).unwrap(), 30);

    let tie = [judged(10, &chaotic(1.0)), judged(20, &stable(1.0)), judged(30, &stable(1.0))];
    assert_eq!(select_optimal_capacity(&tie, &th).unwrap(), 20);

    let fig4 = [judged(10, &chaotic(1.0)), judged(20, &transitional(1.0)), judged(30, &stable(1.0))];
    assert_eq!(select_optimal_capacity(&fig4, &th).unwrap(), 20);

    assert!(matches!(select_optimal_capacity(&fig4[..1], &th), Err(Error::Config(_))));
}

#[test]
fn selection_never_exceeds_largest_stable() {
    let th = OptimalityThresholds::default();
    let grid = [judged(10, &stable(2.0)), judged(20, &transitional(1.0))];
    assert_eq!(select_optimal_capacity(&grid, &th).unwrap(), 10);
}

#[test]
fn exponential_fit_inverts_exact_data() {
    let pts: Vec<ScalingPoint> = [720.0, 1440.0, 2160.0, 2880.0]
        .iter()
        .map(|&x| ScalingPoint {
            x,
            y: 2.0 * (0.001 * x).exp(),
            seed: 0,
        })
        .collect();
    let f = fit_exponential(&pts).unwrap();
    assert!((f.a - 2.0).abs() < 1e-9, "a = {}", f.a);
    assert!((f.b - 0.001).abs() < 1e-9, "b = {}", f.b);

    let constant: Vec<ScalingPoint> = pts.iter().map(|p| ScalingPoint { y: 5.0, ..*p }).collect();
    assert!(fit_exponential(&constant).unwrap().b.abs() < 1e-12);

    let tenfold: Vec<ScalingPoint> = pts.iter().map(|p| ScalingPoint { y: 10.0 * p.y, ..*p }).collect();
    let g = fit_exponential(&tenfold).unwrap();
    assert!((g.a / f.a - 10.0).abs() < 1e-9);
    assert!((g.b - f.b).abs() < 1e-12);
}

#[test]
fn exponential_fit_rejects_bad_input() {
    let mk = |x: f64, y: f64| ScalingPoint { x, y, seed: 0 };
    assert!(matches!(fit_exponential(&[mk(1.0, 1.0), mk(2.0, 0.0), mk(3.0, 1.0)]), Err(Error::Data(_))));
    assert!(matches!(fit_exponential(&[mk(1.0, 1.0), mk(2.0, 2.0), mk(2.0, 3.0)]), Err(Error::Config(_))));
}

#[test]
fn band_spreads_over_seeds() {
    let pts: Vec<ScalingPoint> = [1.0, 2.0, 3.0]
        .iter()
        .flat_map(|&x| (0..3u64).map(move |s| ScalingPoint { x, y: 10.0 + s as f64, seed: s }))
        .collect();
    let f = fit_exponential(&pts).unwrap();
    assert_eq!(f.band.len(), 3);
    for b in &f.band {
        assert_eq!(b.n, 3);
        assert!((b.mean - 11.0).abs() < 1e-12);
        assert!((b.std - 1.0).abs() < 1e-12);
    }
    assert_eq!(f.seed_fits.len(), 3);
}

#[test]
fn run_config_rejects_unknown_fields() {
    assert!(RunConfig::from_json(r#"{"train": {"lr_g": 0.001}}"#).is_ok());
    assert!(RunConfig::from_json(r#"{"train": {"lr_gen": 0.001}}"#).is_err());
    assert!(RunConfig::from_json(r#"{"trian": {}}"#).is_err());
    assert!(RunConfig::from_json(r#"{"data": {"kind": "toy", "qubits": 4, "bogus": 1}}"#).is_err());
}

#[test]
fn reference_plan_spans_table_bounds() {
    let plan = SweepPlan::reference_critic();
    for e in &plan.entries {
        let (lo, hi) = reference_critic_bounds(e.layers).unwrap();
        assert_eq!(e.grid.first(), Some(&lo));
        assert_eq!(e.grid.last(), Some(&hi));
        assert!(e.grid.windows(2).all(|w| w[0][0] < w[1][0]));
    }
    let layers: Vec<usize> = plan.entries.iter().map(|e| e.layers).collect();
    assert_eq!(layers, [2, 4, 6, 8]);
    let jobs = plan.jobs().unwrap();
    assert_eq!(jobs.len(), 4 * 5 * 3);
    assert!(jobs.iter().any(|j| j.config.train.critic_hidden == [1500, 750]));
}

#[test]
fn classical_plan_uses_its_learning_rates_and_needs_critics() {
    let mut plan = SweepPlan::reference_classical("nowhere".into());
    assert_eq!(plan.base.train.lr_d, 0.0005);
    assert_eq!(plan.base.train.lr_g, 0.0001);
    assert!(plan.jobs().is_err());
    for e in &mut plan.entries {
        e.critic = Some([125, 62]);
    }
    let jobs = plan.jobs().unwrap();
    assert!(jobs.iter().all(|j| matches!(j.config.train.generator, GeneratorSpec::Classical { .. })));
}

fn tiny_plan() -> SweepPlan {
    let mut base = RunConfig::default();
    base.train.max_gen_steps = Some(16);
    base.train.batch_size = 16;
    base.train.n_critic = 2;
    base.train.eval_interval = 2;
    base.train.eval_cohort = 64;
    base.thresholds = OptimalityThresholds {
        window: 3,
        tau_sigma: 10.0,
        tau_min: 10.0,
        burn_in_fraction: 0.3,
    };
    base.data = DataSource::Toy(ToyTarget {
        pool: 64,
        ..ToyTarget::default()
    });
    SweepPlan {
        axis: SweepAxis::Critic,
        entries: [2, 4, 6]
            .iter()
            .map(|&q| SweepEntry {
                qubits: q,
                layers: 1,
                grid: vec![[4, 2], [8, 4]],
                critic: None,
            })
            .collect(),
        seeds: vec![0, 1],
        critic_sweep: None,
        base,
    }
}

#[test]
fn sweep_runs_resumes_and_fits() {
    let dir = tempfile::tempdir().unwrap();
    let plan = tiny_plan();
    let out = run_sweep(&plan, dir.path(), 2, |_, _| {}).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    assert_eq!(out.records.len(), 12);
    let fit = out.analysis.fit.as_ref().expect("fit");
    assert!(fit.a.is_finite() && fit.b.is_finite());
    for name in [CONFIG_FILE, VERDICT_FILE, "steps.csv", "evals.csv", "checkpoint.lqg"] {
        assert!(dir.path().join("q2l1_d4x2_s0").join(name).exists(), "{name}");
    }
    assert!(dir.path().join(FIT_FILE).exists());

    // A finished run is loaded rather than retrained: its files stay untouched.
    let steps_path = dir.path().join("q2l1_d4x2_s0").join("steps.csv");
    let before = std::fs::metadata(&steps_path).unwrap().modified().unwrap();
    let again = run_sweep(&plan, dir.path(), 1, |_, _| {}).unwrap();
    assert_eq!(std::fs::metadata(&steps_path).unwrap().modified().unwrap(), before);
    assert_eq!(again.analysis, out.analysis);

    let (_, records) = load_sweep(dir.path()).unwrap();
    assert_eq!(analyze(&records, &plan.base.thresholds), out.analysis);
}

#[test]
fn interrupted_run_resumes_to_identical_outputs() {
    let full = tempfile::tempdir().unwrap();
    let cut = tempfile::tempdir().unwrap();
    let plan = tiny_plan();
    run_sweep(&plan, full.path(), 1, |_, _| {}).unwrap();
    run_sweep(&plan, cut.path(), 1, |_, _| {}).unwrap();
    // Simulate a crash mid-run: drop the verdict and rewind to an earlier checkpoint.
    let run = cut.path().join("q4l1_d8x4_s1");
    std::fs::remove_file(run.join(VERDICT_FILE)).unwrap();
    let mut short = plan.clone();
    short.base.train.max_gen_steps = Some(6);
    let job = short.jobs().unwrap().into_iter().find(|j| j.label.run_id == "q4l1_d8x4_s1").unwrap();
    let scratch = tempfile::tempdir().unwrap();
    let data = prepare_data(&job.config.data, 1, scratch.path()).unwrap();
    execute_run(&job.config, None, &data, &scratch.path().join("r"), &job.label).unwrap();
    std::fs::copy(scratch.path().join("r/checkpoint.lqg"), run.join("checkpoint.lqg")).unwrap();
    run_sweep(&plan, cut.path(), 1, |_, _| {}).unwrap();
    for f in ["steps.csv", "evals.csv", VERDICT_FILE] {
        assert_eq!(
            std::fs::read(full.path().join("q4l1_d8x4_s1").join(f)).unwrap(),
            std::fs::read(run.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn changed_plan_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let plan = tiny_plan();
    run_sweep(&plan, dir.path(), 1, |_, _| {}).unwrap();
    let mut other = plan.clone();
    other.seeds = vec![5, 6];
    assert!(matches!(run_sweep(&other, dir.path(), 1, |_, _| {}), Err(Error::Config(_))));
}
