//! End-to-end properties of the experiment harness.

use paid_experts::harness::{
    read_csv, run_experiment, run_experiment_with, run_replication, sample_std, write_csv, Algorithm, Execution,
    ExperimentConfig, FamilySpec, GridSpec,
};

fn cfg(alg: Algorithm) -> ExperimentConfig {
    ExperimentConfig::new(alg, FamilySpec::Linear, 3, 4, 120, 0.02)
        .with_replications(4)
        .with_seed(31)
}

#[test]
fn rerun_is_identical_and_rows_add_up() {
    for alg in Algorithm::ALL {
        let a = run_experiment(&cfg(alg)).unwrap();
        let b = run_experiment(&cfg(alg)).unwrap();
        assert_eq!(a.replications, b.replications);
        assert_eq!(a.aggregate, b.aggregate);
        let rows = a.rows();
        assert_eq!(rows.len(), 4 * 120 + 120);
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_csv(&buf[..]).unwrap(), rows);
    }
}

#[test]
fn replication_order_does_not_matter() {
    let c = cfg(Algorithm::GaptronLocal);
    let all = run_experiment_with(&c, Execution::Sequential, &|_, _| {}).unwrap();
    let prep = c.prepare().unwrap();
    for r in [3, 1, 0, 2] {
        assert_eq!(run_replication(&c, &prep, r).unwrap().0, all.replications[r]);
    }
    let par = run_experiment_with(&c, Execution::Parallel, &|_, _| {}).unwrap();
    assert_eq!(par.replications, all.replications);
}

#[test]
fn progress_reports_every_replication() {
    let seen = std::sync::Mutex::new(Vec::new());
    run_experiment_with(&cfg(Algorithm::Lcb), Execution::Parallel, &|d, t| {
        seen.lock().unwrap().push((d, t))
    })
    .unwrap();
    let mut seen = seen.into_inner().unwrap();
    seen.sort();
    assert_eq!(seen, vec![(1, 4), (2, 4), (3, 4), (4, 4)]);
}

/// Realized and expected cumulative costs differ by a zero-mean martingale,
/// so their replication means agree within a few standard errors.
#[test]
fn realized_cost_tracks_expected_cost() {
    for alg in [Algorithm::GaptronSelfish, Algorithm::Lcb] {
        let mut c = ExperimentConfig::new(alg, FamilySpec::Sigmoid, 3, 4, 300, 0.01)
            .with_replications(300)
            .with_seed(77);
        c.beta_override = Some(1.0);
        let res = run_experiment(&c).unwrap();
        let diffs: Vec<f64> = res
            .replications
            .iter()
            .map(|r| r.trajectory.final_cost() - r.trajectory.cum_expected_cost.as_ref().unwrap().last().unwrap())
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let se = sample_std(&diffs) / (diffs.len() as f64).sqrt();
        assert!(mean.abs() <= 4.0 * se, "{alg}: mean gap {mean}, standard error {se}");
    }
}

#[test]
fn uniform_grid_runs_with_derived_size() {
    let mut c = ExperimentConfig::new(Algorithm::GaptronBrute, FamilySpec::Sigmoid, 2, 0, 30, 0.01).with_seed(2);
    c.grid = GridSpec::Uniform(0.2);
    let res = run_experiment(&c).unwrap();
    assert_eq!(res.n, 6);
    assert!(res.rows().iter().all(|r| r.n == 6 && r.family == "sigmoid"));
}
