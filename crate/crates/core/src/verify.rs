//! Numerical self-checks: closed-form identities, oracle agreement, estimator
//! coverage and a run-time guard check. Each returns a [`Check`] instead of
//! panicking so the CLI can print a table.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::env::{CostGrid, ProductivityModel, RngStream, StreamRole};
use crate::estimator::bernstein_width;
use crate::optimizers::{self, ObjectiveInput, OptimizerKind, DEFAULT_LOCAL_SWEEPS};
use crate::oracle::{self, DEFAULT_FRONTIER_CAP};
use crate::policy::{conditional_mistake_prob, weight, Branch, Gaptron, PolicyConfig};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    #[serde(serialize_with = "secs")]
    pub elapsed: Duration,
}

fn secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

fn timed(name: &'static str, f: impl FnOnce() -> (bool, String)) -> Check {
    let start = Instant::now();
    let (passed, detail) = f();
    Check {
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

/// Trial counts for every check.
#[derive(Debug, Clone, Copy)]
pub struct Sizes {
    pub margins: usize,
    pub product_instances: usize,
    pub chain_vectors: usize,
    pub opt_instances: usize,
    pub coverage_trials: usize,
    pub optimizer_instances: usize,
    pub guard_rounds: usize,
}

impl Sizes {
    pub const FULL: Sizes = Sizes {
        margins: 10_000,
        product_instances: 200,
        chain_vectors: 10_000,
        opt_instances: 100,
        coverage_trials: 10_000,
        optimizer_instances: 500,
        guard_rounds: 2_000,
    };

    pub const QUICK: Sizes = Sizes {
        margins: 1_000,
        product_instances: 50,
        chain_vectors: 1_000,
        opt_instances: 20,
        coverage_trials: 2_000,
        optimizer_instances: 100,
        guard_rounds: 300,
    };
}

/// The randomized prediction's conditional mistake probability is at most
/// `½e^{−yx}`, with equality when the prediction's sign agrees with `y`.
pub fn prediction_bound(trials: usize, seed: u64) -> Check {
    timed("prediction bound", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let x = rng.random_range(-10.0..=10.0);
            let y = if rng.random::<bool>() { 1 } else { -1 };
            let bound = 0.5 * (-(y as f64) * x).exp();
            let p = conditional_mistake_prob(x, y);
            if p > bound + 1e-12 {
                return (false, format!("x = {x}, y = {y}: {p} > {bound}"));
            }
            if crate::env::sign(x) == y {
                worst = worst.max((p - bound).abs());
                if (p - bound).abs() > 1e-12 {
                    return (
                        false,
                        format!("x = {x}, y = {y}: {p} != {bound} where equality is expected"),
                    );
                }
            }
        }
        (true, format!("{trials} margins, max equality gap {worst:.1e}"))
    })
}

/// `E_Z[exp(−y Σ w_j Z_j)]` over all `2^K` advice outcomes equals the product
/// of per-expert expectations.
pub fn product_identity(instances: usize, seed: u64) -> Check {
    timed("product identity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let k = rng.random_range(1..=10usize);
            let p: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..0.99)).collect();
            let w: Vec<f64> = (0..k)
                .map(|_| weight(rng.random_range(0.01..0.99)).expect("inside (0, 1)"))
                .collect();
            // Label +1: Z_j = +1 with probability p_j.
            let mut sum = 0.0;
            for mask in 0u32..(1 << k) {
                let (mut prob, mut x) = (1.0, 0.0);
                for j in 0..k {
                    if mask >> j & 1 == 1 {
                        prob *= p[j];
                        x += w[j];
                    } else {
                        prob *= 1.0 - p[j];
                        x -= w[j];
                    }
                }
                sum += prob * (-x).exp();
            }
            let product: f64 = (0..k)
                .map(|j| p[j] * (-w[j]).exp() + (1.0 - p[j]) * w[j].exp())
                .product();
            let rel = (sum - product).abs() / product.abs();
            worst = worst.max(rel);
            if rel > 1e-10 {
                return (false, format!("K = {k}: relative error {rel:.3e}"));
            }
        }
        (true, format!("{instances} instances, max relative error {worst:.1e}"))
    })
}

/// `Π 2√(p(1−p)) ≤ exp(−2 Σ (½ − p)²)`, strictly unless every `p = ½`.
pub fn gap_chain(vectors: usize, seed: u64) -> Check {
    timed("gap chain", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in 0..vectors {
            let k = rng.random_range(1..=10usize);
            let mut p: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
            if v == 0 {
                p.fill(0.5);
            }
            let lhs: f64 = p.iter().map(|&q| 2.0 * (q * (1.0 - q)).sqrt()).product();
            let rhs = (-2.0 * p.iter().map(|&q| (0.5 - q) * (0.5 - q)).sum::<f64>()).exp();
            let all_half = p.iter().all(|&q| q == 0.5);
            let ok = if all_half { lhs == rhs } else { lhs < rhs };
            if !ok {
                return (false, format!("p = {p:?}: {lhs} vs {rhs}"));
            }
        }
        (true, format!("{vectors} vectors"))
    })
}

fn random_grid<R: Rng>(rng: &mut R, n: usize) -> CostGrid {
    loop {
        let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        if let Ok(g) = CostGrid::from_unsorted(values) {
            return g;
        }
    }
}

fn random_model<R: Rng>(rng: &mut R, k: usize, n: usize) -> ProductivityModel {
    let grid = random_grid(rng, n);
    let rows = (0..k).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
    ProductivityModel::tabular(grid, rows).expect("probabilities in [0, 1]")
}

/// The frontier-based OPT agrees with exhaustive search in value and argmin.
pub fn opt_agreement(instances: usize, seed: u64) -> Check {
    timed("OPT oracle agreement", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lambdas = [0.0, 1e-3, 1e-2, 1.0];
        for inst in 0..instances {
            let k = rng.random_range(1..=4usize);
            let n = rng.random_range(1..=6usize);
            let model = random_model(&mut rng, k, n);
            let lambda = lambdas[inst % lambdas.len()];
            let (a, b) = match (
                oracle::opt_bruteforce(&model, lambda, u64::MAX),
                oracle::opt_pareto(&model, lambda, DEFAULT_FRONTIER_CAP),
            ) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => return (false, e.to_string()),
            };
            if a.value != b.value || a.payments.idx != b.payments.idx {
                return (
                    false,
                    format!(
                        "K = {k}, N = {n}, λ = {lambda}: brute {} at {:?}, frontier {} at {:?}",
                        a.value, a.payments.idx, b.value, b.payments.idx
                    ),
                );
            }
        }
        (true, format!("{instances} instances, exact agreement"))
    })
}

/// Frequency with which `|p̂ − p|` exceeds the confidence width at `δ = 0.05`
/// stays below `δ` plus three binomial standard errors.
pub fn bernstein_coverage(trials: usize, seed: u64) -> Check {
    timed("Bernstein coverage", || {
        let delta = 0.05;
        let limit = delta + 3.0 * (delta * (1.0 - delta) / trials as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut cases = Vec::new();
        for p in [0.1, 0.5, 0.9] {
            for n in [10u64, 100] {
                let mut violations = 0usize;
                for _ in 0..trials {
                    let hits = (0..n).filter(|_| rng.random::<f64>() < p).count();
                    let p_hat = hits as f64 / n as f64;
                    let w = bernstein_width(p_hat, n, delta).expect("n > 0");
                    if (p_hat - p).abs() > w {
                        violations += 1;
                    }
                }
                let freq = violations as f64 / trials as f64;
                worst = worst.max(freq);
                cases.push(format!("p={p},n={n}:{freq:.4}"));
            }
        }
        (
            worst <= limit,
            format!("max violation rate {worst:.4} (limit {limit:.4}); {}", cases.join(" ")),
        )
    })
}

/// `brute ≤ local (started from selfish) ≤ selfish` on the same objective.
pub fn optimizer_chain(instances: usize, seed: u64) -> Check {
    timed("optimizer chain", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..instances {
            let k = rng.random_range(1..=3usize);
            let n = rng.random_range(1..=5usize);
            let grid = random_grid(&mut rng, n);
            let probs: Vec<f64> = (0..k * n).map(|_| rng.random::<f64>()).collect();
            let lambda = [0.0, 1e-3, 1e-2, 0.1, 1.0][rng.random_range(0..5usize)];
            let input = ObjectiveInput::new(&probs, &grid, lambda).expect("valid instance");
            let b = optimizers::brute(&input, u64::MAX).expect("no budget");
            let s = optimizers::selfish(&input);
            let l = optimizers::local(&input, &s, DEFAULT_LOCAL_SWEEPS, 0.0).expect("valid start");
            let (vb, vl, vs) = (
                optimizers::objective(&input, &b),
                optimizers::objective(&input, &l),
                optimizers::objective(&input, &s),
            );
            if !(vb <= vl && vl <= vs) {
                return (false, format!("K = {k}, N = {n}: brute {vb}, local {vl}, selfish {vs}"));
            }
        }
        (true, format!("{instances} instances"))
    })
}

/// Cutoff scale for the guard check. The horizon-tuned default keeps the
/// cutoff at ½ for thousands of rounds, which would never reach aggregation.
pub const GUARD_BETA: f64 = 1.0;

/// Runs the learner on a small model, where early estimates are often exactly
/// 0 or 1, and checks, every round, that observed cells have a
/// positive cutoff, optimistic estimates that are valid probabilities no
/// closer to ½ than the empirical rate, and that aggregation never sees an
/// estimate of exactly 0 or 1. `beta = None` uses [`GUARD_BETA`].
pub fn cutoff_guard(rounds: usize, beta: Option<f64>, seed: u64) -> Check {
    timed("cutoff guard", || {
        let grid = CostGrid::new(vec![0.0, 0.5, 1.0]).expect("valid grid");
        let model = ProductivityModel::tabular(
            grid.clone(),
            vec![vec![0.6, 0.75, 0.9], vec![0.55, 0.7, 0.85], vec![0.65, 0.7, 0.8]],
        )
        .expect("valid model");
        let mut cfg = match PolicyConfig::new(3, grid, rounds, 0.01, OptimizerKind::Local) {
            Ok(c) => c,
            Err(e) => return (false, e.to_string()),
        };
        cfg.beta = beta.unwrap_or(GUARD_BETA);
        let mut learner = match Gaptron::new(3, cfg) {
            Ok(l) => l,
            Err(e) => return (false, e.to_string()),
        };
        let mut advice = RngStream::new(seed, 0, StreamRole::Advice).rng();
        let mut predictor = RngStream::new(seed, 0, StreamRole::Predictor).rng();
        let mut aggregated = 0usize;
        for t in 1..=rounds {
            let label = if t % 2 == 0 { 1 } else { -1 };
            let r = match learner.step(t, &model, label, &mut advice, &mut predictor, true) {
                Ok(r) => r,
                Err(e) => return (false, format!("round {t}: {e}")),
            };
            aggregated += (r.branch == Branch::Aggregate) as usize;
            let st = learner.state();
            for j in 0..st.k() {
                for i in 0..st.n() {
                    let c = st.cell(j, i).expect("in range");
                    if c.n == 0 {
                        continue;
                    }
                    if !(c.alpha > 0.0 && c.alpha <= 0.5) {
                        return (
                            false,
                            format!("round {t}, cell ({j}, {i}): cutoff {} outside (0, ½]", c.alpha),
                        );
                    }
                    let optimistic = (c.p_opt - 0.5).abs() >= (c.p_hat - 0.5).abs();
                    if !((0.0..=1.0).contains(&c.p_opt) && optimistic) {
                        return (
                            false,
                            format!(
                                "round {t}, cell ({j}, {i}): optimistic {} vs empirical {}",
                                c.p_opt, c.p_hat
                            ),
                        );
                    }
                }
            }
        }
        if aggregated == 0 {
            return (false, format!("aggregation never ran in {rounds} rounds"));
        }
        (true, format!("{rounds} rounds, {aggregated} aggregated"))
    })
}

/// Every check at the given sizes, in a fixed order.
pub fn run_all(sizes: Sizes, seed: u64, beta: Option<f64>) -> Vec<Check> {
    vec![
        prediction_bound(sizes.margins, seed),
        product_identity(sizes.product_instances, seed.wrapping_add(1)),
        gap_chain(sizes.chain_vectors, seed.wrapping_add(2)),
        opt_agreement(sizes.opt_instances, seed.wrapping_add(3)),
        bernstein_coverage(sizes.coverage_trials, seed.wrapping_add(4)),
        optimizer_chain(sizes.optimizer_instances, seed.wrapping_add(5)),
        cutoff_guard(sizes.guard_rounds, beta, seed.wrapping_add(6)),
    ]
}
