//! Exact reference computations: conditional mistake probabilities under the
//! true model and the grid comparator `OPT`.

use serde::{Deserialize, Serialize};

use crate::env::{sign, ProductivityModel};
use crate::error::{Error, Result};
use crate::optimizers::{self, combine, ObjectiveInput, PaymentVector};
use crate::policy::conditional_mistake_prob;

/// Largest expert count for which advice vectors are enumerated.
pub const MAX_ENUMERATION_K: usize = 20;
pub const DEFAULT_FRONTIER_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MistakeProb {
    /// The randomized rule's mistake probability.
    pub randomized: f64,
    /// Mistake probability of predicting `sign(x)` outright, `sign(0) = +1`,
    /// with the true label taken as `+1`.
    pub deterministic: f64,
}

/// Sums over all `2^K` correctness patterns: `Pr(pattern) · Pr(mistake | margin)`.
///
/// The label is fixed to `+1`, so a correct expert reports `+1`. The
/// randomized value does not depend on that choice.
pub fn exact_mistake_prob(true_p: &[f64], weights: &[f64]) -> Result<MistakeProb> {
    let k = true_p.len();
    if weights.len() != k {
        return Err(Error::invalid(format!("{} weights for {k} experts", weights.len())));
    }
    if k > MAX_ENUMERATION_K {
        return Err(Error::TooManyExperts {
            k,
            limit: MAX_ENUMERATION_K,
        });
    }
    let mut randomized = 0.0;
    let mut deterministic = 0.0;
    for mask in 0u32..(1u32 << k) {
        let mut prob = 1.0;
        let mut x = 0.0;
        for j in 0..k {
            if mask >> j & 1 == 1 {
                prob *= true_p[j];
                x += weights[j];
            } else {
                prob *= 1.0 - true_p[j];
                x -= weights[j];
            }
        }
        if prob == 0.0 {
            continue;
        }
        randomized += prob * conditional_mistake_prob(x, 1);
        if sign(x) != 1 {
            deterministic += prob;
        }
    }
    Ok(MistakeProb {
        randomized,
        deterministic,
    })
}

/// Mistake probability when following expert `j` (or its negation when
/// `p_hat < ½`) whose true success rate is `true_p`.
pub fn cutoff_mistake_prob(true_p: f64, p_hat: f64) -> f64 {
    if sign(p_hat - 0.5) == 1 {
        1.0 - true_p
    } else {
        true_p
    }
}

/// How the learner predicts in a round, as seen by the oracle.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision<'a> {
    Cutoff { expert: usize, p_hat: f64 },
    Aggregate { weights: &'a [f64] },
}

/// `Pr(ŷ ≠ y) + λ Σ c` under the true model.
pub fn expected_round_cost(
    model: &ProductivityModel,
    payments: &PaymentVector,
    decision: &Decision<'_>,
    lambda: f64,
) -> Result<f64> {
    let true_p = model.probs_at(payments);
    let mistake = match decision {
        Decision::Cutoff { expert, p_hat } => {
            let p = *true_p.get(*expert).ok_or(Error::IndexOutOfRange {
                what: "expert",
                index: *expert,
                len: true_p.len(),
            })?;
            cutoff_mistake_prob(p, *p_hat)
        }
        Decision::Aggregate { weights } => exact_mistake_prob(&true_p, weights)?.randomized,
    };
    Ok(mistake + lambda * payments.total())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub value: f64,
    pub payments: PaymentVector,
}

/// `min_c exp(−2 Σ (½ − p_j(c_j))²) + λ Σ c_j` by exhaustive search.
pub fn opt_bruteforce(model: &ProductivityModel, lambda: f64, budget: u64) -> Result<OptResult> {
    let input = ObjectiveInput::new(model.table(), model.grid(), lambda)?;
    let payments = optimizers::brute(&input, budget)?;
    Ok(OptResult {
        value: optimizers::objective(&input, &payments),
        payments,
    })
}

/// One accumulated assignment of the first `j` experts.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    /// Sum of squared gaps `Σ (p − ½)²`.
    pub s: f64,
    /// Sum of payments.
    pub c: f64,
    pub trace: Vec<usize>,
}

/// Keeps points not dominated in (larger `s`, smaller `c`). Exact duplicates
/// keep the lexicographically smaller trace.
fn prune(mut points: Vec<ParetoPoint>) -> Vec<ParetoPoint> {
    points.sort_by(|a, b| {
        a.c.total_cmp(&b.c)
            .then(b.s.total_cmp(&a.s))
            .then_with(|| a.trace.cmp(&b.trace))
    });
    let mut out: Vec<ParetoPoint> = Vec::with_capacity(points.len());
    for p in points {
        if out.last().is_none_or(|last| p.s > last.s) {
            out.push(p);
        }
    }
    out
}

/// Pareto frontier after combining all experts, sorted by payment sum.
pub fn pareto_frontier(model: &ProductivityModel, cap: usize) -> Result<Vec<ParetoPoint>> {
    let grid = model.grid();
    let sq = |j: usize, i: usize| {
        let g = 0.5 - model.p(j, i);
        g * g
    };
    let mut frontier = prune(
        (0..model.n())
            .map(|i| ParetoPoint {
                s: 0.0 + sq(0, i),
                c: 0.0 + grid.value(i),
                trace: vec![i],
            })
            .collect(),
    );
    for j in 1..model.k() {
        let size = frontier.len() * model.n();
        if size > cap {
            return Err(Error::FrontierTooLarge { size, cap });
        }
        let mut next = Vec::with_capacity(size);
        for p in &frontier {
            for i in 0..model.n() {
                let mut trace = Vec::with_capacity(j + 1);
                trace.extend_from_slice(&p.trace);
                trace.push(i);
                next.push(ParetoPoint {
                    s: p.s + sq(j, i),
                    c: p.c + grid.value(i),
                    trace,
                });
            }
        }
        frontier = prune(next);
    }
    Ok(frontier)
}

/// Exact `OPT` through Minkowski sums of per-expert point sets, keeping only
/// nondominated points at each stage. The accumulation order matches
/// [`optimizers::objective`], so the value equals [`opt_bruteforce`] bit for bit.
pub fn opt_pareto(model: &ProductivityModel, lambda: f64, cap: usize) -> Result<OptResult> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    let frontier = pareto_frontier(model, cap)?;
    let mut best: Option<&ParetoPoint> = None;
    let mut best_value = f64::INFINITY;
    for p in &frontier {
        let v = combine(p.s, p.c, lambda);
        if v < best_value || (v == best_value && best.is_some_and(|b| p.trace < b.trace)) {
            best_value = v;
            best = Some(p);
        }
    }
    let best = best.expect("frontier is never empty");
    Ok(OptResult {
        value: best_value,
        payments: PaymentVector::from_indices(best.trace.clone(), model.grid()),
    })
}

/// `[OPT_grid − (4L + λ)Kε, OPT_grid]`, an interval containing the continuum
/// comparator when the productivity functions are `L`-Lipschitz on `[0, 1]`.
pub fn continuum_opt_interval(model: &ProductivityModel, grid_opt: f64, lambda: f64) -> Option<(f64, f64)> {
    let l = model.lipschitz_hint()?;
    let eps = model.grid().covering_radius();
    Some((grid_opt - (4.0 * l + lambda) * model.k() as f64 * eps, grid_opt))
}
