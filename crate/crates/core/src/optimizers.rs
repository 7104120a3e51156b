//! Payment selection: minimizes `exp(−2 Σ_j (1/2 − P_j(c_j))²) + λ Σ_j c_j`
//! over grid assignments.
//!
//! All three optimizers evaluate candidates with the same left-to-right
//! summation as [`objective`], so values they report are bit-identical to a
//! direct re-evaluation and the ordering `brute ≤ local ≤ selfish` holds
//! exactly rather than up to rounding.

use serde::{Deserialize, Serialize};

use crate::env::CostGrid;
use crate::error::{Error, Result};

pub const DEFAULT_BRUTE_BUDGET: u64 = 1_000_000;
pub const DEFAULT_LOCAL_SWEEPS: usize = 10;

/// One grid index per expert, with the matching payments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaymentVector {
    pub idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl PaymentVector {
    pub fn from_indices(idx: Vec<usize>, grid: &CostGrid) -> Self {
        let values = idx.iter().map(|&i| grid.value(i)).collect();
        Self { idx, values }
    }

    /// Every expert paid the same grid value.
    pub fn uniform(k: usize, i: usize, grid: &CostGrid) -> Self {
        Self::from_indices(vec![i; k], grid)
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Brute,
    Selfish,
    Local,
}

/// Per-cell success probabilities (optimistic or true) plus payment weight.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInput<'a> {
    /// Row-major `K × N`.
    pub probs: &'a [f64],
    pub grid: &'a CostGrid,
    pub lambda: f64,
}

impl<'a> ObjectiveInput<'a> {
    pub fn new(probs: &'a [f64], grid: &'a CostGrid, lambda: f64) -> Result<Self> {
        if probs.is_empty() || !probs.len().is_multiple_of(grid.len()) {
            return Err(Error::invalid(format!(
                "probability table of length {} is not a K × {} matrix",
                probs.len(),
                grid.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("probability {p} is outside [0, 1]")));
        }
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
        }
        Ok(Self { probs, grid, lambda })
    }

    pub fn k(&self) -> usize {
        self.probs.len() / self.grid.len()
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    #[inline]
    pub(crate) fn sq_gap(&self, j: usize, i: usize) -> f64 {
        let g = 0.5 - self.probs[j * self.grid.len() + i];
        g * g
    }
}

#[inline]
pub(crate) fn combine(sq_gaps: f64, pay: f64, lambda: f64) -> f64 {
    (-2.0 * sq_gaps).exp() + lambda * pay
}

fn eval_indices(input: &ObjectiveInput<'_>, idx: &[usize]) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for (j, &i) in idx.iter().enumerate() {
        s += input.sq_gap(j, i);
        c += input.grid.value(i);
    }
    combine(s, c, input.lambda)
}

pub fn objective(input: &ObjectiveInput<'_>, payments: &PaymentVector) -> f64 {
    eval_indices(input, &payments.idx)
}

fn search_size(n: usize, k: usize) -> u128 {
    (n as u128).checked_pow(k as u32).unwrap_or(u128::MAX)
}

/// Exhaustive search in odometer order over index vectors, refusing when the
/// `N^K` grid exceeds `budget`. Ties resolve to the lexicographically smallest
/// index vector.
pub fn brute(input: &ObjectiveInput<'_>, budget: u64) -> Result<PaymentVector> {
    let (k, n) = (input.k(), input.n());
    let size = search_size(n, k);
    if size > budget as u128 {
        return Err(Error::BudgetExceeded { size, budget, n, k });
    }
    let (_, idx) = brute_search(input);
    Ok(PaymentVector::from_indices(idx, input.grid))
}

#[cfg(feature = "parallel")]
const PARALLEL_BRUTE_MIN: u128 = 1 << 16;

fn brute_search(input: &ObjectiveInput<'_>) -> (f64, Vec<usize>) {
    #[cfg(feature = "parallel")]
    {
        let (k, n) = (input.k(), input.n());
        if k > 1 && search_size(n, k) >= PARALLEL_BRUTE_MIN {
            use rayon::prelude::*;
            // Each first-coordinate slab is searched independently; the
            // reduction keeps the earliest slab on ties, which reproduces the
            // sequential lexicographic order.
            return (0..n)
                .into_par_iter()
                .map(|first| odometer(input, Some(first)))
                .collect::<Vec<_>>()
                .into_iter()
                .fold(
                    (f64::INFINITY, Vec::new()),
                    |best, cand| if cand.0 < best.0 { cand } else { best },
                );
        }
    }
    odometer(input, None)
}

/// Enumerates index vectors lexicographically, optionally with the first
/// coordinate pinned. Prefix sums are recomputed only from the coordinate that
/// changed, in the same order `eval_indices` uses.
fn odometer(input: &ObjectiveInput<'_>, first: Option<usize>) -> (f64, Vec<usize>) {
    let (k, n) = (input.k(), input.n());
    let mut idx = vec![0usize; k];
    let lo = match first {
        Some(f) => {
            idx[0] = f;
            1
        }
        None => 0,
    };
    let mut s_prefix = vec![0.0f64; k + 1];
    let mut c_prefix = vec![0.0f64; k + 1];
    let refresh = |from: usize, idx: &[usize], s: &mut [f64], c: &mut [f64]| {
        for j in from..k {
            s[j + 1] = s[j] + input.sq_gap(j, idx[j]);
            c[j + 1] = c[j] + input.grid.value(idx[j]);
        }
    };
    refresh(0, &idx, &mut s_prefix, &mut c_prefix);
    let mut best = combine(s_prefix[k], c_prefix[k], input.lambda);
    let mut best_idx = idx.clone();
    loop {
        let mut pos = k;
        loop {
            if pos == lo {
                return (best, best_idx);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < n {
                break;
            }
            idx[pos] = 0;
        }
        refresh(pos, &idx, &mut s_prefix, &mut c_prefix);
        let v = combine(s_prefix[k], c_prefix[k], input.lambda);
        if v < best {
            best = v;
            best_idx.copy_from_slice(&idx);
        }
    }
}

/// Each expert minimizes its own single-expert objective
/// `exp(−2 (1/2 − P_j(c))²) + λc`, ignoring the others.
pub fn selfish(input: &ObjectiveInput<'_>) -> PaymentVector {
    let idx = (0..input.k())
        .map(|j| {
            let mut best = f64::INFINITY;
            let mut arg = 0;
            for i in 0..input.n() {
                let v = combine(input.sq_gap(j, i), input.grid.value(i), input.lambda);
                if v < best {
                    best = v;
                    arg = i;
                }
            }
            arg
        })
        .collect();
    PaymentVector::from_indices(idx, input.grid)
}

/// Round-robin coordinate descent on the joint objective, starting at `start`.
///
/// Each coordinate moves to its exact minimizer with the others held fixed
/// (smallest payment on ties), so the objective never increases. Stops after a
/// sweep that improves by at most `tol`, or after `max_sweeps` sweeps.
pub fn local(input: &ObjectiveInput<'_>, start: &PaymentVector, max_sweeps: usize, tol: f64) -> Result<PaymentVector> {
    let (k, n) = (input.k(), input.n());
    if start.idx.len() != k {
        return Err(Error::invalid(format!(
            "start has {} entries for {k} experts",
            start.idx.len()
        )));
    }
    if let Some(&i) = start.idx.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange {
            what: "grid index",
            index: i,
            len: n,
        });
    }
    if max_sweeps == 0 || !(tol >= 0.0) {
        return Err(Error::invalid("local search needs max_sweeps ≥ 1 and tol ≥ 0"));
    }
    let mut idx = start.idx.clone();
    let mut current = eval_indices(input, &idx);
    for _ in 0..max_sweeps {
        let before = current;
        for j in 0..k {
            let keep = idx[j];
            let mut best = current;
            let mut arg = keep;
            for i in 0..n {
                if i == keep {
                    continue;
                }
                idx[j] = i;
                let v = eval_indices(input, &idx);
                if v < best || (v == best && i < arg) {
                    best = v;
                    arg = i;
                }
            }
            idx[j] = arg;
            current = best;
        }
        if before - current <= tol {
            break;
        }
    }
    Ok(PaymentVector::from_indices(idx, input.grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn grid(v: &[f64]) -> CostGrid {
        CostGrid::new(v.to_vec()).unwrap()
    }

    /// Independent enumeration via mixed-radix decoding.
    fn enumerate_min(input: &ObjectiveInput<'_>) -> (f64, Vec<usize>) {
        let (k, n) = (input.k(), input.n());
        let total = n.pow(k as u32);
        let mut best = (f64::INFINITY, vec![]);
        for code in 0..total {
            let mut idx = vec![0; k];
            let mut r = code;
            for j in (0..k).rev() {
                idx[j] = r % n;
                r /= n;
            }
            let v = eval_indices(input, &idx);
            if v < best.0 {
                best = (v, idx);
            }
        }
        best
    }

    #[test]
    fn objective_values() {
        let g = grid(&[0.0, 0.5]);
        let half = [0.5, 0.5, 0.5, 0.5];
        let inp = ObjectiveInput::new(&half, &g, 0.3).unwrap();
        assert_eq!(objective(&inp, &PaymentVector::uniform(2, 0, &g)), 1.0);

        let one = [1.0, 1.0];
        let inp = ObjectiveInput::new(&one, &g, 0.01).unwrap();
        let v = objective(&inp, &PaymentVector::from_indices(vec![1], &g));
        assert!((v - ((-0.5f64).exp() + 0.005)).abs() < 1e-15);
        assert!((v - 0.611_530_66).abs() < 1e-8);

        let two = [1.0, 1.0, 1.0, 1.0];
        let inp = ObjectiveInput::new(&two, &g, 0.01).unwrap();
        let v = objective(&inp, &PaymentVector::uniform(2, 0, &g));
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn brute_single_expert_cases() {
        let g = grid(&[0.0, 1.0]);
        let p = [0.5, 1.0];
        let cheap = ObjectiveInput::new(&p, &g, 0.01).unwrap();
        assert_eq!(brute(&cheap, DEFAULT_BRUTE_BUDGET).unwrap().idx, vec![1]);
        let dear = ObjectiveInput::new(&p, &g, 10.0).unwrap();
        assert_eq!(brute(&dear, DEFAULT_BRUTE_BUDGET).unwrap().idx, vec![0]);
    }

    #[test]
    fn brute_refuses_over_budget() {
        let g = grid(&[0.0, 0.5, 1.0]);
        let p = vec![0.7; 3 * 5];
        let inp = ObjectiveInput::new(&p, &g, 0.01).unwrap();
        match brute(&inp, 100) {
            Err(Error::BudgetExceeded { size, budget, .. }) => assert_eq!((size, budget), (243, 100)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn brute_ties_take_smallest_indices() {
        let g = grid(&[0.0, 0.5, 1.0]);
        let p = vec![0.9; 6];
        let free = ObjectiveInput::new(&p, &g, 0.0).unwrap();
        assert_eq!(brute(&free, DEFAULT_BRUTE_BUDGET).unwrap().idx, vec![0, 0]);
    }

    #[test]
    fn brute_matches_enumeration_k3_n4() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let g = grid(&[0.0, 0.2, 0.55, 0.9]);
        for _ in 0..50 {
            let p: Vec<f64> = (0..12).map(|_| rng.random()).collect();
            let inp = ObjectiveInput::new(&p, &g, 0.05).unwrap();
            let b = brute(&inp, DEFAULT_BRUTE_BUDGET).unwrap();
            let (v, idx) = enumerate_min(&inp);
            assert_eq!(b.idx, idx);
            assert_eq!(objective(&inp, &b), v);
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_brute_matches_sequential() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let g = grid(&[0.0, 0.1, 0.3, 0.5, 0.7, 0.8, 0.9, 1.0]);
        // 8^6 = 262144 ≥ the parallel threshold
        let p: Vec<f64> = (0..48).map(|_| rng.random()).collect();
        let inp = ObjectiveInput::new(&p, &g, 0.001).unwrap();
        let par = brute_search(&inp);
        let seq = odometer(&inp, None);
        assert_eq!(par.1, seq.1);
        assert_eq!(par.0, seq.0);
    }

    #[test]
    fn selfish_lambda_zero_maximizes_gap() {
        let g = grid(&[0.0, 0.5, 1.0]);
        let p = [0.6, 0.1, 0.8, 0.5, 0.5, 0.5];
        let inp = ObjectiveInput::new(&p, &g, 0.0).unwrap();
        assert_eq!(selfish(&inp).idx, vec![1, 0]);
    }

    #[test]
    fn selfish_worse_than_brute_on_coupled_instance() {
        // With one strong expert the joint objective gains little from paying
        // the second, but the selfish rule pays it anyway.
        let g = grid(&[0.0, 0.5, 1.0]);
        let p = [0.5, 0.5, 1.0, 0.5, 0.75, 1.0];
        let inp = ObjectiveInput::new(&p, &g, 0.3).unwrap();
        let s = selfish(&inp);
        let b = brute(&inp, DEFAULT_BRUTE_BUDGET).unwrap();
        // enumerated by hand over 9 cells:
        // selfish picks (2, 2): e^{-1} + 0.3·2 = 0.96788
        // brute picks (0, 2):  e^{-0.5} + 0.3 = 0.90653, tied with (2, 0)
        assert_eq!(s.idx, vec![2, 2]);
        assert_eq!(b.idx, vec![0, 2]);
        assert!((objective(&inp, &s) - 0.967_879_4).abs() < 1e-6);
        assert!((objective(&inp, &b) - 0.906_530_7).abs() < 1e-6);
        assert!(objective(&inp, &s) > objective(&inp, &b));
    }

    #[test]
    fn local_single_expert_equals_brute() {
        let g = grid(&[0.0, 0.3, 0.6, 1.0]);
        let p = [0.5, 0.7, 0.95, 0.97];
        for lambda in [0.0, 0.01, 0.2, 3.0] {
            let inp = ObjectiveInput::new(&p, &g, lambda).unwrap();
            let l = local(&inp, &PaymentVector::uniform(1, 3, &g), 1, 0.0).unwrap();
            assert_eq!(l.idx, brute(&inp, DEFAULT_BRUTE_BUDGET).unwrap().idx);
        }
    }

    #[test]
    fn local_rejects_bad_start() {
        let g = grid(&[0.0, 1.0]);
        let p = [0.5, 0.9];
        let inp = ObjectiveInput::new(&p, &g, 0.0).unwrap();
        assert!(local(
            &inp,
            &PaymentVector {
                idx: vec![2],
                values: vec![1.0]
            },
            3,
            0.0
        )
        .is_err());
        assert!(local(&inp, &PaymentVector::uniform(2, 0, &g), 3, 0.0).is_err());
        assert!(local(&inp, &PaymentVector::uniform(1, 0, &g), 0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn descent_chain_and_bounds(k in 1usize..4, n in 1usize..6,
                                    seed in any::<u64>(),
                                    lambda in prop_oneof![Just(0.0), 0.0f64..2.0]) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = CostGrid::from_unsorted((0..n).map(|i| (i as f64 + rng.random::<f64>()) / n as f64).collect()).unwrap();
            let p: Vec<f64> = (0..k * n).map(|_| rng.random()).collect();
            let inp = ObjectiveInput::new(&p, &g, lambda).unwrap();
            let s = selfish(&inp);
            let l = local(&inp, &s, DEFAULT_LOCAL_SWEEPS, 0.0).unwrap();
            let b = brute(&inp, DEFAULT_BRUTE_BUDGET).unwrap();
            let (vb, vl, vs) = (objective(&inp, &b), objective(&inp, &l), objective(&inp, &s));
            prop_assert!(vb <= vl && vl <= vs);
            prop_assert!(vb > 0.0 && vs <= 1.0 + lambda * k as f64 * g.max());
            prop_assert_eq!(brute(&inp, DEFAULT_BRUTE_BUDGET).unwrap(), b);
            prop_assert_eq!(local(&inp, &s, DEFAULT_LOCAL_SWEEPS, 0.0).unwrap(), l);
        }
    }
}
