//! Per-(expert, payment) success statistics with empirical-Bernstein optimism.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::CostGrid;
use crate::error::{Error, Result};

/// `δ = 1 / ((1 + λK) T² K)` and `β = 18 ln(3/δ) K²`.
pub fn default_parameters(k: usize, t: usize, lambda: f64) -> (f64, f64) {
    let (k, t) = (k as f64, t as f64);
    let delta = 1.0 / ((1.0 + lambda * k) * t * t * k);
    let beta = 18.0 * (3.0 / delta).ln() * k * k;
    (beta, delta)
}

/// Empirical-Bernstein deviation bound
/// `3 ln(3/δ)/n + sqrt(2 p̂(1−p̂) ln(3/δ)/n)`.
pub fn bernstein_width(p_hat: f64, n: u64, delta: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::UndefinedWidth);
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1], got {delta}")));
    }
    let log_term = (3.0 / delta).ln();
    let n = n as f64;
    Ok(3.0 * log_term / n + (2.0 * p_hat * (1.0 - p_hat) * log_term / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub n: u64,
    pub sum_correct: u64,
    pub p_hat: f64,
    /// Cutoff: estimates outside `[alpha, 1 - alpha]` are followed directly.
    pub alpha: f64,
    /// Clamped confidence width.
    pub q: f64,
    /// `sign(1/2 − p_hat)`, with `sign(0) = +1`.
    pub s: i8,
    /// Optimistic estimate, `p_hat` pushed away from 1/2 by `q`.
    pub p_opt: f64,
}

impl CellStats {
    pub const FRESH: CellStats = CellStats {
        n: 0,
        sum_correct: 0,
        p_hat: 1.0,
        alpha: 0.5,
        q: 0.0,
        s: -1,
        p_opt: 1.0,
    };

    fn from_counts(n: u64, sum_correct: u64, beta: f64, delta: f64) -> Self {
        if n == 0 {
            return Self::FRESH;
        }
        let p_hat = sum_correct as f64 / n as f64;
        let alpha = (beta / n as f64).min(0.5);
        let width = bernstein_width(p_hat, n, delta).expect("n > 0 and delta validated");
        let q = (1.0 - p_hat).min(p_hat).min(width);
        let s = crate::env::sign(0.5 - p_hat);
        let p_opt = p_hat - s as f64 * q;
        CellStats {
            n,
            sum_correct,
            p_hat,
            alpha,
            q,
            s,
            p_opt,
        }
    }

    /// Whether the estimate lies outside `[alpha, 1 - alpha]`.
    pub fn is_cut_off(&self) -> bool {
        self.p_hat < self.alpha || self.p_hat > 1.0 - self.alpha
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    k: usize,
    grid: CostGrid,
    beta: f64,
    delta: f64,
    /// Row-major `K × N`.
    cells: Vec<CellStats>,
}

impl EstimatorState {
    pub fn new(k: usize, grid: CostGrid, beta: f64, delta: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!(
                "beta must be finite and non-negative, got {beta}"
            )));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1], got {delta}")));
        }
        let cells = vec![CellStats::FRESH; k * grid.len()];
        Ok(Self {
            k,
            grid,
            beta,
            delta,
            cells,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &CostGrid {
        &self.grid
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn cell(&self, j: usize, i: usize) -> Result<&CellStats> {
        if j >= self.k {
            return Err(Error::IndexOutOfRange {
                what: "expert",
                index: j,
                len: self.k,
            });
        }
        if i >= self.n() {
            return Err(Error::IndexOutOfRange {
                what: "grid index",
                index: i,
                len: self.n(),
            });
        }
        Ok(&self.cells[j * self.n() + i])
    }

    #[inline]
    pub(crate) fn cell_unchecked(&self, j: usize, i: usize) -> &CellStats {
        &self.cells[j * self.grid.len() + i]
    }

    /// Flat `K × N` table of optimistic estimates.
    pub fn optimistic_table(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.p_opt).collect()
    }

    pub fn observe(&mut self, j: usize, i: usize, correct: bool) -> Result<()> {
        let c = *self.cell(j, i)?;
        let n = self.n();
        self.cells[j * n + i] = CellStats::from_counts(c.n + 1, c.sum_correct + correct as u64, self.beta, self.delta);
        Ok(())
    }

    /// Total observations recorded for expert `j`.
    pub fn rounds_observed(&self, j: usize) -> u64 {
        let n = self.n();
        self.cells[j * n..(j + 1) * n].iter().map(|c| c.n).sum()
    }

    pub fn snapshot(&self) -> Snapshot {
        let n = self.n();
        Snapshot {
            k: self.k,
            grid: self.grid.clone(),
            beta: self.beta,
            delta: self.delta,
            n: self.cells.chunks(n).map(|r| r.iter().map(|c| c.n).collect()).collect(),
            sum_correct: self
                .cells
                .chunks(n)
                .map(|r| r.iter().map(|c| c.sum_correct).collect())
                .collect(),
        }
    }

    pub fn from_snapshot(s: Snapshot) -> Result<Self> {
        let mut state = Self::new(s.k, s.grid, s.beta, s.delta)?;
        let n = state.n();
        if s.n.len() != s.k || s.sum_correct.len() != s.k {
            return Err(Error::invalid("snapshot row count does not match K"));
        }
        for j in 0..s.k {
            if s.n[j].len() != n || s.sum_correct[j].len() != n {
                return Err(Error::invalid("snapshot column count does not match the grid"));
            }
            for i in 0..n {
                let (cnt, ok) = (s.n[j][i], s.sum_correct[j][i]);
                if ok > cnt {
                    return Err(Error::invalid(format!(
                        "cell ({j}, {i}) has {ok} successes in {cnt} rounds"
                    )));
                }
                state.cells[j * n + i] = CellStats::from_counts(cnt, ok, s.beta, s.delta);
            }
        }
        Ok(state)
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(&self.snapshot())?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load_snapshot(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_snapshot(serde_json::from_str(&s)?)
    }
}

/// Count-only serialized form; derived fields are recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    #[serde(rename = "K")]
    pub k: usize,
    pub grid: CostGrid,
    pub beta: f64,
    pub delta: f64,
    pub n: Vec<Vec<u64>>,
    pub sum_correct: Vec<Vec<u64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(beta: f64, delta: f64) -> EstimatorState {
        EstimatorState::new(2, CostGrid::new(vec![0.0, 0.5, 1.0]).unwrap(), beta, delta).unwrap()
    }

    #[test]
    fn default_parameters_closed_form() {
        let (beta, delta) = default_parameters(1, 1, 0.0);
        assert_eq!(delta, 1.0);
        assert!((beta - 18.0 * 3f64.ln()).abs() < 1e-12);
        assert!((beta - 19.775_021_196_025_975).abs() < 1e-9);

        let (beta, delta) = default_parameters(5, 10_000, 0.01);
        let want_delta = 1.0 / (1.05e8 * 5.0);
        assert!((delta / want_delta - 1.0).abs() < 1e-12);
        assert!((beta - 18.0 * (3.0 / want_delta).ln() * 25.0).abs() < 1e-9);
    }

    #[test]
    fn beta_exceeds_half() {
        for k in 1..6 {
            for t in [1usize, 10, 1000] {
                for lambda in [0.0, 0.01, 1.0] {
                    assert!(default_parameters(k, t, lambda).0 > 0.5);
                }
            }
        }
    }

    #[test]
    fn width_values() {
        // 3 ln 30 / 5
        let w = bernstein_width(0.0, 5, 0.1).unwrap();
        assert!((w - 2.040_718_429_0).abs() < 1e-9, "{w}");
        let w = bernstein_width(0.5, 100, 0.1).unwrap();
        // 0.1020360 + sqrt(0.5 ln 30 / 100)
        assert!((w - (0.03 * 30f64.ln() + (0.005 * 30f64.ln()).sqrt())).abs() < 1e-15);
        assert!((w - 0.232_45).abs() < 1e-4, "{w}");
        for n in [1, 7, 1000] {
            assert_eq!(bernstein_width(1.0, n, 0.1).unwrap(), 3.0 * 30f64.ln() / n as f64);
        }
        assert!(matches!(bernstein_width(0.5, 0, 0.1), Err(Error::UndefinedWidth)));
    }

    #[test]
    fn fresh_cell_matches_initialisation() {
        let s = state(1.0, 0.1);
        let c = s.cell(1, 2).unwrap();
        assert_eq!((c.n, c.p_hat, c.p_opt, c.alpha), (0, 1.0, 1.0, 0.5));
        assert!(s.cell(2, 0).is_err());
        assert!(s.cell(0, 3).is_err());
    }

    #[test]
    fn observe_sequence() {
        let (beta, delta) = default_parameters(2, 100, 0.01);
        let mut s = state(beta, delta);
        s.observe(0, 1, true).unwrap();
        let c = *s.cell(0, 1).unwrap();
        assert_eq!((c.n, c.p_hat, c.q, c.p_opt, c.alpha), (1, 1.0, 0.0, 1.0, 0.5));
        s.observe(0, 1, false).unwrap();
        let c = *s.cell(0, 1).unwrap();
        assert_eq!((c.n, c.p_hat, c.s), (2, 0.5, 1));
        assert_eq!(c.q, 0.5);
        assert_eq!(c.p_opt, 0.0);
    }

    #[test]
    fn alpha_drops_below_half_once_n_exceeds_two_beta() {
        let mut s = state(2.0, 0.1);
        for r in 0..10 {
            s.observe(0, 0, r % 2 == 0).unwrap();
        }
        assert_eq!(s.cell(0, 0).unwrap().alpha, 0.2);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut s = state(3.0, 0.05);
        for r in 0..17 {
            s.observe(r % 2, r % 3, r % 5 != 0).unwrap();
        }
        let json = serde_json::to_string(&s.snapshot()).unwrap();
        let back = EstimatorState::from_snapshot(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #[test]
        fn optimism_geometry(outcomes in proptest::collection::vec(any::<bool>(), 1..300),
                             beta in 0.0f64..50.0,
                             delta in 0.001f64..0.999) {
            let mut s = EstimatorState::new(1, CostGrid::new(vec![0.5]).unwrap(), beta, delta).unwrap();
            let mut prev = *s.cell(0, 0).unwrap();
            for o in outcomes {
                s.observe(0, 0, o).unwrap();
                let c = *s.cell(0, 0).unwrap();
                prop_assert!((0.0..=1.0).contains(&c.p_opt));
                prop_assert!(c.q >= 0.0 && c.q <= c.p_hat.min(1.0 - c.p_hat));
                let (a, b) = ((0.5 - c.p_opt).powi(2), (0.5 - c.p_hat).powi(2));
                prop_assert!(a >= b);
                prop_assert_eq!(a == b, c.q == 0.0);
                prop_assert!(c.n == prev.n + 1);
                if prev.n >= 1 {
                    prop_assert!(c.alpha <= prev.alpha);
                }
                prev = c;
            }
        }
    }
}
