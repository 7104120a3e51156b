//! Single-expert bandit baseline: every (expert, payment) pair is an arm, one
//! expert is paid per round and its advice is followed verbatim.

use rand::Rng;

use crate::env::{Label, ProductivityModel};
use crate::error::{Error, Result};
use crate::optimizers::PaymentVector;
use crate::policy::{Branch, RoundRecord};

/// Default confidence-radius constant `c` in `sqrt(c ln t / n)`.
pub const DEFAULT_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArmStats {
    pub n: u64,
    pub total_loss: f64,
}

impl ArmStats {
    pub fn mean_loss(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.total_loss / self.n as f64
        }
    }
}

/// Lower-confidence-bound index policy over `K × N` arms.
#[derive(Debug, Clone)]
pub struct Lcb {
    k: usize,
    n: usize,
    radius: f64,
    /// Row-major `K × N`.
    arms: Vec<ArmStats>,
}

impl Lcb {
    pub fn new(k: usize, n: usize, radius: f64) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(Error::invalid("LCB needs at least one expert and one payment"));
        }
        if !(radius >= 0.0) {
            return Err(Error::invalid(format!(
                "radius constant must be non-negative, got {radius}"
            )));
        }
        Ok(Self {
            k,
            n,
            radius,
            arms: vec![ArmStats::default(); k * n],
        })
    }

    pub fn arm(&self, j: usize, i: usize) -> &ArmStats {
        &self.arms[j * self.n + i]
    }

    pub fn arms(&self) -> &[ArmStats] {
        &self.arms
    }

    /// Unpulled arms first in row-major order, then the smallest
    /// `mean − sqrt(c ln t / n)`; ties go to the smallest `(j, i)`.
    pub fn select(&self, t: usize) -> (usize, usize) {
        if let Some(a) = self.arms.iter().position(|a| a.n == 0) {
            return (a / self.n, a % self.n);
        }
        let log_t = (t.max(1) as f64).ln();
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for (a, s) in self.arms.iter().enumerate() {
            let index = s.mean_loss() - (self.radius * log_t / s.n as f64).sqrt();
            if index < best {
                best = index;
                arg = a;
            }
        }
        (arg / self.n, arg % self.n)
    }

    pub fn update(&mut self, j: usize, i: usize, loss: f64) {
        let a = &mut self.arms[j * self.n + i];
        a.n += 1;
        a.total_loss += loss;
    }

    /// Pays one expert, follows its advice and charges `1[ŷ ≠ y] + λc`.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        t: usize,
        model: &ProductivityModel,
        lambda: f64,
        label: Label,
        advice_rng: &mut R,
    ) -> Result<RoundRecord> {
        if model.k() != self.k || model.n() != self.n {
            return Err(Error::invalid("model dimensions differ from the arm table"));
        }
        let (j, i) = self.select(t);
        let c = model.grid().value(i);
        let p = model.p(j, i);
        let correct = advice_rng.random::<f64>() < p;
        let z = if correct { label } else { -label };
        let mistake = !correct;
        let realized_cost = mistake as u8 as f64 + lambda * c;
        self.update(j, i, realized_cost);
        Ok(RoundRecord {
            t,
            payments: PaymentVector {
                idx: vec![i],
                values: vec![c],
            },
            advice: vec![z],
            branch: Branch::Cutoff { expert: j },
            margin: None,
            prediction: z,
            label,
            mistake,
            payment_total: c,
            realized_cost,
            expected_mistake: Some(1.0 - p),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{CostGrid, RngStream, StreamRole};

    /// Reference index rule written out separately for cross-checking.
    fn reference_select(n: &[u64], loss: &[f64], t: usize) -> usize {
        if let Some(a) = n.iter().position(|&c| c == 0) {
            return a;
        }
        let mut best = (f64::INFINITY, 0);
        for a in 0..n.len() {
            let v = loss[a] / n[a] as f64 - (2.0 * (t as f64).ln() / n[a] as f64).sqrt();
            if v < best.0 {
                best = (v, a);
            }
        }
        best.1
    }

    #[test]
    fn first_round_pulls_first_arm() {
        let lcb = Lcb::new(3, 4, DEFAULT_RADIUS).unwrap();
        assert_eq!(lcb.select(1), (0, 0));
    }

    #[test]
    fn initial_sweep_is_row_major() {
        let mut lcb = Lcb::new(2, 3, DEFAULT_RADIUS).unwrap();
        let mut seen = vec![];
        for t in 1..=6 {
            let (j, i) = lcb.select(t);
            seen.push((j, i));
            lcb.update(j, i, 0.5);
        }
        assert_eq!(seen, vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]);
    }

    #[test]
    fn dominated_arm_not_chosen() {
        let mut lcb = Lcb::new(2, 1, DEFAULT_RADIUS).unwrap();
        for _ in 0..10_000 {
            lcb.update(0, 0, 0.9);
            lcb.update(1, 0, 0.2);
        }
        assert_eq!(lcb.select(20_000), (1, 0));
    }

    #[test]
    fn matches_reference_rule_on_fabricated_instance() {
        let grid = CostGrid::new(vec![0.2, 0.5, 0.9]).unwrap();
        let model = ProductivityModel::tabular(grid, vec![vec![0.55, 0.7, 0.93]]).unwrap();
        let mut lcb = Lcb::new(1, 3, DEFAULT_RADIUS).unwrap();
        let mut rng = RngStream::new(21, 0, StreamRole::Advice).rng();
        let (mut n, mut loss) = (vec![0u64; 3], vec![0.0f64; 3]);
        for t in 1..=100 {
            let want = reference_select(&n, &loss, t);
            let r = lcb.step(t, &model, 0.1, 1, &mut rng).unwrap();
            assert_eq!(r.payments.idx[0], want, "round {t}");
            n[want] += 1;
            loss[want] += r.realized_cost;
        }
    }

    #[test]
    fn certain_arm_costs_only_its_payment() {
        let grid = CostGrid::new(vec![0.4]).unwrap();
        let model = ProductivityModel::tabular(grid, vec![vec![1.0]]).unwrap();
        let mut lcb = Lcb::new(1, 1, DEFAULT_RADIUS).unwrap();
        let mut rng = RngStream::new(2, 0, StreamRole::Advice).rng();
        for t in 1..=50 {
            let r = lcb.step(t, &model, 0.01, -1, &mut rng).unwrap();
            assert_eq!(r.realized_cost, 0.01 * 0.4);
            assert_eq!(r.payments.values.len(), 1);
        }
    }

    #[test]
    fn coin_flip_arm_has_half_loss() {
        let grid = CostGrid::new(vec![0.4]).unwrap();
        let model = ProductivityModel::tabular(grid, vec![vec![0.5]]).unwrap();
        let mut lcb = Lcb::new(1, 1, DEFAULT_RADIUS).unwrap();
        let mut rng = RngStream::new(3, 0, StreamRole::Advice).rng();
        let pulls = 100_000;
        for t in 1..=pulls {
            lcb.step(t, &model, 0.0, 1, &mut rng).unwrap();
        }
        let mean = lcb.arm(0, 0).mean_loss();
        assert!((mean - 0.5).abs() < 3.0 * (0.25 / pulls as f64).sqrt(), "{mean}");
    }

    #[test]
    fn dominant_arm_gets_most_pulls() {
        let grid = CostGrid::new(vec![0.1, 0.5]).unwrap();
        let model = ProductivityModel::tabular(grid, vec![vec![0.6, 0.95], vec![0.55, 0.6]]).unwrap();
        let mut lcb = Lcb::new(2, 2, DEFAULT_RADIUS).unwrap();
        let mut rng = RngStream::new(4, 0, StreamRole::Advice).rng();
        let horizon = 10_000;
        let mut paid = 0.0;
        for t in 1..=horizon {
            let r = lcb.step(t, &model, 0.01, 1, &mut rng).unwrap();
            paid += r.payment_total;
        }
        assert!(paid <= horizon as f64 * 0.5);
        let best = lcb.arm(0, 1).n as f64;
        assert!(1.0 - best / horizon as f64 <= 0.10);
    }
}
