//! The LCB-GAPTRON learner: optimistic payment selection, cutoff-or-aggregate
//! prediction with randomized labeling, and per-cell updates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{advice_from_correctness, sample_correctness, sign, CostGrid, Label, ProductivityModel};
use crate::error::{Error, Result};
use crate::estimator::{default_parameters, EstimatorState};
use crate::optimizers::{self, ObjectiveInput, OptimizerKind, PaymentVector};
use crate::oracle;

/// `w(p) = ½ ln(p / (1 − p))`, defined on the open unit interval.
pub fn weight(p_hat: f64) -> Result<f64> {
    if !(p_hat > 0.0 && p_hat < 1.0) {
        return Err(Error::GuardViolation(p_hat));
    }
    Ok(0.5 * (p_hat / (1.0 - p_hat)).ln())
}

/// Probability that the randomized rule errs on `label` given margin `x`:
/// `½e^{−|x|}` when `sign(x)` agrees with the label, `1 − ½e^{−|x|}` otherwise.
pub fn conditional_mistake_prob(margin: f64, label: Label) -> f64 {
    let flip = 0.5 * (-margin.abs()).exp();
    if sign(margin) == label {
        flip
    } else {
        1.0 - flip
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Branch {
    /// Followed (or flipped) a single expert whose estimate left `[α, 1 − α]`.
    Cutoff {
        expert: usize,
    },
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutcome {
    pub label: Label,
    pub branch: Branch,
    pub margin: Option<f64>,
    /// Probability with which the emitted label was chosen.
    pub prob_predicted: f64,
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub lambda: f64,
    pub optimizer: OptimizerKind,
    pub beta: f64,
    pub delta: f64,
    pub grid: CostGrid,
    pub horizon: usize,
    pub brute_budget: u64,
    pub local_max_sweeps: usize,
    pub local_tol: f64,
}

impl PolicyConfig {
    /// Uses the horizon-tuned `β` and `δ` of [`default_parameters`].
    pub fn new(k: usize, grid: CostGrid, horizon: usize, lambda: f64, optimizer: OptimizerKind) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
        }
        if horizon == 0 || k == 0 {
            return Err(Error::invalid("K and the horizon must be at least 1"));
        }
        let (beta, delta) = default_parameters(k, horizon, lambda);
        Ok(Self {
            lambda,
            optimizer,
            beta,
            delta,
            grid,
            horizon,
            brute_budget: optimizers::DEFAULT_BRUTE_BUDGET,
            local_max_sweeps: optimizers::DEFAULT_LOCAL_SWEEPS,
            local_tol: 0.0,
        })
    }
}

/// Everything observed and decided in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub payments: PaymentVector,
    pub advice: Vec<Label>,
    pub branch: Branch,
    pub margin: Option<f64>,
    pub prediction: Label,
    pub label: Label,
    pub mistake: bool,
    /// Unweighted sum of payments made this round.
    pub payment_total: f64,
    pub realized_cost: f64,
    /// Conditional mistake probability under the true model; diagnostic only.
    pub expected_mistake: Option<f64>,
}

impl RoundRecord {
    pub fn expected_cost(&self, lambda: f64) -> Option<f64> {
        self.expected_mistake.map(|m| m + lambda * self.payment_total)
    }
}

#[derive(Debug, Clone)]
pub struct Gaptron {
    state: EstimatorState,
    cfg: PolicyConfig,
    warm_start: Option<PaymentVector>,
}

impl Gaptron {
    pub fn new(k: usize, cfg: PolicyConfig) -> Result<Self> {
        let state = EstimatorState::new(k, cfg.grid.clone(), cfg.beta, cfg.delta)?;
        Ok(Self {
            state,
            cfg,
            warm_start: None,
        })
    }

    pub fn state(&self) -> &EstimatorState {
        &self.state
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    /// Rounds `t ≤ N` pay the `t`-th grid value to every expert so that each
    /// (expert, payment) cell is observed once before optimization starts.
    pub fn select_payments(&mut self, t: usize) -> Result<PaymentVector> {
        let (k, n) = (self.state.k(), self.state.n());
        if t == 0 {
            return Err(Error::invalid("rounds are numbered from 1"));
        }
        if t <= n {
            return Ok(PaymentVector::uniform(k, t - 1, &self.cfg.grid));
        }
        let table = self.state.optimistic_table();
        let input = ObjectiveInput::new(&table, &self.cfg.grid, self.cfg.lambda)?;
        let warm = &mut self.warm_start;
        let cfg = &self.cfg;
        let choice = match cfg.optimizer {
            OptimizerKind::Selfish => optimizers::selfish(&input),
            OptimizerKind::Brute => match optimizers::brute(&input, cfg.brute_budget) {
                Ok(p) => p,
                Err(Error::BudgetExceeded { .. }) => local_from_warm(warm, cfg, &input)?,
                Err(e) => return Err(e),
            },
            OptimizerKind::Local => local_from_warm(warm, cfg, &input)?,
        };
        Ok(choice)
    }

    /// The branch and, for aggregation, the weights, decided before advice is seen.
    fn plan(&self, payments: &PaymentVector) -> Result<(Branch, Option<Vec<f64>>)> {
        for (j, &i) in payments.idx.iter().enumerate() {
            if self.state.cell(j, i)?.is_cut_off() {
                return Ok((Branch::Cutoff { expert: j }, None));
            }
        }
        let weights = payments
            .idx
            .iter()
            .enumerate()
            .map(|(j, &i)| weight(self.state.cell_unchecked(j, i).p_hat))
            .collect::<Result<Vec<_>>>()?;
        Ok((Branch::Aggregate, Some(weights)))
    }

    /// Draws exactly one uniform from `rng` whichever branch is taken.
    pub fn predict<R: Rng + ?Sized>(
        &self,
        payments: &PaymentVector,
        advice: &[Label],
        rng: &mut R,
    ) -> Result<PredictionOutcome> {
        if advice.len() != self.state.k() || payments.idx.len() != self.state.k() {
            return Err(Error::invalid("advice and payments must have one entry per expert"));
        }
        let u: f64 = rng.random();
        let (branch, weights) = self.plan(payments)?;
        match branch {
            Branch::Cutoff { expert } => {
                let p_hat = self.state.cell_unchecked(expert, payments.idx[expert]).p_hat;
                Ok(PredictionOutcome {
                    label: sign(p_hat - 0.5) * advice[expert],
                    branch,
                    margin: None,
                    prob_predicted: 1.0,
                    weights: None,
                })
            }
            Branch::Aggregate => {
                let weights = weights.expect("aggregate plan carries weights");
                let x: f64 = weights.iter().zip(advice).map(|(w, &z)| w * z as f64).sum();
                let flip = 0.5 * (-x.abs()).exp();
                // At x = 0 both labels are equally likely; orienting the coin by
                // the first expert's advice keeps mistakes a function of the
                // correctness draws alone.
                let lead = if x == 0.0 { advice[0] } else { sign(x) };
                let (label, prob) = if u < flip { (-lead, flip) } else { (lead, 1.0 - flip) };
                Ok(PredictionOutcome {
                    label,
                    branch,
                    margin: Some(x),
                    prob_predicted: prob,
                    weights: Some(weights),
                })
            }
        }
    }

    /// Plays round `t` against `model` with true label `label`.
    pub fn step<A: Rng + ?Sized, P: Rng + ?Sized>(
        &mut self,
        t: usize,
        model: &ProductivityModel,
        label: Label,
        advice_rng: &mut A,
        predictor_rng: &mut P,
        with_expected: bool,
    ) -> Result<RoundRecord> {
        let payments = self.select_payments(t)?;
        let correct = sample_correctness(model, &payments, advice_rng)?;
        let advice = advice_from_correctness(&correct, label);
        let expected_mistake = if with_expected {
            let (branch, weights) = self.plan(&payments)?;
            let true_p = model.probs_at(&payments);
            Some(match branch {
                Branch::Cutoff { expert } => {
                    let p_hat = self.state.cell_unchecked(expert, payments.idx[expert]).p_hat;
                    oracle::cutoff_mistake_prob(true_p[expert], p_hat)
                }
                Branch::Aggregate => {
                    oracle::exact_mistake_prob(&true_p, weights.as_deref().unwrap_or_default())?.randomized
                }
            })
        } else {
            None
        };
        let out = self.predict(&payments, &advice, predictor_rng)?;
        for (j, (&i, &ok)) in payments.idx.iter().zip(&correct).enumerate() {
            self.state.observe(j, i, ok)?;
        }
        let mistake = out.label != label;
        let payment_total = payments.total();
        Ok(RoundRecord {
            t,
            payment_total,
            realized_cost: mistake as u8 as f64 + self.cfg.lambda * payment_total,
            payments,
            advice,
            branch: out.branch,
            margin: out.margin,
            prediction: out.label,
            label,
            mistake,
            expected_mistake,
        })
    }
}

/// Coordinate descent from the previous round's answer (the selfish
/// solution on first use).
fn local_from_warm(
    warm: &mut Option<PaymentVector>,
    cfg: &PolicyConfig,
    input: &ObjectiveInput<'_>,
) -> Result<PaymentVector> {
    let start = warm.take().unwrap_or_else(|| optimizers::selfish(input));
    let out = optimizers::local(input, &start, cfg.local_max_sweeps, cfg.local_tol)?;
    *warm = Some(out.clone());
    Ok(out)
}
