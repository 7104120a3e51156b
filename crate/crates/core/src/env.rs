//! Productivity models, payment grids and the stochastic expert environment.
//!
//! Every random quantity is drawn from an explicitly passed [`RngStream`], so a
//! model, an advice sequence or a label sequence is a pure function of
//! `(seed, replication, role)`.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizers::PaymentVector;

/// A binary label or advice value, always `+1` or `-1`.
pub type Label = i8;

/// Sign with the convention `sign(0) = +1`.
#[inline]
pub fn sign(x: f64) -> Label {
    if x >= 0.0 {
        1
    } else {
        -1
    }
}

/// Ordered set of allowed payments, each a fraction of the maximum payment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CostGrid {
    values: Vec<f64>,
}

impl CostGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("payment grid must contain at least one value"));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("payment {v} is outside [0, 1]")));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("payment grid must be strictly increasing"));
        }
        Ok(Self { values })
    }

    /// Sorts `values` before validating them.
    pub fn from_unsorted(mut values: Vec<f64>) -> Result<Self> {
        values.sort_by(f64::total_cmp);
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Largest distance from a point of `[0, 1]` to its nearest grid value.
    pub fn covering_radius(&self) -> f64 {
        let v = &self.values;
        let mut radius = v[0].max(1.0 - v[v.len() - 1]);
        for w in v.windows(2) {
            radius = radius.max((w[1] - w[0]) / 2.0);
        }
        radius
    }
}

impl TryFrom<Vec<f64>> for CostGrid {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        CostGrid::new(values)
    }
}

impl From<CostGrid> for Vec<f64> {
    fn from(grid: CostGrid) -> Self {
        grid.values
    }
}

/// Uniform grid `{0, ε, 2ε, …, 1}`, last point clamped to 1.
pub fn make_uniform_grid(epsilon: f64) -> Result<CostGrid> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::invalid(format!(
            "grid spacing must lie in (0, 1], got {epsilon}"
        )));
    }
    let steps = (1.0 / epsilon - 1e-12).ceil() as usize;
    let mut values: Vec<f64> = (0..steps).map(|i| i as f64 * epsilon).collect();
    values.push(1.0);
    CostGrid::new(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Family {
    Linear,
    Sigmoid { thetas: Vec<u32> },
    Tabular,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Sigmoid { .. } => "sigmoid",
            Family::Tabular => "tabular",
        }
    }
}

/// Logistic productivity `e^{θc} / (1 + e^{θc})`.
pub fn sigmoid_productivity(theta: f64, c: f64) -> f64 {
    let e = (theta * c).exp();
    e / (1.0 + e)
}

/// True probabilities that each expert predicts correctly at each grid payment.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductivityModel {
    grid: CostGrid,
    /// Row-major `K × N`.
    p: Vec<f64>,
    k: usize,
    family: Family,
    lipschitz_hint: Option<f64>,
}

impl ProductivityModel {
    /// Tabular model from explicit rows; the Lipschitz hint is the largest
    /// adjacent slope observable on the grid.
    pub fn tabular(grid: CostGrid, rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::invalid("a model needs at least one expert"));
        }
        let n = grid.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::invalid(format!(
                "productivity row has {} entries, grid has {n}",
                r.len()
            )));
        }
        let p: Vec<f64> = rows.into_iter().flatten().collect();
        if let Some(x) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::invalid(format!("probability {x} is outside [0, 1]")));
        }
        let mut model = Self {
            grid,
            p,
            k,
            family: Family::Tabular,
            lipschitz_hint: None,
        };
        model.lipschitz_hint = Some(model.max_adjacent_slope());
        Ok(model)
    }

    /// Every expert gets `p_j(c) = c` on the given grid.
    pub fn linear_on(grid: CostGrid, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        let p = (0..k).flat_map(|_| grid.values().iter().copied()).collect();
        Ok(Self {
            grid,
            p,
            k,
            family: Family::Linear,
            lipschitz_hint: Some(1.0),
        })
    }

    /// Logistic productivity with one integer slope per expert.
    pub fn sigmoid_on(grid: CostGrid, thetas: Vec<u32>) -> Result<Self> {
        let k = thetas.len();
        if k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        let p = thetas
            .iter()
            .flat_map(|&th| grid.values().iter().map(move |&c| sigmoid_productivity(th as f64, c)))
            .collect();
        let max_theta = thetas.iter().copied().max().unwrap_or(0) as f64;
        Ok(Self {
            grid,
            p,
            k,
            family: Family::Sigmoid { thetas },
            lipschitz_hint: Some(max_theta / 4.0),
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

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz_hint
    }

    pub fn with_lipschitz_hint(mut self, hint: Option<f64>) -> Self {
        self.lipschitz_hint = hint;
        self
    }

    /// Probability that expert `j` is correct when paid grid value `i`.
    #[inline]
    pub fn p(&self, j: usize, i: usize) -> f64 {
        self.p[j * self.grid.len() + i]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.grid.len();
        &self.p[j * n..(j + 1) * n]
    }

    /// Flat row-major `K × N` table.
    pub fn table(&self) -> &[f64] {
        &self.p
    }

    /// True success probabilities at the cells selected by `payments`.
    pub fn probs_at(&self, payments: &PaymentVector) -> Vec<f64> {
        payments.idx.iter().enumerate().map(|(j, &i)| self.p(j, i)).collect()
    }

    fn max_adjacent_slope(&self) -> f64 {
        let v = self.grid.values();
        let mut slope: f64 = 0.0;
        for j in 0..self.k {
            let row = self.row(j);
            for i in 1..v.len() {
                slope = slope.max((row[i] - row[i - 1]).abs() / (v[i] - v[i - 1]));
            }
        }
        slope
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// On-disk model layout.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "N")]
    n: usize,
    family: String,
    grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    thetas: Option<Vec<u32>>,
    p: Vec<Vec<f64>>,
}

impl From<&ProductivityModel> for ModelFile {
    fn from(m: &ProductivityModel) -> Self {
        let thetas = match &m.family {
            Family::Sigmoid { thetas } => Some(thetas.clone()),
            _ => None,
        };
        ModelFile {
            k: m.k,
            n: m.n(),
            family: m.family.name().to_string(),
            grid: m.grid.values().to_vec(),
            thetas,
            p: (0..m.k).map(|j| m.row(j).to_vec()).collect(),
        }
    }
}

impl TryFrom<ModelFile> for ProductivityModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let grid = CostGrid::new(f.grid)?;
        if grid.len() != f.n || f.p.len() != f.k {
            return Err(Error::invalid(format!(
                "declared K = {}, N = {} but found {} rows and {} grid values",
                f.k,
                f.n,
                f.p.len(),
                grid.len()
            )));
        }
        let tab = ProductivityModel::tabular(grid.clone(), f.p)?;
        let rebuilt = match f.family.as_str() {
            "tabular" => return Ok(tab),
            "linear" => ProductivityModel::linear_on(grid, f.k)?,
            "sigmoid" => {
                let thetas = f.thetas.ok_or_else(|| Error::invalid("sigmoid model without thetas"))?;
                ProductivityModel::sigmoid_on(grid, thetas)?
            }
            other => return Err(Error::invalid(format!("unknown model family {other:?}"))),
        };
        if rebuilt.p != tab.p {
            return Err(Error::invalid(format!(
                "stored probabilities do not match the {} family formula",
                f.family
            )));
        }
        Ok(rebuilt)
    }
}

/// Purpose of a random stream within one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamRole {
    Advice = 0,
    Predictor = 1,
    Labels = 2,
    ModelGen = 3,
}

/// Identifies one reproducible random stream.
///
/// A ChaCha8 generator keyed by `seed` selects the stream
/// `4 · replication + role`, so distinct replications and roles never share
/// draws and a replication can be regenerated without touching the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub replication: u64,
    pub role: StreamRole,
}

impl RngStream {
    pub fn new(seed: u64, replication: u64, role: StreamRole) -> Self {
        Self {
            seed,
            replication,
            role,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.replication.wrapping_mul(4).wrapping_add(self.role as u64));
        rng
    }
}

fn check_dims(n: usize, k: usize) -> Result<()> {
    if n == 0 || k == 0 {
        return Err(Error::invalid(format!("N and K must be at least 1 (N = {n}, K = {k})")));
    }
    Ok(())
}

/// Draws `N` payments uniformly from `[1/2, 1]` and sets `p_j(c_i) = c_i`.
pub fn make_linear_model<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<ProductivityModel> {
    check_dims(n, k)?;
    let values: Vec<f64> = (0..n).map(|_| 0.5 + 0.5 * rng.random::<f64>()).collect();
    ProductivityModel::linear_on(CostGrid::from_unsorted(values)?, k)
}

/// Draws `N` payments uniformly from `[0, 1]`, then one integer slope in
/// `{1, …, 10}` per expert.
pub fn make_sigmoid_model<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<ProductivityModel> {
    check_dims(n, k)?;
    let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let grid = CostGrid::from_unsorted(values)?;
    let thetas = (0..k).map(|_| rng.random_range(1u32..=10)).collect();
    ProductivityModel::sigmoid_on(grid, thetas)
}

/// One Bernoulli "is expert `j` correct?" draw per expert, at the paid cell.
pub fn sample_correctness<R: Rng + ?Sized>(
    model: &ProductivityModel,
    payments: &PaymentVector,
    rng: &mut R,
) -> Result<Vec<bool>> {
    if payments.idx.len() != model.k() {
        return Err(Error::invalid(format!(
            "payment vector has {} entries for {} experts",
            payments.idx.len(),
            model.k()
        )));
    }
    payments
        .idx
        .iter()
        .enumerate()
        .map(|(j, &i)| {
            if i >= model.n() {
                return Err(Error::IndexOutOfRange {
                    what: "grid index",
                    index: i,
                    len: model.n(),
                });
            }
            Ok(rng.random::<f64>() < model.p(j, i))
        })
        .collect()
}

/// Maps correctness outcomes to advice: `z_j = label` if correct, else `-label`.
pub fn advice_from_correctness(correct: &[bool], label: Label) -> Vec<Label> {
    correct.iter().map(|&c| if c { label } else { -label }).collect()
}

pub fn sample_advice<R: Rng + ?Sized>(
    model: &ProductivityModel,
    payments: &PaymentVector,
    label: Label,
    rng: &mut R,
) -> Result<Vec<Label>> {
    Ok(advice_from_correctness(
        &sample_correctness(model, payments, rng)?,
        label,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    #[default]
    AllPlus,
    Alternating,
    Rademacher,
}

pub fn make_labels<R: Rng + ?Sized>(t: usize, mode: LabelMode, rng: &mut R) -> Result<Vec<Label>> {
    if t == 0 {
        return Err(Error::invalid("label sequence length must be at least 1"));
    }
    Ok(match mode {
        LabelMode::AllPlus => vec![1; t],
        LabelMode::Alternating => (0..t).map(|s| if s % 2 == 0 { 1 } else { -1 }).collect(),
        LabelMode::Rademacher => (0..t).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect(),
    })
}
