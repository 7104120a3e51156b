//! Experiment runner: replications of one algorithm on freshly drawn models,
//! cumulative cost trajectories, aggregation, and CSV/JSON persistence.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baseline::{self, Lcb};
use crate::env::{
    make_labels, make_linear_model, make_sigmoid_model, make_uniform_grid, CostGrid, LabelMode, ProductivityModel,
    RngStream, StreamRole,
};
use crate::error::{Error, Result};
use crate::optimizers::{OptimizerKind, DEFAULT_BRUTE_BUDGET};
use crate::oracle::{self, OptResult, MAX_ENUMERATION_K};
use crate::policy::{Gaptron, PolicyConfig, RoundRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    GaptronBrute,
    GaptronSelfish,
    GaptronLocal,
    Lcb,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::GaptronBrute,
        Algorithm::GaptronSelfish,
        Algorithm::GaptronLocal,
        Algorithm::Lcb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::GaptronBrute => "gaptron-brute",
            Algorithm::GaptronSelfish => "gaptron-selfish",
            Algorithm::GaptronLocal => "gaptron-local",
            Algorithm::Lcb => "lcb",
        }
    }

    fn optimizer(self) -> Option<OptimizerKind> {
        match self {
            Algorithm::GaptronBrute => Some(OptimizerKind::Brute),
            Algorithm::GaptronSelfish => Some(OptimizerKind::Selfish),
            Algorithm::GaptronLocal => Some(OptimizerKind::Local),
            Algorithm::Lcb => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown algorithm {s:?} (expected gaptron-brute, gaptron-selfish, gaptron-local or lcb)"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FamilySpec {
    Linear,
    Sigmoid,
    Tabular(PathBuf),
}

impl fmt::Display for FamilySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FamilySpec::Linear => f.write_str("linear"),
            FamilySpec::Sigmoid => f.write_str("sigmoid"),
            FamilySpec::Tabular(p) => write!(f, "tabular:{}", p.display()),
        }
    }
}

impl FromStr for FamilySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(FamilySpec::Linear),
            "sigmoid" => Ok(FamilySpec::Sigmoid),
            _ => match s.strip_prefix("tabular:") {
                Some(p) if !p.is_empty() => Ok(FamilySpec::Tabular(PathBuf::from(p))),
                _ => Err(Error::invalid(format!(
                    "unknown family {s:?} (expected linear, sigmoid or tabular:<path>)"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    /// A fresh random grid per replication, drawn with the model.
    Random,
    Uniform(f64),
    File(PathBuf),
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridSpec::Random => f.write_str("random"),
            GridSpec::Uniform(eps) => write!(f, "uniform:{eps}"),
            GridSpec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "random" {
            return Ok(GridSpec::Random);
        }
        if let Some(eps) = s.strip_prefix("uniform:") {
            let eps: f64 = eps
                .parse()
                .map_err(|_| Error::invalid(format!("bad grid spacing in {s:?}")))?;
            make_uniform_grid(eps)?;
            return Ok(GridSpec::Uniform(eps));
        }
        match s.strip_prefix("file:") {
            Some(p) if !p.is_empty() => Ok(GridSpec::File(PathBuf::from(p))),
            _ => Err(Error::invalid(format!(
                "unknown grid {s:?} (expected random, uniform:<eps> or file:<path>)"
            ))),
        }
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(Algorithm);
string_serde!(FamilySpec);
string_serde!(GridSpec);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

fn default_radius() -> f64 {
    baseline::DEFAULT_RADIUS
}

fn default_true() -> bool {
    true
}

fn default_budget() -> u64 {
    DEFAULT_BRUTE_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub family: FamilySpec,
    pub k: usize,
    /// Grid size. With a fixed grid (uniform, file or tabular model) `0` means
    /// "whatever the grid has"; any other value must agree with it.
    pub n: usize,
    pub t: usize,
    pub lambda: f64,
    pub replications: usize,
    pub seed: u64,
    pub grid: GridSpec,
    #[serde(default)]
    pub beta_override: Option<f64>,
    #[serde(default)]
    pub delta_override: Option<f64>,
    #[serde(default = "default_radius")]
    pub lcb_radius: f64,
    #[serde(default)]
    pub label_mode: LabelMode,
    #[serde(default = "default_budget")]
    pub brute_budget: u64,
    /// Record the oracle's expected-cost series (only possible for K ≤ 20).
    #[serde(default = "default_true")]
    pub expected_cost: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

impl ExperimentConfig {
    pub fn new(algorithm: Algorithm, family: FamilySpec, k: usize, n: usize, t: usize, lambda: f64) -> Self {
        Self {
            algorithm,
            family,
            k,
            n,
            t,
            lambda,
            replications: 1,
            seed: 0,
            grid: GridSpec::Random,
            beta_override: None,
            delta_override: None,
            lcb_radius: baseline::DEFAULT_RADIUS,
            label_mode: LabelMode::AllPlus,
            brute_budget: DEFAULT_BRUTE_BUDGET,
            expected_cost: true,
            out: None,
            format: OutputFormat::Csv,
        }
    }

    pub fn with_replications(mut self, r: usize) -> Self {
        self.replications = r;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Resolves files and checks every precondition, returning the fixed parts
    /// shared by all replications.
    pub fn prepare(&self) -> Result<Prepared> {
        if self.t == 0 {
            return Err(Error::invalid("T must be at least 1"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if let Some(b) = self.beta_override {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::invalid(format!("beta override must be non-negative, got {b}")));
            }
        }
        if let Some(d) = self.delta_override {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::invalid(format!("delta override must lie in (0, 1], got {d}")));
            }
        }
        if !(self.lcb_radius >= 0.0) {
            return Err(Error::invalid("LCB radius constant must be non-negative"));
        }
        let fixed_grid = match &self.grid {
            GridSpec::Random => None,
            GridSpec::Uniform(eps) => Some(make_uniform_grid(*eps)?),
            GridSpec::File(path) => Some(load_grid(path)?),
        };
        let (tabular, k, n) = match &self.family {
            FamilySpec::Tabular(path) => {
                if self.grid != GridSpec::Random {
                    return Err(Error::invalid(format!(
                        "--family {} conflicts with --grid {}: a tabular model carries its own grid",
                        self.family, self.grid
                    )));
                }
                let model = ProductivityModel::load(path)?;
                (Some(model.clone()), model.k(), model.n())
            }
            _ => {
                let n = fixed_grid.as_ref().map_or(self.n, CostGrid::len);
                (None, self.k, n)
            }
        };
        if self.k != 0 && self.k != k {
            return Err(Error::invalid(format!(
                "--k {} conflicts with the model's K = {k}",
                self.k
            )));
        }
        if self.n != 0 && self.n != n {
            return Err(Error::invalid(format!(
                "--n {} conflicts with the grid's N = {n}",
                self.n
            )));
        }
        if k == 0 || n == 0 {
            return Err(Error::invalid(format!("K and N must be at least 1 (K = {k}, N = {n})")));
        }
        if self.algorithm == Algorithm::GaptronBrute {
            let size = (n as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
            if size > self.brute_budget as u128 {
                return Err(Error::invalid(format!(
                    "gaptron-brute would search N^K = {n}^{k} = {size} assignments per round, above the limit of {}; \
                     use gaptron-local or gaptron-selfish, or reduce N or K",
                    self.brute_budget
                )));
            }
        }
        Ok(Prepared {
            k,
            n,
            fixed_grid,
            tabular,
        })
    }
}

fn load_grid(path: &Path) -> Result<CostGrid> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let values: Vec<f64> = serde_json::from_str(&s).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: format!("expected a JSON array of payments: {e}"),
    })?;
    CostGrid::new(values)
}

/// Validated, file-resolved parts of a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub k: usize,
    pub n: usize,
    fixed_grid: Option<CostGrid>,
    tabular: Option<ProductivityModel>,
}

impl Prepared {
    /// The replication's model: fixed for tabular runs, otherwise drawn from
    /// the replication's model-generation stream.
    pub fn model_for(&self, cfg: &ExperimentConfig, replication: u64) -> Result<ProductivityModel> {
        if let Some(m) = &self.tabular {
            return Ok(m.clone());
        }
        let mut rng = RngStream::new(cfg.seed, replication, StreamRole::ModelGen).rng();
        match (&cfg.family, &self.fixed_grid) {
            (FamilySpec::Linear, None) => make_linear_model(self.n, self.k, &mut rng),
            (FamilySpec::Sigmoid, None) => make_sigmoid_model(self.n, self.k, &mut rng),
            (FamilySpec::Linear, Some(g)) => ProductivityModel::linear_on(g.clone(), self.k),
            (FamilySpec::Sigmoid, Some(g)) => {
                use rand::Rng;
                let thetas = (0..self.k).map(|_| rng.random_range(1u32..=10)).collect();
                ProductivityModel::sigmoid_on(g.clone(), thetas)
            }
            (FamilySpec::Tabular(_), _) => unreachable!("tabular model resolved in prepare"),
        }
    }
}

/// Cumulative series of one replication, indexed by round `1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub cum_mistakes: Vec<u64>,
    /// Unweighted payment sums.
    pub cum_payments: Vec<f64>,
    pub cum_expected_cost: Option<Vec<f64>>,
    pub lambda: f64,
}

impl Trajectory {
    fn with_capacity(t: usize, lambda: f64, expected: bool) -> Self {
        Self {
            cum_mistakes: Vec::with_capacity(t),
            cum_payments: Vec::with_capacity(t),
            cum_expected_cost: expected.then(|| Vec::with_capacity(t)),
            lambda,
        }
    }

    pub fn push(&mut self, r: &RoundRecord) {
        let m = self.cum_mistakes.last().copied().unwrap_or(0) + r.mistake as u64;
        let c = self.cum_payments.last().copied().unwrap_or(0.0) + r.payment_total;
        self.cum_mistakes.push(m);
        self.cum_payments.push(c);
        if let Some(series) = &mut self.cum_expected_cost {
            let prev = series.last().copied().unwrap_or(0.0);
            let step = r.expected_cost(self.lambda).unwrap_or(f64::NAN);
            series.push(prev + step);
        }
    }

    pub fn len(&self) -> usize {
        self.cum_mistakes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cum_mistakes.is_empty()
    }

    /// Realized cumulative cost `mistakes + λ · payments` after round `t` (1-based).
    pub fn cum_cost(&self, t: usize) -> f64 {
        self.cum_mistakes[t - 1] as f64 + self.lambda * self.cum_payments[t - 1]
    }

    pub fn final_cost(&self) -> f64 {
        self.cum_cost(self.len())
    }

    pub fn cost_series(&self) -> Vec<f64> {
        (1..=self.len()).map(|t| self.cum_cost(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub trajectory: Trajectory,
    pub opt: OptResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_cost: Vec<f64>,
    /// Sample standard deviation (`R − 1` denominator; zero when `R = 1`).
    pub std_cost: Vec<f64>,
    pub mean_mistakes: Vec<f64>,
    pub mean_payments: Vec<f64>,
    pub mean_expected_cost: Option<Vec<f64>>,
    pub mean_opt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub config: ExperimentConfig,
    pub version: String,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub meta: Meta,
    /// Family name of the models actually used.
    pub family: String,
    pub k: usize,
    pub n: usize,
    pub replications: Vec<ReplicationResult>,
    pub aggregate: Aggregate,
}

/// Runs one replication start to finish. Its output depends only on the
/// config and the replication index.
pub fn run_replication(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    replication: usize,
) -> Result<(ReplicationResult, String)> {
    let rep = replication as u64;
    let model = prep.model_for(cfg, rep)?;
    let labels = make_labels(
        cfg.t,
        cfg.label_mode,
        &mut RngStream::new(cfg.seed, rep, StreamRole::Labels).rng(),
    )?;
    let opt = oracle::opt_pareto(&model, cfg.lambda, oracle::DEFAULT_FRONTIER_CAP)?;
    let expected = cfg.expected_cost && model.k() <= MAX_ENUMERATION_K;
    let mut advice_rng = RngStream::new(cfg.seed, rep, StreamRole::Advice).rng();
    let mut traj = Trajectory::with_capacity(cfg.t, cfg.lambda, expected);
    match cfg.algorithm.optimizer() {
        Some(kind) => {
            let mut pcfg = PolicyConfig::new(model.k(), model.grid().clone(), cfg.t, cfg.lambda, kind)?;
            if let Some(b) = cfg.beta_override {
                pcfg.beta = b;
            }
            if let Some(d) = cfg.delta_override {
                pcfg.delta = d;
            }
            pcfg.brute_budget = cfg.brute_budget;
            let mut learner = Gaptron::new(model.k(), pcfg)?;
            let mut predictor_rng = RngStream::new(cfg.seed, rep, StreamRole::Predictor).rng();
            for (s, &y) in labels.iter().enumerate() {
                let r = learner.step(s + 1, &model, y, &mut advice_rng, &mut predictor_rng, expected)?;
                traj.push(&r);
            }
        }
        None => {
            let mut lcb = Lcb::new(model.k(), model.n(), cfg.lcb_radius)?;
            for (s, &y) in labels.iter().enumerate() {
                let r = lcb.step(s + 1, &model, cfg.lambda, y, &mut advice_rng)?;
                traj.push(&r);
            }
        }
    }
    let family = model.family().name().to_string();
    Ok((
        ReplicationResult {
            replication,
            trajectory: traj,
            opt,
        },
        family,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Replications in the current rayon pool; falls back to sequential when
    /// built without the `parallel` feature.
    Parallel,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(cfg, Execution::Parallel, &|_, _| {})
}

/// `progress(done, total)` is called once per finished replication, in
/// completion order.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    exec: Execution,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<ExperimentResult> {
    let start = Instant::now();
    let prep = cfg.prepare()?;
    let total = cfg.replications;
    let done = std::sync::atomic::AtomicUsize::new(0);
    let one = |r: usize| {
        let out = run_replication(cfg, &prep, r);
        progress(done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1, total);
        out
    };
    let reps: Vec<(ReplicationResult, String)> = match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..total).into_par_iter().map(one).collect::<Result<_>>()?
        }
        _ => (0..total).map(one).collect::<Result<_>>()?,
    };
    let family = reps[0].1.clone();
    let replications: Vec<ReplicationResult> = reps.into_iter().map(|(r, _)| r).collect();
    let aggregate = aggregate(&replications, cfg.t);
    Ok(ExperimentResult {
        meta: Meta {
            config: cfg.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        family,
        k: prep.k,
        n: prep.n,
        replications,
        aggregate,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    s / n as f64
}

/// Sample standard deviation with `R − 1` in the denominator, 0 for one sample.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs.iter().copied());
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

fn aggregate(reps: &[ReplicationResult], t: usize) -> Aggregate {
    let mut mean_cost = Vec::with_capacity(t);
    let mut std_cost = Vec::with_capacity(t);
    let mut mean_mistakes = Vec::with_capacity(t);
    let mut mean_payments = Vec::with_capacity(t);
    let has_expected = reps.iter().all(|r| r.trajectory.cum_expected_cost.is_some());
    let mut mean_expected = has_expected.then(|| Vec::with_capacity(t));
    let mut costs = vec![0.0; reps.len()];
    for s in 0..t {
        for (c, r) in costs.iter_mut().zip(reps) {
            *c = r.trajectory.cum_cost(s + 1);
        }
        mean_cost.push(mean(costs.iter().copied()));
        std_cost.push(sample_std(&costs));
        mean_mistakes.push(mean(reps.iter().map(|r| r.trajectory.cum_mistakes[s] as f64)));
        mean_payments.push(mean(reps.iter().map(|r| r.trajectory.cum_payments[s])));
        if let Some(e) = &mut mean_expected {
            e.push(mean(
                reps.iter().map(|r| r.trajectory.cum_expected_cost.as_ref().unwrap()[s]),
            ));
        }
    }
    Aggregate {
        mean_cost,
        std_cost,
        mean_mistakes,
        mean_payments,
        mean_expected_cost: mean_expected,
        mean_opt: mean(reps.iter().map(|r| r.opt.value)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegretMode {
    ExpectedCost,
    RealizedCost,
}

/// `cumulative cost(t) − t · OPT` for `t = 0..=T`; the first entry is 0.
pub fn regret_series(rep: &ReplicationResult, mode: RegretMode) -> Result<Vec<f64>> {
    let traj = &rep.trajectory;
    let opt = rep.opt.value;
    let mut out = Vec::with_capacity(traj.len() + 1);
    out.push(0.0);
    match mode {
        RegretMode::RealizedCost => {
            out.extend((1..=traj.len()).map(|t| traj.cum_cost(t) - t as f64 * opt));
        }
        RegretMode::ExpectedCost => {
            let e = traj
                .cum_expected_cost
                .as_ref()
                .ok_or_else(|| Error::invalid("expected-cost series was not recorded for this run"))?;
            out.extend(e.iter().enumerate().map(|(s, c)| c - (s + 1) as f64 * opt));
        }
    }
    Ok(out)
}

/// One line of the results table. Aggregate rows use `replication = -1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: String,
    pub family: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub lambda: f64,
    pub replication: i64,
    pub round: usize,
    pub cum_cost: f64,
    pub cum_mistakes: f64,
    pub cum_payments: f64,
    pub cum_expected_cost: Option<f64>,
    pub opt_value: f64,
    pub cost_std: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 14] = [
    "algorithm",
    "family",
    "K",
    "N",
    "T",
    "lambda",
    "replication",
    "round",
    "cum_cost",
    "cum_mistakes",
    "cum_payments",
    "cum_expected_cost",
    "opt_value",
    "cost_std",
];

impl ExperimentResult {
    /// Per-replication rows (replication-major), then `T` aggregate rows.
    pub fn rows(&self) -> Vec<ResultRow> {
        let cfg = &self.meta.config;
        let t = cfg.t;
        let base = |replication: i64, round: usize| ResultRow {
            algorithm: cfg.algorithm.name().to_string(),
            family: self.family.clone(),
            k: self.k,
            n: self.n,
            t,
            lambda: cfg.lambda,
            replication,
            round,
            cum_cost: 0.0,
            cum_mistakes: 0.0,
            cum_payments: 0.0,
            cum_expected_cost: None,
            opt_value: 0.0,
            cost_std: None,
        };
        let mut rows = Vec::with_capacity(t * (self.replications.len() + 1));
        for rep in &self.replications {
            let tr = &rep.trajectory;
            for s in 0..tr.len() {
                rows.push(ResultRow {
                    cum_cost: tr.cum_cost(s + 1),
                    cum_mistakes: tr.cum_mistakes[s] as f64,
                    cum_payments: tr.cum_payments[s],
                    cum_expected_cost: tr.cum_expected_cost.as_ref().map(|e| e[s]),
                    opt_value: rep.opt.value,
                    ..base(rep.replication as i64, s + 1)
                });
            }
        }
        let a = &self.aggregate;
        for s in 0..a.mean_cost.len() {
            rows.push(ResultRow {
                cum_cost: a.mean_cost[s],
                cum_mistakes: a.mean_mistakes[s],
                cum_payments: a.mean_payments[s],
                cum_expected_cost: a.mean_expected_cost.as_ref().map(|e| e[s]),
                opt_value: a.mean_opt,
                cost_std: Some(a.std_cost[s]),
                ..base(-1, s + 1)
            });
        }
        rows
    }

    pub fn final_mean_cost(&self) -> f64 {
        *self.aggregate.mean_cost.last().expect("T ≥ 1")
    }

    pub fn final_std_cost(&self) -> f64 {
        *self.aggregate.std_cost.last().expect("T ≥ 1")
    }

    pub fn final_costs(&self) -> Vec<f64> {
        self.replications.iter().map(|r| r.trajectory.final_cost()).collect()
    }
}

fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::Format {
        path: PathBuf::from("<csv>"),
        message: e.to_string(),
    };
    w.write_record(CSV_COLUMNS).map_err(to_err)?;
    for r in rows {
        let opt = |x: Option<f64>| x.map(fmt_float).unwrap_or_default();
        w.write_record([
            r.algorithm.clone(),
            r.family.clone(),
            r.k.to_string(),
            r.n.to_string(),
            r.t.to_string(),
            fmt_float(r.lambda),
            r.replication.to_string(),
            r.round.to_string(),
            fmt_float(r.cum_cost),
            fmt_float(r.cum_mistakes),
            fmt_float(r.cum_payments),
            opt(r.cum_expected_cost),
            fmt_float(r.opt_value),
            opt(r.cost_std),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let bad = |m: String| Error::Format {
        path: PathBuf::from("<csv>"),
        message: m,
    };
    let header = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(CSV_COLUMNS) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let f = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| bad(format!("column {} is not a number: {:?}", CSV_COLUMNS[i], &rec[i])))
        };
        let u = |i: usize| -> Result<usize> {
            rec[i]
                .parse()
                .map_err(|_| bad(format!("column {} is not an integer: {:?}", CSV_COLUMNS[i], &rec[i])))
        };
        let o = |i: usize| -> Result<Option<f64>> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                f(i).map(Some)
            }
        };
        rows.push(ResultRow {
            algorithm: rec[0].to_string(),
            family: rec[1].to_string(),
            k: u(2)?,
            n: u(3)?,
            t: u(4)?,
            lambda: f(5)?,
            replication: rec[6]
                .parse()
                .map_err(|_| bad(format!("bad replication {:?}", &rec[6])))?,
            round: u(7)?,
            cum_cost: f(8)?,
            cum_mistakes: f(9)?,
            cum_payments: f(10)?,
            cum_expected_cost: o(11)?,
            opt_value: f(12)?,
            cost_std: o(13)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonResults {
    pub meta: Meta,
    pub rows: Vec<ResultRow>,
}

pub fn write_json<W: Write>(result: &ExperimentResult, out: W) -> Result<()> {
    let doc = JsonResults {
        meta: result.meta.clone(),
        rows: result.rows(),
    };
    serde_json::to_writer(out, &doc)?;
    Ok(())
}

pub fn read_json<R: Read>(input: R) -> Result<JsonResults> {
    Ok(serde_json::from_reader(input)?)
}

/// Writes `result` to `path` in the requested format.
pub fn write_results(result: &ExperimentResult, path: &Path, format: OutputFormat) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let res = match format {
        OutputFormat::Csv => write_csv(&result.rows(), &mut w),
        OutputFormat::Json => write_json(result, &mut w),
    };
    res.map_err(|e| match e {
        Error::Format { message, .. } => Error::Format {
            path: path.to_path_buf(),
            message,
        },
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads rows from a results file, picking the format from the extension.
pub fn load_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let rd = std::io::BufReader::new(file);
    let rows = if path.extension().is_some_and(|e| e == "json") {
        read_json(rd).map(|d| d.rows)
    } else {
        read_csv(rd)
    };
    rows.map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
