use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use paid_experts::env::LabelMode;
use paid_experts::error::Error;
use paid_experts::harness::{
    self, Algorithm, Execution, ExperimentConfig, ExperimentResult, FamilySpec, GridSpec, OutputFormat, ResultRow,
};
use paid_experts::oracle::{self, DEFAULT_FRONTIER_CAP};
use paid_experts::verify;

#[derive(Parser)]
#[command(
    name = "paidexperts",
    version,
    about = "Simulate and benchmark online classification with paid experts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replications of one algorithm and write cumulative-cost trajectories.
    Run(RunArgs),
    /// Run the cartesian product of list-valued settings, one output file per cell.
    Sweep(SweepArgs),
    /// Compute the best fixed payment vector of a model.
    Opt(OptArgs),
    /// Run the numerical self-checks and print a pass/fail table.
    Verify(VerifyArgs),
    /// Print final mean ± std cost per configuration found in result files.
    Summarize(SummarizeArgs),
}

/// Experiment settings shared by `run` and `opt`. Every field may also come
/// from `--config`; flags win.
#[derive(Args, Debug, Default, Clone)]
struct ExpFlags {
    /// JSON file with experiment settings (same field names as the results metadata).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<Algorithm>,
    /// linear, sigmoid or tabular:<path>
    #[arg(long)]
    family: Option<FamilySpec>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// random, uniform:<eps> or file:<path>
    #[arg(long)]
    grid: Option<GridSpec>,
    #[arg(long)]
    beta_override: Option<f64>,
    #[arg(long)]
    delta_override: Option<f64>,
    #[arg(long)]
    lcb_radius: Option<f64>,
    /// Label sequence: all_plus, alternating or rademacher.
    #[arg(long, value_parser = parse_label_mode)]
    labels: Option<LabelMode>,
    /// Skip the exact expected-cost series.
    #[arg(long)]
    no_expected_cost: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    exp: ExpFlags,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Worker threads for replications.
    #[arg(long, env = "PAIDEXPERTS_JOBS")]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    algo: Vec<Algorithm>,
    #[arg(long, value_delimiter = ',', required = true)]
    family: Vec<FamilySpec>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    t: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    lambda: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "random")]
    grid: GridSpec,
    #[arg(long)]
    beta_override: Option<f64>,
    #[arg(long)]
    delta_override: Option<f64>,
    /// Output directory; receives one file per cell and `manifest.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long, env = "PAIDEXPERTS_JOBS")]
    jobs: Option<usize>,
}

#[derive(Args)]
struct OptArgs {
    #[command(flatten)]
    exp: ExpFlags,
    /// Which replication's model to use for generated families.
    #[arg(long, default_value_t = 0)]
    replication: u64,
    #[arg(long, value_enum, default_value = "pareto")]
    method: OptMethod,
    /// Also write the model as JSON (loadable with --family tabular:<path>).
    #[arg(long)]
    save_model: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Smaller trial counts.
    #[arg(long)]
    quick: bool,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Cutoff scale used by the run-time guard check.
    #[arg(long)]
    beta_override: Option<f64>,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum OptMethod {
    Pareto,
    Brute,
}

fn parse_label_mode(s: &str) -> Result<LabelMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown label mode {s:?} (expected all_plus, alternating or rademacher)"))
}

/// A failure and the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            message: e.to_string(),
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }
}

/// Partial settings read from `--config`.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    algorithm: Option<Algorithm>,
    family: Option<FamilySpec>,
    k: Option<usize>,
    n: Option<usize>,
    t: Option<usize>,
    lambda: Option<f64>,
    replications: Option<usize>,
    seed: Option<u64>,
    grid: Option<GridSpec>,
    beta_override: Option<f64>,
    delta_override: Option<f64>,
    lcb_radius: Option<f64>,
    label_mode: Option<LabelMode>,
    brute_budget: Option<u64>,
    expected_cost: Option<bool>,
    out: Option<PathBuf>,
    format: Option<OutputFormat>,
    jobs: Option<usize>,
}

fn read_config(path: &Path) -> Result<ConfigFile, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::config(Error::io(path, e)))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn missing(flag: &str) -> Failure {
    Failure::config(format!(
        "missing required setting --{flag} (give the flag or put it in --config)"
    ))
}

/// Merges flags over the config file. `need_algo` is false for `opt`.
fn build_config(flags: &ExpFlags, need_algo: bool) -> Result<(ExperimentConfig, ConfigFile), Failure> {
    let file = match &flags.config {
        Some(p) => read_config(p)?,
        None => ConfigFile::default(),
    };
    let algo = match flags.algo.or(file.algorithm) {
        Some(a) => a,
        None if need_algo => return Err(missing("algo")),
        None => Algorithm::GaptronLocal,
    };
    let family = flags
        .family
        .clone()
        .or(file.family.clone())
        .ok_or_else(|| missing("family"))?;
    let grid = flags.grid.clone().or(file.grid.clone());
    if let (FamilySpec::Tabular(_), Some(g)) = (&family, &grid) {
        if *g != GridSpec::Random {
            return Err(Failure::config(format!(
                "--family {family} conflicts with --grid {g}: a tabular model carries its own grid"
            )));
        }
    }
    let fixed = matches!(family, FamilySpec::Tabular(_)) || grid.as_ref().is_some_and(|g| *g != GridSpec::Random);
    let k = match flags.k.or(file.k) {
        Some(k) => k,
        None if matches!(family, FamilySpec::Tabular(_)) => 0,
        None => return Err(missing("k")),
    };
    let n = match flags.n.or(file.n) {
        Some(n) => n,
        None if fixed => 0,
        None => return Err(missing("n")),
    };
    let t = match flags.t.or(file.t) {
        Some(t) => t,
        None if !need_algo => 1,
        None => return Err(missing("t")),
    };
    let lambda = flags.lambda.or(file.lambda).ok_or_else(|| missing("lambda"))?;
    let mut cfg = ExperimentConfig::new(algo, family, k, n, t, lambda);
    cfg.replications = flags.reps.or(file.replications).unwrap_or(1);
    cfg.seed = match flags.seed.or(file.seed) {
        Some(s) => s,
        None if need_algo => return Err(missing("seed")),
        None => 0,
    };
    cfg.grid = grid.unwrap_or(GridSpec::Random);
    cfg.beta_override = flags.beta_override.or(file.beta_override);
    cfg.delta_override = flags.delta_override.or(file.delta_override);
    if let Some(r) = flags.lcb_radius.or(file.lcb_radius) {
        cfg.lcb_radius = r;
    }
    if let Some(m) = flags.labels.or(file.label_mode) {
        cfg.label_mode = m;
    }
    if let Some(b) = file.brute_budget {
        cfg.brute_budget = b;
    }
    cfg.expected_cost = !flags.no_expected_cost && file.expected_cost.unwrap_or(true);
    cfg.prepare().map_err(Failure::config)?;
    Ok((cfg, file))
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    if jobs == Some(0) {
        return Err(Failure::config("--jobs must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    if let Some(j) = jobs {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(Failure::runtime)?;
        return Ok(pool.install(f));
    }
    Ok(f())
}

fn run_one(cfg: &ExperimentConfig, label: &str) -> Result<ExperimentResult, Failure> {
    let progress = |done: usize, total: usize| {
        eprintln!("{label}replication {done}/{total} done");
    };
    harness::run_experiment_with(cfg, Execution::Parallel, &progress).map_err(Failure::runtime)
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let (mut cfg, file) = build_config(&args.exp, true)?;
    cfg.out = args.out.or(file.out);
    cfg.format = args.format.map(OutputFormat::from).or(file.format).unwrap_or_default();
    let jobs = args.jobs.or(file.jobs);
    let result = with_jobs(jobs, || run_one(&cfg, ""))??;
    match &cfg.out {
        Some(path) => harness::write_results(&result, path, cfg.format).map_err(Failure::runtime),
        None => {
            let stdout = std::io::stdout().lock();
            let res = match cfg.format {
                OutputFormat::Csv => harness::write_csv(&result.rows(), stdout),
                OutputFormat::Json => harness::write_json(&result, stdout),
            };
            res.map_err(Failure::runtime)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    status: String,
    cells: Vec<ManifestCell>,
}

#[derive(Serialize, Deserialize)]
struct ManifestCell {
    file: String,
    algorithm: Algorithm,
    family: FamilySpec,
    k: usize,
    n: usize,
    t: usize,
    lambda: f64,
    status: String,
}

/// Writes through a temporary file in the same directory and renames it, so
/// readers never observe a half-written file.
fn write_atomically(path: &Path, write: impl FnOnce(&Path) -> paid_experts::Result<()>) -> Result<(), Failure> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    write(&tmp).map_err(Failure::runtime)?;
    std::fs::rename(&tmp, path).map_err(|e| Failure::runtime(Error::io(path, e)))
}

fn save_manifest(path: &Path, m: &Manifest) -> Result<(), Failure> {
    write_atomically(path, |tmp| {
        let text = serde_json::to_string_pretty(m)?;
        std::fs::write(tmp, text).map_err(|e| Error::io(tmp, e))
    })
}

fn cell_file_name(c: &ManifestCell, ext: &str) -> String {
    let family = match &c.family {
        FamilySpec::Tabular(p) => format!("tabular-{}", p.file_stem().unwrap_or_default().to_string_lossy()),
        f => f.to_string(),
    };
    format!(
        "{}_{family}_K{}_N{}_T{}_lambda{}.{ext}",
        c.algorithm, c.k, c.n, c.t, c.lambda
    )
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let mut configs = Vec::new();
    let mut cells = Vec::new();
    let ext = match args.format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    for algo in &args.algo {
        for family in &args.family {
            for &k in &args.k {
                for &n in &args.n {
                    for &t in &args.t {
                        for &lambda in &args.lambda {
                            let mut cfg = ExperimentConfig::new(*algo, family.clone(), k, n, t, lambda)
                                .with_replications(args.reps)
                                .with_seed(args.seed);
                            cfg.grid = args.grid.clone();
                            cfg.beta_override = args.beta_override;
                            cfg.delta_override = args.delta_override;
                            cfg.format = args.format.into();
                            cfg.prepare().map_err(Failure::config)?;
                            let mut cell = ManifestCell {
                                file: String::new(),
                                algorithm: *algo,
                                family: family.clone(),
                                k,
                                n,
                                t,
                                lambda,
                                status: "pending".into(),
                            };
                            cell.file = cell_file_name(&cell, ext);
                            configs.push(cfg);
                            cells.push(cell);
                        }
                    }
                }
            }
        }
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Failure::runtime(Error::io(&args.out, e)))?;
    let manifest_path = args.out.join("manifest.json");
    let mut manifest = Manifest {
        status: "partial".into(),
        cells,
    };
    save_manifest(&manifest_path, &manifest)?;
    let total = configs.len();
    for (idx, cfg) in configs.iter().enumerate() {
        let label = format!("cell {}/{total}: ", idx + 1);
        let result = with_jobs(args.jobs, || run_one(cfg, &label))??;
        let path = args.out.join(&manifest.cells[idx].file);
        write_atomically(&path, |tmp| harness::write_results(&result, tmp, cfg.format))?;
        manifest.cells[idx].status = "done".into();
        if idx + 1 == total {
            manifest.status = "complete".into();
        }
        save_manifest(&manifest_path, &manifest)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct OptOutput<'a> {
    method: &'a str,
    family: &'a str,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "N")]
    n: usize,
    lambda: f64,
    value: f64,
    payment_indices: &'a [usize],
    payments: &'a [f64],
}

fn cmd_opt(args: OptArgs) -> Result<(), Failure> {
    let (cfg, _) = build_config(&args.exp, false)?;
    let prep = cfg.prepare().map_err(Failure::config)?;
    let model = prep.model_for(&cfg, args.replication).map_err(Failure::runtime)?;
    if let Some(path) = &args.save_model {
        model.save(path).map_err(Failure::runtime)?;
    }
    let (method, res) = match args.method {
        OptMethod::Pareto => ("pareto", oracle::opt_pareto(&model, cfg.lambda, DEFAULT_FRONTIER_CAP)),
        OptMethod::Brute => ("brute", oracle::opt_bruteforce(&model, cfg.lambda, cfg.brute_budget)),
    };
    let res = res.map_err(Failure::runtime)?;
    let out = OptOutput {
        method,
        family: model.family().name(),
        k: model.k(),
        n: model.n(),
        lambda: cfg.lambda,
        value: res.value,
        payment_indices: &res.payments.idx,
        payments: &res.payments.values,
    };
    let text = serde_json::to_string_pretty(&out).map_err(Failure::runtime)?;
    println!("{text}");
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    let sizes = if args.quick {
        verify::Sizes::QUICK
    } else {
        verify::Sizes::FULL
    };
    let checks = verify::run_all(sizes, args.seed, args.beta_override);
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut out = std::io::stdout().lock();
    for c in &checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(
            out,
            "{mark}  {:width$}  {:>8.3}s  {}",
            c.name,
            c.elapsed.as_secs_f64(),
            c.detail
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure::runtime(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}

type GroupKey = (String, String, usize, usize, usize, u64);

fn cmd_summarize(args: SummarizeArgs) -> Result<(), Failure> {
    // Final-round rows per configuration: the aggregate row when present,
    // otherwise recomputed from the replications.
    let mut groups: BTreeMap<GroupKey, (Option<ResultRow>, Vec<ResultRow>)> = BTreeMap::new();
    for path in &args.files {
        let rows = harness::load_rows(path).map_err(Failure::runtime)?;
        for r in rows.into_iter().filter(|r| r.round == r.t) {
            let key = (r.algorithm.clone(), r.family.clone(), r.k, r.n, r.t, r.lambda.to_bits());
            let entry = groups.entry(key).or_default();
            if r.replication < 0 {
                entry.0 = Some(r);
            } else {
                entry.1.push(r);
            }
        }
    }
    println!(
        "{:<16} {:<8} {:>3} {:>4} {:>8} {:>8} {:>5} {:>14} {:>12} {:>14}",
        "algorithm", "family", "K", "N", "T", "lambda", "reps", "mean_cost", "std", "T*opt"
    );
    for ((algo, family, k, n, t, lambda), (agg, reps)) in groups {
        let costs: Vec<f64> = reps.iter().map(|r| r.cum_cost).collect();
        let (mean, std, opt) = match &agg {
            Some(a) => (a.cum_cost, a.cost_std.unwrap_or(0.0), a.opt_value),
            None => (
                costs.iter().sum::<f64>() / costs.len() as f64,
                harness::sample_std(&costs),
                reps.iter().map(|r| r.opt_value).sum::<f64>() / reps.len() as f64,
            ),
        };
        println!(
            "{algo:<16} {family:<8} {k:>3} {n:>4} {t:>8} {:>8} {:>5} {mean:>14.4} {std:>12.4} {:>14.4}",
            f64::from_bits(lambda),
            reps.len(),
            opt * t as f64
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Opt(a) => cmd_opt(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Summarize(a) => cmd_summarize(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
