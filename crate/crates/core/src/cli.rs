//! Command line interface: `run`, `preset` and `check`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::benchmark::{self, MeshChange, ProblemKind, RunConfig, RunReport};
use crate::checks;
use crate::error::{Error, Result};
use crate::estimators::ConstantsTable;
use crate::evolution::{InitialOperator, Options};

#[derive(Parser, Debug)]
#[command(name = "parabest", version, about = "Backward Euler FEM with a posteriori error estimators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a single discretisation of a benchmark problem.
    Run(RunArgs),
    /// Run a sequence of refinements from the preset table.
    Preset(PresetArgs),
    /// Run the randomised property suites.
    Check(CheckArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Initial {
    Interpolation,
    L2,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory (default: $PARABEST_OUT or ./parabest-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Override a basic constant, e.g. `--constant 3,1=0.25`.
    #[arg(long = "constant", value_name = "K,J=V")]
    pub constants: Vec<String>,
    /// Coercivity constant used by the estimators.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Continuity constant used by the estimators.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Quadrature exactness for load vectors (default `2 * degree + 2`).
    #[arg(long)]
    pub load_exactness: Option<usize>,
    /// Quadrature exactness for error norms and cross-mesh integrals.
    #[arg(long)]
    pub norm_exactness: Option<usize>,
    /// Use the general overlay paths even on unchanged meshes.
    #[arg(long)]
    pub force_general: bool,
    /// `key = value` file with defaults for the options above and below.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// `slow` or `fast`.
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub degree: Option<usize>,
    /// Coupling exponent: `tau` is divided by `2^k` when `h` halves.
    #[arg(long)]
    pub k: Option<u32>,
    /// Cell side of the uniform mesh in the first run.
    #[arg(long, alias = "h")]
    pub h0: Option<f64>,
    /// Time step of the first run.
    #[arg(long, alias = "tau")]
    pub tau0: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long, value_enum)]
    pub initial: Option<Initial>,
    /// Mesh change file, lines `step levels [cx cy r]`.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct PresetArgs {
    /// One of 1, 2, 3a, 3b, 4.
    pub name: String,
    /// Number of runs (default from the preset table).
    #[arg(long)]
    pub runs: Option<usize>,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 20)]
    pub cases: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse(format!("expected key = value, got `{line}`")))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse(format!("bad value `{v}` for `{key}`")))
}

/// `K,J=V`.
pub fn parse_constant(s: &str) -> Result<(u32, u32, f64)> {
    let bad = || Error::Parse(format!("bad constant `{s}`, expected K,J=V"));
    let (kj, v) = s.split_once('=').ok_or_else(bad)?;
    let (k, j) = kj.split_once(',').ok_or_else(bad)?;
    Ok((
        k.trim().parse().map_err(|_| bad())?,
        j.trim().parse().map_err(|_| bad())?,
        v.trim().parse().map_err(|_| bad())?,
    ))
}

struct Resolved {
    out: PathBuf,
    force: bool,
    constants: ConstantsTable,
    options: Options,
    config: BTreeMap<String, String>,
}

fn resolve(common: &Common) -> Result<Resolved> {
    let config = match &common.config {
        Some(p) => parse_config(&std::fs::read_to_string(p)?)?,
        None => BTreeMap::new(),
    };
    let out = common
        .out
        .clone()
        .or_else(|| config.get("out").map(PathBuf::from))
        .or_else(|| std::env::var_os("PARABEST_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("parabest-out"));
    let force = common.force || config.get("force").map(|v| parse_value::<bool>("force", v)).transpose()?.unwrap_or(false);
    let mut constants = ConstantsTable::new(1.0, 1.0);
    let mut entries: Vec<String> = config
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("constant.").map(|kj| format!("{kj}={v}")))
        .collect();
    entries.extend(common.constants.iter().cloned());
    for c in entries {
        let (k, j, v) = parse_constant(&c)?;
        constants.set(k, j, v)?;
    }
    let force_general = common.force_general
        || config.get("force_general").map(|v| parse_value::<bool>("force_general", v)).transpose()?.unwrap_or(false);
    let lookup = |flag: Option<usize>, key: &str| -> Result<Option<usize>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => config.get(key).map(|v| parse_value(key, v)).transpose(),
        }
    };
    let mut options = Options { force_general, ..Options::default() };
    options.load_exactness = lookup(common.load_exactness, "load_exactness")?;
    if let Some(e) = lookup(common.norm_exactness, "norm_exactness")? {
        options.norm_exactness = e;
    }
    let alpha = match common.alpha {
        Some(a) => a,
        None => config.get("alpha").map(|v| parse_value("alpha", v)).transpose()?.unwrap_or(1.0),
    };
    let beta = match common.beta {
        Some(b) => b,
        None => config.get("beta").map(|v| parse_value("beta", v)).transpose()?.unwrap_or(1.0),
    };
    if !(alpha > 0.0 && beta >= alpha) {
        return Err(Error::InvalidArgument(format!("need 0 < alpha <= beta, got {alpha}, {beta}")));
    }
    constants.alpha = alpha;
    constants.beta = beta;
    Ok(Resolved { out, force, constants, options, config })
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force`.
pub fn prepare_output(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && std::fs::read_dir(dir)?.next().is_some() && !force {
        return Err(Error::OutputExists(dir.display().to_string()));
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

#[derive(Serialize)]
struct RunSummary<'a> {
    label: &'a str,
    index: usize,
    degree: usize,
    h: f64,
    tau: f64,
    steps: usize,
    dofs: usize,
    elements: usize,
    max_pointwise_defect: f64,
    max_operator_mismatch: f64,
    seconds: f64,
    phase_seconds: [f64; 4],
    final_step: &'a benchmark::StepRow,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    problem: ProblemKind,
    options: BTreeMap<&'static str, String>,
    schedule: &'a [MeshChange],
    runs: Vec<RunSummary<'a>>,
}

fn write_outputs(
    dir: &Path,
    command: &str,
    problem: ProblemKind,
    options: BTreeMap<&'static str, String>,
    schedule: &[MeshChange],
    reports: &[RunReport],
) -> Result<()> {
    std::fs::write(dir.join("steps.csv"), benchmark::steps_csv(reports))?;
    std::fs::write(dir.join("summary.csv"), benchmark::summary_csv(reports))?;
    std::fs::write(dir.join("plot.py"), benchmark::plot_script("steps.csv", command))?;
    let manifest = Manifest {
        command,
        problem,
        options,
        schedule,
        runs: reports
            .iter()
            .map(|r| RunSummary {
                label: &r.label,
                index: r.index,
                degree: r.degree,
                h: r.h,
                tau: r.tau,
                steps: r.steps,
                dofs: r.dofs,
                elements: r.elements,
                max_pointwise_defect: r.max_pointwise_defect,
                max_operator_mismatch: r.max_operator_mismatch,
                seconds: r.seconds,
                phase_seconds: r.phase_seconds,
                final_step: r.last(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

fn print_summary(reports: &[RunReport]) {
    println!("{:>4} {:>10} {:>10} {:>12} {:>12} {:>12} {:>8} {:>8}", "i", "h", "tau", "err_LinfL2", "total_linf_l2", "err_L2H1", "eff_inf", "eff_2");
    for r in reports {
        let row = r.last();
        println!(
            "{:>4} {:>10.4e} {:>10.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>8.4} {:>8.4}",
            r.index, r.h, r.tau, row.errors.linf_l2, row.totals.total_linf_l2, row.errors.l2_h1, row.eff_linf_l2, row.eff_l2_h1
        );
    }
}

fn run_parallel(configs: &[RunConfig], jobs: usize) -> Result<Vec<RunReport>> {
    let jobs = jobs.max(1).min(configs.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<std::sync::Mutex<Option<Result<RunReport>>>> = configs.iter().map(|_| Default::default()).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= configs.len() {
                    break;
                }
                let r = benchmark::run_single(&configs[i]);
                if let Ok(rep) = &r {
                    eprintln!("run {} done: {} steps, {} dofs, {:.1}s", rep.index, rep.steps, rep.dofs, rep.seconds);
                }
                *results[i].lock().expect("unpoisoned") = Some(r);
            });
        }
    });
    results.into_iter().map(|m| m.into_inner().expect("unpoisoned").expect("every run finished")).collect()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => {
            let r = resolve(&a.common)?;
            let get = |k: &str| r.config.get(k).cloned();
            fn pick<T: std::str::FromStr>(flag: Option<T>, cfg: Option<String>, key: &str, default: T) -> Result<T> {
                match flag {
                    Some(v) => Ok(v),
                    None => cfg.map(|v| parse_value(key, &v)).transpose().map(|v| v.unwrap_or(default)),
                }
            }
            let problem: ProblemKind = a.problem.or_else(|| get("problem")).unwrap_or_else(|| "slow".into()).parse()?;
            let degree = pick(a.degree, get("degree"), "degree", 1)?;
            let k = pick(a.k, get("k"), "k", 1)?;
            let h0 = pick(a.h0, get("h0"), "h0", 0.25)?;
            let tau0 = pick(a.tau0, get("tau0"), "tau0", 0.01)?;
            let runs = pick(a.runs, get("runs"), "runs", 1)?;
            let initial = match a.initial.or(match get("initial").as_deref() {
                Some("l2") => Some(Initial::L2),
                Some("interpolation") => Some(Initial::Interpolation),
                Some(o) => return Err(Error::Parse(format!("bad value `{o}` for `initial`"))),
                None => None,
            }) {
                Some(Initial::L2) => InitialOperator::L2Projection,
                _ => InitialOperator::Interpolation,
            };
            let schedule = match a.schedule.or_else(|| get("schedule").map(PathBuf::from)) {
                Some(p) => benchmark::parse_schedule(&std::fs::read_to_string(p)?)?,
                None => Vec::new(),
            };
            if runs == 0 {
                return Err(Error::InvalidArgument("runs must be at least 1".into()));
            }
            crate::fespace::check_degree(degree)?;
            prepare_output(&r.out, r.force)?;
            let mut configs = benchmark::sequence_configs("run", problem, degree, k, h0, tau0, runs, &r.constants, r.options);
            for c in &mut configs {
                c.initial = initial;
                c.schedule = schedule.clone();
            }
            let reports = run_parallel(&configs, 1)?;
            let opts = BTreeMap::from([
                ("degree", degree.to_string()),
                ("k", k.to_string()),
                ("h0", h0.to_string()),
                ("tau0", tau0.to_string()),
                ("runs", runs.to_string()),
                ("initial", format!("{initial:?}")),
                ("force_general", r.options.force_general.to_string()),
            ]);
            write_outputs(&r.out, "run", problem, opts, &schedule, &reports)?;
            print_summary(&reports);
            println!("output: {}", r.out.display());
        }
        Command::Preset(a) => {
            let r = resolve(&a.common)?;
            let p = benchmark::preset(&a.name)?;
            let runs = a.runs.or(r.config.get("runs").map(|v| parse_value("runs", v)).transpose()?);
            prepare_output(&r.out, r.force)?;
            let configs = benchmark::preset_configs(&p, runs, &r.constants, r.options);
            let reports = run_parallel(&configs, a.jobs)?;
            let opts = BTreeMap::from([
                ("preset", p.name.to_string()),
                ("degree", p.degree.to_string()),
                ("k", p.k.to_string()),
                ("runs", configs.len().to_string()),
                ("force_general", r.options.force_general.to_string()),
            ]);
            write_outputs(&r.out, &format!("preset{}", p.name), p.problem, opts, &[], &reports)?;
            print_summary(&reports);
            println!("output: {}", r.out.display());
        }
        Command::Check(a) => {
            let results = checks::run_all(a.cases, a.seed);
            let mut failed = 0;
            for c in &results {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                return Err(Error::InvalidArgument(format!("{failed} check(s) failed")));
            }
        }
    }
    Ok(())
}
