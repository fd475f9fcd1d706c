use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use salsa_core::driver::{Experiment, RunConfig, RunOptions, RoundRecord};
use salsa_core::metrics::{aggregate, collect_summaries, write_group_table, RunSummary};
use salsa_core::oracle::GroundTruth;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  unexpected failure
  2  configuration or usage error
  3  objective failure or budget violation (completed rounds stay on disk)
  4  I/O error";

const OUTPUT_ROOT_VAR: &str = "SALSA_OUTPUT_ROOT";

/// Factored active learning over combinatorial product spaces.
#[derive(Parser)]
#[command(name = "salsa", version, after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one item-pool file per vector.
    GenSpace(GenSpaceArgs),
    /// Enumerate the space and write the exact top-k.
    GroundTruth(GroundTruthArgs),
    /// Run one experiment (optionally several seeded trials).
    Run(RunArgs),
    /// Run a grid of configurations on a bounded worker pool.
    Sweep(SweepArgs),
    /// Aggregate every summary.json below a directory.
    Summarize(SummarizeArgs),
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set acquisition.strategy=ucb`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self, extra: &[String]) -> anyhow::Result<(RunConfig, Vec<String>, Option<PathBuf>)> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        let mut all = self.overrides.clone();
        all.extend_from_slice(extra);
        let config = RunConfig::from_toml_with_overrides(&text, &all)?;
        let base = self
            .config
            .as_ref()
            .and_then(|p| p.parent())
            .map(Path::to_path_buf);
        Ok((config, all, base))
    }
}

#[derive(Args)]
struct GenSpaceArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Pool size per vector, comma separated.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GroundTruthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of top molecules to keep (defaults to ground_truth_k).
    #[arg(short)]
    k: Option<usize>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Clone, Default)]
struct RunFlags {
    #[command(flatten)]
    config: ConfigArgs,
    /// salsa, random, tabular-ts or pool-al.
    #[arg(long)]
    method: Option<String>,
    /// ts, ts-oneshot, greedy, eps-greedy, ucb, ei or pi.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Attach an external scorer command (replaces the configured objective).
    #[arg(long)]
    scorer_cmd: Option<String>,
    /// Independent trials; trial t uses seed + t.
    #[arg(long, default_value_t = 1)]
    trials: u64,
    /// Output directory (default: $SALSA_OUTPUT_ROOT/<name> or runs/<name>).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Suppress per-round progress lines.
    #[arg(short, long)]
    quiet: bool,
}

impl RunFlags {
    fn flag_overrides(&self) -> Vec<String> {
        let mut o = Vec::new();
        if let Some(m) = &self.method {
            o.push(format!("method={m}"));
        }
        if let Some(s) = &self.strategy {
            o.push(format!("acquisition.strategy={s}"));
        }
        if let Some(s) = self.seed {
            o.push(format!("seed={s}"));
        }
        if let Some(cmd) = &self.scorer_cmd {
            o.push("objective.kind=external".to_string());
            o.push(format!("objective.command={}", toml_string(cmd)));
        }
        o
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    flags: RunFlags,
    /// Continue from the latest checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Stop after this round (a later --resume continues).
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    flags: RunFlags,
    /// Additional configurations, each becoming its own cell.
    #[arg(long = "with-config", value_name = "PATH")]
    configs: Vec<PathBuf>,
    /// Vary a key across values, e.g. `--vary acquisition.strategy=ts,ucb`.
    #[arg(long, value_name = "KEY=V1,V2,..")]
    vary: Vec<String>,
    /// Worker threads (cells run in parallel).
    #[arg(short, long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SummarizeArgs {
    dir: PathBuf,
    /// Write the table here instead of stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<salsa_core::Error>() {
            return match e {
                _ if e.is_config() => 2,
                salsa_core::Error::Io(_) | salsa_core::Error::Parse { .. } => 4,
                salsa_core::Error::BudgetExhausted { .. }
                | salsa_core::Error::DuplicateCandidate(_)
                | salsa_core::Error::Objective(_)
                | salsa_core::Error::ScorerTimeout(_)
                | salsa_core::Error::ScorerCountMismatch { .. }
                | salsa_core::Error::ScorerMalformed { .. } => 3,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSpace(a) => gen_space(a),
        Command::GroundTruth(a) => ground_truth(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Summarize(a) => summarize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn gen_space(a: GenSpaceArgs) -> anyhow::Result<()> {
    let mut extra = Vec::new();
    if let Some(s) = &a.sizes {
        let list: Vec<String> = s.iter().map(usize::to_string).collect();
        extra.push(format!("space.sizes=[{}]", list.join(",")));
    }
    if let Some(d) = a.dim {
        extra.push(format!("space.dim={d}"));
    }
    if let Some(s) = a.seed {
        extra.push(format!("space.seed={s}"));
    }
    let (config, _, base) = a.config.resolve(&extra)?;
    let space = config.space.build(base.as_deref())?;
    let out = a.out.unwrap_or_else(|| output_root().join("space"));
    for p in space.save_dir(&out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn ground_truth(a: GroundTruthArgs) -> anyhow::Result<()> {
    let (config, _, base) = a.config.resolve(&[])?;
    let space = config.space.build(base.as_deref())?;
    let objective = config.objective.build(&space)?;
    let k = a.k.unwrap_or(config.ground_truth_k);
    if k == 0 {
        bail!(salsa_core::Error::Config("k must be ≥ 1".into()));
    }
    let truth = GroundTruth::compute(&space, objective.as_ref(), k, config.enumeration_cap)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    truth.save(&a.out)?;
    eprintln!("wrote top-{} of {} molecules to {}", truth.len(), space.size(), a.out.display());
    Ok(())
}

/// Writes the resolved configuration, prefixed by the overrides that shaped it.
fn persist_config(dir: &Path, config: &RunConfig, overrides: &[String]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = String::new();
    for o in overrides {
        text.push_str(&format!("# override: {o}\n"));
    }
    text.push_str(&config.to_toml());
    std::fs::write(dir.join("config.resolved.toml"), text)?;
    Ok(())
}

fn progress_line(label: &str, r: &RoundRecord) {
    let recall = r.recall.map_or_else(|| "NA".into(), |x| format!("{x:.4}"));
    let best = r.best_so_far.map_or_else(|| "NA".into(), |x| format!("{x:.4}"));
    eprintln!(
        "{label} round {:>3}  acquired {:>6}  budget {:>8}  best {best}  recall {recall}{}",
        r.round,
        r.acquired.len(),
        r.budget_used,
        if r.converged { "  converged" } else { "" }
    );
}

/// Runs every trial of one configuration into `out`.
fn run_trials(
    config: &RunConfig,
    overrides: &[String],
    base: Option<&Path>,
    out: &Path,
    trials: u64,
    resume: bool,
    stop_after: Option<usize>,
    quiet: bool,
) -> anyhow::Result<Vec<RunSummary>> {
    if trials == 0 {
        bail!(salsa_core::Error::Config("--trials must be ≥ 1".into()));
    }
    persist_config(out, config, overrides)?;
    let mut summaries = Vec::new();
    for t in 0..trials {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(t);
        let dir = if trials == 1 { out.to_path_buf() } else { out.join(format!("trial_{t:03}")) };
        if trials > 1 {
            let mut o = overrides.to_vec();
            o.push(format!("seed={}", cfg.seed));
            persist_config(&dir, &cfg, &o)?;
        }
        let exp = Experiment::prepare(cfg, base)?;
        let label = format!("[{} seed {}]", exp.config.name, exp.config.seed);
        let mut report = |r: &RoundRecord| {
            if !quiet {
                progress_line(&label, r);
            }
        };
        let result = exp.run(RunOptions {
            out_dir: Some(dir),
            resume,
            stop_after,
            progress: Some(&mut report),
        })?;
        summaries.push(result.summary);
    }
    if trials > 1 {
        write_group_table(&aggregate(&summaries), std::fs::File::create(out.join("summary.tsv"))?)?;
    }
    Ok(summaries)
}

fn run(a: RunArgs) -> anyhow::Result<()> {
    let extra = a.flags.flag_overrides();
    let (config, overrides, base) = a.flags.config.resolve(&extra)?;
    let out = a.flags.out.clone().unwrap_or_else(|| output_root().join(&config.name));
    let summaries = run_trials(
        &config,
        &overrides,
        base.as_deref(),
        &out,
        a.flags.trials,
        a.resume,
        a.stop_after,
        a.flags.quiet,
    )?;
    write_group_table(&aggregate(&summaries), std::io::stdout())?;
    Ok(())
}

struct Cell {
    label: String,
    config_path: Option<PathBuf>,
    overrides: Vec<String>,
}

fn sweep_cells(a: &SweepArgs) -> anyhow::Result<Vec<Cell>> {
    let mut configs: Vec<Option<PathBuf>> = Vec::new();
    if a.flags.config.config.is_some() || a.configs.is_empty() {
        configs.push(a.flags.config.config.clone());
    }
    configs.extend(a.configs.iter().cloned().map(Some));
    let mut cells: Vec<Cell> = configs
        .into_iter()
        .map(|p| Cell {
            label: p
                .as_deref()
                .and_then(Path::file_stem)
                .map_or_else(|| "default".to_string(), |s| s.to_string_lossy().into_owned()),
            config_path: p,
            overrides: Vec::new(),
        })
        .collect();
    for v in &a.vary {
        let (key, values) = v
            .split_once('=')
            .ok_or_else(|| salsa_core::Error::Config(format!("--vary {v:?} is not key=v1,v2,..")))?;
        let values: Vec<&str> = split_values(values);
        if values.is_empty() {
            bail!(salsa_core::Error::Config(format!("--vary {key} has no values")));
        }
        let short = key.rsplit('.').next().unwrap_or(key);
        cells = cells
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |val| {
                    let mut o = c.overrides.clone();
                    o.push(format!("{}={}", key.trim(), val.trim()));
                    Cell {
                        label: format!("{}_{}-{}", c.label, short, sanitize(val)),
                        config_path: c.config_path.clone(),
                        overrides: o,
                    }
                })
            })
            .collect();
    }
    if cells.len() < 2 {
        bail!(salsa_core::Error::Config(format!(
            "a sweep needs at least two cells, got {}",
            cells.len()
        )));
    }
    Ok(cells)
}

/// Splits on commas outside brackets, so list values like `[10,10]` survive.
fn split_values(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, ch) in s.char_indices() {
        match ch {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out.into_iter().filter(|v| !v.trim().is_empty()).collect()
}

fn sanitize(s: &str) -> String {
    s.trim()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn sweep(a: SweepArgs) -> anyhow::Result<()> {
    let cells = sweep_cells(&a)?;
    if a.jobs == 0 {
        bail!(salsa_core::Error::Config("--jobs must be ≥ 1".into()));
    }
    let flag_overrides = a.flags.flag_overrides();
    let out = a.flags.out.clone().unwrap_or_else(|| output_root().join("sweep"));
    std::fs::create_dir_all(&out)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs).build()?;
    let results: Vec<(String, anyhow::Result<Vec<RunSummary>>)> = pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, cell)| {
                let name = format!("cell_{i:03}_{}", cell.label);
                let res = (|| {
                    let args = ConfigArgs {
                        config: cell.config_path.clone(),
                        overrides: a.flags.config.overrides.clone(),
                    };
                    let mut extra = cell.overrides.clone();
                    extra.extend(flag_overrides.iter().cloned());
                    extra.push(format!("name={}", toml_string(&cell.label)));
                    let (config, overrides, base) = args.resolve(&extra)?;
                    run_trials(&config, &overrides, base.as_deref(), &out.join(&name), a.flags.trials, false, None, a.flags.quiet)
                })();
                (name, res)
            })
            .collect()
    });
    let mut summaries = Vec::new();
    let mut failed = Vec::new();
    for (name, res) in results {
        match res {
            Ok(s) => summaries.extend(s),
            Err(e) => {
                eprintln!("cell {name} failed: {e:#}");
                failed.push((name, e));
            }
        }
    }
    let groups = aggregate(&summaries);
    write_group_table(&groups, std::fs::File::create(out.join("sweep_summary.tsv"))?)?;
    write_group_table(&groups, std::io::stdout())?;
    if let Some((_, first)) = failed.into_iter().next() {
        return Err(first.context("one or more sweep cells failed"));
    }
    Ok(())
}

fn summarize(a: SummarizeArgs) -> anyhow::Result<()> {
    let found = collect_summaries(&a.dir)?;
    if found.is_empty() {
        bail!(salsa_core::Error::Config(format!("no summary.json below {}", a.dir.display())));
    }
    let summaries: Vec<RunSummary> = found.into_iter().map(|(_, s)| s).collect();
    let groups = aggregate(&summaries);
    match a.out {
        Some(p) => write_group_table(&groups, std::fs::File::create(p)?)?,
        None => write_group_table(&groups, std::io::stdout())?,
    }
    Ok(())
}
