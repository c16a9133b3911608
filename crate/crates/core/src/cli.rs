//! `clickmodel` command line.
//!
//! Exit codes: 0 success, 1 validation error, 2 usage error. Every file an
//! invocation writes gets a `<file>.manifest.json` next to it recording the
//! command, arguments, seed, crate version and SHA-256 digests of inputs and
//! outputs. `CLICKMODEL_THREADS` caps the worker pool; it never changes results.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::clicklog::{parse_log, write_log, ClickLog, InterfaceKind, LayoutShape};
use crate::error::{Error, Result};
use crate::estimation::{brute_force_mle, fit, FitOptions, Init};
use crate::evaluation::evaluate;
use crate::models::{ModelInstance, ModelKind, TableName};
use crate::parallel::{with_workers, workers_from_env};
use crate::simulation::{item_names, random_instance, simulate_log, topic_names, LayoutPolicy, SimConfig};
use crate::taxonomy::{classify, descriptor_of, equivalent, CatalogModel, GlobalDeps, ModelDescriptor};

#[derive(Debug, Parser)]
#[command(name = "clickmodel", version, about = "Declare, simulate, fit, evaluate and classify click models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a click log from a model
    Simulate(SimulateArgs),
    /// Fit a catalog model to a click log
    Fit(FitArgs),
    /// Per-rank perplexity of a parameter file on a log
    Evaluate(EvaluateArgs),
    /// Print the taxonomy category of a dependency set or descriptor
    Classify(ClassifyArgs),
    /// Check two descriptors for syntactic equivalence
    Compare(CompareArgs),
    /// Grid-search maximum likelihood for small problems
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    model: ModelKind,
    /// Parameter file; without it (and without --zeta) tables are drawn from the seed
    #[arg(long)]
    params: Option<PathBuf>,
    /// RCM click probability
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    shape: Option<LayoutShape>,
    #[arg(long)]
    sessions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Interface kind (default: carousel for topic models, else single_list or grid by shape)
    #[arg(long)]
    kind: Option<InterfaceKind>,
    /// Item universe size (default 2·m·n) when the parameters do not name items
    #[arg(long)]
    items: Option<usize>,
    /// Topic universe size (default 2·m) when the parameters do not name topics
    #[arg(long)]
    topics: Option<usize>,
    #[arg(long, default_value = "uniform_without_replacement")]
    layout: LayoutPolicy,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    model: ModelKind,
    #[arg(long)]
    log: PathBuf,
    /// Report file (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value = "uniform_half")]
    init: Init,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Parameter or fit-report file
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    log: PathBuf,
    /// JSON report file; the table always goes to stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct ClassifyArgs {
    /// Comma-separated subset of topics,items,clicks (or `none`)
    #[arg(long, allow_hyphen_values = true)]
    deps: Option<String>,
    /// Descriptor file
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Catalog model
    #[arg(long)]
    model: Option<CatalogModel>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Catalog model (repeatable)
    #[arg(long)]
    model: Vec<CatalogModel>,
    /// Descriptor file (repeatable)
    #[arg(long)]
    spec: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long)]
    model: ModelKind,
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    grid_step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the CLI on `argv` (including the program name) with process stdio.
pub fn run(argv: &[String]) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let args: Vec<String> = argv.iter().skip(1).cloned().collect();
    match dispatch(cli.command, &args, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command, args: &[String], out: &mut dyn Write) -> Result<()> {
    let workers = workers_from_env()?;
    // pooled commands print into a buffer; the sink itself need not be Send
    let pooled = |f: &(dyn Fn(&mut Vec<u8>) -> Result<()> + Sync)| -> Result<Vec<u8>> {
        with_workers(workers, || {
            let mut buf = Vec::new();
            f(&mut buf).map(|()| buf)
        })?
    };
    let text = match cmd {
        Command::Simulate(a) => pooled(&|buf| simulate_cmd(&a, args, buf))?,
        Command::Fit(a) => pooled(&|buf| fit_cmd(&a, args, buf))?,
        Command::Evaluate(a) => pooled(&|buf| evaluate_cmd(&a, args, buf))?,
        Command::Oracle(a) => pooled(&|buf| oracle_cmd(&a, args, buf))?,
        Command::Classify(a) => return classify_cmd(a, out),
        Command::Compare(a) => return compare_cmd(a, out),
    };
    out.write_all(&text)?;
    Ok(())
}

fn flag_err(flag: &str, path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("--{flag} {}: {e}", path.display()))
}

fn read_text(flag: &str, path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| flag_err(flag, path, e))
}

fn read_log(path: &Path) -> Result<ClickLog> {
    let f = File::open(path).map_err(|e| flag_err("log", path, e))?;
    parse_log(BufReader::new(f)).map_err(|e| flag_err("log", path, e))
}

fn read_params(path: &Path) -> Result<ModelInstance> {
    ModelInstance::from_json(&read_text("params", path)?).map_err(|e| flag_err("params", path, e))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| flag_err("out", path, e))
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Run record written beside every output; contains nothing that varies
/// between identical invocations.
struct Manifest<'a> {
    command: &'a str,
    args: &'a [String],
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    extra: serde_json::Map<String, serde_json::Value>,
}

impl Manifest<'_> {
    fn write(self) -> Result<()> {
        let digests = |paths: &[PathBuf]| -> Result<serde_json::Map<String, serde_json::Value>> {
            paths
                .iter()
                .map(|p| Ok((p.display().to_string(), sha256_file(p)?.into())))
                .collect()
        };
        let mut m = serde_json::Map::new();
        m.insert("command".into(), self.command.into());
        m.insert("args".into(), self.args.into());
        m.insert("seed".into(), self.seed.into());
        m.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        m.insert("inputs".into(), digests(&self.inputs)?.into());
        m.insert("outputs".into(), digests(&self.outputs)?.into());
        m.extend(self.extra);
        let text = serde_json::to_string_pretty(&serde_json::Value::Object(m))? + "\n";
        for out in &self.outputs {
            write_file(&manifest_path(out), text.as_bytes())?;
        }
        Ok(())
    }
}

fn simulate_cmd(a: &SimulateArgs, args: &[String], out: &mut Vec<u8>) -> Result<()> {
    let params = a.params.as_deref().map(read_params).transpose()?;
    if params.is_some() && a.zeta.is_some() {
        return Err(Error::Config("--zeta and --params are mutually exclusive".into()));
    }
    if a.zeta.is_some() && a.model != ModelKind::Rcm {
        return Err(Error::Config("--zeta only applies to --model rcm".into()));
    }
    if let Some(p) = &params {
        if p.kind() != a.model {
            return Err(Error::Config(format!(
                "--params holds a {} model but --model is {}",
                p.kind(),
                a.model
            )));
        }
    }
    let shape = match (a.shape, &params) {
        (Some(s), Some(p)) if s != p.shape() => {
            return Err(Error::Config(format!(
                "--shape {s} differs from the parameter file shape {}",
                p.shape()
            )))
        }
        (Some(s), _) => s,
        (None, Some(p)) => p.shape(),
        (None, None) => return Err(Error::Config("--shape is required without --params".into())),
    };
    let kind = a.kind.unwrap_or(if a.model.needs_topics() {
        InterfaceKind::Carousel
    } else if shape.m == 1 {
        InterfaceKind::SingleList
    } else {
        InterfaceKind::Grid
    });
    let named = |table: TableName, flag: &str, count: Option<usize>| -> Result<Option<Vec<String>>> {
        match params.as_ref().and_then(|p| p.table(table)) {
            Some(_) if count.is_some() => Err(Error::Config(format!(
                "--{flag} conflicts with the {table} table in --params"
            ))),
            Some(t) => Ok(Some(t.keys().cloned().collect())),
            None => Ok(None),
        }
    };
    let item_table = match a.model {
        ModelKind::Rcm | ModelKind::Rctr => None,
        _ => Some(TableName::Item),
    };
    let topic_table = match a.model {
        ModelKind::Cacm => Some(TableName::Tau),
        ModelKind::TopicsItemsV1 | ModelKind::TopicsItemsV2 => Some(TableName::Rho),
        _ => None,
    };
    let items = match item_table {
        Some(t) => named(t, "items", a.items)?,
        None => None,
    }
    .unwrap_or_else(|| item_names(a.items.unwrap_or(2 * shape.cells())));
    let topics = match topic_table {
        Some(t) => named(t, "topics", a.topics)?,
        None => None,
    }
    .unwrap_or_else(|| topic_names(a.topics.unwrap_or(2 * shape.m)));
    let cfg = SimConfig {
        shape,
        kind,
        item_universe: items,
        topic_universe: if kind.has_topics() { topics } else { Vec::new() },
        sessions: a.sessions,
        seed: a.seed,
        layout_policy: a.layout,
    };
    cfg.validate()?;
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let model = if let Some(p) = params {
        inputs.push(a.params.clone().unwrap());
        p
    } else if let Some(z) = a.zeta {
        ModelInstance::new(
            ModelKind::Rcm,
            shape,
            [(TableName::Zeta, [("value".to_string(), z)].into())].into(),
        )
        .map_err(|e| Error::Config(format!("--zeta: {e}")))?
    } else {
        let truth = random_instance(a.model, shape, &cfg.vocab(), a.seed)?;
        let path = with_suffix(&a.out, ".truth.json");
        write_file(&path, (truth.to_json()? + "\n").as_bytes())?;
        outputs.push(path);
        truth
    };
    let log = simulate_log(&model, &cfg)?;
    let mut bytes = Vec::new();
    write_log(&log, &mut bytes)?;
    write_file(&a.out, &bytes)?;
    outputs.insert(0, a.out.clone());
    Manifest {
        command: "simulate",
        args,
        seed: Some(a.seed),
        inputs,
        outputs,
        extra: Default::default(),
    }
    .write()?;
    writeln!(out, "wrote {} sessions ({} {}) to {}", log.len(), shape, kind, a.out.display())?;
    Ok(())
}

fn fit_cmd(a: &FitArgs, args: &[String], out: &mut Vec<u8>) -> Result<()> {
    let opts = FitOptions {
        max_iters: a.max_iter,
        rel_tol: a.tol,
        init: a.init,
        smoothing_epsilon: a.epsilon,
        seed: a.seed,
    };
    opts.validate().map_err(|e| Error::Config(format!("{e} (--max-iter / --tol / --epsilon)")))?;
    let log = read_log(&a.log)?;
    let report = fit(a.model, &log, &opts)?;
    let text = report.to_json()? + "\n";
    match &a.out {
        None => out.write_all(text.as_bytes())?,
        Some(path) => {
            write_file(path, text.as_bytes())?;
            let mut extra = serde_json::Map::new();
            extra.insert("normalization".into(), report.normalization.clone().into());
            Manifest {
                command: "fit",
                args,
                seed: Some(a.seed),
                inputs: vec![a.log.clone()],
                outputs: vec![path.clone()],
                extra,
            }
            .write()?;
            writeln!(
                out,
                "fitted {} on {} sessions: log-likelihood {:.6}, {} iterations, converged={}",
                a.model,
                log.len(),
                report.final_ll(),
                report.iterations,
                report.converged
            )?;
        }
    }
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs, args: &[String], out: &mut Vec<u8>) -> Result<()> {
    let model = read_params(&a.params)?;
    let log = read_log(&a.log)?;
    let report = evaluate(&model, &log)?;
    out.write_all(report.render_table().as_bytes())?;
    if let Some(path) = &a.out {
        write_file(path, (report.to_json()? + "\n").as_bytes())?;
        Manifest {
            command: "evaluate",
            args,
            seed: None,
            inputs: vec![a.params.clone(), a.log.clone()],
            outputs: vec![path.clone()],
            extra: Default::default(),
        }
        .write()?;
    }
    Ok(())
}

fn oracle_cmd(a: &OracleArgs, args: &[String], out: &mut Vec<u8>) -> Result<()> {
    let log = read_log(&a.log)?;
    let report = brute_force_mle(a.model, &log, a.grid_step)?;
    let text = report.to_json()? + "\n";
    match &a.out {
        None => out.write_all(text.as_bytes())?,
        Some(path) => {
            write_file(path, text.as_bytes())?;
            Manifest {
                command: "oracle",
                args,
                seed: None,
                inputs: vec![a.log.clone()],
                outputs: vec![path.clone()],
                extra: Default::default(),
            }
            .write()?;
            writeln!(out, "oracle log-likelihood {:.9}", report.log_likelihood)?;
        }
    }
    Ok(())
}

fn read_descriptor(path: &Path) -> Result<ModelDescriptor> {
    ModelDescriptor::from_json(&read_text("spec", path)?).map_err(|e| flag_err("spec", path, e))
}

fn classify_cmd(a: ClassifyArgs, out: &mut dyn Write) -> Result<()> {
    let deps = if let Some(list) = &a.deps {
        let names: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        GlobalDeps::from_names(&names).map_err(|e| Error::Config(format!("--deps: {e}")))?
    } else if let Some(path) = &a.spec {
        read_descriptor(path)?.deps()
    } else {
        descriptor_of(a.model.expect("clap enforces one source")).deps()
    };
    writeln!(out, "{}", classify(deps).label())?;
    Ok(())
}

fn compare_cmd(a: CompareArgs, out: &mut dyn Write) -> Result<()> {
    let mut ds: Vec<ModelDescriptor> = a.model.iter().map(|&m| descriptor_of(m)).collect();
    for path in &a.spec {
        ds.push(read_descriptor(path)?);
    }
    if ds.len() != 2 {
        return Err(Error::Config(format!(
            "compare needs exactly two descriptors from --model/--spec, got {}",
            ds.len()
        )));
    }
    let verdict = if equivalent(&ds[0], &ds[1]) { "equivalent" } else { "not equivalent" };
    writeln!(out, "{verdict}")?;
    Ok(())
}
