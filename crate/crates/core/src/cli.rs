//! `autodim` command line: search, retrain, eval, baseline, probe, stability.
//!
//! Every command writes its resolved configuration to `<out>/config.toml`.
//! Failures print one line `error class=<class> code=<n> msg=<text>` to
//! stderr and exit nonzero.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{PreparedData, SchemaSidecar};
use crate::embedding::param_count;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::network::Stage;
use crate::search::DerivedArchitecture;
use crate::trainer::{
    evaluate, probe_field, retrain, run_baseline, run_search, stability, BaselineMethod, ProbeResult, RetrainOutcome,
};

#[derive(Debug, Parser)]
#[command(name = "autodim", version, about = "Per-field embedding dimension search for CTR models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML config file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Delimited data file with a `label,name:kind,...` header.
    #[arg(long, short)]
    pub data: Option<PathBuf>,
    /// Optional schema sidecar (TOML).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key=value` override; dotted keys address sections (`split.seed=3`).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain, search and derive an architecture.
    Search(Common),
    /// Train a fresh model at a derived architecture.
    Retrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        arch: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run a comparison baseline.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Option<BaselineMethod>,
    },
    /// Train on single fields and report how predictive each one is.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "all")]
        field: Option<String>,
        #[arg(long)]
        all: bool,
        /// Derived architecture whose dims are listed next to each field.
        #[arg(long)]
        arch: Option<PathBuf>,
    },
    /// Search once per seed and correlate the derived dimensions.
    Stability {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(d) = &common.data {
        cfg.data = Some(d.clone());
    }
    if let Some(s) = &common.schema {
        cfg.schema = Some(s.clone());
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    if let Some(s) = common.seed {
        cfg.search.seed = s;
    }
    Ok(cfg)
}

fn need<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::Config(format!("missing `{what}` (flag or config key)")))
}

fn load_data(cfg: &RunConfig) -> Result<PreparedData> {
    let sidecar = cfg.schema.as_deref().map(SchemaSidecar::load).transpose()?;
    PreparedData::load(need(&cfg.data, "data")?, cfg.delimiter_byte(), &cfg.split, sidecar.as_ref())
}

/// Creates the output directory and writes the resolved config into it.
fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = need(&cfg.out, "out")?.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    Ok(out)
}

#[derive(Serialize)]
struct Report<'a> {
    command: &'a str,
    seed: u64,
    auc: f64,
    logloss: f64,
    params: u64,
    fde_params: u64,
    n_examples: usize,
    dims: Vec<usize>,
    fields: Vec<String>,
}

fn write_report(out: &Path, name: &str, command: &str, cfg: &RunConfig, arch: &DerivedArchitecture, r: &EvalReport) -> Result<()> {
    let fde = DerivedArchitecture::full(&fields_schema(arch), &candidate_sets(arch)?)?.param_count;
    let report = Report {
        command,
        seed: cfg.search.seed,
        auc: r.auc,
        logloss: r.mean_logloss,
        params: r.params,
        fde_params: fde,
        n_examples: r.n_examples,
        dims: arch.dims(),
        fields: arch.fields.iter().map(|f| f.name.clone()).collect(),
    };
    let mut table = toml::Table::try_from(&report)?;
    table.insert("config".into(), toml::Value::Table(cfg.to_toml()?.parse()?));
    let text = toml::to_string(&table)?;
    fs::write(out.join(format!("{name}.txt")), text)?;

    let mut w = csv::Writer::from_path(out.join(format!("{name}.csv")))?;
    w.write_record(["command", "seed", "auc", "logloss", "params", "fde_params", "n_examples", "dims"])?;
    w.write_record([
        command.to_string(),
        cfg.search.seed.to_string(),
        r.auc.to_string(),
        r.mean_logloss.to_string(),
        r.params.to_string(),
        fde.to_string(),
        r.n_examples.to_string(),
        join(&arch.dims()),
    ])?;
    w.flush()?;
    Ok(())
}

fn fields_schema(arch: &DerivedArchitecture) -> Vec<crate::data::FieldSchema> {
    arch.fields
        .iter()
        .map(|f| crate::data::FieldSchema::categorical(f.name.clone(), f.cardinality))
        .collect()
}

fn candidate_sets(arch: &DerivedArchitecture) -> Result<Vec<crate::embedding::CandidateDims>> {
    arch.fields
        .iter()
        .map(|f| crate::embedding::CandidateDims::new(f.candidates.clone()))
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn write_history(out: &Path, run: &RetrainOutcome) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join("retrain_log.csv"))?;
    w.write_record(["epoch", "metric", "value"])?;
    for h in &run.history {
        let e = h.epoch.to_string();
        w.write_record([e.as_str(), "train_logloss", &h.train_logloss.to_string()])?;
        w.write_record([e.as_str(), "val_logloss", &h.val_logloss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn print_eval(stdout: &mut dyn Write, label: &str, r: &EvalReport) -> Result<()> {
    writeln!(
        stdout,
        "{label}: auc={:.4} logloss={:.4} params={} n={}",
        r.auc, r.mean_logloss, r.params, r.n_examples
    )?;
    Ok(())
}

fn cmd_search(common: &Common, stdout: &mut dyn Write) -> Result<()> {
    let cfg = resolve(common)?;
    let data = load_data(&cfg)?;
    let out = prepare_out(&cfg)?;
    let run = run_search(&data, &cfg.search)?;
    run.arch.save(&out.join("arch.toml"))?;
    run.log.write_delimited(fs::File::create(out.join("search_log.csv"))?, b',')?;
    run.log.write_long(fs::File::create(out.join("search_plot.csv"))?)?;
    checkpoint::save(&run.network, cfg.search.seed, &out.join("checkpoint"))?;
    let fde = param_count(&data.schema, &vec![cfg.search.candidate_dims.max(); data.schema.len()]);
    writeln!(
        stdout,
        "derived dims {} ({} fields) params={} fde_params={} steps={} alpha_updates={}",
        join(&run.arch.dims()),
        data.schema.len(),
        run.arch.param_count,
        fde,
        run.steps,
        run.alpha_updates
    )?;
    Ok(())
}

fn finish_retrain(cfg: &RunConfig, out: &Path, command: &str, run: &RetrainOutcome, stdout: &mut dyn Write) -> Result<()> {
    checkpoint::save(&run.network, cfg.search.seed, &out.join("checkpoint"))?;
    run.arch.save(&out.join("arch.toml"))?;
    write_history(out, run)?;
    write_report(out, "report", command, cfg, &run.arch, &run.test)?;
    print_eval(stdout, command, &run.test)
}

fn cmd_retrain(common: &Common, arch: &Option<PathBuf>, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = resolve(common)?;
    if arch.is_some() {
        cfg.retrain.arch = arch.clone();
    }
    let arch = DerivedArchitecture::load(need(&cfg.retrain.arch, "retrain.arch")?)?;
    let data = load_data(&cfg)?;
    arch.check_schema(&data.schema)?;
    let out = prepare_out(&cfg)?;
    let run = retrain(&data, &arch, &cfg.search)?;
    finish_retrain(&cfg, &out, "retrain", &run, stdout)
}

fn cmd_eval(common: &Common, ckpt: &Option<PathBuf>, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = resolve(common)?;
    if ckpt.is_some() {
        cfg.eval.checkpoint = ckpt.clone();
    }
    let (net, manifest) = checkpoint::load(need(&cfg.eval.checkpoint, "eval.checkpoint")?)?;
    let data = load_data(&cfg)?;
    let spec = net.spec();
    if spec.schema != data.schema {
        return Err(Error::Schema(format!(
            "checkpoint fields {:?} do not match data fields {:?}",
            spec.schema.iter().map(|f| (&f.name, f.cardinality)).collect::<Vec<_>>(),
            data.schema.iter().map(|f| (&f.name, f.cardinality)).collect::<Vec<_>>()
        )));
    }
    let arch = match net.stage() {
        Stage::Retrain => DerivedArchitecture::from_indices(&spec.schema, &spec.candidates, &spec.chosen)?,
        Stage::Search => crate::search::derive(&net.alpha().expect("search network"), &spec.schema, &spec.candidates)?,
    };
    let params = match net.stage() {
        Stage::Retrain => arch.param_count,
        // the search network holds every candidate
        Stage::Search => net.params.count(|g| g == crate::autodiff::ParamGroup::Embedding) as u64,
    };
    let report = evaluate(&net, &data.test, cfg.search.batch_size, params)?;
    cfg.search.seed = manifest.seed;
    if cfg.out.is_some() {
        let out = prepare_out(&cfg)?;
        write_report(&out, "eval", "eval", &cfg, &arch, &report)?;
    }
    print_eval(stdout, "eval", &report)
}

fn cmd_baseline(common: &Common, method: Option<BaselineMethod>, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = resolve(common)?;
    if method.is_some() {
        cfg.baseline.method = method;
    }
    let method = *need(&cfg.baseline.method, "baseline.method")?;
    let data = load_data(&cfg)?;
    let out = prepare_out(&cfg)?;
    let run = run_baseline(method, &data, &cfg.search)?;
    let mut w = csv::Writer::from_path(out.join("baseline.csv"))?;
    w.write_record(["method", "trial", "dims", "val_logloss", "test_auc", "test_logloss", "params", "selected"])?;
    let row = |trial: String, arch: &DerivedArchitecture, val: f64, r: &EvalReport, selected: bool| {
        vec![
            method.to_string(),
            trial,
            join(&arch.dims()),
            val.to_string(),
            r.auc.to_string(),
            r.mean_logloss.to_string(),
            r.params.to_string(),
            selected.to_string(),
        ]
    };
    if run.trials.is_empty() {
        w.write_record(row("-".into(), &run.best.arch, run.best.val_logloss, &run.best.test, true))?;
    } else {
        for (i, (arch, val, r)) in run.trials.iter().enumerate() {
            w.write_record(row(i.to_string(), arch, *val, r, *arch == run.best.arch))?;
        }
    }
    w.flush()?;
    if let Some(search) = &run.search {
        search.log.write_delimited(fs::File::create(out.join("search_log.csv"))?, b',')?;
    }
    finish_retrain(&cfg, &out, &method.to_string(), &run.best, stdout)
}

fn cmd_probe(common: &Common, field: &Option<String>, all: bool, arch: &Option<PathBuf>, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = resolve(common)?;
    if field.is_some() {
        cfg.probe.field = field.clone();
    }
    cfg.probe.all |= all;
    if arch.is_some() {
        cfg.probe.arch = arch.clone();
    }
    let data = load_data(&cfg)?;
    let indices: Vec<usize> = match (&cfg.probe.field, cfg.probe.all) {
        (_, true) => (0..data.schema.len()).collect(),
        (Some(name), false) => vec![data
            .schema
            .iter()
            .position(|f| &f.name == name)
            .ok_or_else(|| Error::Schema(format!("no field named `{name}`")))?],
        (None, false) => return Err(Error::Config("probe needs --field NAME or --all".into())),
    };
    let derived = cfg.probe.arch.as_deref().map(DerivedArchitecture::load).transpose()?;
    if let Some(a) = &derived {
        a.check_schema(&data.schema)?;
    }
    let out = prepare_out(&cfg)?;
    let rows: Vec<ProbeResult> = indices
        .iter()
        .map(|&m| probe_field(m, &data, &cfg.search))
        .collect::<Result<_>>()?;
    let mut w = csv::Writer::from_path(out.join("probe.csv"))?;
    w.write_record(["field", "auc", "logloss", "derived_dim"])?;
    let mut text = format!("{:<16} {:>8} {:>8} {:>11}\n", "field", "auc", "logloss", "derived_dim");
    for (r, &m) in rows.iter().zip(&indices) {
        let dim = derived.as_ref().map_or("-".to_string(), |a| a.fields[m].dim.to_string());
        w.write_record([r.field.clone(), r.auc.to_string(), r.logloss.to_string(), dim.clone()])?;
        text.push_str(&format!("{:<16} {:>8.4} {:>8.4} {:>11}\n", r.field, r.auc, r.logloss, dim));
    }
    w.flush()?;
    fs::write(out.join("probe.txt"), &text)?;
    write!(stdout, "{text}")?;
    Ok(())
}

fn cmd_stability(common: &Common, seeds: &[u64], stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = resolve(common)?;
    if !seeds.is_empty() {
        cfg.stability.seeds = seeds.to_vec();
    }
    if cfg.stability.seeds.len() < 2 {
        return Err(Error::Config("stability needs at least two seeds".into()));
    }
    let data = load_data(&cfg)?;
    let out = prepare_out(&cfg)?;
    let report = stability(&data, &cfg.search, &cfg.stability.seeds)?;
    let mut w = csv::Writer::from_path(out.join("stability_dims.csv"))?;
    let mut header = vec!["seed".to_string()];
    header.extend(data.schema.iter().map(|f| f.name.clone()));
    w.write_record(&header)?;
    for (s, d) in report.seeds.iter().zip(&report.dims) {
        let mut rec = vec![s.to_string()];
        rec.extend(d.iter().map(usize::to_string));
        w.write_record(rec)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("stability.csv"))?;
    let mut header = vec!["seed".to_string()];
    header.extend(report.seeds.iter().map(u64::to_string));
    w.write_record(&header)?;
    for (s, row) in report.seeds.iter().zip(&report.pearson) {
        let mut rec = vec![s.to_string()];
        rec.extend(row.iter().map(|p| p.map_or("nan".to_string(), |v| v.to_string())));
        w.write_record(rec)?;
    }
    w.flush()?;
    let pairs = report.pairs();
    let defined: Vec<f64> = pairs.iter().flatten().copied().collect();
    writeln!(
        stdout,
        "seeds {:?}: {} of {} pairs defined, mean pearson {}",
        report.seeds,
        defined.len(),
        pairs.len(),
        if defined.is_empty() {
            "undefined".to_string()
        } else {
            format!("{:.4}", defined.iter().sum::<f64>() / defined.len() as f64)
        }
    )?;
    Ok(())
}

/// Runs one command, writing human-readable output to `stdout`.
pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Search(c) => cmd_search(c, stdout),
        Command::Retrain { common, arch } => cmd_retrain(common, arch, stdout),
        Command::Eval { common, checkpoint } => cmd_eval(common, checkpoint, stdout),
        Command::Baseline { common, method } => cmd_baseline(common, *method, stdout),
        Command::Probe {
            common,
            field,
            all,
            arch,
        } => cmd_probe(common, field, *all, arch, stdout),
        Command::Stability { common, seeds } => cmd_stability(common, seeds, stdout),
    }
}

/// One-line machine-parseable failure description.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace('\n', " ");
    format!("error class={} code={} msg={msg}", e.class(), e.exit_code())
}

/// Parses `argv` (including the program name) and runs it; returns the exit code.
pub fn run_command<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(stderr, "error class=usage code=2 msg={first}");
            return 2;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", error_line(&e));
            e.exit_code()
        }
    }
}
