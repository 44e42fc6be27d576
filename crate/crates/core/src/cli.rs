//! The `eegraph` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::graph_core::Graph;
use crate::model::Network;
use crate::montage::{EdgePolicy, Montage};
use crate::numerics::checkpoint;
use crate::numerics::Module;
use crate::pipeline::{
    augment_awgn, fixture_path, load_trialset, resolve_montage, save_trialset, split, synthetic_fixture, FixtureSpec,
    TrialSet,
};
use crate::trainer::{evaluate, train, RunReport, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "eegraph", version, about = "Graph neural networks for EEG trial classification")]
pub struct Cli {
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Validate and summarize without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an electrode graph and print its summary.
    Graph {
        /// Built-in montage (errp56, rsvp16) or montage file.
        #[arg(long)]
        montage: String,
        /// complete | knng:k=K | dist:d=D, optionally followed by ,self-loops
        #[arg(long)]
        edge_policy: String,
    },
    /// Add white Gaussian noise copies of every trial.
    Augment {
        /// Comma-separated SNR levels in dB.
        #[arg(long, value_delimiter = ',', default_value = "10,5,2")]
        snr: Vec<f64>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Train a model; writes a run directory per seeded run.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset manifest (overrides the config file).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of seeded runs (overrides the config file).
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Evaluate a run's best checkpoint.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Which trials to score: all, train or val (the run's own split).
        #[arg(long, default_value = "all")]
        split: String,
    },
    /// Summarize runs as mean ± std accuracy per experimental cell.
    Table {
        /// Run directories, or directories holding run subdirectories.
        dirs: Vec<PathBuf>,
        #[arg(long)]
        csv: bool,
    },
    /// Write the seeded synthetic dataset and a matching config.
    Fixtures {
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 128)]
        samples: usize,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        snr_db: f64,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::EdgePolicy(_) | Error::Config(_) => EXIT_USAGE,
        Error::Divergence { .. } => EXIT_DIVERGED,
        _ => EXIT_DATA,
    }
}

/// Parses `args` and runs the command, writing normal output to `out` and
/// diagnostics to `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Graph { montage, edge_policy } => cmd_graph(cli, montage, edge_policy, out),
        Command::Augment { snr, input, output } => cmd_augment(cli, snr, input, output, out),
        Command::Train { config, data, runs } => cmd_train(cli, config, data.as_deref(), *runs, out),
        Command::Eval { run, data, split } => cmd_eval(run, data, split, out),
        Command::Table { dirs, csv } => {
            let text = cmd_table(dirs, *csv)?;
            emit(out, &text)
        }
        Command::Fixtures { trials, classes, samples, snr_db } => {
            let spec = FixtureSpec {
                n_trials: *trials,
                n_classes: *classes,
                n_samples: *samples,
                snr_db: *snr_db,
                ..FixtureSpec::default()
            };
            cmd_fixtures(cli, &spec, out)
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Node and edge counts plus a degree histogram.
pub fn graph_summary(g: &Graph) -> String {
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for v in 0..g.n() {
        *hist.entry(g.neighbors(v).len()).or_default() += 1;
    }
    let loops = g.edges().iter().filter(|e| e.src == e.dst).count();
    let mut s = format!(
        "nodes {}\ndirected edges {}\nundirected edges {}\nself-loops {}\ndegree histogram:",
        g.n(),
        g.num_edges(),
        g.undirected_pairs().len(),
        loops
    );
    for (d, c) in hist {
        s.push_str(&format!(" {d}:{c}"));
    }
    s.push('\n');
    s
}

fn cmd_graph(cli: &Cli, montage: &str, policy: &str, out: &mut dyn Write) -> Result<()> {
    let policy: EdgePolicy = policy.parse()?;
    let m = Montage::resolve(montage)?;
    let g = m.build_graph(&policy)?;
    emit(out, &graph_summary(&g))?;
    if let (Some(path), false) = (&cli.out, cli.dry_run) {
        write_file(path, &g.to_edge_list())?;
    }
    Ok(())
}

fn cmd_augment(cli: &Cli, snr: &[f64], input: &Path, output: &Path, out: &mut dyn Write) -> Result<()> {
    let ts = load_trialset(input)?;
    let (aug, stats) = augment_awgn(&ts, snr, cli.seed.unwrap_or(0))?;
    emit(
        out,
        &format!(
            "trials {} -> {}\nzero-power channels {}\n",
            ts.n_trials(),
            aug.n_trials(),
            stats.zero_power_channels
        ),
    )?;
    if !cli.dry_run {
        save_trialset(&aug, output)?;
    }
    Ok(())
}

/// Everything a training run needs, validated before any work starts.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub data: TrialSet,
    pub montage: Montage,
}

pub fn prepare(cfg: &ExperimentConfig, data_override: Option<&Path>) -> Result<Prepared> {
    let manifest = data_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.data.manifest.clone())
        .ok_or_else(|| Error::Config("no dataset: pass --data or set [data] manifest".into()))?;
    let mut config = cfg.clone();
    config.data.manifest = Some(manifest.clone());
    let base = manifest.parent();
    // The montage is resolved before the payload is read so that a bad
    // reference fails fast.
    let montage = match &cfg.data.montage {
        Some(spec) => resolve_montage(spec, None)?,
        None => {
            let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
            let m: crate::pipeline::Manifest =
                serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", manifest.display())))?;
            resolve_montage(&m.montage, base)?
        }
    };
    let data = load_trialset(&manifest)?;
    if montage.len() != data.n_channels {
        return Err(Error::Format(format!(
            "montage has {} electrodes but the data has {} channels",
            montage.len(),
            data.n_channels
        )));
    }
    Ok(Prepared { config, data, montage })
}

/// One seeded run: split, augment the training part, train, and write the
/// run directory unless `out_dir` is `None`.
pub fn run_experiment(
    prep: &Prepared,
    seed: u64,
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&crate::trainer::EpochRecord),
) -> Result<RunReport> {
    let mut cfg = prep.config.clone();
    cfg.train.seed = seed;
    let (train_set, val_set) = split(&prep.data, seed)?;
    let (train_set, _) = augment_awgn(&train_set, &cfg.augment.snr_db, seed)?;
    let net = Network::from_config(&cfg, &prep.montage, prep.data.n_samples, prep.data.n_classes, seed)?;
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        write_file(&dir.join("config.json"), &cfg.to_json())?;
    }
    let outcome = train(&net, &train_set, &val_set, &TrainConfig::from(&cfg.train), out_dir, &mut progress)?;
    let mut report = outcome.report;
    report.config_hash = cfg.cell_hash();
    if let Some(dir) = out_dir {
        write_file(&dir.join("report.json"), &to_json(&report))?;
    }
    Ok(report)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn cmd_train(cli: &Cli, config: &Path, data: Option<&Path>, runs: Option<usize>, out: &mut dyn Write) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    if let Some(r) = runs {
        if r == 0 {
            return Err(Error::Usage("--runs must be positive".into()));
        }
        cfg.train.runs = r;
    }
    let prep = prepare(&cfg, data)?;
    let graph = prep.montage.build_graph(&cfg.edge_policy()?)?;
    if cli.dry_run {
        let net = Network::from_config(&prep.config, &prep.montage, prep.data.n_samples, prep.data.n_classes, 0)?;
        emit(out, &graph_summary(&graph))?;
        emit(
            out,
            &format!(
                "trials {}\nclasses {}\nparameters {}\n",
                prep.data.n_trials(),
                prep.data.n_classes,
                net.param_count()
            ),
        )?;
        return Ok(());
    }
    let root = cli
        .out
        .clone()
        .ok_or_else(|| Error::Usage("train needs --out <run directory>".into()))?;
    let base = cfg.train.seed;
    for i in 0..cfg.train.runs {
        let seed = base + i as u64;
        let dir = if cfg.train.runs == 1 { root.clone() } else { root.join(format!("run-{i}")) };
        let report = run_experiment(&prep, seed, Some(&dir), |_| {})?;
        emit(
            out,
            &format!(
                "{}: seed {seed} best val acc {:.4} at epoch {} ({} params)\n",
                dir.display(),
                report.best_val_acc,
                report.best_epoch,
                report.param_count
            ),
        )?;
    }
    Ok(())
}

/// Rebuilds a run's network from its `config.json` and loads `best.ckpt`.
pub fn load_run(dir: &Path, data: &TrialSet) -> Result<(ExperimentConfig, Network)> {
    let path = dir.join("config.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let montage = match &cfg.data.montage {
        Some(spec) => resolve_montage(spec, None)?,
        None => data.resolve_montage(cfg.data.manifest.as_deref().and_then(Path::parent))?,
    };
    let net = Network::from_config(&cfg, &montage, data.n_samples, data.n_classes, cfg.train.seed)?;
    checkpoint::load_into(&dir.join("best.ckpt"), &net.params())?;
    net.set_training(false);
    Ok((cfg, net))
}

fn cmd_eval(run: &Path, data: &Path, which: &str, out: &mut dyn Write) -> Result<()> {
    let ts = load_trialset(data)?;
    let (cfg, net) = load_run(run, &ts)?;
    let subset = match which {
        "all" => ts,
        "train" => split(&ts, cfg.train.seed)?.0,
        "val" => split(&ts, cfg.train.seed)?.1,
        other => return Err(Error::Usage(format!("unknown split `{other}`; use all, train or val"))),
    };
    let e = evaluate(&net, &subset)?;
    let mut s = format!("trials {}\naccuracy {:.6}\nconfusion (rows = true class):\n", subset.n_trials(), e.accuracy);
    for row in &e.confusion {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    emit(out, &s)
}

type RunRecord = (RunReport, ExperimentConfig);

fn read_report(dir: &Path) -> Result<RunRecord> {
    let rp = dir.join("report.json");
    let text = std::fs::read_to_string(&rp).map_err(|e| Error::io(&rp, e))?;
    let report: RunReport = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", rp.display())))?;
    let cp = dir.join("config.json");
    let text = std::fs::read_to_string(&cp).map_err(|e| Error::io(&cp, e))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", cp.display())))?;
    Ok((report, cfg))
}

/// Runs directly in `dir`, or in its immediate subdirectories.
fn collect_runs(dir: &Path) -> Result<Vec<RunRecord>> {
    if dir.join("report.json").is_file() {
        return Ok(vec![read_report(dir)?]);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut subdirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("report.json").is_file())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::Format(format!("{}: no runs found", dir.display())));
    }
    subdirs.iter().map(|d| read_report(d)).collect()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn format_acc(percentages: &[f64]) -> String {
    let (m, s) = mean_std(percentages);
    format!("{m:.2} ± {s:.2}")
}

/// One row per configuration. Each argument is a run directory or a cell
/// directory holding runs; a cell must not mix configurations. Runs with the
/// same config hash are pooled into one row, in order of first appearance.
pub fn cmd_table(dirs: &[PathBuf], csv: bool) -> Result<String> {
    if dirs.is_empty() {
        return Err(Error::Usage("table needs at least one run directory".into()));
    }
    let header = ["cell", "config", "conv", "pool", "edges", "shift", "runs", "acc", "params"];
    let mut groups: Vec<(String, String, Vec<RunRecord>)> = Vec::new();
    for dir in dirs {
        let runs = collect_runs(dir)?;
        let hash = runs[0].0.config_hash.clone();
        if runs.iter().any(|(r, _)| r.config_hash != hash) {
            return Err(Error::Config(format!("{}: runs come from different configurations", dir.display())));
        }
        match groups.iter_mut().find(|g| g.1 == hash) {
            Some(g) => g.2.extend(runs),
            None => groups.push((dir.display().to_string(), hash, runs)),
        }
    }
    let rows: Vec<Vec<String>> = groups
        .iter()
        .map(|(label, hash, runs)| {
            let cfg = &runs[0].1;
            let accs: Vec<f64> = runs.iter().map(|(r, _)| 100.0 * r.best_val_acc).collect();
            vec![
                label.clone(),
                hash.clone(),
                format!("{:?}", cfg.model.conv).to_lowercase(),
                format!("{:?}", cfg.model.pool).to_lowercase(),
                cfg.graph.edge_policy.clone(),
                cfg.graph.shift_operator.to_string(),
                runs.len().to_string(),
                format_acc(&accs),
                runs[0].0.param_count.to_string(),
            ]
        })
        .collect();
    let mut s = String::new();
    if csv {
        s.push_str(&header.join(","));
        s.push('\n');
        for r in &rows {
            let quoted: Vec<String> = r
                .iter()
                .map(|c| if c.contains(',') { format!("\"{c}\"") } else { c.clone() })
                .collect();
            s.push_str(&quoted.join(","));
            s.push('\n');
        }
        return Ok(s);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).chain([header[i].len()]).max().unwrap())
        .collect();
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    s.push_str(&line(header.to_vec()));
    for r in &rows {
        s.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    Ok(s)
}

/// Config matching the synthetic fixture: GIN0, kNNG k=1, sum readout.
pub fn fixture_config(manifest: &str) -> String {
    format!(
        r#"[data]
manifest = "{manifest}"

[graph]
edge_policy = "knng:k=1"
shift_operator = "adjacency"

[model]
conv = "gin"
depth = 2
hidden = 32
pool = "sum"

[augment]
snr_db = []

[train]
batch_size = 256
epochs = 100
lr = 0.001
lr_halving_period = 50
seed = 0
runs = 1
"#
    )
}

fn cmd_fixtures(cli: &Cli, spec: &FixtureSpec, out: &mut dyn Write) -> Result<()> {
    let dir = cli
        .out
        .clone()
        .ok_or_else(|| Error::Usage("fixtures needs --out <directory>".into()))?;
    let ts = synthetic_fixture(spec, cli.seed.unwrap_or(0))?;
    let manifest = fixture_path(&dir);
    emit(
        out,
        &format!(
            "{}: {} trials, {} channels, {} samples, {} classes\n",
            manifest.display(),
            ts.n_trials(),
            ts.n_channels,
            ts.n_samples,
            ts.n_classes
        ),
    )?;
    if cli.dry_run {
        return Ok(());
    }
    create_dir(&dir)?;
    save_trialset(&ts, &manifest)?;
    write_file(&dir.join("synthetic.toml"), &fixture_config("synthetic.json"))
}
