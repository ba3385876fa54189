//! `cyclecast` — trace generation, teacher simulation, training, evaluation,
//! ranking, and deployment planning from one binary.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use config::{RunConfig, CONFIG_KEY_HELP};
use cyclecast_core::featurize::build_windows;
use cyclecast_core::nn::{
    load_checkpoint, save_checkpoint, BlobDtype, ModelParameters,
};
use cyclecast_core::seeds::{derive_seed, SeedRole};
use cyclecast_core::sim::{simulate, MicroarchConfig};
use cyclecast_core::system::{sampling_plan, Rational};
use cyclecast_core::trace::{
    epoch_signature, epoch_slice, gt_histogram, read_trace, write_trace, InstructionRecord,
};
use cyclecast_core::train::{batch_windows, evaluate, train, MetricsReport};

#[derive(Debug)]
pub enum CliError {
    /// Exit code 2: bad arguments or config.
    BadArgs(String),
    /// Exit code 3: unreadable or inconsistent data.
    Data(String),
    /// Exit code 4: numerical failure.
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::BadArgs(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::BadArgs(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "cyclecast",
    about = "Instruction-latency prediction pipeline",
    after_long_help = CONFIG_KEY_HELP
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; module seeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic unlabeled instruction trace.
    Gen,
    /// Label a trace with ground-truth latencies from the teacher simulator.
    Simulate {
        /// Input trace file.
        #[arg(long)]
        trace: PathBuf,
        /// Processor configuration name (overrides sim.preset).
        #[arg(long)]
        uarch: Option<String>,
    },
    /// Train a model on a labeled trace.
    Train {
        #[arg(long)]
        trace: PathBuf,
        /// Store weights as 16-bit floats.
        #[arg(long)]
        fp16: bool,
    },
    /// Evaluate a checkpoint on a labeled trace.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Cross-evaluate checkpoints against labeled traces (model x config).
    Matrix {
        /// Directory of model_<config>.nsck checkpoints.
        #[arg(long)]
        models: PathBuf,
        /// Directory of labeled_<config>.nstr traces.
        #[arg(long)]
        traces: PathBuf,
    },
    /// Rank processor configurations per instruction and score against
    /// ground truth.
    Rank {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        traces: PathBuf,
    },
    /// Print the sampling plan for a deployment.
    Plan {
        /// Engine preset (overrides deploy.preset).
        #[arg(long)]
        preset: Option<String>,
    },
    /// Print one epoch-signature hex line per epoch.
    Sign {
        #[arg(long)]
        trace: PathBuf,
        /// Override the epoch length stored in the trace header.
        #[arg(long)]
        epoch_len: Option<u32>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::BadArgs(format!("cannot create {}: {e}", cli.out.display())))?;

    match &cli.command {
        Command::Gen => cmd_gen(&config, &cli),
        Command::Simulate { trace, uarch } => cmd_simulate(&config, &cli, trace, uarch.as_deref()),
        Command::Train { trace, fp16 } => cmd_train(&config, &cli, trace, *fp16),
        Command::Eval { checkpoint, trace } => cmd_eval(&config, &cli, checkpoint, trace),
        Command::Matrix { models, traces } => cmd_matrix(&config, &cli, models, traces),
        Command::Rank { models, traces } => cmd_rank(&config, &cli, models, traces),
        Command::Plan { preset } => cmd_plan(&config, &cli, preset.as_deref()),
        Command::Sign { trace, epoch_len } => cmd_sign(trace, *epoch_len),
    }
}

fn guard_output(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::BadArgs(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn read_trace_file(path: &Path) -> Result<(bool, u32, Vec<InstructionRecord>), CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    read_trace(&mut std::io::BufReader::new(file))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_checkpoint_file(path: &Path) -> Result<ModelParameters<f32>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    load_checkpoint(std::io::BufReader::new(file))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_csv(path: &Path, force: bool, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    guard_output(path, force)?;
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    w.write_record(header)
        .and_then(|()| rows.iter().try_for_each(|r| w.write_record(r)))
        .and_then(|()| w.flush().map_err(Into::into))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.9}")
}

fn metrics_row(label: &str, m: &MetricsReport) -> Vec<String> {
    vec![
        label.to_string(),
        fmt_f64(m.mae),
        fmt_f64(m.rmse),
        fmt_f64(m.rae),
        fmt_f64(m.acc_exact),
        fmt_f64(m.acc_pm1),
        fmt_f64(m.acc_pm2),
        fmt_f64(m.rel5),
        m.n.to_string(),
    ]
}

const METRICS_HEADER: [&str; 9] =
    ["label", "mae", "rmse", "rae", "acc_round", "acc_pm1", "acc_pm2", "rel5pct", "n"];

fn cmd_gen(config: &RunConfig, cli: &Cli) -> Result<(), CliError> {
    let seed = derive_seed(config.seed, SeedRole::Workload);
    let spec = config.workload_spec(seed)?;
    let records = cyclecast_core::sim::gen_workload(&spec);
    let path = cli.out.join(&config.paths.trace);
    guard_output(&path, cli.force)?;
    let mut file = std::fs::File::create(&path)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))?;
    let epoch_len = config.deploy.epoch_len.min(u32::MAX as u64) as u32;
    let n = write_trace(&records, false, epoch_len, &mut file)
        .map_err(|e| CliError::Data(e.to_string()))?;
    println!("wrote {} ({n} instructions, kind {})", path.display(), spec.kind.name());
    Ok(())
}

fn cmd_simulate(
    config: &RunConfig,
    cli: &Cli,
    trace: &Path,
    uarch: Option<&str>,
) -> Result<(), CliError> {
    let cfg: MicroarchConfig = config.microarch(uarch)?;
    let (_, epoch_len, records) = read_trace_file(trace)?;
    let labeled = simulate(&records, &cfg);
    let path = cli.out.join(format!("labeled_{}.nstr", cfg.name));
    guard_output(&path, cli.force)?;
    let mut file = std::fs::File::create(&path)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))?;
    write_trace(&labeled, true, epoch_len, &mut file)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let hist = gt_histogram(&labeled).map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "wrote {} ({} instructions, {:.1}% in bin 0, {:.1}% in tail)",
        path.display(),
        labeled.len(),
        100.0 * hist.zero_fraction(),
        100.0 * hist.tail_fraction()
    );
    Ok(())
}

fn cmd_train(config: &RunConfig, cli: &Cli, trace: &Path, fp16: bool) -> Result<(), CliError> {
    let (labeled, _, records) = read_trace_file(trace)?;
    if !labeled {
        return Err(CliError::Data(format!("{} is not labeled", trace.display())));
    }
    let (n, r, stride) = config.window_geometry()?;
    let model_cfg = config.model_config()?;
    let windows = build_windows(&records, n, r, stride, model_cfg.tau)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let outcome = train(&model_cfg, &config.train_spec(), &windows, config.seed)
        .map_err(|e| CliError::Numeric(e.to_string()))?;

    let ckpt_path = cli.out.join(&config.paths.checkpoint);
    guard_output(&ckpt_path, cli.force)?;
    let file = std::fs::File::create(&ckpt_path)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", ckpt_path.display())))?;
    let dtype = if fp16 { BlobDtype::F16 } else { BlobDtype::F32 };
    save_checkpoint(&outcome.params, dtype, std::io::BufWriter::new(file))
        .map_err(|e| CliError::Data(e.to_string()))?;

    let rows: Vec<Vec<String>> = outcome
        .history
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                fmt_f64(e.train_loss),
                fmt_f64(e.train_regression),
                fmt_f64(e.train_classification),
                fmt_f64(e.val_mae),
            ]
        })
        .collect();
    let hist_path = cli.out.join(&config.paths.history);
    write_csv(
        &hist_path,
        cli.force,
        &["epoch", "train_loss", "train_regression", "train_classification", "val_mae"],
        &rows,
    )?;
    println!(
        "wrote {} and {} (best epoch {}, holdout mae {:.4})",
        ckpt_path.display(),
        hist_path.display(),
        outcome.best_epoch,
        outcome.holdout.mae
    );
    Ok(())
}

fn cmd_eval(config: &RunConfig, cli: &Cli, checkpoint: &Path, trace: &Path) -> Result<(), CliError> {
    let params = load_checkpoint_file(checkpoint)?;
    let (labeled, _, records) = read_trace_file(trace)?;
    if !labeled {
        return Err(CliError::Data(format!("{} is not labeled", trace.display())));
    }
    let (n, r, stride) = config.window_geometry()?;
    let windows = build_windows(&records, n, r, stride, params.config.tau)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let report = evaluate(&params, &windows, config.train.batch_windows)
        .map_err(|e| CliError::Numeric(e.to_string()))?;

    let metrics_path = cli.out.join(&config.paths.metrics);
    write_csv(&metrics_path, cli.force, &METRICS_HEADER, &[metrics_row("eval", &report)])?;

    let hist = gt_histogram(&records).map_err(|e| CliError::Data(e.to_string()))?;
    let hist_rows: Vec<Vec<String>> = hist
        .bins
        .iter()
        .enumerate()
        .map(|(i, &frac)| {
            let label = if i < 11 { i.to_string() } else { "tail".to_string() };
            vec![label, fmt_f64(frac)]
        })
        .collect();
    let hist_path = cli.out.join(&config.paths.histogram);
    write_csv(&hist_path, cli.force, &["gt_cycles", "fraction"], &hist_rows)?;
    println!(
        "wrote {} and {} (mae {:.4}, acc_pm1 {:.4})",
        metrics_path.display(),
        hist_path.display(),
        report.mae,
        report.acc_pm1
    );
    Ok(())
}

/// Finds `model_<name>.nsck` / `labeled_<name>.nstr` pairs present in both
/// directories, sorted by name for deterministic output.
fn find_pairs(models: &Path, traces: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, CliError> {
    let list = |dir: &Path, prefix: &str, ext: &str| -> Result<Vec<(String, PathBuf)>, CliError> {
        let mut out = Vec::new();
        let entries = std::fs::read_dir(dir)
            .map_err(|e| CliError::Data(format!("cannot list {}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| CliError::Data(e.to_string()))?.path();
            let Some(fname) = path.file_name().and_then(|s| s.to_str()) else { continue };
            if let Some(stem) = fname.strip_prefix(prefix).and_then(|s| s.strip_suffix(ext)) {
                out.push((stem.to_string(), path.clone()));
            }
        }
        out.sort();
        Ok(out)
    };
    let models = list(models, "model_", ".nsck")?;
    let traces = list(traces, "labeled_", ".nstr")?;
    let mut pairs = Vec::new();
    for (name, model_path) in models {
        if let Some((_, trace_path)) = traces.iter().find(|(n, _)| *n == name) {
            pairs.push((name, model_path, trace_path.clone()));
        }
    }
    Ok(pairs)
}

fn cmd_matrix(config: &RunConfig, cli: &Cli, models: &Path, traces: &Path) -> Result<(), CliError> {
    let pairs = find_pairs(models, traces)?;
    if pairs.is_empty() {
        return Err(CliError::Data("no model/trace pairs found".into()));
    }
    let (n, r, stride) = config.window_geometry()?;
    let mut rows = Vec::new();
    for (model_name, model_path, _) in &pairs {
        let params = load_checkpoint_file(model_path)?;
        for (trace_name, _, trace_path) in &pairs {
            let (_, _, records) = read_trace_file(trace_path)?;
            let windows = build_windows(&records, n, r, stride, params.config.tau)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let report = evaluate(&params, &windows, config.train.batch_windows)
                .map_err(|e| CliError::Numeric(e.to_string()))?;
            let mut row = metrics_row(&format!("{model_name}->{trace_name}"), &report);
            row.insert(1, model_name.clone());
            row.insert(2, trace_name.clone());
            rows.push(row);
        }
    }
    let mut header = vec!["label", "train_config", "eval_config"];
    header.extend_from_slice(&METRICS_HEADER[1..]);
    let path = cli.out.join(&config.paths.matrix);
    write_csv(&path, cli.force, &header, &rows)?;
    println!("wrote {} ({} cells)", path.display(), rows.len());
    Ok(())
}

/// Predicted and ground-truth latencies over the tiled target positions of a
/// labeled trace, aligned by instruction index.
fn predict_aligned(
    params: &ModelParameters<f32>,
    records: &[InstructionRecord],
    n: usize,
    r: usize,
    batch: usize,
) -> Result<(Vec<u32>, Vec<u32>), CliError> {
    let windows = build_windows(records, n, r, r, params.config.tau)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let mut y_hat = Vec::new();
    let mut y = Vec::new();
    let refs: Vec<&cyclecast_core::FeatureWindow> = windows.iter().collect();
    for chunk in refs.chunks(batch.max(1)) {
        let tb = batch_windows(chunk, &params.norm);
        let (pred, _) = cyclecast_core::nn::forward(params, tb.inputs, tb.left_context, tb.r, None, false)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        for row in 0..chunk.len() {
            for k in 0..tb.r {
                y_hat.push(pred.y_hat[(row, k)]);
                y.push(tb.raw_y[(row, k)]);
            }
        }
    }
    Ok((y_hat, y))
}

fn cmd_rank(config: &RunConfig, cli: &Cli, models: &Path, traces: &Path) -> Result<(), CliError> {
    let pairs = find_pairs(models, traces)?;
    if pairs.len() < 2 {
        return Err(CliError::Data(format!(
            "ranking needs at least 2 model/trace pairs, found {}",
            pairs.len()
        )));
    }
    let (n, r, _) = config.window_geometry()?;
    let mut yhat_all = Vec::new();
    let mut y_all = Vec::new();
    let mut names = Vec::new();
    for (name, model_path, trace_path) in &pairs {
        let params = load_checkpoint_file(model_path)?;
        let (_, _, records) = read_trace_file(trace_path)?;
        let (y_hat, y) =
            predict_aligned(&params, &records, n, r, config.train.batch_windows)?;
        yhat_all.push(y_hat);
        y_all.push(y);
        names.push(name.clone());
    }
    let len = y_all.iter().map(Vec::len).min().unwrap_or(0);
    for seq in yhat_all.iter_mut().chain(y_all.iter_mut()) {
        seq.truncate(len);
    }

    let stats = cyclecast_core::downstream::rank_configs(&yhat_all, &y_all)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    let rank_path = cli.out.join(&config.paths.ranking);
    write_csv(
        &rank_path,
        cli.force,
        &["configs", "kendall_tau_mean", "full_match_rate", "best_match_rate", "n", "n_tau_excluded"],
        &[vec![
            names.join("|"),
            fmt_f64(stats.kendall_tau_mean),
            fmt_f64(stats.full_match_rate),
            fmt_f64(stats.best_match_rate),
            stats.n.to_string(),
            stats.n_tau_excluded.to_string(),
        ]],
    )?;

    let mut pair_rows = Vec::new();
    for a in 0..names.len() {
        for b in (a + 1)..names.len() {
            let s = cyclecast_core::downstream::pairwise_compare(
                &yhat_all[a],
                &yhat_all[b],
                &y_all[a],
                &y_all[b],
            )
            .map_err(|e| CliError::Numeric(e.to_string()))?;
            pair_rows.push(vec![
                names[a].clone(),
                names[b].clone(),
                fmt_f64(s.match_rate),
                fmt_f64(s.gt_better),
                fmt_f64(s.non_zero),
                s.n.to_string(),
            ]);
        }
    }
    let pair_path = cli.out.join(&config.paths.pairwise);
    write_csv(
        &pair_path,
        cli.force,
        &["config_a", "config_b", "match_rate", "gt_better", "non_zero", "n"],
        &pair_rows,
    )?;
    println!(
        "wrote {} and {} (best-match {:.4} over {} instructions)",
        rank_path.display(),
        pair_path.display(),
        stats.best_match_rate,
        stats.n
    );
    Ok(())
}

fn rational_cols(x: Rational) -> [String; 2] {
    use num_traits::ToPrimitive;
    [format!("{}/{}", x.numer(), x.denom()), fmt_f64(x.to_f64().unwrap_or(f64::NAN))]
}

fn cmd_plan(config: &RunConfig, cli: &Cli, preset: Option<&str>) -> Result<(), CliError> {
    let params = config.deployment(preset)?;
    let plan = sampling_plan(&params).map_err(|e| CliError::Numeric(e.to_string()))?;
    let rows: Vec<(&str, Rational)> = vec![
        ("seconds_per_epoch_inference", plan.seconds_per_epoch_inference),
        ("epoch_period_seconds", plan.epoch_period_seconds),
        ("sampling_ratio", plan.sampling_ratio),
        ("instructions_between_samples", plan.instructions_between_samples),
    ];
    println!("quantity,exact,approx");
    for (name, value) in &rows {
        let [exact, approx] = rational_cols(*value);
        println!("{name},{exact},{approx}");
    }
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, value)| {
            let [exact, approx] = rational_cols(*value);
            vec![name.to_string(), exact, approx]
        })
        .collect();
    let path = cli.out.join(&config.paths.plan);
    write_csv(&path, cli.force, &["quantity", "exact", "approx"], &csv_rows)
}

fn cmd_sign(trace: &Path, epoch_len: Option<u32>) -> Result<(), CliError> {
    let (_, header_epoch_len, records) = read_trace_file(trace)?;
    let epoch_len = epoch_len.unwrap_or(header_epoch_len);
    if epoch_len == 0 {
        return Err(CliError::BadArgs("epoch length must be positive".into()));
    }
    for epoch in epoch_slice(&records, epoch_len as usize) {
        println!("{}", epoch_signature(epoch).to_hex());
    }
    Ok(())
}
