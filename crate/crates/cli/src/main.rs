//! `icsplit` — one-class classification experiments via intra-class
//! splitting: train/evaluate models, export splits, sweep the atypical
//! ratio, and render reports.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use icsplit_core::config::{DatasetKind, ExperimentConfig, Mode};
use icsplit_core::error::{Error, Result};
use icsplit_core::harness::{
    emit_report, format_mean_std, load_protocol, parse_report_csv, run_experiment,
    run_ratio_sweep, score_auc, ReportFormat,
};
use icsplit_core::oneclass::{load_checkpoint, save_checkpoint, train, OneClassModel, TrainState};
use icsplit_core::split::{split, train_split_autoencoder};

#[derive(Parser)]
#[command(
    name = "icsplit",
    version,
    about = "One-class classification with intra-class splitting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Base preset: desk (small, fast) or paper (full-scale).
    #[arg(long, default_value = "desk")]
    preset: String,
    /// key=value config file layered over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset: synthetic, mnist, fashion, or cifar10.
    #[arg(long)]
    dataset: Option<String>,
    /// Directory with dataset files (mnist/fashion/cifar10).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Class treated as normal (one-vs-rest).
    #[arg(long)]
    normal_class: Option<u8>,
    /// Percentage of training samples split off as atypical.
    #[arg(long)]
    rho: Option<f64>,
    /// Main training iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Comma-separated seed list, e.g. 1,2,3.
    #[arg(long)]
    seed: Option<String>,
    /// Variant: ours, naive_nn, nn_with_ics, or recon_baseline.
    #[arg(long)]
    mode: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonOpts {
    fn build(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::preset(&self.preset)?;
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        self.apply_flags(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Command-line flags override both preset and config file.
    fn apply_flags(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(v) = &self.dataset {
            cfg.dataset = DatasetKind::from_str(v)?;
        }
        if let Some(v) = &self.data_dir {
            cfg.data_dir = Some(v.clone());
        }
        if let Some(v) = self.normal_class {
            cfg.normal_class = v;
        }
        if let Some(v) = self.rho {
            cfg.rho = v;
        }
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = self.batch {
            cfg.batch = v;
        }
        if let Some(v) = &self.seed {
            cfg.apply_kv("seeds", v)?;
        }
        if let Some(v) = &self.mode {
            cfg.mode = Mode::from_str(v)?;
        }
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the splitting autoencoder and export the typical/atypical
    /// partition of the training set (first seed).
    Split(CommonOpts),
    /// Train one model on the first seed and write a checkpoint.
    Train {
        #[command(flatten)]
        opts: CommonOpts,
        /// Continue from a checkpoint directory written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score the test set with a checkpointed model and report its AUC.
    Eval {
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory override (defaults to the checkpointed one).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline over all seeds: split, train, evaluate, report.
    Run(CommonOpts),
    /// Run the full pipeline once per rho value and tabulate AUC over rho.
    Sweep {
        #[command(flatten)]
        opts: CommonOpts,
        /// Comma-separated rho values (at least two), e.g. 1,10,50.
        #[arg(long, value_delimiter = ',', required = true)]
        rhos: Vec<f64>,
    },
    /// Render the text table for an existing report CSV.
    Report {
        /// CSV produced by `run`.
        #[arg(long)]
        input: PathBuf,
    },
}

fn write_out(dir: &PathBuf, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

fn cmd_split(opts: &CommonOpts) -> Result<()> {
    let cfg = opts.build()?;
    let seed = cfg.seeds[0];
    let protocol = load_protocol(&cfg, seed)?;
    let ae = train_split_autoencoder(&protocol.train, &cfg, seed)?;
    let result = split(&protocol.train, &ae, cfg.rho)?;
    let path = write_out(&cfg.out_dir, "split.csv", &result.to_csv())?;
    println!(
        "split: {} samples -> {} typical, {} atypical (rho={}); written to {}",
        protocol.train.n(),
        result.typical_idx.len(),
        result.atypical_idx.len(),
        cfg.rho,
        path.display()
    );
    Ok(())
}

fn cmd_train(opts: &CommonOpts, resume: Option<&PathBuf>) -> Result<()> {
    let (mut model, mut state, cfg) = match resume {
        Some(dir) => {
            let (model, state, mut cfg) = load_checkpoint(dir)?;
            // Flags may extend the schedule or redirect output; everything
            // else stays as checkpointed.
            if let Some(v) = opts.iterations {
                cfg.iterations = v;
            }
            if let Some(v) = &opts.out {
                cfg.out_dir = v.clone();
            }
            (model, state, cfg)
        }
        None => {
            let cfg = opts.build()?;
            let seed = cfg.seeds[0];
            let protocol = load_protocol(&cfg, seed)?;
            let input_shape = vec![protocol.train.c(), protocol.train.h(), protocol.train.w()];
            let mut model = OneClassModel::new(&input_shape, cfg.latent_dim, cfg.backbone_width)?;
            model.init(seed);
            let state = TrainState::new(&model, seed);
            (model, state, cfg)
        }
    };
    let seed = cfg.seeds[0];
    let protocol = load_protocol(&cfg, seed)?;
    let ics = match cfg.mode {
        Mode::Ours | Mode::NnWithIcs => {
            let ae = train_split_autoencoder(&protocol.train, &cfg, seed)?;
            Some(split(&protocol.train, &ae, cfg.rho)?)
        }
        _ => None,
    };
    train(
        &mut model,
        &protocol.train,
        ics.as_ref(),
        &cfg,
        &mut state,
        cfg.iterations as u64,
    )?;
    let ckpt_dir = cfg.out_dir.join("checkpoint");
    save_checkpoint(&ckpt_dir, &model, &state, &cfg)?;
    println!(
        "trained mode={} seed={seed} to iteration {}; checkpoint at {}",
        cfg.mode,
        state.iteration,
        ckpt_dir.display()
    );
    Ok(())
}

fn cmd_eval(checkpoint: &Path, out: Option<&PathBuf>) -> Result<()> {
    let (model, _state, mut cfg) = load_checkpoint(checkpoint)?;
    if let Some(dir) = out {
        cfg.out_dir = dir.clone();
    }
    let seed = cfg.seeds[0];
    let protocol = load_protocol(&cfg, seed)?;
    let scores = model.score(&protocol.test)?;
    let auc = score_auc(&protocol, &scores)?;
    let mut csv = String::from("index,role,score\n");
    for (i, score) in scores.iter().enumerate() {
        csv.push_str(&format!(
            "{i},{},{score}\n",
            if protocol.test.roles()[i] { "abnormal" } else { "normal" }
        ));
    }
    let path = write_out(&cfg.out_dir, "eval.csv", &csv)?;
    println!(
        "eval: mode={} dataset={} seed={seed} auc={auc}; scores written to {}",
        cfg.mode,
        cfg.dataset,
        path.display()
    );
    Ok(())
}

fn cmd_run(opts: &CommonOpts) -> Result<()> {
    let cfg = opts.build()?;
    let report = run_experiment(&cfg)?;
    let csv = emit_report(&report, ReportFormat::Csv, &cfg.out_dir, "report")?;
    emit_report(&report, ReportFormat::TextTable, &cfg.out_dir, "report")?;
    print!("{}", report.to_text_table());
    println!("csv: {}", csv.display());
    Ok(())
}

fn cmd_sweep(opts: &CommonOpts, rhos: &[f64]) -> Result<()> {
    let cfg = opts.build()?;
    let sweep = run_ratio_sweep(&cfg, rhos)?;
    let path = write_out(&cfg.out_dir, "sweep.csv", &sweep.to_csv())?;
    for run in &sweep.runs {
        emit_report(
            run,
            ReportFormat::Csv,
            &cfg.out_dir,
            &format!("rho{}", run.config.rho),
        )?;
        println!(
            "rho={:<6} auc={}",
            run.config.rho,
            format_mean_std(run.mean_auc, run.std_auc)
        );
    }
    println!("sweep csv: {}", path.display());
    Ok(())
}

fn cmd_report(input: &PathBuf) -> Result<()> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| Error::io(input.display().to_string(), e))?;
    let rows = parse_report_csv(&text)?;
    let seed_rows: Vec<&(String, f64, f64)> = rows
        .iter()
        .filter(|(seed, _, _)| seed != "mean" && seed != "std")
        .collect();
    if seed_rows.is_empty() {
        return Err(Error::data("report has no per-seed rows".to_string()));
    }
    let mean = seed_rows.iter().map(|r| r.1).sum::<f64>() / seed_rows.len() as f64;
    let std = if seed_rows.len() < 2 {
        0.0
    } else {
        (seed_rows
            .iter()
            .map(|r| (r.1 - mean) * (r.1 - mean))
            .sum::<f64>()
            / (seed_rows.len() - 1) as f64)
            .sqrt()
    };
    println!("seeds: {}", seed_rows.len());
    println!("auc: {}", format_mean_std(mean, std));
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Split(opts) => cmd_split(opts),
        Command::Train { opts, resume } => cmd_train(opts, resume.as_ref()),
        Command::Eval { checkpoint, out } => cmd_eval(checkpoint, out.as_ref()),
        Command::Run(opts) => cmd_run(opts),
        Command::Sweep { opts, rhos } => cmd_sweep(opts, rhos),
        Command::Report { input } => cmd_report(input),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
