//! Experiment orchestration: build the protocol, train the configured mode
//! per seed, score the test set, aggregate AUCs, and emit CSV / text-table
//! reports.

use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::config::{derive_seed, DatasetKind, ExperimentConfig, Mode};
use crate::data::{
    load_cifar10_dir, load_mnist_dir, make_protocol, make_synthetic, ProtocolSplit, SyntheticKind,
};
use crate::error::{Error, Result};
use crate::metrics::auc;
use crate::oneclass::{train, OneClassModel, TrainState};
use crate::split::{recon_error_score, split, train_split_autoencoder};

/// One seed's result.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub auc: f64,
    pub wall_s: f64,
}

/// Aggregated results of one experiment (one mode, one dataset, one rho,
/// several seeds).
#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub per_seed: Vec<SeedOutcome>,
    pub mean_auc: f64,
    pub std_auc: f64,
    /// True when only one seed ran, in which case `std_auc` is reported as 0.
    pub single_seed: bool,
    /// SHA-256 over every protocol's images, labels, and roles (all seeds).
    pub input_hash: String,
    pub wall_s: f64,
}

/// Sample standard deviation (n−1); 0 for fewer than two values.
fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1) as f64;
    var.sqrt()
}

fn hash_protocol(hasher: &mut Sha256, protocol: &ProtocolSplit) {
    for ds in [&protocol.train, &protocol.test] {
        let mut bytes = Vec::with_capacity(ds.images().len() * 4);
        for v in ds.images().as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        hasher.update(&bytes);
        hasher.update(ds.class_labels());
        let roles: Vec<u8> = ds.roles().iter().map(|&r| r as u8).collect();
        hasher.update(&roles);
    }
}

/// Assemble the train/test protocol for one seed.
pub fn load_protocol(config: &ExperimentConfig, seed: u64) -> Result<ProtocolSplit> {
    match config.dataset {
        DatasetKind::Synthetic => make_synthetic(
            SyntheticKind::BlobsVsRings,
            config.train_size,
            config.test_normal,
            config.test_abnormal,
            config.image_size,
            derive_seed("synthetic-data", seed),
        ),
        DatasetKind::Mnist | DatasetKind::Fashion => {
            let dir = config.data_dir.as_ref().ok_or_else(|| {
                Error::config(format!("dataset '{}' requires data_dir", config.dataset))
            })?;
            let (train_part, test_part) = load_mnist_dir(dir)?;
            make_protocol(
                &train_part,
                &test_part,
                config.normal_class,
                config.test_normal,
                config.test_abnormal,
                derive_seed("protocol", seed),
            )
        }
        DatasetKind::Cifar10 => {
            let dir = config.data_dir.as_ref().ok_or_else(|| {
                Error::config(format!("dataset '{}' requires data_dir", config.dataset))
            })?;
            let (train_part, test_part) = load_cifar10_dir(dir)?;
            make_protocol(
                &train_part,
                &test_part,
                config.normal_class,
                config.test_normal,
                config.test_abnormal,
                derive_seed("protocol", seed),
            )
        }
    }
}

/// Abnormality scores for the protocol's test set under the configured mode,
/// training everything the mode needs. Deterministic per seed.
pub fn run_seed(config: &ExperimentConfig, protocol: &ProtocolSplit, seed: u64) -> Result<Vec<f64>> {
    match config.mode {
        Mode::ReconBaseline => {
            let ae = train_split_autoencoder(&protocol.train, config, seed)?;
            recon_error_score(&protocol.test, &ae)
        }
        Mode::NaiveNn => {
            let input_shape = vec![protocol.train.c(), protocol.train.h(), protocol.train.w()];
            let mut model =
                OneClassModel::new(&input_shape, config.latent_dim, config.backbone_width)?;
            model.init(seed);
            let mut state = TrainState::new(&model, seed);
            train(&mut model, &protocol.train, None, config, &mut state, config.iterations as u64)?;
            model.score(&protocol.test)
        }
        Mode::Ours | Mode::NnWithIcs => {
            let ae = train_split_autoencoder(&protocol.train, config, seed)?;
            let ics = split(&protocol.train, &ae, config.rho)?;
            let input_shape = vec![protocol.train.c(), protocol.train.h(), protocol.train.w()];
            let mut model =
                OneClassModel::new(&input_shape, config.latent_dim, config.backbone_width)?;
            model.init(seed);
            let mut state = TrainState::new(&model, seed);
            train(
                &mut model,
                &protocol.train,
                Some(&ics),
                config,
                &mut state,
                config.iterations as u64,
            )?;
            model.score(&protocol.test)
        }
    }
}

/// AUC of abnormality scores against the test set's roles.
pub fn score_auc(protocol: &ProtocolSplit, scores: &[f64]) -> Result<f64> {
    let mut normal = Vec::new();
    let mut abnormal = Vec::new();
    for (i, &role) in protocol.test.roles().iter().enumerate() {
        if role {
            abnormal.push(scores[i]);
        } else {
            normal.push(scores[i]);
        }
    }
    Ok(auc(&normal, &abnormal)?.auc)
}

/// Run the configured experiment over all seeds and aggregate.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let started = Instant::now();
    let mut per_seed = Vec::with_capacity(config.seeds.len());
    let mut hasher = Sha256::new();
    for &seed in &config.seeds {
        let seed_started = Instant::now();
        let protocol = load_protocol(config, seed)?;
        hash_protocol(&mut hasher, &protocol);
        let scores = run_seed(config, &protocol, seed)?;
        let auc_value = score_auc(&protocol, &scores)?;
        per_seed.push(SeedOutcome {
            seed,
            auc: auc_value,
            wall_s: seed_started.elapsed().as_secs_f64(),
        });
    }
    let aucs: Vec<f64> = per_seed.iter().map(|o| o.auc).collect();
    let mean_auc = aucs.iter().sum::<f64>() / aucs.len() as f64;
    let std_auc = sample_std(&aucs, mean_auc);
    Ok(RunReport {
        config: config.clone(),
        per_seed,
        mean_auc,
        std_auc,
        single_seed: aucs.len() < 2,
        input_hash: format!("{:x}", hasher.finalize()),
        wall_s: started.elapsed().as_secs_f64(),
    })
}

/// A ratio sweep: one full experiment per rho value.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub runs: Vec<RunReport>,
}

impl SweepReport {
    /// Plot-ready summary: one row per rho.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rho,mean_auc,std_auc,n_seeds\n");
        for run in &self.runs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                run.config.rho,
                run.mean_auc,
                run.std_auc,
                run.per_seed.len()
            ));
        }
        out
    }

    /// Mean AUC at a given rho, if the sweep visited it.
    pub fn mean_at(&self, rho: f64) -> Option<f64> {
        self.runs
            .iter()
            .find(|r| r.config.rho == rho)
            .map(|r| r.mean_auc)
    }
}

/// Run the experiment once per rho in `rhos` (at least two distinct values).
pub fn run_ratio_sweep(config: &ExperimentConfig, rhos: &[f64]) -> Result<SweepReport> {
    let mut distinct = rhos.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite rho"));
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::config(format!(
            "a ratio sweep needs at least 2 distinct rho values, got {rhos:?}"
        )));
    }
    let mut runs = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let mut c = config.clone();
        c.rho = rho;
        runs.push(run_experiment(&c)?);
    }
    Ok(SweepReport { runs })
}

impl RunReport {
    /// CSV rows: one per seed plus `mean` and `std` summary rows. Floats use
    /// Rust's shortest round-trip formatting, so re-parsing reproduces them
    /// exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,dataset,normal_class,rho,seed,auc,wall_s\n");
        let prefix = format!(
            "{},{},{},{}",
            self.config.mode, self.config.dataset, self.config.normal_class, self.config.rho
        );
        for o in &self.per_seed {
            out.push_str(&format!("{prefix},{},{},{}\n", o.seed, o.auc, o.wall_s));
        }
        let wall_values: Vec<f64> = self.per_seed.iter().map(|o| o.wall_s).collect();
        let wall_mean = wall_values.iter().sum::<f64>() / wall_values.len().max(1) as f64;
        let wall_std = sample_std(&wall_values, wall_mean);
        out.push_str(&format!("{prefix},mean,{},{wall_mean}\n", self.mean_auc));
        out.push_str(&format!("{prefix},std,{},{wall_std}\n", self.std_auc));
        out
    }

    /// Table-style summary: AUC as a percentage to one decimal with the
    /// standard deviation in parentheses, e.g. `88.9 (±1.2)`.
    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14} {:<10} {:<6} {:<6} {}\n",
            "mode", "dataset", "class", "rho", "auc"
        ));
        out.push_str(&format!(
            "{:<14} {:<10} {:<6} {:<6} {}\n",
            self.config.mode,
            self.config.dataset,
            self.config.normal_class,
            self.config.rho,
            format_mean_std(self.mean_auc, self.std_auc)
        ));
        if self.single_seed {
            out.push_str("note: single seed; std not estimable, reported as 0\n");
        }
        out.push_str(&format!("input_hash: {}\n", self.input_hash));
        out
    }
}

/// `0.889 ± 0.012` → `88.9 (±1.2)`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{:.1} (±{:.1})", mean * 100.0, std * 100.0)
}

/// Report output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    TextTable,
}

/// Write a report into `out_dir` as `stem.csv` or `stem.txt`; returns the
/// path written.
pub fn emit_report(
    report: &RunReport,
    format: ReportFormat,
    out_dir: &Path,
    stem: &str,
) -> Result<PathBuf> {
    if report.per_seed.is_empty() {
        return Err(Error::config("cannot emit an empty report".to_string()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let (path, contents) = match format {
        ReportFormat::Csv => (out_dir.join(format!("{stem}.csv")), report.to_csv()),
        ReportFormat::TextTable => (out_dir.join(format!("{stem}.txt")), report.to_text_table()),
    };
    std::fs::write(&path, contents).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

/// Parse a CSV produced by [`RunReport::to_csv`] back into seed rows
/// (`seed, auc, wall_s`), skipping summary rows.
pub fn parse_report_csv(text: &str) -> Result<Vec<(String, f64, f64)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("mode,dataset,normal_class,rho,seed,auc,wall_s") => {}
        other => {
            return Err(Error::data(format!(
                "unrecognized report header: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::data(format!(
                "report row {} has {} fields, expected 7",
                i + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::data(format!("report row {}: {e}", i + 2)))
        };
        rows.push((fields[4].to_string(), parse_f(fields[5])?, parse_f(fields[6])?));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Small enough to run in seconds: tiny synthetic set, tiny nets.
    fn tiny_config(mode: Mode) -> ExperimentConfig {
        let mut c = ExperimentConfig::desk();
        c.mode = mode;
        c.train_size = 40;
        c.test_normal = 10;
        c.test_abnormal = 10;
        c.image_size = 16;
        c.iterations = 3;
        c.ae_iterations = 10;
        c.batch = 8;
        c.ae_width = 4;
        c.backbone_width = 2;
        c.latent_dim = 4;
        c.code_dim = 8;
        c.seeds = vec![1, 2];
        c
    }

    fn strip_wall(csv: &str) -> String {
        csv.lines()
            .map(|l| l.rsplit_once(',').map(|(head, _)| head).unwrap_or(l))
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn recon_baseline_reports_valid_aucs() {
        let report = run_experiment(&tiny_config(Mode::ReconBaseline)).unwrap();
        assert_eq!(report.per_seed.len(), 2);
        assert!(report
            .per_seed
            .iter()
            .all(|o| (0.0..=1.0).contains(&o.auc)));
        assert!(!report.single_seed);
        assert_eq!(report.input_hash.len(), 64);
    }

    #[test]
    fn reruns_are_identical_up_to_wall_time() {
        let cfg = tiny_config(Mode::NaiveNn);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(strip_wall(&a.to_csv()), strip_wall(&b.to_csv()));
        assert_eq!(a.input_hash, b.input_hash);
    }

    #[test]
    fn csv_round_trips_at_full_precision() {
        let report = run_experiment(&tiny_config(Mode::ReconBaseline)).unwrap();
        let rows = parse_report_csv(&report.to_csv()).unwrap();
        assert_eq!(rows.len(), 4, "2 seeds + mean + std");
        assert_eq!(rows[0].1, report.per_seed[0].auc);
        assert_eq!(rows[1].1, report.per_seed[1].auc);
        assert_eq!(rows[2].1, report.mean_auc);
        assert_eq!(rows[3].1, report.std_auc);
    }

    #[test]
    fn text_table_formats_percentages() {
        assert_eq!(format_mean_std(0.889, 0.012), "88.9 (±1.2)");
        assert_eq!(format_mean_std(1.0, 0.0), "100.0 (±0.0)");
    }

    #[test]
    fn single_seed_sets_the_flag() {
        let mut cfg = tiny_config(Mode::ReconBaseline);
        cfg.seeds = vec![3];
        let report = run_experiment(&cfg).unwrap();
        assert!(report.single_seed);
        assert_eq!(report.std_auc, 0.0);
        assert!(report.to_text_table().contains("single seed"));
    }

    #[test]
    fn sweep_needs_two_rhos_and_emits_one_row_each() {
        let cfg = tiny_config(Mode::ReconBaseline);
        assert!(run_ratio_sweep(&cfg, &[10.0]).is_err());
        let sweep = run_ratio_sweep(&cfg, &[10.0, 30.0]).unwrap();
        let csv = sweep.to_csv();
        assert_eq!(csv.lines().count(), 3, "header + 2 rho rows:\n{csv}");
        assert!(sweep.mean_at(10.0).is_some());
        assert!(sweep.mean_at(30.0).is_some());
    }

    #[test]
    fn emit_writes_both_formats() {
        let dir = std::env::temp_dir().join(format!("report-test-{}", std::process::id()));
        let report = run_experiment(&tiny_config(Mode::ReconBaseline)).unwrap();
        let csv_path = emit_report(&report, ReportFormat::Csv, &dir, "report").unwrap();
        let txt_path = emit_report(&report, ReportFormat::TextTable, &dir, "report").unwrap();
        assert!(csv_path.exists());
        let text = std::fs::read_to_string(txt_path).unwrap();
        assert!(text.contains("recon_baseline"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn empty_report_cannot_be_emitted() {
        let report = RunReport {
            config: tiny_config(Mode::Ours),
            per_seed: Vec::new(),
            mean_auc: 0.0,
            std_auc: 0.0,
            single_seed: true,
            input_hash: String::new(),
            wall_s: 0.0,
        };
        let dir = std::env::temp_dir();
        assert!(emit_report(&report, ReportFormat::Csv, &dir, "empty").is_err());
    }
}
