use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cicada_core::datagen::{generate, AnomalySpec};
use cicada_core::metrics::{
    apply_threshold, auprc, auroc, max_f1_threshold, point_adjust, point_adjust_scores, prf,
};
use cicada_core::pipeline::{detect, load_model, save_model, Trainer};
use cicada_core::{CicadaError, RunConfig};
use log::info;

use crate::args::{Common, DetectArgs, EvaluateArgs, GenerateArgs, ReportArgs, RunOverrides, TrainArgs};
use crate::config::ConfigFile;
use crate::csvio::{self, num, Table};
use crate::error::{CliError, CliResult};
use crate::svg::{self, Line, Strip};

pub const MODEL_FILE: &str = "model.cicada";
pub const WEIGHTS_FILE: &str = "weights_per_epoch.csv";
pub const ALPHA_FILE: &str = "alpha_per_epoch.csv";
pub const ASSIGNMENTS_FILE: &str = "assignments_per_epoch.csv";
pub const FINAL_ASSIGNMENTS_FILE: &str = "final_assignments.csv";
pub const EXPANSIONS_FILE: &str = "expansions.csv";
pub const LOSSES_FILE: &str = "losses_per_epoch.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: &str = "f1,auroc,auprc,f1_pa,auroc_pa,auprc_pa";

fn out_path(common: &Common, default_name: &str) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| common.out_dir.join(default_name))
}

fn out_dir(common: &Common) -> PathBuf {
    common.out.clone().unwrap_or_else(|| common.out_dir.clone())
}

pub fn generate_cmd(common: &Common, args: &GenerateArgs) -> CliResult<()> {
    let file = ConfigFile::load(common.config.as_deref())?;
    let mut cfg = file.gen_config(args.kind)?;
    if let Some(v) = args.length {
        cfg.length = v;
    }
    if let Some(v) = args.window {
        cfg.window = v;
    }
    if let Some(v) = args.latent {
        cfg.latent = v;
    }
    if let Some(v) = args.dim {
        cfg.dim = v;
    }
    if let Some(v) = args.noise {
        cfg.noise_scale = v;
    }
    if let Some(v) = &args.domains {
        cfg.domains = v.clone();
    }
    if args.four_domain {
        let preset = cicada_core::datagen::GenConfig::four_domain(cfg.kind);
        cfg.domains = preset.domains;
        if args.noise.is_none() {
            cfg.noise_scale = preset.noise_scale;
        }
    }
    if args.anomaly_rate.is_some() || args.anomaly_magnitude.is_some() || args.anomaly_start.is_some()
    {
        let mut spec = cfg.anomalies.clone().unwrap_or_default();
        if let Some(v) = args.anomaly_rate {
            spec.rate = v;
        }
        if let Some(v) = args.anomaly_magnitude {
            spec.magnitude = v;
        }
        if let Some(v) = args.anomaly_start {
            spec.start_fraction = v;
        }
        cfg.anomalies = Some(AnomalySpec { ..spec });
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let generated = generate(&cfg)?;
    let path = out_path(common, &format!("{}.csv", cfg.kind));
    csvio::write(&path, &csvio::series_csv(&generated.series))?;
    if cfg.domains.len() > 1 {
        let side = path.with_extension("domains.csv");
        let mut text = String::from("t,domain\n");
        for (t, d) in generated.domains.iter().enumerate() {
            text.push_str(&format!("{t},{d}\n"));
        }
        csvio::write(&side, &text)?;
    }
    println!(
        "wrote {} ({}x{}), seed {}",
        path.display(),
        generated.series.len(),
        generated.series.dim(),
        cfg.seed
    );
    Ok(())
}

fn apply_overrides(cfg: &mut RunConfig, o: &RunOverrides, seed: Option<u64>) {
    if let Some(v) = o.window {
        cfg.window = v;
    }
    if let Some(v) = o.segments {
        cfg.segments = v;
    }
    if let Some(v) = &o.experts {
        cfg.experts = v.clone();
    }
    if let Some(v) = o.epochs {
        cfg.max_epoch = v;
    }
    if let Some(v) = o.epoch_add {
        cfg.epoch_add = v;
    }
    if o.no_expansion {
        cfg.expansion = false;
    }
    if let Some(v) = o.lambda_1 {
        cfg.lambda_1 = v;
    }
    if let Some(v) = o.lambda_meta {
        cfg.lambda_meta = v;
    }
    if let Some(v) = o.alpha_threshold {
        cfg.alpha_threshold = v;
    }
    if let Some(v) = o.test_rate {
        cfg.test_rate = v;
    }
    if let Some(v) = o.lr {
        cfg.optimizer.lr = v;
    }
    if let Some(v) = o.windows_per_step {
        cfg.windows_per_step = Some(v);
    }
    if let Some(v) = o.threshold_strategy {
        cfg.threshold = v;
    }
    if let Some(v) = o.standardize {
        cfg.standardize = v;
    }
    if let Some(v) = seed {
        cfg.seed = v;
    }
}

pub fn train_cmd(common: &Common, args: &TrainArgs) -> CliResult<()> {
    let file = ConfigFile::load(common.config.as_deref())?;
    let mut cfg = file.run_config()?;
    apply_overrides(&mut cfg, &args.run, common.seed);
    cfg.validate()?;
    let series = csvio::read_series(&args.data)?;
    let dir = out_dir(common);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let mut trainer = Trainer::new(&series, cfg.clone())?;
    while trainer.epoch() < cfg.max_epoch {
        let rec = trainer.run_epoch()?;
        if rec.epoch % 50 == 0 || rec.epoch == cfg.max_epoch {
            info!("epoch {} reconstruction {:.4e}", rec.epoch, rec.reconstruction_loss);
        }
    }
    let model = trainer.finish()?;
    save_model(&model, dir.join(MODEL_FILE)).map_err(|e| match e {
        CicadaError::Io(io) => CliError::io(dir.join(MODEL_FILE), io),
        other => other.into(),
    })?;
    let h = &model.history;
    csvio::write(&dir.join(WEIGHTS_FILE), &h.weights_csv())?;
    csvio::write(&dir.join(ALPHA_FILE), &h.alpha_csv())?;
    csvio::write(&dir.join(ASSIGNMENTS_FILE), &h.assignments_csv())?;
    csvio::write(&dir.join(FINAL_ASSIGNMENTS_FILE), &h.final_assignments_csv())?;
    csvio::write(&dir.join(EXPANSIONS_FILE), &h.expansions_csv())?;
    csvio::write(&dir.join(LOSSES_FILE), &h.losses_csv())?;
    let weights = h.final_weights().unwrap_or(&[]);
    let names: Vec<String> = model.expert_kinds().iter().map(|k| k.to_string()).collect();
    println!("trained {} epochs; model in {}", cfg.max_epoch, dir.join(MODEL_FILE).display());
    for ((name, w), m) in names.iter().zip(weights).zip(model.meta_domain_counts()) {
        println!("  {name:<7} weight {w:.4}  meta-domains {m}");
    }
    Ok(())
}

pub fn detect_cmd(common: &Common, args: &DetectArgs) -> CliResult<()> {
    let model = load_model(&args.model).map_err(|e| match e {
        CicadaError::Io(io) => CliError::io(&args.model, io),
        other => other.into(),
    })?;
    let series = csvio::read_series(&args.data)?;
    let report = detect(&model, &series, args.threshold_strategy)?;
    let path = out_path(common, "report.csv");
    csvio::write(&path, &csvio::report_csv(&report))?;
    let flagged = report
        .predictions
        .as_ref()
        .map(|p| p.iter().filter(|&&y| y == 1).count())
        .unwrap_or(0);
    println!(
        "wrote {}: {} scored steps, threshold {:.6e}, {} flagged",
        path.display(),
        report.anosc.len(),
        report.threshold.unwrap_or(f64::NAN),
        flagged
    );
    Ok(())
}

/// Six metrics: plain and point-adjusted F1, AUROC and AUPRC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub f1: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub f1_pa: f64,
    pub auroc_pa: f64,
    pub auprc_pa: f64,
}

impl Summary {
    pub fn compute(scores: &[f64], pred: &[u8], labels: &[u8]) -> CliResult<Self> {
        let plain = prf(pred, labels)?;
        let adjusted = prf(&point_adjust(pred, labels)?, labels)?;
        let adjusted_scores = point_adjust_scores(scores, labels)?;
        Ok(Self {
            f1: plain.f1,
            auroc: auroc(scores, labels)?,
            auprc: auprc(scores, labels)?,
            f1_pa: adjusted.f1,
            auroc_pa: auroc(&adjusted_scores, labels)?,
            auprc_pa: auprc(&adjusted_scores, labels)?,
        })
    }

    pub fn csv(&self) -> String {
        format!(
            "{SUMMARY_HEADER}\n{},{},{},{},{},{}\n",
            num(self.f1),
            num(self.auroc),
            num(self.auprc),
            num(self.f1_pa),
            num(self.auroc_pa),
            num(self.auprc_pa)
        )
    }
}

/// Scores, optional predictions and aligned labels from a score CSV and a
/// labelled series CSV.
fn scored_series(
    scores_path: &Path,
    labels_path: &Path,
    score_column: &str,
) -> CliResult<(Vec<f64>, Option<Vec<u8>>, Vec<u8>)> {
    let table = Table::read(scores_path)?;
    let scores: Vec<f64> = table.column(table.require(score_column)?)?;
    let truth = Table::read(labels_path)?;
    let labels: Vec<u8> = truth.column(truth.require(csvio::LABEL_COLUMN)?)?;
    let aligned = match table.column_index("t") {
        Some(c) => table
            .column::<usize>(c)?
            .into_iter()
            .map(|t| {
                labels.get(t).copied().ok_or_else(|| {
                    CliError::Core(CicadaError::LengthMismatch {
                        left: t + 1,
                        right: labels.len(),
                    })
                })
            })
            .collect::<CliResult<Vec<u8>>>()?,
        None if labels.len() == scores.len() => labels,
        None => {
            return Err(CicadaError::LengthMismatch {
                left: scores.len(),
                right: labels.len(),
            }
            .into())
        }
    };
    let pred = match table.column_index("y_pred") {
        Some(c) if table.rows.iter().all(|r| !r[c].is_empty()) => Some(table.column::<u8>(c)?),
        _ => None,
    };
    Ok((scores, pred, aligned))
}

pub fn evaluate_cmd(common: &Common, args: &EvaluateArgs) -> CliResult<()> {
    let (scores, pred, labels) = scored_series(&args.scores, &args.labels, &args.score_column)?;
    let pred = match (args.threshold, args.max_f1, pred) {
        (Some(c), _, _) => apply_threshold(&scores, c),
        (None, false, Some(p)) => p,
        _ => apply_threshold(&scores, max_f1_threshold(&scores, &labels)?.0),
    };
    let summary = Summary::compute(&scores, &pred, &labels)?;
    let path = out_path(common, SUMMARY_FILE);
    csvio::write(&path, &summary.csv())?;
    print!("{}", summary.csv());
    Ok(())
}

fn read_history_lines(path: &Path) -> CliResult<Vec<Line>> {
    let table = Table::read(path)?;
    let epochs: Vec<f64> = table.column(table.require("epoch")?)?;
    (1..table.header.len())
        .map(|c| {
            let values: Vec<f64> = table.column(c)?;
            Ok(Line {
                name: table.header[c].clone(),
                points: epochs.iter().copied().zip(values).collect(),
            })
        })
        .collect()
}

fn read_alpha_lines(path: &Path) -> CliResult<Vec<Line>> {
    let table = Table::read(path)?;
    let (e, x, k, a) = (
        table.require("epoch")?,
        table.require("expert")?,
        table.require("meta_domain")?,
        table.require("alpha")?,
    );
    let mut lines: BTreeMap<(String, usize), Vec<(f64, f64)>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in 0..table.rows.len() {
        let key = (table.rows[r][x].clone(), table.cell::<usize>(r, k)?);
        if !lines.contains_key(&key) {
            order.push(key.clone());
        }
        lines
            .entry(key)
            .or_default()
            .push((table.cell(r, e)?, table.cell(r, a)?));
    }
    Ok(order
        .into_iter()
        .map(|key| Line {
            name: format!("{} #{}", key.0, key.1),
            points: lines.remove(&key).unwrap_or_default(),
        })
        .collect())
}

fn read_assignment_strips(path: &Path) -> CliResult<(Vec<usize>, Vec<Strip>)> {
    let table = Table::read(path)?;
    let (e, x, s, k) = (
        table.require("epoch")?,
        table.require("expert")?,
        table.require("segment")?,
        table.require("meta_domain")?,
    );
    let mut epochs: Vec<usize> = Vec::new();
    let mut experts: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, usize, usize), usize> = BTreeMap::new();
    let mut n_seg = 0;
    for r in 0..table.rows.len() {
        let epoch: usize = table.cell(r, e)?;
        let seg: usize = table.cell(r, s)?;
        let expert = table.rows[r][x].clone();
        if epochs.last() != Some(&epoch) {
            epochs.push(epoch);
        }
        if !experts.contains(&expert) {
            experts.push(expert.clone());
        }
        n_seg = n_seg.max(seg + 1);
        cells.insert((expert, seg, epoch), table.cell(r, k)?);
    }
    let strips = experts
        .into_iter()
        .map(|name| Strip {
            rows: (0..n_seg)
                .map(|seg| {
                    epochs
                        .iter()
                        .map(|&ep| cells.get(&(name.clone(), seg, ep)).copied().unwrap_or(0))
                        .collect()
                })
                .collect(),
            name,
        })
        .collect();
    Ok((epochs, strips))
}

pub fn report_cmd(common: &Common, args: &ReportArgs) -> CliResult<()> {
    if args.history.is_none() && args.detection.is_none() {
        return Err(CliError::Usage(
            "report needs --history and/or --detection with --labels".into(),
        ));
    }
    let dir = out_dir(common);
    let mut written = Vec::new();
    if let Some(hist) = &args.history {
        let weights = read_history_lines(&hist.join(WEIGHTS_FILE))?;
        let path = dir.join("weights.svg");
        csvio::write(
            &path,
            &svg::line_chart("Average expert weight per epoch", "epoch", "weight", &weights, false),
        )?;
        written.push(path);
        let alpha_path = hist.join(ALPHA_FILE);
        if alpha_path.exists() {
            let alphas = read_alpha_lines(&alpha_path)?;
            let path = dir.join("alpha.svg");
            csvio::write(
                &path,
                &svg::line_chart("Meta-learning rate per epoch", "epoch", "alpha (log10)", &alphas, true),
            )?;
            written.push(path);
        }
        let assign_path = hist.join(ASSIGNMENTS_FILE);
        if assign_path.exists() {
            let (epochs, strips) = read_assignment_strips(&assign_path)?;
            let path = dir.join("assignments.svg");
            csvio::write(
                &path,
                &svg::strip_chart("Segment to meta-domain assignment", &epochs, &strips),
            )?;
            written.push(path);
        }
    }
    if let (Some(det), Some(labels)) = (&args.detection, &args.labels) {
        let (scores, pred, aligned) = scored_series(det, labels, "anosc")?;
        let pred = match pred {
            Some(p) => p,
            None => apply_threshold(&scores, max_f1_threshold(&scores, &aligned)?.0),
        };
        let summary = Summary::compute(&scores, &pred, &aligned)?;
        let path = dir.join(SUMMARY_FILE);
        csvio::write(&path, &summary.csv())?;
        written.push(path);
        let table = Table::read(det)?;
        let t: Vec<f64> = table.column(table.require("t")?)?;
        let line = Line {
            name: "anosc".into(),
            points: t.iter().copied().zip(scores.iter().copied()).collect(),
        };
        let path = dir.join("scores.svg");
        csvio::write(&path, &svg::line_chart("Anomaly score", "t", "anosc", &[line], false))?;
        written.push(path);
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}
