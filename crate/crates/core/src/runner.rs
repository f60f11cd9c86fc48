//! Reproducible experiment runs on disk.
//!
//! Every run owns one directory:
//!
//! ```text
//! <run>/manifest.json     config snapshot, dataset fingerprints, version tag
//! <run>/metrics.log       one JSON step record per line
//! <run>/summary.json      initial and final evaluation
//! <run>/checkpoints/      initial.vgr, step_NNNNNN.vgr, final.vgr
//! <run>/analysis/         tables and plots
//! ```
//!
//! Files are written atomically. The metrics log streams into
//! `metrics.log.partial` and is renamed once the run finishes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{error, info};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    length_bin_table, line_plot_svg, rank_accuracy_table, read_metrics_log, spearman,
    top_fraction_accuracy, write_csv, GroupDump, StepRecord,
};
use crate::error::{Result, VigorError};
use crate::io::write_atomic;
use crate::model::{read_checkpoint, write_checkpoint, GradScope};
use crate::tasks::{make_dataset, Dataset, Split, TaskKind};
use crate::trainer::{
    build_datasets, eval_seed, evaluate, initial_policy, rank_probe, train_from, EvalSummary,
    RewardVariant, TrainSink, TrainerConfig,
};
use crate::Params;

/// Environment variable that overrides the seed of every run.
pub const SEED_ENV: &str = "VIGOR_SEED";

/// Version tag stored in manifests.
pub const CODE_VERSION: &str = concat!("vigor-core ", env!("CARGO_PKG_VERSION"));

/// Names accepted by [`run_analyze`].
pub const ANALYSES: [&str; 5] = [
    "length_bins",
    "rank_accuracy",
    "top_fraction",
    "curves",
    "plots",
];

/// Paths of one run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn metrics_log(&self) -> PathBuf {
        self.root.join("metrics.log")
    }
    fn partial_log(&self) -> PathBuf {
        self.root.join("metrics.log.partial")
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn checkpoint(&self, step: usize) -> PathBuf {
        self.checkpoints().join(format!("step_{step:06}.vgr"))
    }
    pub fn initial_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("initial.vgr")
    }
    pub fn final_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("final.vgr")
    }
    pub fn analysis(&self) -> PathBuf {
        self.root.join("analysis")
    }
}

/// Identifies a generated dataset; regeneration from these fields is exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub kind: TaskKind,
    pub size: usize,
    pub difficulty: u32,
    pub seed: u64,
    pub split: Split,
}

impl DatasetFingerprint {
    pub fn of(ds: &Dataset) -> Self {
        Self {
            kind: ds.kind,
            size: ds.len(),
            difficulty: ds.difficulty,
            seed: ds.seed,
            split: ds.split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLayout {
    pub manifest: String,
    pub metrics_log: String,
    pub summary: String,
    pub checkpoints: String,
    pub analysis: String,
}

impl Default for ManifestLayout {
    fn default() -> Self {
        Self {
            manifest: "manifest.json".into(),
            metrics_log: "metrics.log".into(),
            summary: "summary.json".into(),
            checkpoints: "checkpoints/".into(),
            analysis: "analysis/".into(),
        }
    }
}

/// Where a config came from: the file, the `--set` overrides applied on top,
/// and the seed taken from the environment, if any.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_path: Option<String>,
    pub overrides: Vec<String>,
    pub seed_override: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub run_id: String,
    pub code_version: String,
    /// The resolved config; replaying it reproduces the run.
    pub config: TrainerConfig,
    pub provenance: Provenance,
    pub datasets: Vec<DatasetFingerprint>,
    pub layout: ManifestLayout,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let manifest: Self = serde_json::from_str(&text)?;
        manifest.config.validate()?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub initial_accuracy: f64,
    pub final_accuracy: f64,
    pub final_mean_length: f64,
    pub skipped_steps: usize,
}

/// Reads the seed override from the environment.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            VigorError::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(VigorError::Config(format!("{SEED_ENV}: {e}"))),
    }
}

/// Loads a TOML config, applies `key=value` overrides, then the seed
/// override. Later sources win.
pub fn resolve_config(
    path: &Path,
    overrides: &[String],
    seed_override: Option<u64>,
) -> Result<(TrainerConfig, Provenance)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| VigorError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config = TrainerConfig::from_toml_str(&text)?.with_overrides(overrides)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let provenance = Provenance {
        config_path: Some(path.display().to_string()),
        overrides: overrides.to_vec(),
        seed_override,
    };
    Ok((config, provenance))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn run_id(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

struct DiskSink {
    layout: RunLayout,
    log: BufWriter<File>,
}

impl TrainSink<f64> for DiskSink {
    fn on_step(&mut self, record: &StepRecord) -> Result<()> {
        serde_json::to_writer(&mut self.log, record)?;
        self.log.write_all(b"\n")?;
        self.log.flush()?;
        Ok(())
    }

    fn on_checkpoint(&mut self, step: usize, params: &Params) -> Result<()> {
        write_checkpoint(&self.layout.checkpoint(step), params)
    }
}

/// Trains one run into `out`.
pub fn run_train(config: &TrainerConfig, out: &Path, provenance: Provenance) -> Result<RunSummary> {
    config.validate()?;
    let (train_set, eval_set) = build_datasets(config)?;
    let initial = initial_policy::<f64>(config, &train_set)?;
    run_train_from(config, initial, &train_set, &eval_set, out, provenance)
}

/// Like [`run_train`] with an already computed initial policy, which must be
/// the one [`initial_policy`] would produce for `config`.
pub fn run_train_from(
    config: &TrainerConfig,
    initial: Params,
    train_set: &Dataset,
    eval_set: &Dataset,
    out: &Path,
    provenance: Provenance,
) -> Result<RunSummary> {
    let layout = RunLayout::new(out);
    std::fs::create_dir_all(layout.checkpoints())?;
    let manifest = ExperimentManifest {
        run_id: run_id(out),
        code_version: CODE_VERSION.into(),
        config: config.clone(),
        provenance,
        datasets: vec![
            DatasetFingerprint::of(train_set),
            DatasetFingerprint::of(eval_set),
        ],
        layout: ManifestLayout::default(),
    };
    write_json(&layout.manifest(), &manifest)?;
    write_checkpoint(&layout.initial_checkpoint(), &initial)?;

    let log = BufWriter::new(File::create(layout.partial_log())?);
    let mut sink = DiskSink {
        layout: layout.clone(),
        log,
    };
    let outcome = train_from(config, initial, train_set, eval_set, &mut sink)?;
    sink.log.flush()?;
    drop(sink);
    write_checkpoint(&layout.final_checkpoint(), &outcome.params)?;
    std::fs::rename(layout.partial_log(), layout.metrics_log())?;
    let summary = RunSummary {
        initial_accuracy: outcome.initial_eval,
        final_accuracy: outcome.final_eval,
        final_mean_length: outcome.final_mean_length,
        skipped_steps: outcome.skipped_steps,
    };
    write_json(&layout.summary(), &summary)?;
    info!(
        "{}: accuracy {:.4} -> {:.4}",
        out.display(),
        summary.initial_accuracy,
        summary.final_accuracy
    );
    Ok(summary)
}

/// Replays the config recorded in a manifest into `out`.
pub fn run_from_manifest(manifest_path: &Path, out: &Path) -> Result<RunSummary> {
    let manifest = ExperimentManifest::load(manifest_path)?;
    run_train(&manifest.config, out, manifest.provenance)
}

/// One configuration of the ablation suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationArm {
    pub variant: RewardVariant,
    pub grad_scope: GradScope,
}

impl AblationArm {
    pub fn name(&self) -> String {
        match self.grad_scope {
            GradScope::Full => self.variant.name().to_string(),
            GradScope::LmHeadOnly => format!("{}_lm_head", self.variant.name()),
        }
    }
}

/// Every reward variant with full gradients, plus VIGOR on the LM head only.
pub fn ablation_arms() -> Vec<AblationArm> {
    let mut arms: Vec<AblationArm> = RewardVariant::ALL
        .iter()
        .map(|&variant| AblationArm {
            variant,
            grad_scope: GradScope::Full,
        })
        .collect();
    arms.push(AblationArm {
        variant: RewardVariant::Vigor,
        grad_scope: GradScope::LmHeadOnly,
    });
    arms
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub variant: String,
    pub grad_scope: String,
    pub status: String,
    pub initial_accuracy: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub final_mean_length: Option<f64>,
    pub mean_top25_accuracy: Option<f64>,
    pub final_3gram_repetition: Option<f64>,
    pub error: String,
}

impl AblationRow {
    pub fn failed(&self) -> bool {
        self.status != "ok"
    }
}

fn scope_name(scope: GradScope) -> &'static str {
    match scope {
        GradScope::Full => "full",
        GradScope::LmHeadOnly => "lm_head_only",
    }
}

/// Runs every arm on the base config's seed and datasets, sharing one warm
/// start. Failed arms are reported, not fatal. Writes `<out>/report.csv`.
pub fn run_ablation_suite(
    base: &TrainerConfig,
    out: &Path,
    provenance: Provenance,
) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let (train_set, eval_set) = build_datasets(base)?;
    // The warm start ignores the reward variant and scope, so all arms share it.
    let initial = initial_policy::<f64>(base, &train_set)?;
    let mut rows = Vec::new();
    for arm in ablation_arms() {
        let name = arm.name();
        let mut config = base.clone();
        config.reward_variant = arm.variant;
        config.grad_scope = arm.grad_scope;
        let dir = out.join(&name);
        let mut prov = provenance.clone();
        prov.overrides
            .push(format!("reward_variant={}", arm.variant.name()));
        prov.overrides
            .push(format!("grad_scope={}", scope_name(arm.grad_scope)));
        info!("ablation arm {name}");
        let result = run_train_from(&config, initial.clone(), &train_set, &eval_set, &dir, prov)
            .and_then(|summary| {
                Ok((
                    summary,
                    read_metrics_log(&RunLayout::new(&dir).metrics_log())?,
                ))
            });
        let row = match result {
            Ok((summary, records)) => {
                let n = records.len().max(1) as f64;
                AblationRow {
                    name,
                    variant: arm.variant.name().into(),
                    grad_scope: scope_name(arm.grad_scope).into(),
                    status: "ok".into(),
                    initial_accuracy: Some(summary.initial_accuracy),
                    final_accuracy: Some(summary.final_accuracy),
                    final_mean_length: Some(summary.final_mean_length),
                    mean_top25_accuracy: Some(
                        records.iter().map(|r| r.top25_accuracy).sum::<f64>() / n,
                    ),
                    final_3gram_repetition: records.last().map(|r| r.mean_3gram_repetition),
                    error: String::new(),
                }
            }
            Err(e) => {
                error!("ablation arm {name} failed: {e}");
                AblationRow {
                    name,
                    variant: arm.variant.name().into(),
                    grad_scope: scope_name(arm.grad_scope).into(),
                    status: "failed".into(),
                    initial_accuracy: None,
                    final_accuracy: None,
                    final_mean_length: None,
                    mean_top25_accuracy: None,
                    final_3gram_repetition: None,
                    error: e.to_string(),
                }
            }
        };
        rows.push(row);
    }
    write_csv(&out.join("report.csv"), &rows)?;
    Ok(rows)
}

#[derive(Serialize)]
struct RankRow {
    rank_position: usize,
    accuracy: f64,
}

#[derive(Serialize)]
struct TopFractionRow {
    step: usize,
    top25_accuracy: f64,
    train_accuracy: f64,
}

#[derive(Serialize)]
struct CurveRow {
    step: usize,
    eval_accuracy: Option<f64>,
    train_accuracy: f64,
    top25_accuracy: f64,
    mean_length: f64,
    mean_3gram_repetition: f64,
    mean_grad_norm: f64,
    objective: f64,
    kl: f64,
    clip_fraction: f64,
    learning_rate: f64,
    skipped: bool,
}

fn live_groups(records: &[StepRecord]) -> Vec<GroupDump> {
    records
        .iter()
        .flat_map(|r| r.groups.iter())
        .filter(|g| !g.aborted)
        .cloned()
        .collect()
}

/// Writes the requested analyses of a finished run into `<run>/analysis/`
/// and returns the files produced. Rerunning gives identical files.
pub fn run_analyze(run: &Path, which: &[String]) -> Result<Vec<PathBuf>> {
    for name in which {
        if !ANALYSES.contains(&name.as_str()) {
            return Err(VigorError::Analysis(format!(
                "unknown analysis `{name}`; valid names: {}",
                ANALYSES.join(", ")
            )));
        }
    }
    let layout = RunLayout::new(run);
    let records = read_metrics_log(&layout.metrics_log())?;
    if records.is_empty() {
        return Err(VigorError::Analysis("metrics log has no records".into()));
    }
    let dir = layout.analysis();
    let mut written = Vec::new();
    for name in which {
        match name.as_str() {
            "length_bins" => {
                let samples: Vec<(usize, f64)> = live_groups(&records)
                    .iter()
                    .flat_map(|g| g.entries.iter().map(|e| (e.length, e.grad_norm)))
                    .collect();
                let path = dir.join("length_bins.csv");
                write_csv(&path, &length_bin_table(&samples, 4)?)?;
                written.push(path);
            }
            "rank_accuracy" => {
                let rows: Vec<RankRow> = rank_accuracy_table(&live_groups(&records))
                    .into_iter()
                    .map(|(rank_position, accuracy)| RankRow {
                        rank_position,
                        accuracy,
                    })
                    .collect();
                let path = dir.join("rank_accuracy.csv");
                write_csv(&path, &rows)?;
                written.push(path);
            }
            "top_fraction" => {
                let rows = records
                    .iter()
                    .map(|r| {
                        let live: Vec<GroupDump> =
                            r.groups.iter().filter(|g| !g.aborted).cloned().collect();
                        Ok(TopFractionRow {
                            step: r.step,
                            top25_accuracy: top_fraction_accuracy(&live, 0.25)?,
                            train_accuracy: r.train_accuracy,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let path = dir.join("top_fraction.csv");
                write_csv(&path, &rows)?;
                written.push(path);
            }
            "curves" => {
                let rows: Vec<CurveRow> = records
                    .iter()
                    .map(|r| CurveRow {
                        step: r.step,
                        eval_accuracy: r.eval_accuracy,
                        train_accuracy: r.train_accuracy,
                        top25_accuracy: r.top25_accuracy,
                        mean_length: r.mean_length,
                        mean_3gram_repetition: r.mean_3gram_repetition,
                        mean_grad_norm: r.mean_grad_norm,
                        objective: r.objective,
                        kl: r.kl,
                        clip_fraction: r.clip_fraction,
                        learning_rate: r.learning_rate,
                        skipped: r.skipped,
                    })
                    .collect();
                let path = dir.join("curves.csv");
                write_csv(&path, &rows)?;
                written.push(path);
            }
            "plots" => {
                let plots_dir = dir.join("plots");
                let series = |f: fn(&StepRecord) -> Option<f64>| -> Vec<(f64, f64)> {
                    records
                        .iter()
                        .filter_map(|r| f(r).map(|y| (r.step as f64, y)))
                        .collect()
                };
                let charts = [
                    (
                        "eval_accuracy",
                        "Eval accuracy",
                        "accuracy",
                        series(|r| r.eval_accuracy),
                    ),
                    (
                        "train_accuracy",
                        "Rollout accuracy",
                        "accuracy",
                        series(|r| Some(r.train_accuracy)),
                    ),
                    (
                        "top25_accuracy",
                        "Top-25% accuracy",
                        "accuracy",
                        series(|r| Some(r.top25_accuracy)),
                    ),
                    (
                        "mean_length",
                        "Mean completion length",
                        "tokens",
                        series(|r| Some(r.mean_length)),
                    ),
                    (
                        "repetition",
                        "Mean 3-gram repetition",
                        "rate",
                        series(|r| Some(r.mean_3gram_repetition)),
                    ),
                ];
                for (file, title, y_label, points) in charts {
                    let path = plots_dir.join(format!("{file}.svg"));
                    write_atomic(
                        &path,
                        line_plot_svg(title, "step", y_label, &points).as_bytes(),
                    )?;
                    written.push(path);
                }
            }
            _ => unreachable!("names validated above"),
        }
    }
    Ok(written)
}

/// Evaluation target for [`run_eval`].
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    /// The run's own train or eval split.
    Run(Split),
    /// A freshly generated dataset.
    Generated(DatasetFingerprint),
    /// A dataset exported as JSON lines.
    File(PathBuf),
}

impl DatasetSpec {
    /// Parses `train`, `eval`, `file:<path>`, or
    /// `<kind>:<size>:<difficulty>:<seed>[:<split>]` (split defaults to eval).
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || {
            VigorError::Config(format!(
                "dataset spec `{s}` is not train, eval, file:<path> or kind:size:difficulty:seed[:split]"
            ))
        };
        match s {
            "train" => return Ok(Self::Run(Split::Train)),
            "eval" => return Ok(Self::Run(Split::Eval)),
            _ => {}
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(Self::File(PathBuf::from(path)));
        }
        let parts: Vec<&str> = s.split(':').collect();
        if !(4..=5).contains(&parts.len()) {
            return Err(bad());
        }
        let split = match parts.get(4) {
            None | Some(&"eval") => Split::Eval,
            Some(&"train") => Split::Train,
            Some(_) => return Err(bad()),
        };
        Ok(Self::Generated(DatasetFingerprint {
            kind: TaskKind::parse(parts[0])?,
            size: parts[1].parse().map_err(|_| bad())?,
            difficulty: parts[2].parse().map_err(|_| bad())?,
            seed: parts[3].parse().map_err(|_| bad())?,
            split,
        }))
    }

    pub fn label(&self) -> String {
        match self {
            Self::Run(Split::Train) => "train".into(),
            Self::Run(Split::Eval) => "eval".into(),
            Self::Generated(f) => format!(
                "{}_{}_{}_{}_{}",
                f.kind.name(),
                f.size,
                f.difficulty,
                f.seed,
                if f.split == Split::Train {
                    "train"
                } else {
                    "eval"
                }
            ),
            Self::File(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "file".into()),
        }
    }

    pub fn load(&self, config: &TrainerConfig) -> Result<Dataset> {
        match self {
            Self::Run(split) => {
                let (train, eval) = build_datasets(config)?;
                Ok(if *split == Split::Train { train } else { eval })
            }
            Self::Generated(f) => make_dataset(f.kind, f.size, f.difficulty, f.seed, f.split),
            Self::File(p) => Dataset::load(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub dataset: String,
    pub summary: EvalSummary,
    /// Spearman correlation of rank position with per-position accuracy,
    /// present when a rank probe was requested.
    pub rank_spearman: Option<f64>,
}

/// Evaluates a checkpoint of a finished run (default `final`) on a dataset and
/// writes `analysis/eval_<label>.json`; with `rank_probe` also writes the
/// per-position accuracy of freshly scored groups.
pub fn run_eval(
    run: &Path,
    spec: &DatasetSpec,
    checkpoint: Option<&str>,
    with_rank_probe: bool,
) -> Result<EvalReport> {
    let layout = RunLayout::new(run);
    let manifest = ExperimentManifest::load(&layout.manifest())?;
    let config = &manifest.config;
    let ckpt_name = checkpoint.unwrap_or("final");
    let ckpt_path = match ckpt_name.parse::<usize>() {
        Ok(step) => layout.checkpoint(step),
        Err(_) => layout.checkpoints().join(format!("{ckpt_name}.vgr")),
    };
    let params: Params = read_checkpoint(&ckpt_path)?;
    let dataset = spec.load(config)?;
    let summary = evaluate(
        &params,
        &dataset.instances,
        config.max_response_len,
        config.eval_temperature,
        eval_seed(config),
    )?;
    let label = spec.label();
    let mut rank_spearman = None;
    if with_rank_probe {
        let groups = rank_probe(&params, &dataset.instances, config, eval_seed(config))?;
        let table = rank_accuracy_table(&groups);
        let (pos, acc): (Vec<f64>, Vec<f64>) = table.iter().map(|&(p, a)| (p as f64, a)).unzip();
        rank_spearman = spearman(&pos, &acc);
        let rows: Vec<RankRow> = table
            .into_iter()
            .map(|(rank_position, accuracy)| RankRow {
                rank_position,
                accuracy,
            })
            .collect();
        write_csv(
            &layout
                .analysis()
                .join(format!("rank_probe_{label}_{ckpt_name}.csv")),
            &rows,
        )?;
    }
    let report = EvalReport {
        checkpoint: ckpt_name.to_string(),
        dataset: label.clone(),
        summary,
        rank_spearman,
    };
    write_json(
        &layout
            .analysis()
            .join(format!("eval_{label}_{ckpt_name}.json")),
        &report,
    )?;
    Ok(report)
}
