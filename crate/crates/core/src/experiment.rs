//! Config-driven experiment runs: dataset, split, training, evaluation, and
//! the artifacts written for each run, plus ablation grids, openness sweeps,
//! and cross-run reports.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    generate_synthetic, load_dataset, open_split, MultiViewDataset, OpenSplit, SplitRatios, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{
    ccr_at_fpr, closed_set_accuracy, oscr_curve, split_classes_for_openness, write_curve, write_records,
    PredictionRecord,
};
use crate::trainer::{Components, MixupMode, TrainConfig, Trainer, HISTORY_HEADER};

/// FPR levels reported in `metrics.json`, with their keys.
pub const FPR_LEVELS: [(&str, f64); 5] = [
    ("0.01", 0.01),
    ("0.05", 0.05),
    ("0.10", 0.10),
    ("0.50", 0.50),
    ("1.00", 1.00),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Directory(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    /// Explicit known classes; otherwise derived from `openness` or the
    /// dataset source.
    pub known_classes: Option<Vec<usize>>,
    /// Target openness; the first classes that realize it best are known.
    pub openness: Option<f64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let r = SplitRatios::default();
        Self {
            train: r.train,
            val: r.val,
            known_classes: None,
            openness: None,
        }
    }
}

/// Component switches; when present they override `train.components`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationFlags {
    pub enable_g: bool,
    pub mixup: MixupMode,
    pub enable_hsic: bool,
}

impl From<AblationFlags> for Components {
    fn from(f: AblationFlags) -> Self {
        Components {
            structural: f.enable_g,
            mixup: f.mixup,
            debias: f.enable_hsic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split: SplitConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub ablation: Option<AblationFlags>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// SHA-256 of the configuration with the seed and output directory
    /// blanked, so seeded repeats of one setup share a hash.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if let Some(flags) = self.ablation {
            t.components = flags.into();
        }
        t.seed = self.seed.wrapping_add(2);
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub dataset: String,
    pub known_classes: usize,
    pub unknown_classes: usize,
    pub openness: f64,
    pub closed_set_accuracy: f64,
    pub ccr_at_fpr: BTreeMap<String, f64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub config: ExperimentConfig,
}

impl Metrics {
    pub fn ccr_at(&self, key: &str) -> f64 {
        self.ccr_at_fpr.get(key).copied().unwrap_or(f64::NAN)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

fn load_source(cfg: &ExperimentConfig) -> Result<MultiViewDataset> {
    match &cfg.dataset {
        DatasetSource::Synthetic(spec) => generate_synthetic(spec, cfg.seed),
        DatasetSource::Directory(dir) => load_dataset(dir),
    }
}

fn known_classes(cfg: &ExperimentConfig, dataset: &MultiViewDataset) -> Result<Vec<usize>> {
    if let Some(k) = &cfg.split.known_classes {
        return Ok(k.clone());
    }
    if let Some(target) = cfg.split.openness {
        let (known, _) = split_classes_for_openness(dataset.class_count, target)?;
        return Ok((0..known).collect());
    }
    Ok(match &cfg.dataset {
        DatasetSource::Synthetic(spec) => (0..spec.known_classes).collect(),
        DatasetSource::Directory(_) => (0..dataset.class_count).collect(),
    })
}

/// Restricts `indices` to a dataset whose labels are renumbered through
/// `map` (original id → new id).
fn relabel(
    dataset: &MultiViewDataset,
    indices: &[usize],
    map: &BTreeMap<usize, usize>,
    classes: usize,
) -> Result<MultiViewDataset> {
    let mut sub = dataset.subset(indices)?;
    sub.labels = sub.labels.iter().map(|y| map[y]).collect();
    sub.class_count = classes;
    Ok(sub)
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Metrics,
    pub records: Vec<PredictionRecord>,
    pub dir: PathBuf,
}

/// Runs one experiment and writes `split.json`, `history.csv`,
/// `model.ckpt`, `predictions.csv`, `oscr_curve.csv`, and `metrics.json`
/// into the output directory. Artifacts written before a failure are kept.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out)?;
    let dataset = load_source(cfg)?;
    let known = known_classes(cfg, &dataset)?;
    let ratios = SplitRatios {
        train: cfg.split.train,
        val: cfg.split.val,
    };
    let split = open_split(&dataset, &known, ratios, cfg.seed.wrapping_add(1))?;
    split.save(out.join("split.json"))?;

    let k = split.known_class_ids.len();
    let unknown_ids: Vec<usize> = (0..dataset.class_count)
        .filter(|c| !split.known_class_ids.contains(c))
        .collect();
    let map: BTreeMap<usize, usize> = split
        .known_class_ids
        .iter()
        .chain(&unknown_ids)
        .enumerate()
        .map(|(new, &old)| (old, new))
        .collect();
    let train_set = relabel(&dataset, &split.train, &map, k)?;
    let val_set = relabel(&dataset, &split.val, &map, k)?;

    let train_cfg = cfg.train_config();
    let history_path = out.join("history.csv");
    let mut history_file = fs::File::create(&history_path)?;
    writeln!(history_file, "{HISTORY_HEADER}")?;
    let trainer = Trainer::new(&train_set, train_cfg)?;
    let (model, history) = trainer.train_observed(Some(&val_set), |r| {
        writeln!(history_file, "{}", r.csv_line())?;
        history_file.flush()?;
        Ok(())
    })?;
    model.save(out.join("model.ckpt"))?;

    let records = score_test_split(&model, &dataset, &split, &map)?;
    write_records(out.join("predictions.csv"), &records)?;
    let unknown_classes = unknown_ids
        .iter()
        .filter(|c| split.test_unknown.iter().any(|&i| dataset.labels[i] == **c))
        .count();
    let mut ccr = BTreeMap::new();
    let closed = closed_set_accuracy(&records)?;
    if split.test_unknown.is_empty() {
        for (key, _) in FPR_LEVELS {
            ccr.insert(key.to_string(), closed);
        }
    } else {
        let curve = oscr_curve(&records)?;
        write_curve(out.join("oscr_curve.csv"), &curve)?;
        for (key, q) in FPR_LEVELS {
            ccr.insert(key.to_string(), ccr_at_fpr(&curve, q)?);
        }
    }
    let hash = cfg.config_hash();
    let metrics = Metrics {
        run_id: format!("{}-s{}", &hash[..12], cfg.seed),
        config_hash: hash,
        seed: cfg.seed,
        dataset: dataset.name.clone(),
        known_classes: k,
        unknown_classes,
        openness: split.openness,
        closed_set_accuracy: closed,
        ccr_at_fpr: ccr,
        epochs_run: history.records.len(),
        best_epoch: history.best_epoch,
        config: cfg.clone(),
    };
    fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&metrics)? + "\n")?;
    Ok(RunOutcome {
        metrics,
        records,
        dir: out,
    })
}

/// Scores the known and unknown test samples together (one test graph).
fn score_test_split(
    model: &crate::model::ModelState,
    dataset: &MultiViewDataset,
    split: &OpenSplit,
    map: &BTreeMap<usize, usize>,
) -> Result<Vec<PredictionRecord>> {
    let test = split.test();
    let sub = dataset.subset(&test)?;
    let prediction = model.predict(&sub.view_refs())?;
    let predicted = prediction.predicted();
    Ok(test
        .iter()
        .enumerate()
        .map(|(r, &i)| {
            let is_unknown = r >= split.test_known.len();
            PredictionRecord::new(prediction.scores[r], predicted[r], map[&dataset.labels[i]], is_unknown)
        })
        .collect())
}

/// The four component settings of the ablation table.
pub fn component_grid() -> Vec<(&'static str, AblationFlags)> {
    let flags = |enable_g, mixup, enable_hsic| AblationFlags {
        enable_g,
        mixup,
        enable_hsic,
    };
    vec![
        ("h", flags(false, MixupMode::None, false)),
        ("h+g", flags(true, MixupMode::None, false)),
        ("h+g+mixup", flags(true, MixupMode::Vanilla, true)),
        ("h+g+omix", flags(true, MixupMode::OMix, true)),
    ]
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub enable_g: bool,
    pub mixup: MixupMode,
    pub enable_hsic: bool,
    pub runs: usize,
    pub ccr_fpr10_mean: f64,
    pub ccr_fpr10_std: f64,
    pub closed_mean: f64,
    pub closed_std: f64,
}

/// Runs every grid row for every seed under `base.output_dir/<row>/seed<s>`
/// and writes `ablation.csv`.
pub fn run_ablation(base: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for (name, flags) in component_grid() {
        let mut ccr = Vec::new();
        let mut closed = Vec::new();
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.ablation = Some(flags);
            cfg.seed = seed;
            cfg.output_dir = base.output_dir.join(name).join(format!("seed{seed}"));
            let m = run_experiment(&cfg)?.metrics;
            ccr.push(m.ccr_at("0.10"));
            closed.push(m.closed_set_accuracy);
        }
        let (cm, cs) = mean_std(&ccr);
        let (am, as_) = mean_std(&closed);
        rows.push(AblationRow {
            name: name.to_string(),
            enable_g: flags.enable_g,
            mixup: flags.mixup,
            enable_hsic: flags.enable_hsic,
            runs: seeds.len(),
            ccr_fpr10_mean: cm,
            ccr_fpr10_std: cs,
            closed_mean: am,
            closed_std: as_,
        });
    }
    let mut w = csv::Writer::from_path(base.output_dir.join("ablation.csv")).map_err(crate::eval::csv_io)?;
    for r in &rows {
        w.serialize(r).map_err(crate::eval::csv_io)?;
    }
    w.flush()?;
    Ok(rows)
}

/// One run per target openness under `base.output_dir/openness_<value>`.
pub fn sweep_openness(base: &ExperimentConfig, values: &[f64]) -> Result<Vec<Metrics>> {
    values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            cfg.split.known_classes = None;
            cfg.split.openness = Some(v);
            cfg.output_dir = base.output_dir.join(format!("openness_{v}"));
            Ok(run_experiment(&cfg)?.metrics)
        })
        .collect()
}

/// Finds every `metrics.json` under the given paths.
fn collect_metrics(paths: &[PathBuf], out: &mut Vec<PathBuf>) -> Result<()> {
    for p in paths {
        if p.is_file() {
            out.push(p.clone());
        } else if p.is_dir() {
            let m = p.join("metrics.json");
            if m.is_file() {
                out.push(m);
            }
            let mut children: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            children.retain(|c| c.is_dir());
            children.sort();
            collect_metrics(&children, out)?;
        } else {
            return Err(Error::Config(format!("{} does not exist", p.display())));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub config_hash: String,
    pub run_ids: Vec<String>,
    pub openness: f64,
    pub closed: (f64, f64),
    pub ccr: Vec<(f64, f64)>,
}

/// A metrics file that could not be used, with the reason.
pub type Skipped = (PathBuf, String);

/// Groups runs by configuration hash. Files that do not parse as metrics
/// are reported in the second list and skipped.
pub fn report(paths: &[PathBuf]) -> Result<(Vec<ReportRow>, Vec<Skipped>)> {
    let mut files = Vec::new();
    collect_metrics(paths, &mut files)?;
    let mut skipped = Vec::new();
    let mut groups: BTreeMap<String, Vec<Metrics>> = BTreeMap::new();
    for f in files {
        match Metrics::load(&f) {
            Ok(m) if FPR_LEVELS.iter().all(|(k, _)| m.ccr_at_fpr.contains_key(*k)) => {
                groups.entry(m.config_hash.clone()).or_default().push(m)
            }
            Ok(_) => skipped.push((f, "missing CCR@FPR columns".to_string())),
            Err(e) => skipped.push((f, e.to_string())),
        }
    }
    if groups.is_empty() {
        return Err(Error::Config("no usable metrics.json found".into()));
    }
    let rows = groups
        .into_iter()
        .map(|(hash, runs)| {
            let closed: Vec<f64> = runs.iter().map(|m| m.closed_set_accuracy).collect();
            ReportRow {
                run_ids: runs.iter().map(|m| m.run_id.clone()).collect(),
                openness: runs[0].openness,
                closed: mean_std(&closed),
                ccr: FPR_LEVELS
                    .iter()
                    .map(|(k, _)| mean_std(&runs.iter().map(|m| m.ccr_at(k)).collect::<Vec<_>>()))
                    .collect(),
                config_hash: hash,
            }
        })
        .collect();
    Ok((rows, skipped))
}

pub fn write_report<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "config_hash".to_string(),
        "runs".into(),
        "run_ids".into(),
        "openness".into(),
        "closed_mean".into(),
        "closed_std".into(),
    ];
    for (k, _) in FPR_LEVELS {
        header.push(format!("ccr_fpr_{k}_mean"));
        header.push(format!("ccr_fpr_{k}_std"));
    }
    w.write_record(&header).map_err(crate::eval::csv_io)?;
    for r in rows {
        let mut rec = vec![
            r.config_hash.clone(),
            r.run_ids.len().to_string(),
            r.run_ids.join(";"),
            r.openness.to_string(),
            r.closed.0.to_string(),
            r.closed.1.to_string(),
        ];
        for (m, s) in &r.ccr {
            rec.push(m.to_string());
            rec.push(s.to_string());
        }
        w.write_record(&rec).map_err(crate::eval::csv_io)?;
    }
    w.flush()?;
    Ok(())
}
