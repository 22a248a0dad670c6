//! Implementations of the `adglab` subcommands.
//!
//! Every file is written atomically, and no output carries timestamps, so
//! repeating a command with the same inputs reproduces its outputs byte for
//! byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{Category, Instance};
use crate::datagen::{generate, sha256_hex, DatasetManifest};
use crate::divergence::{ConditionalFamily, DiscreteDomainFamily};
use crate::error::{Error, Result};
use crate::io::{read_json, read_jsonl, to_jsonl, write_atomic, write_json};
use crate::losses::DgVariant;
use crate::metrics::{frequency_predictions, predcls_recall, MetricsReport, PredClsMode};
use crate::models::Model;
use crate::split::{build_splits, SplitConfig, SplitCounts, SplitResult, SPLIT_NAMES};
use crate::stats::FrequencyTable;
use crate::trainer::{
    evaluate, fit_tabular_adg, fit_tabular_jsd, predcls_r1, train, LabelSpace, Scoring, TabularFitConfig, TrainConfig,
    TrainOutcome,
};

pub const SPLIT_MANIFEST: &str = "split_manifest.json";
pub const RUN_SUMMARY: &str = "summary.json";

/// `data.jsonl` → `data.manifest.json`.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    let stem = dataset.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dataset.with_file_name(format!("{stem}.manifest.json"))
}

pub struct GenOutput {
    pub dataset: PathBuf,
    pub manifest: DatasetManifest,
}

pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<GenOutput> {
    let g = generate(&cfg.generator)?;
    let bytes = to_jsonl(&g.instances)?;
    let manifest = DatasetManifest::new(&g, &cfg.generator, bytes.as_bytes());
    write_atomic(out, bytes.as_bytes())?;
    write_json(&manifest_path(out), &manifest)?;
    info!("wrote {} instances in {} images to {}", manifest.instances, manifest.images, out.display());
    Ok(GenOutput { dataset: out.to_path_buf(), manifest })
}

/// Reads a dataset file, verifying it against its manifest when one exists.
pub fn load_dataset(path: &Path) -> Result<(Vec<Instance>, Option<DatasetManifest>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let manifest = if mpath.exists() {
        let m: DatasetManifest = read_json(&mpath)?;
        m.verify(&bytes)?;
        Some(m)
    } else {
        warn!("no manifest next to {}; checksum not verified", path.display());
        None
    };
    Ok((read_jsonl(path)?, manifest))
}

fn infer_labels<'a>(instances: impl IntoIterator<Item = &'a Instance>) -> LabelSpace {
    let (mut k, mut m) = (0, 0);
    for inst in instances {
        m = m.max(inst.object_label + 1);
        k = k.max(inst.predicate_labels.iter().max().map_or(0, |p| p + 1));
    }
    LabelSpace { num_predicates: k, num_objects: m }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format: String,
    pub split: SplitConfig,
    pub labels: LabelSpace,
    pub dataset_sha256: String,
    pub counts: Vec<SplitCounts>,
    pub category_sets: BTreeMap<String, Vec<Category>>,
    /// SHA-256 of each split file.
    pub files: BTreeMap<String, String>,
    pub dropped: Vec<crate::split::Dropped>,
    pub warnings: Vec<String>,
}

pub fn split_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.jsonl"))
}

pub fn cmd_split(dataset: &Path, cfg: &ExperimentConfig, out_dir: &Path) -> Result<SplitManifest> {
    let (instances, manifest) = load_dataset(dataset)?;
    let labels = match &manifest {
        Some(m) => LabelSpace { num_predicates: m.num_predicates, num_objects: m.num_objects },
        None => infer_labels(&instances),
    };
    let instances =
        if cfg.metrics.filter.is_identity() { instances } else { cfg.metrics.filter.apply(&instances) };
    let result = build_splits(&instances, &cfg.split)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = BTreeMap::new();
    for (name, part) in SPLIT_NAMES.iter().zip(result.parts()) {
        let bytes = to_jsonl(part)?;
        write_atomic(&split_file(out_dir, name), bytes.as_bytes())?;
        files.insert(name.to_string(), sha256_hex(bytes.as_bytes()));
    }
    let category_sets = SPLIT_NAMES
        .iter()
        .zip(result.category_sets())
        .map(|(n, s)| (n.to_string(), s.into_iter().collect()))
        .collect();
    let dataset_bytes = std::fs::read(dataset).map_err(|e| Error::io(dataset, e))?;
    let out = SplitManifest {
        format: "adglab-splits-v1".into(),
        split: cfg.split,
        labels,
        dataset_sha256: sha256_hex(&dataset_bytes),
        counts: result.counts(),
        category_sets,
        files,
        dropped: result.dropped.clone(),
        warnings: result.warnings.clone(),
    };
    write_json(&out_dir.join(SPLIT_MANIFEST), &out)?;
    Ok(out)
}

/// Reads the four split files of `dir`, checking them against the manifest.
pub fn load_splits(dir: &Path) -> Result<(SplitResult, SplitManifest)> {
    let manifest: SplitManifest = read_json(&dir.join(SPLIT_MANIFEST))?;
    let mut parts = Vec::with_capacity(4);
    for name in SPLIT_NAMES {
        let path = split_file(dir, name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if manifest.files.get(name).is_some_and(|h| *h != sha256_hex(&bytes)) {
            return Err(Error::Invariant(format!("{} does not match the split manifest", path.display())));
        }
        parts.push(read_jsonl::<Instance>(&path)?);
    }
    let mut it = parts.into_iter();
    let mut next = || it.next().unwrap_or_default();
    let result = SplitResult {
        train: next(),
        trainval: next(),
        testval: next(),
        test: next(),
        dropped: manifest.dropped.clone(),
        warnings: manifest.warnings.clone(),
    };
    result.check_invariants()?;
    Ok((result, manifest))
}

/// R@1 of one split under the scorings reported by `compare`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub r1: f64,
    /// R@1 with the union branch removed from the score.
    pub r1_without_union: f64,
    /// R@1 of the union branch alone.
    pub union_r1: f64,
    pub frequency_r1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: DgVariant,
    pub lambda: f64,
    pub seed: u64,
    pub best_step: Option<usize>,
    pub splits: BTreeMap<String, SplitScores>,
}

fn frequency_r1(table: &FrequencyTable, instances: &[Instance], mode: PredClsMode) -> Result<f64> {
    predcls_recall(&frequency_predictions(table, instances), 1, mode)
}

/// A trained variant with its scores.
pub struct TrainedRun {
    pub outcome: TrainOutcome,
    pub summary: RunSummary,
    /// Full metrics of the selected checkpoint per evaluated split.
    pub reports: BTreeMap<String, MetricsReport>,
}

/// Trains one variant and scores the selected checkpoint on trainval,
/// testval and test.
pub fn train_and_score(tc: &TrainConfig, splits: &SplitResult, labels: LabelSpace, mode: PredClsMode) -> Result<TrainedRun> {
    let table = FrequencyTable::from_instances(&splits.train, labels.num_predicates, labels.num_objects);
    let outcome = train(tc, splits, labels)?;
    let mut scores = BTreeMap::new();
    let mut reports = BTreeMap::new();
    for name in ["trainval", "testval", "test"] {
        let part = splits.by_name(name).unwrap_or_default();
        if part.is_empty() {
            continue;
        }
        let report = evaluate(&outcome.best, part, Scoring::Triplet, mode)?;
        scores.insert(
            name.to_string(),
            SplitScores {
                r1: report.predcls_r1,
                r1_without_union: predcls_r1(&outcome.best, part, Scoring::WithoutUnion)?,
                union_r1: predcls_r1(&outcome.best, part, Scoring::Union)?,
                frequency_r1: frequency_r1(&table, part, mode)?,
            },
        );
        reports.insert(name.to_string(), report);
    }
    let summary = RunSummary {
        variant: tc.variant,
        lambda: tc.lambda(),
        seed: tc.seed,
        best_step: outcome.log.best_step,
        splits: scores,
    };
    Ok(TrainedRun { outcome, summary, reports })
}

/// Generates, splits and trains every configured variant in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    let g = generate(&cfg.generator)?;
    let instances =
        if cfg.metrics.filter.is_identity() { g.instances } else { cfg.metrics.filter.apply(&g.instances) };
    let splits = build_splits(&instances, &cfg.split)?;
    let labels = LabelSpace { num_predicates: cfg.generator.num_predicates, num_objects: cfg.generator.num_objects };
    cfg.train_configs()
        .iter()
        .map(|tc| {
            info!("training {} (seed {})", tc.variant.label(), tc.seed);
            train_and_score(tc, &splits, labels, cfg.metrics.mode).map(|r| r.summary)
        })
        .collect()
}

/// Trains every configured variant (or only `only`) into `out_dir/<variant>`.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    splits_dir: &Path,
    out_dir: &Path,
    only: Option<DgVariant>,
) -> Result<Vec<RunSummary>> {
    let (splits, manifest) = load_splits(splits_dir)?;
    let mut summaries = Vec::new();
    for tc in cfg.train_configs() {
        if only.is_some_and(|v| v != tc.variant) {
            continue;
        }
        let run_dir = out_dir.join(tc.variant.label());
        std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
        info!("training {} into {}", tc.variant.label(), run_dir.display());
        let run = train_and_score(&tc, &splits, manifest.labels, cfg.metrics.mode)?;
        let resolved = toml::to_string(&tc).map_err(|e| Error::Validation(format!("config serialization: {e}")))?;
        write_atomic(&run_dir.join("config.toml"), resolved.as_bytes())?;
        write_atomic(&run_dir.join("runlog.csv"), run.outcome.log.to_csv().as_bytes())?;
        run.outcome.best.save(&run_dir.join("checkpoint_best.json"))?;
        run.outcome.last.save(&run_dir.join("checkpoint_last.json"))?;
        for (name, report) in &run.reports {
            write_json(&run_dir.join(format!("metrics_{name}.json")), report)?;
        }
        write_json(&run_dir.join(RUN_SUMMARY), &run.summary)?;
        summaries.push(run.summary);
    }
    if summaries.is_empty() {
        return Err(Error::Validation("no configured variant matches the request".into()));
    }
    Ok(summaries)
}

/// Evaluates a checkpoint on one split file; also writes a per-class CSV
/// beside `out`.
pub fn cmd_eval(checkpoint: &Path, split: &Path, out: &Path, mode: PredClsMode, scoring: Scoring) -> Result<MetricsReport> {
    let model = Model::load(checkpoint)?;
    let instances: Vec<Instance> = read_jsonl(split)?;
    let report = evaluate(&model, &instances, scoring, mode)?;
    write_json(out, &report)?;
    write_atomic(&out.with_extension("per_class.csv"), report.per_class_csv().as_bytes())?;
    Ok(report)
}

/// A fixture file: one family and the identities it must satisfy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TheoremFixture {
    Domain { family: DiscreteDomainFamily },
    Conditional { family: ConditionalFamily },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub fixture: String,
    pub check: String,
    pub value: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl TheoremCheck {
    fn new(fixture: &str, check: &str, value: f64, expected: f64, tolerance: f64) -> Self {
        Self {
            fixture: fixture.into(),
            check: check.into(),
            value,
            expected,
            tolerance,
            passed: (value - expected).abs() <= tolerance,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub checks: Vec<TheoremCheck>,
}

impl TheoremReport {
    pub fn all_passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{} {} {}: value {:.12} expected {:.12} (tol {:e})",
                if c.passed { "PASS" } else { "FAIL" },
                c.fixture,
                c.check,
                c.value,
                c.expected,
                c.tolerance
            );
        }
        out
    }
}

pub const EXACT_TOLERANCE: f64 = 1e-10;
pub const TRAINED_TOLERANCE: f64 = 1e-2;

pub fn check_fixture(name: &str, fixture: &TheoremFixture) -> Result<Vec<TheoremCheck>> {
    let mut checks = Vec::new();
    match fixture {
        TheoremFixture::Domain { family } => {
            let d = family.optimal_discriminator();
            checks.push(TheoremCheck::new(
                name,
                "kl identity at D*",
                family.adg_objective(&d.values),
                family.kl_identity_value(),
                EXACT_TOLERANCE,
            ));
            let fit = fit_tabular_adg(family, &TabularFitConfig::softmax())?;
            checks.push(TheoremCheck::new(name, "kl identity trained", fit.objective, fit.optimum, TRAINED_TOLERANCE));
        }
        TheoremFixture::Conditional { family } => {
            let kld: Vec<Vec<Vec<f64>>> =
                family.optimal_kld_discriminators().into_iter().map(|d| d.values).collect();
            checks.push(TheoremCheck::new(
                name,
                "conditional kl identity at D*",
                family.cadg_kld_objective(&kld),
                family.conditional_kl_identity_value(),
                EXACT_TOLERANCE,
            ));
            checks.push(TheoremCheck::new(
                name,
                "jsd identity at D*",
                family.cadg_jsd_objective(&family.optimal_jsd_discriminator()),
                family.jsd_identity_value(),
                EXACT_TOLERANCE,
            ));
            let fit = fit_tabular_jsd(family, &TabularFitConfig::binary())?;
            checks.push(TheoremCheck::new(name, "jsd identity trained", fit.objective, fit.optimum, TRAINED_TOLERANCE));
        }
    }
    Ok(checks)
}

/// Checks every `*.json` fixture in `dir`, in file-name order.
pub fn cmd_verify_theorems(dir: &Path) -> Result<TheoremReport> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Validation(format!("no fixtures in {}", dir.display())));
    }
    let mut report = TheoremReport::default();
    for path in paths {
        let fixture: TheoremFixture = read_json(&path)?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        report.checks.extend(check_fixture(&name, &fixture)?);
    }
    Ok(report)
}

/// One row of the comparison table, averaged over the runs of a variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub runs: usize,
    /// Mean R@1 per split.
    pub r1: BTreeMap<String, f64>,
    /// Relative change against the baseline row, in percent.
    pub delta_percent: BTreeMap<String, f64>,
    /// Mean union-branch contribution (full minus without-union R@1) per split.
    pub union_contribution: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

const COMPARE_SPLITS: [&str; 3] = ["trainval", "testval", "test"];
const COMPARE_ORDER: [DgVariant; 5] =
    [DgVariant::None, DgVariant::DeepC, DgVariant::AdgKld, DgVariant::CadgKld, DgVariant::CadgJsd];

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Builds the comparison from run summaries. Requires a baseline run.
pub fn compare(summaries: &[RunSummary]) -> Result<Comparison> {
    let baseline: Vec<&RunSummary> = summaries.iter().filter(|s| s.variant == DgVariant::None).collect();
    if baseline.is_empty() {
        return Err(Error::Validation("comparison needs at least one baseline run".into()));
    }
    let split_mean = |runs: &[&RunSummary], f: &dyn Fn(&SplitScores) -> f64| -> BTreeMap<String, f64> {
        COMPARE_SPLITS
            .iter()
            .filter_map(|&name| {
                let xs: Vec<f64> = runs.iter().filter_map(|r| r.splits.get(name)).map(f).collect();
                (!xs.is_empty()).then(|| (name.to_string(), mean(&xs)))
            })
            .collect()
    };
    let base_r1 = split_mean(&baseline, &|s| s.r1);
    let deltas = |r1: &BTreeMap<String, f64>| -> BTreeMap<String, f64> {
        r1.iter()
            .filter_map(|(k, v)| {
                let b = *base_r1.get(k)?;
                let d = if b == 0.0 { if *v == 0.0 { 0.0 } else { f64::INFINITY } } else { 100.0 * (v - b) / b };
                Some((k.clone(), d))
            })
            .collect()
    };
    let mut rows = Vec::new();
    let freq = split_mean(&baseline, &|s| s.frequency_r1);
    rows.push(ComparisonRow {
        method: "Frequency".into(),
        runs: baseline.len(),
        delta_percent: deltas(&freq),
        r1: freq,
        union_contribution: BTreeMap::new(),
    });
    for v in COMPARE_ORDER {
        let runs: Vec<&RunSummary> = summaries.iter().filter(|s| s.variant == v).collect();
        if runs.is_empty() {
            continue;
        }
        let r1 = split_mean(&runs, &|s| s.r1);
        rows.push(ComparisonRow {
            method: v.label().to_string(),
            runs: runs.len(),
            delta_percent: deltas(&r1),
            r1,
            union_contribution: split_mean(&runs, &|s| s.r1 - s.r1_without_union),
        });
    }
    Ok(Comparison { rows })
}

impl Comparison {
    pub fn row(&self, method: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Markdown table of R@1 with relative change to the baseline.
    pub fn render(&self) -> String {
        let mut out = String::from("| method | runs | trainval | testval | test |\n|---|---|---|---|---|\n");
        for row in &self.rows {
            let cell = |s: &str| match (row.r1.get(s), row.delta_percent.get(s)) {
                (Some(v), Some(d)) => format!("{:.2} ({:+.1}%)", 100.0 * v, d),
                (Some(v), None) => format!("{:.2}", 100.0 * v),
                _ => "-".into(),
            };
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                row.method,
                row.runs,
                cell("trainval"),
                cell("testval"),
                cell("test")
            );
        }
        out
    }
}

/// Reads `summary.json` from each run directory (or from each of its
/// immediate subdirectories when the directory has none) and compares.
pub fn cmd_compare(run_dirs: &[PathBuf], out: &Path) -> Result<Comparison> {
    let mut summaries = Vec::new();
    for dir in run_dirs {
        let direct = dir.join(RUN_SUMMARY);
        if direct.exists() {
            summaries.push(read_json::<RunSummary>(&direct)?);
            continue;
        }
        let mut subs: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path().join(RUN_SUMMARY)))
            .filter(|p| p.exists())
            .collect();
        if subs.is_empty() {
            return Err(Error::Validation(format!("{} holds no run summary", dir.display())));
        }
        subs.sort();
        for p in subs {
            summaries.push(read_json::<RunSummary>(&p)?);
        }
    }
    let cmp = compare(&summaries)?;
    write_atomic(out, cmp.render().as_bytes())?;
    write_json(&out.with_extension("json"), &cmp)?;
    Ok(cmp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(variant: DgVariant, r1: [f64; 3]) -> RunSummary {
        let splits = COMPARE_SPLITS
            .iter()
            .zip(r1)
            .map(|(n, v)| (n.to_string(), SplitScores { r1: v, r1_without_union: v / 2.0, union_r1: v, frequency_r1: 0.3 }))
            .collect();
        RunSummary { variant, lambda: 0.0, seed: 0, best_step: Some(1), splits }
    }

    #[test]
    fn baseline_only_comparison_has_zero_deltas() {
        let cmp = compare(&[summary(DgVariant::None, [0.5, 0.4, 0.2])]).unwrap();
        let base = cmp.row("baseline").unwrap();
        assert!(base.delta_percent.values().all(|&d| d == 0.0));
        assert_eq!(base.delta_percent.len(), 3);
    }

    #[test]
    fn relative_deltas_and_seed_means() {
        let cmp = compare(&[
            summary(DgVariant::None, [0.5, 0.4, 0.2]),
            summary(DgVariant::CadgKld, [0.45, 0.4, 0.25]),
            summary(DgVariant::CadgKld, [0.45, 0.4, 0.35]),
        ])
        .unwrap();
        let row = cmp.row("cadg-kld").unwrap();
        assert_eq!(row.runs, 2);
        assert!((row.delta_percent["test"] - 50.0).abs() < 1e-9);
        assert!((row.delta_percent["trainval"] + 10.0).abs() < 1e-9);
        assert!((row.union_contribution["test"] - 0.15).abs() < 1e-12);
        assert!(cmp.render().contains("| cadg-kld | 2 |"));
    }

    #[test]
    fn comparison_requires_baseline() {
        assert!(compare(&[summary(DgVariant::AdgKld, [0.1, 0.1, 0.1])]).is_err());
    }

    #[test]
    fn manifest_sits_beside_dataset() {
        assert_eq!(manifest_path(Path::new("/x/data.jsonl")), PathBuf::from("/x/data.manifest.json"));
    }
}
