//! Benchmark orchestration: load or generate scenarios, fit every monitor,
//! evaluate under each setting, and render the report files.
//!
//! Nothing touches the filesystem until every stage has succeeded; callers
//! get the rendered files back and write them with [`write_outputs`].

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bundle::{load_bundle, ScenarioBundle};
use crate::error::{Error, Result};
use crate::eval::{self, label_ground_truth, EvalSetting};
use crate::monitors::{self, MonitorConfig, MonitorKind};
use crate::report::{self, ReportRow};
use crate::stats::{self, ComparisonMatrix, Metric};
use crate::synth::{self, SynthConfig};
use crate::tensor_io::read_container;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSource {
    /// Path to an OMSB file, relative to the config file.
    Bundle(PathBuf),
    Synth(SynthConfig),
    /// `count` copies of `base` with seeds `base.seed + i`.
    SynthGrid {
        base: SynthConfig,
        count: usize,
    },
}

fn default_settings() -> Vec<EvalSetting> {
    vec![EvalSetting::Ood, EvalSetting::Oms]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("oms-report")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub scenarios: Vec<ScenarioSource>,
    pub monitors: Vec<MonitorConfig>,
    #[serde(default = "default_settings")]
    pub settings: Vec<EvalSetting>,
    #[serde(default)]
    pub include_perfect_ood: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Added to every synthetic and k-means seed.
    #[serde(default)]
    pub seed: u64,
    /// Choose each setting's threshold on the other setting's ground truth.
    #[serde(default)]
    pub cross_apply_threshold: bool,
}

impl BenchmarkConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("benchmark config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("config lists no scenarios".into()));
        }
        if self.monitors.is_empty() {
            return Err(Error::Config("config lists no monitors".into()));
        }
        if self.settings.is_empty() {
            return Err(Error::Config("config lists no settings".into()));
        }
        let mut labels = BTreeSet::new();
        for m in &self.monitors {
            m.validate()?;
            let label = m.label();
            if label == eval::PERFECT_OOD_LABEL {
                return Err(Error::Config(format!("monitor label {label:?} is reserved")));
            }
            if !labels.insert(label.clone()) {
                return Err(Error::Config(format!(
                    "duplicate monitor label {label:?}; set distinct \"name\" fields"
                )));
            }
        }
        for s in &self.scenarios {
            match s {
                ScenarioSource::Synth(c) => c.validate()?,
                ScenarioSource::SynthGrid { base, count } => {
                    base.validate()?;
                    if *count == 0 {
                        return Err(Error::Config("synth_grid count must be >= 1".into()));
                    }
                }
                ScenarioSource::Bundle(_) => {}
            }
        }
        Ok(())
    }

    /// Monitor configs in canonical order (kind, then label) with the global
    /// seed folded in.
    fn ordered_monitors(&self) -> Vec<MonitorConfig> {
        let mut monitors: Vec<MonitorConfig> = self
            .monitors
            .iter()
            .map(|m| MonitorConfig {
                seed: m.seed.wrapping_add(self.seed),
                ..m.clone()
            })
            .collect();
        monitors.sort_by_key(|m| (m.kind, m.label()));
        monitors
    }

    fn settings(&self) -> Vec<EvalSetting> {
        let set: BTreeSet<EvalSetting> = self.settings.iter().copied().collect();
        set.into_iter().collect()
    }
}

pub fn read_bundle_file(path: &Path) -> Result<ScenarioBundle> {
    let file =
        fs::File::open(path).map_err(|e| Error::Config(format!("cannot open bundle {}: {e}", path.display())))?;
    let container = read_container(std::io::BufReader::new(file))?;
    load_bundle(&container)
}

fn synth_with_seed(cfg: &SynthConfig, seed: u64, name: String) -> Result<ScenarioBundle> {
    synth::generate(&SynthConfig {
        seed,
        name: Some(name),
        ..cfg.clone()
    })
}

/// Loads and validates every scenario, sorted by name.
pub fn load_scenarios(config: &BenchmarkConfig, base_dir: &Path) -> Result<Vec<ScenarioBundle>> {
    let mut bundles = Vec::new();
    for source in &config.scenarios {
        match source {
            ScenarioSource::Bundle(path) => {
                let path = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                bundles.push(read_bundle_file(&path)?);
            }
            ScenarioSource::Synth(cfg) => {
                bundles.push(synth_with_seed(
                    cfg,
                    cfg.seed.wrapping_add(config.seed),
                    cfg.scenario_name(),
                )?);
            }
            ScenarioSource::SynthGrid { base, count } => {
                let stem = base.name.clone().unwrap_or_else(|| format!("synth-{}", base.ood_kind));
                for i in 0..*count {
                    let seed = base.seed.wrapping_add(i as u64).wrapping_add(config.seed);
                    bundles.push(synth_with_seed(base, seed, format!("{stem}-{i:03}"))?);
                }
            }
        }
    }
    bundles.sort_by(|a, b| a.name.cmp(&b.name));
    if let Some(w) = bundles.windows(2).find(|w| w[0].name == w[1].name) {
        return Err(Error::Config(format!("duplicate scenario name {:?}", w[0].name)));
    }
    Ok(bundles)
}

/// In-memory results of a benchmark run.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRun {
    pub settings: Vec<EvalSetting>,
    /// Sorted by scenario, monitor kind, monitor label, setting.
    pub reports: Vec<ReportRow>,
    pub perfect_ood: Option<Vec<ReportRow>>,
    pub comparisons: Vec<ComparisonMatrix>,
}

/// Rendered output files as (file name, contents).
pub type OutputFiles = Vec<(String, String)>;

impl BenchmarkRun {
    pub fn outputs(&self) -> Result<OutputFiles> {
        let mut files = vec![
            ("reports.csv".to_owned(), report::to_csv(&self.reports)?),
            ("reports.md".to_owned(), report::to_markdown(&self.reports)),
        ];
        if let Some(perfect) = &self.perfect_ood {
            files.push(("perfect_ood.csv".to_owned(), report::to_csv(perfect)?));
        }
        for m in &self.comparisons {
            let stem = format!("comparison_{}_{}", m.setting, m.metric.as_str());
            files.push((format!("{stem}.csv"), m.to_csv()));
            files.push((format!("{stem}.md"), m.to_markdown()));
        }
        Ok(files)
    }
}

/// Comparison matrices for every setting and both metrics.
pub fn comparisons(rows: &[ReportRow], settings: &[EvalSetting]) -> Result<Vec<ComparisonMatrix>> {
    let mut out = Vec::new();
    for &setting in settings {
        for metric in [Metric::Recall, Metric::Precision] {
            out.push(stats::comparison_matrix(rows, metric, setting)?);
        }
    }
    Ok(out)
}

/// Runs the full grid on already-loaded scenarios.
pub fn run_on(config: &BenchmarkConfig, bundles: &[ScenarioBundle]) -> Result<BenchmarkRun> {
    config.validate()?;
    let settings = config.settings();
    let monitors = config.ordered_monitors();
    let mut reports = Vec::new();
    let mut failures = Vec::new();

    for bundle in bundles {
        let truths: Vec<_> = [EvalSetting::Ood, EvalSetting::Oms]
            .map(|s| label_ground_truth(bundle, s))
            .into();
        let truth_for = |s: EvalSetting| &truths[s as usize];
        for mc in &monitors {
            let label = mc.label();
            let scored = monitors::fit(bundle, mc).and_then(|m| m.score_evaluation_set(bundle));
            let scores = match scored {
                Ok(s) => s,
                Err(e) => {
                    failures.push(format!("scenario {} monitor {label}: {e}", bundle.name));
                    continue;
                }
            };
            for &setting in &settings {
                let pick = if config.cross_apply_threshold {
                    setting.other()
                } else {
                    setting
                };
                match eval::evaluate(&label, &scores, truth_for(setting), truth_for(pick)) {
                    Ok(r) => reports.push(ReportRow::from_report(&bundle.name, &r)),
                    Err(e) => failures.push(format!(
                        "scenario {} monitor {label} setting {setting}: {e}",
                        bundle.name
                    )),
                }
            }
        }
    }
    if !failures.is_empty() {
        return Err(Error::Fit(format!(
            "{} fit/eval failure(s):\n  {}",
            failures.len(),
            failures.join("\n  ")
        )));
    }

    let perfect_ood = config.include_perfect_ood.then(|| {
        bundles
            .iter()
            .map(|b| ReportRow::from_report(&b.name, &eval::simulate_perfect_ood(b)))
            .collect()
    });
    let comparisons = comparisons(&reports, &settings)?;
    Ok(BenchmarkRun {
        settings,
        reports,
        perfect_ood,
        comparisons,
    })
}

pub fn run(config: &BenchmarkConfig, base_dir: &Path) -> Result<BenchmarkRun> {
    config.validate()?;
    let bundles = load_scenarios(config, base_dir)?;
    run_on(config, &bundles)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrickRow {
    pub scenario: String,
    pub recall_all: Option<f64>,
    pub precision_all: Option<f64>,
    pub recall_filtered: Option<f64>,
    pub precision_filtered: Option<f64>,
    pub used_all: usize,
    pub used_filtered: usize,
    /// Sum of box side lengths over all boxes.
    pub box_width_all: f64,
    pub box_width_filtered: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub recall_mean: Option<f64>,
    pub recall_std: Option<f64>,
    pub precision_mean: Option<f64>,
    pub precision_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrickStudy {
    pub monitor: String,
    pub rows: Vec<TrickRow>,
    pub all_data: ArmSummary,
    pub only_correct: ArmSummary,
    /// One-sided p-value for "filtered recall > unfiltered recall".
    pub recall_p: Option<f64>,
    /// One-sided p-value for "unfiltered precision > filtered precision".
    pub precision_p: Option<f64>,
}

fn summarize(recalls: impl Iterator<Item = Option<f64>>, precisions: impl Iterator<Item = Option<f64>>) -> ArmSummary {
    let r: Vec<f64> = recalls.flatten().collect();
    let p: Vec<f64> = precisions.flatten().collect();
    let (recall_mean, recall_std) = stats::mean_std(&r);
    let (precision_mean, precision_std) = stats::mean_std(&p);
    ArmSummary {
        recall_mean,
        recall_std,
        precision_mean,
        precision_std,
    }
}

fn paired(a: impl Iterator<Item = Option<f64>>, b: impl Iterator<Item = Option<f64>>) -> (Vec<f64>, Vec<f64>) {
    a.zip(b).filter_map(|(x, y)| Some((x?, y?))).unzip()
}

fn total_box_width(model: &monitors::MonitorModel) -> f64 {
    model
        .boxes()
        .map(|classes| classes.iter().flatten().map(|b| b.total_width()).sum())
        .unwrap_or(0.0)
}

/// OtB fitted with and without misclassified training samples, compared on
/// the OMS setting.
pub fn trick_study_on(config: &BenchmarkConfig, bundles: &[ScenarioBundle]) -> Result<TrickStudy> {
    config.validate()?;
    let base = config
        .ordered_monitors()
        .into_iter()
        .find(|m| m.kind == MonitorKind::Otb)
        .ok_or_else(|| Error::Config("trick study needs an otb monitor in the config".into()))?;
    let arms = [false, true].map(|filter| MonitorConfig {
        filter_misclassified: filter,
        ..base.clone()
    });

    let mut rows = Vec::with_capacity(bundles.len());
    let mut failures = Vec::new();
    for bundle in bundles {
        let truth = label_ground_truth(bundle, EvalSetting::Oms);
        let mut results = Vec::with_capacity(2);
        for arm in &arms {
            let outcome = monitors::fit(bundle, arm).and_then(|m| {
                let scores = m.score_evaluation_set(bundle)?;
                let r = eval::evaluate(&arm.label(), &scores, &truth, &truth)?;
                Ok((r, m.used_samples(), total_box_width(&m)))
            });
            match outcome {
                Ok(v) => results.push(v),
                Err(e) => failures.push(format!(
                    "scenario {} (filter_misclassified = {}): {e}",
                    bundle.name, arm.filter_misclassified
                )),
            }
        }
        if let [(all, used_all, w_all), (filt, used_f, w_f)] = results.as_slice() {
            rows.push(TrickRow {
                scenario: bundle.name.clone(),
                recall_all: all.recall,
                precision_all: all.precision,
                recall_filtered: filt.recall,
                precision_filtered: filt.precision,
                used_all: *used_all,
                used_filtered: *used_f,
                box_width_all: *w_all,
                box_width_filtered: *w_f,
            });
        }
    }
    if !failures.is_empty() {
        return Err(Error::Fit(format!(
            "{} fit/eval failure(s):\n  {}",
            failures.len(),
            failures.join("\n  ")
        )));
    }

    let all_data = summarize(rows.iter().map(|r| r.recall_all), rows.iter().map(|r| r.precision_all));
    let only_correct = summarize(
        rows.iter().map(|r| r.recall_filtered),
        rows.iter().map(|r| r.precision_filtered),
    );
    let (rf, ra) = paired(
        rows.iter().map(|r| r.recall_filtered),
        rows.iter().map(|r| r.recall_all),
    );
    let (pa, pf) = paired(
        rows.iter().map(|r| r.precision_all),
        rows.iter().map(|r| r.precision_filtered),
    );
    Ok(TrickStudy {
        monitor: base.label(),
        rows,
        all_data,
        only_correct,
        recall_p: stats::wilcoxon_one_sided(&rf, &ra)?,
        precision_p: stats::wilcoxon_one_sided(&pa, &pf)?,
    })
}

pub fn trick_study(config: &BenchmarkConfig, base_dir: &Path) -> Result<TrickStudy> {
    config.validate()?;
    let bundles = load_scenarios(config, base_dir)?;
    trick_study_on(config, &bundles)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |v| v.to_string())
}

fn mean_sd(mean: Option<f64>, sd: Option<f64>) -> String {
    match (mean, sd) {
        (Some(m), Some(s)) => format!("{m:.2} ({s:.2})"),
        (Some(m), None) => format!("{m:.2} (NA)"),
        _ => "NA".to_owned(),
    }
}

impl TrickStudy {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scenario,recall_all,precision_all,recall_filtered,precision_filtered,used_all,used_filtered,box_width_all,box_width_filtered\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.scenario,
                opt(r.recall_all),
                opt(r.precision_all),
                opt(r.recall_filtered),
                opt(r.precision_filtered),
                r.used_all,
                r.used_filtered,
                r.box_width_all,
                r.box_width_filtered
            ));
        }
        out
    }

    /// Four statistic rows: both arms as "Mean (St. dev.)", the direction
    /// tested, and the p-values.
    pub fn to_markdown(&self) -> String {
        let p = |v: Option<f64>| v.map_or_else(|| "NA".to_owned(), stats::format_p);
        format!(
            "OMS results for {} ({} scenarios)\n\n\
             |   | Recall | Precision |\n\
             |---|---|---|\n\
             |   | Mean (St. dev.) | Mean (St. dev.) |\n\
             | All training data | {} | {} |\n\
             | Only correct data | {} | {} |\n\
             | Wilcoxon test | only correct > all | all > only correct |\n\
             | p-value | {} | {} |\n",
            self.monitor,
            self.rows.len(),
            mean_sd(self.all_data.recall_mean, self.all_data.recall_std),
            mean_sd(self.all_data.precision_mean, self.all_data.precision_std),
            mean_sd(self.only_correct.recall_mean, self.only_correct.recall_std),
            mean_sd(self.only_correct.precision_mean, self.only_correct.precision_std),
            p(self.recall_p),
            p(self.precision_p),
        )
    }

    pub fn outputs(&self) -> OutputFiles {
        vec![
            ("trick_study.csv".to_owned(), self.to_csv()),
            ("trick_study.md".to_owned(), self.to_markdown()),
        ]
    }
}

/// Writes every file into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, files: &OutputFiles) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, contents) in files {
        fs::write(dir.join(name), contents)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::OodKind;

    fn synth(seed: u64, kind: OodKind) -> SynthConfig {
        SynthConfig {
            name: None,
            seed,
            num_classes: 3,
            dim: 4,
            n_train: 30,
            n_test: 10,
            class_sep: 3.0,
            sigma: 1.0,
            ood_kind: kind,
            ood_shift: 4.0,
            outlier_fraction: 0.0,
        }
    }

    fn all_monitors() -> Vec<MonitorConfig> {
        MonitorKind::ALL.into_iter().map(MonitorConfig::new).collect()
    }

    fn config() -> BenchmarkConfig {
        BenchmarkConfig {
            scenarios: vec![
                ScenarioSource::Synth(synth(1, OodKind::Novelty)),
                ScenarioSource::Synth(synth(2, OodKind::Covariate)),
            ],
            monitors: all_monitors(),
            settings: default_settings(),
            include_perfect_ood: true,
            output_dir: default_output_dir(),
            seed: 0,
            cross_apply_threshold: false,
        }
    }

    #[test]
    fn grid_arithmetic() {
        let run = run(&config(), Path::new(".")).unwrap();
        assert_eq!(run.reports.len(), 24);
        assert_eq!(run.perfect_ood.as_ref().unwrap().len(), 2);
        assert_eq!(run.comparisons.len(), 4);
        let files = run.outputs().unwrap();
        let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
        assert!(names.contains(&"comparison_oms_recall.md"));
        assert!(names.contains(&"perfect_ood.csv"));
        // one header + 24 rows
        assert_eq!(files[0].1.lines().count(), 25);
    }

    #[test]
    fn rows_are_canonically_ordered() {
        let run = run(&config(), Path::new(".")).unwrap();
        let keys: Vec<_> = run
            .reports
            .iter()
            .map(|r| {
                let kind: MonitorKind = r.monitor.parse().unwrap();
                (r.scenario.clone(), kind, r.setting)
            })
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        let unique: BTreeSet<_> = keys.iter().collect();
        assert_eq!(unique.len(), keys.len());
    }

    #[test]
    fn config_errors() {
        let mut c = config();
        c.monitors.push(MonitorConfig::new(MonitorKind::Msp));
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = config();
        c.monitors.clear();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = config();
        c.scenarios.push(ScenarioSource::Bundle("does/not/exist.omsb".into()));
        assert!(matches!(run(&c, Path::new(".")), Err(Error::Config(_))));
        let mut c = config();
        c.scenarios.push(ScenarioSource::Synth(synth(1, OodKind::Novelty)));
        assert!(matches!(run(&c, Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn fit_failures_are_aggregated() {
        let mut c = config();
        let mut cfg = synth(3, OodKind::Other);
        // one train sample per class, all relocated: filtering empties every class
        cfg.n_train = 1;
        cfg.outlier_fraction = 0.9;
        c.scenarios = vec![ScenarioSource::Synth(cfg)];
        c.monitors = vec![
            MonitorConfig {
                filter_misclassified: true,
                ..MonitorConfig::new(MonitorKind::Otb)
            },
            MonitorConfig {
                filter_misclassified: true,
                ..MonitorConfig::new(MonitorKind::Mahalanobis)
            },
        ];
        let err = run(&c, Path::new(".")).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Fit(_)));
        assert!(msg.contains("2 fit/eval failure"), "{msg}");
    }

    #[test]
    fn config_json_shape() {
        let json = r#"{
            "scenarios": [
                {"bundle": "a.omsb"},
                {"synth": {"seed":1,"K":2,"d":2,"n_train":5,"n_test":5,"class_sep":3,"sigma":1,"ood_kind":"novelty","ood_shift":3}},
                {"synth_grid": {"base": {"seed":1,"K":2,"d":2,"n_train":5,"n_test":5,"class_sep":3,"sigma":1,"ood_kind":"covariate","ood_shift":3}, "count": 3}}
            ],
            "monitors": [{"kind": "msp"}, {"kind": "otb", "name": "otb-filtered", "filter_misclassified": true}],
            "settings": ["oms"],
            "seed": 5
        }"#;
        let c = BenchmarkConfig::from_json(json).unwrap();
        assert_eq!(c.scenarios.len(), 3);
        assert_eq!(c.settings, vec![EvalSetting::Oms]);
        assert!(!c.include_perfect_ood);
        assert!(BenchmarkConfig::from_json(r#"{"scenarios": [], "monitors": [], "bogus": 1}"#).is_err());
    }

    #[test]
    fn trick_study_with_clean_training_data() {
        let mut c = config();
        c.scenarios = vec![ScenarioSource::SynthGrid {
            base: synth(10, OodKind::Novelty),
            count: 4,
        }];
        // low noise so the head is exact on every training sample
        if let ScenarioSource::SynthGrid { base, .. } = &mut c.scenarios[0] {
            base.sigma = 0.1;
        }
        let study = trick_study(&c, Path::new(".")).unwrap();
        assert_eq!(study.rows.len(), 4);
        for r in &study.rows {
            assert_eq!(r.used_all, r.used_filtered);
            assert_eq!(r.recall_all, r.recall_filtered);
            assert_eq!(r.precision_all, r.precision_filtered);
        }
        assert_eq!(study.recall_p, None);
        assert_eq!(study.precision_p, None);
        let md = study.to_markdown();
        for row in ["All training data", "Only correct data", "Wilcoxon test", "p-value"] {
            assert!(md.contains(&format!("| {row} |")), "{md}");
        }
    }

    #[test]
    fn trick_study_requires_otb() {
        let mut c = config();
        c.monitors = vec![MonitorConfig::new(MonitorKind::Msp)];
        assert!(matches!(trick_study(&c, Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn cross_applied_thresholds_differ_from_native() {
        let mut c = config();
        c.monitors = vec![MonitorConfig::new(MonitorKind::Mahalanobis)];
        let mut cfg = synth(4, OodKind::Covariate);
        cfg.sigma = 1.5;
        c.scenarios = vec![ScenarioSource::Synth(cfg)];
        let native = run(&c, Path::new(".")).unwrap();
        c.cross_apply_threshold = true;
        let crossed = run(&c, Path::new(".")).unwrap();
        assert_eq!(native.reports[0].threshold, crossed.reports[1].threshold);
        assert_eq!(native.reports[1].threshold, crossed.reports[0].threshold);
    }
}
