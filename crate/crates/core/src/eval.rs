//! Desk-scale evaluation harness: builds labeled corpora from two synthetic
//! setups, trains detectors, and emits two reports — a per-feature
//! comparison and a cross-setup accuracy matrix — as both JSON and aligned
//! text. Every run of the same plan produces byte-identical reports.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chansim::{synthesize_sequence, Scenario};
use crate::config::{DetectorMode, PipelineConfig};
use crate::detector::{
    changes_for_corpus, evaluate, threshold_predict, train_svm, EvalReport, FeatureLayout,
    FeatureName, ThresholdConfig,
};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::pipeline::run_pipeline;

/// Accuracy slack for the cross-setup ordering checks, in percent points.
pub const ORDERING_TOLERANCE_PP: f64 = 1.0;

const DEFAULT_PLAN_TOML: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default_plan.toml"));

fn default_plan_name() -> String {
    "plan".to_string()
}

fn default_holdout_offset() -> u64 {
    1000
}

fn default_ablations() -> Vec<String> {
    [
        "aoa_delta1",
        "aoa_delta2",
        "rss_std",
        "rss_ratio",
        "motion_indicator",
        "svr_mean",
        "rss_mean",
    ]
    .map(String::from)
    .to_vec()
}

/// Two setups plus the processing configuration shared by all corpora.
/// Corpus `X` (the scenario's own seed) trains; corpus `X'` (seed shifted
/// by `holdout_seed_offset`) evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default = "default_plan_name")]
    pub name: String,
    #[serde(default = "default_holdout_offset")]
    pub holdout_seed_offset: u64,
    /// Feature keys for the single-feature comparison rows.
    #[serde(default = "default_ablations")]
    pub ablations: Vec<String>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    pub scenario_a: Scenario,
    pub scenario_b: Scenario,
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: ExperimentPlan =
            toml::from_str(text).map_err(|e| Error::Config(format!("plan parse: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    /// The built-in two-room desk plan.
    pub fn default_plan() -> Result<Self> {
        Self::from_toml(DEFAULT_PLAN_TOML)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        if self.ablations.is_empty() {
            return Err(Error::Config("plan needs at least one ablation feature".into()));
        }
        for key in &self.ablations {
            FeatureName::from_key(key)?;
        }
        if self.scenario_a.name == self.scenario_b.name {
            return Err(Error::Config("scenarios need distinct names".into()));
        }
        for sc in [&self.scenario_a, &self.scenario_b] {
            if sc.geometry.num_antennas != self.pipeline.num_antennas
                || sc.num_subcarriers != self.pipeline.num_subcarriers
                || sc.subcarrier_spacing_hz != self.pipeline.subcarrier_spacing_hz
            {
                return Err(Error::Config(format!(
                    "scenario `{}` does not match the pipeline geometry",
                    sc.name
                )));
            }
        }
        Ok(())
    }
}

/// One labeled feature corpus: the scenario reseeded and run through the
/// feature pipeline (no detector).
pub fn build_corpus(
    scenario: &Scenario,
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<Vec<FeatureVector>> {
    let mut scenario = scenario.clone();
    scenario.seed = seed;
    let frames = synthesize_sequence(&scenario)?;
    let mut cfg = cfg.clone();
    cfg.detector = DetectorMode::Svm;
    let run = run_pipeline(&cfg, &frames, None)?;
    Ok(run.features)
}

struct Corpora {
    a_train: Vec<FeatureVector>,
    a_eval: Vec<FeatureVector>,
    b_train: Vec<FeatureVector>,
    b_eval: Vec<FeatureVector>,
}

fn build_corpora(plan: &ExperimentPlan) -> Result<Corpora> {
    let cfg = &plan.pipeline;
    let off = plan.holdout_seed_offset;
    Ok(Corpora {
        a_train: build_corpus(&plan.scenario_a, plan.scenario_a.seed, cfg)?,
        a_eval: build_corpus(&plan.scenario_a, plan.scenario_a.seed + off, cfg)?,
        b_train: build_corpus(&plan.scenario_b, plan.scenario_b.seed, cfg)?,
        b_eval: build_corpus(&plan.scenario_b, plan.scenario_b.seed + off, cfg)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub name: String,
    pub lhs: String,
    pub rhs: String,
    /// `accuracy(lhs) - accuracy(rhs)` in percent points.
    pub margin_pp: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub feature: String,
    /// `threshold` for the angle-change rows, `svm` otherwise.
    pub detector: String,
    pub report: EvalReport,
}

/// Per-feature detection quality on the first setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1 {
    pub plan: String,
    pub scenario: String,
    pub train_windows: usize,
    pub eval_windows: usize,
    pub rows: Vec<FeatureRow>,
    pub orderings: Vec<OrderingCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub train: String,
    pub eval: String,
    pub report: EvalReport,
}

/// Matched / crossed / pooled training-evaluation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2 {
    pub plan: String,
    pub rows: Vec<MatrixRow>,
    pub orderings: Vec<OrderingCheck>,
}

/// Sustained-threshold detector on one tracked angle's change series.
fn threshold_row(
    corpus: &[FeatureVector],
    which: FeatureName,
    cfg: &ThresholdConfig,
) -> Result<EvalReport> {
    let deltas: Vec<Option<f64>> = changes_for_corpus(corpus)
        .iter()
        .map(|c| match which {
            FeatureName::AoaDelta1 => c.per_angle_deg.first().copied(),
            FeatureName::AoaDelta2 => c.per_angle_deg.get(1).copied(),
            _ => None,
        })
        .collect();
    let predictions = threshold_predict(&deltas, cfg);
    let mut pairs = Vec::with_capacity(predictions.len());
    for (i, &predicted) in predictions.iter().enumerate() {
        let label = corpus[i + 1]
            .label
            .ok_or_else(|| Error::Data(format!("window {} is unlabeled", corpus[i + 1].t)))?;
        pairs.push((label, predicted));
    }
    EvalReport::from_outcomes(&pairs)
}

fn feature_comparison_from(
    plan: &ExperimentPlan,
    train: &[FeatureVector],
    eval_corpus: &[FeatureVector],
) -> Result<Table1> {
    let cfg = &plan.pipeline;
    let opts = cfg.train_options();
    let mut rows = Vec::new();
    for key in &plan.ablations {
        let name = FeatureName::from_key(key)?;
        let (detector, report) = match name {
            FeatureName::AoaDelta1 | FeatureName::AoaDelta2 => {
                ("threshold", threshold_row(eval_corpus, name, &cfg.threshold)?)
            }
            _ => {
                let model = train_svm(
                    train,
                    &FeatureLayout::single(name),
                    &opts,
                    &plan.scenario_a.name,
                )?;
                ("svm", evaluate(&model, eval_corpus)?)
            }
        };
        rows.push(FeatureRow {
            feature: key.clone(),
            detector: detector.into(),
            report,
        });
    }
    let model = train_svm(train, &cfg.feature_layout()?, &opts, &plan.scenario_a.name)?;
    rows.push(FeatureRow {
        feature: "combined".into(),
        detector: "svm".into(),
        report: evaluate(&model, eval_corpus)?,
    });

    let mut orderings = Vec::new();
    if let Some(rss_row) = rows.iter().find(|r| r.feature == "rss_mean") {
        let rss_acc = rss_row.report.accuracy;
        for row in rows.iter().filter(|r| r.feature.starts_with("aoa_delta")) {
            let margin_pp = (row.report.accuracy - rss_acc) * 100.0;
            orderings.push(OrderingCheck {
                name: format!("{}_beats_rss_mean", row.feature),
                lhs: row.feature.clone(),
                rhs: "rss_mean".into(),
                margin_pp,
                satisfied: margin_pp > 0.0,
            });
        }
    }

    Ok(Table1 {
        plan: plan.name.clone(),
        scenario: plan.scenario_a.name.clone(),
        train_windows: train.len(),
        eval_windows: eval_corpus.len(),
        rows,
        orderings,
    })
}

/// Per-feature comparison on setup A, evaluated on the held-out corpus.
pub fn run_feature_comparison(plan: &ExperimentPlan) -> Result<Table1> {
    plan.validate()?;
    let train = build_corpus(&plan.scenario_a, plan.scenario_a.seed, &plan.pipeline)?;
    let eval_corpus = build_corpus(
        &plan.scenario_a,
        plan.scenario_a.seed + plan.holdout_seed_offset,
        &plan.pipeline,
    )?;
    feature_comparison_from(plan, &train, &eval_corpus)
}

fn matrix_from(plan: &ExperimentPlan, corpora: &Corpora) -> Result<Table2> {
    let cfg = &plan.pipeline;
    let opts = cfg.train_options();
    let layout = cfg.feature_layout()?;
    let name_a = plan.scenario_a.name.clone();
    let name_b = plan.scenario_b.name.clone();
    let eval_a = format!("{name_a}'");
    let eval_b = format!("{name_b}'");
    let name_ab = format!("{name_a}+{name_b}");

    let model_a = train_svm(&corpora.a_train, &layout, &opts, &name_a)?;
    let model_b = train_svm(&corpora.b_train, &layout, &opts, &name_b)?;
    // Pooled training concatenates the corpora; the single seam pair
    // contributes one mixed-setup sample, which is negligible at this size.
    let pooled: Vec<FeatureVector> = corpora
        .a_train
        .iter()
        .chain(&corpora.b_train)
        .cloned()
        .collect();
    let model_ab = train_svm(&pooled, &layout, &opts, &name_ab)?;

    let rows = vec![
        MatrixRow {
            train: name_a.clone(),
            eval: eval_a.clone(),
            report: evaluate(&model_a, &corpora.a_eval)?,
        },
        MatrixRow {
            train: name_a.clone(),
            eval: eval_b.clone(),
            report: evaluate(&model_a, &corpora.b_eval)?,
        },
        MatrixRow {
            train: name_b.clone(),
            eval: eval_b.clone(),
            report: evaluate(&model_b, &corpora.b_eval)?,
        },
        MatrixRow {
            train: name_b.clone(),
            eval: eval_a.clone(),
            report: evaluate(&model_b, &corpora.a_eval)?,
        },
        MatrixRow {
            train: name_ab.clone(),
            eval: eval_a.clone(),
            report: evaluate(&model_ab, &corpora.a_eval)?,
        },
        MatrixRow {
            train: name_ab.clone(),
            eval: eval_b.clone(),
            report: evaluate(&model_ab, &corpora.b_eval)?,
        },
    ];

    let acc = |train: &str, eval: &str| -> f64 {
        rows.iter()
            .find(|r| r.train == train && r.eval == eval)
            .map(|r| r.report.accuracy)
            .unwrap_or(f64::NAN)
    };
    let check = |name: &str, lhs: (&str, &str), rhs: (&str, &str)| -> OrderingCheck {
        let margin_pp = (acc(lhs.0, lhs.1) - acc(rhs.0, rhs.1)) * 100.0;
        OrderingCheck {
            name: name.to_string(),
            lhs: format!("{}->{}", lhs.0, lhs.1),
            rhs: format!("{}->{}", rhs.0, rhs.1),
            margin_pp,
            satisfied: margin_pp >= -ORDERING_TOLERANCE_PP,
        }
    };
    let orderings = vec![
        check("matched_ge_cross_on_a", (&name_a, &eval_a), (&name_b, &eval_a)),
        check("matched_ge_cross_on_b", (&name_b, &eval_b), (&name_a, &eval_b)),
        check("pooled_ge_cross_on_a", (&name_ab, &eval_a), (&name_b, &eval_a)),
        check("pooled_ge_cross_on_b", (&name_ab, &eval_b), (&name_a, &eval_b)),
    ];

    Ok(Table2 {
        plan: plan.name.clone(),
        rows,
        orderings,
    })
}

/// Matched / crossed / pooled matrix over both setups.
pub fn run_cross_setup_matrix(plan: &ExperimentPlan) -> Result<Table2> {
    plan.validate()?;
    let corpora = build_corpora(plan)?;
    matrix_from(plan, &corpora)
}

fn render_orderings(out: &mut String, orderings: &[OrderingCheck]) {
    use std::fmt::Write;
    for o in orderings {
        writeln!(
            out,
            "check {:<24} {:>24} vs {:<24} {:+8.2} pp  [{}]",
            o.name,
            o.lhs,
            o.rhs,
            o.margin_pp,
            if o.satisfied { "ok" } else { "VIOLATED" }
        )
        .expect("string write");
    }
}

pub fn render_table1(t: &Table1) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(out, "feature comparison  plan={} scenario={}", t.plan, t.scenario).unwrap();
    writeln!(
        out,
        "train windows: {}   eval windows: {}",
        t.train_windows, t.eval_windows
    )
    .unwrap();
    writeln!(out).unwrap();
    writeln!(
        out,
        "{:<18} {:<10} {:>9} {:>9} {:>12}",
        "feature", "detector", "accuracy", "missed", "false_alarm"
    )
    .unwrap();
    for r in &t.rows {
        writeln!(
            out,
            "{:<18} {:<10} {:>9.4} {:>9.4} {:>12.4}",
            r.feature,
            r.detector,
            r.report.accuracy,
            r.report.missed_detection,
            r.report.false_alarm
        )
        .unwrap();
    }
    writeln!(out).unwrap();
    render_orderings(&mut out, &t.orderings);
    out
}

pub fn render_table2(t: &Table2) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(out, "cross-setup matrix  plan={}", t.plan).unwrap();
    writeln!(out).unwrap();
    writeln!(
        out,
        "{:<10} {:<10} {:>9} {:>9} {:>12} {:>9}",
        "train", "eval", "accuracy", "missed", "false_alarm", "windows"
    )
    .unwrap();
    for r in &t.rows {
        writeln!(
            out,
            "{:<10} {:<10} {:>9.4} {:>9.4} {:>12.4} {:>9}",
            r.train,
            r.eval,
            r.report.accuracy,
            r.report.missed_detection,
            r.report.false_alarm,
            r.report.windows
        )
        .unwrap();
    }
    writeln!(out).unwrap();
    render_orderings(&mut out, &t.orderings);
    out
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("serialize report: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// Writes `table1.json`, `table1.txt`, `table2.json`, `table2.txt`.
pub fn write_suite(table1: &Table1, table2: &Table2, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let entries = [
        ("table1.json", to_pretty_json(table1)?),
        ("table1.txt", render_table1(table1)),
        ("table2.json", to_pretty_json(table2)?),
        ("table2.txt", render_table2(table2)),
    ];
    let mut files = Vec::with_capacity(entries.len());
    for (name, content) in entries {
        let path = out_dir.join(name);
        std::fs::write(&path, content)?;
        files.push(path);
    }
    Ok(files)
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub table1: Table1,
    pub table2: Table2,
    pub files: Vec<PathBuf>,
    /// Ordering checks that did not hold; empty on a healthy run.
    pub violations: Vec<String>,
}

/// Runs both experiments, writes all four reports, and lists any ordering
/// violations (the reports are written either way).
pub fn run_suite(plan: &ExperimentPlan, out_dir: &Path) -> Result<SuiteOutcome> {
    plan.validate()?;
    let corpora = build_corpora(plan)?;
    let table1 = feature_comparison_from(plan, &corpora.a_train, &corpora.a_eval)?;
    let table2 = matrix_from(plan, &corpora)?;
    let files = write_suite(&table1, &table2, out_dir)?;
    let violations = table1
        .orderings
        .iter()
        .chain(&table2.orderings)
        .filter(|o| !o.satisfied)
        .map(|o| format!("{}: {} vs {} ({:+.2} pp)", o.name, o.lhs, o.rhs, o.margin_pp))
        .collect();
    Ok(SuiteOutcome {
        table1,
        table2,
        files,
        violations,
    })
}
