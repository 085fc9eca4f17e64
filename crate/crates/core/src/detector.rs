//! Motion decision from the feature stream: AoA-change monitoring fused
//! with the window features by a linear soft-margin SVM.
//!
//! Training minimizes the primal hinge objective
//! `(1/2)||w||^2 + C * sum max(0, 1 - y*(w.x + b))` by seeded stochastic
//! subgradient descent (Pegasos schedule, bias as an augmented coordinate,
//! iterates projected onto the `1/sqrt(lambda)` ball). Features are
//! z-scored with training-set statistics, so positive rescaling of the raw
//! features never changes a decision.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aoa::AoaEstimate;
use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Surrogate change, in degrees, charged for an angle with no counterpart
/// in the other window (half the scan range).
pub const UNMATCHED_DELTA_DEG: f64 = 90.0;

/// Angle movement between consecutive windows.
#[derive(Debug, Clone, PartialEq)]
pub struct AoaChange {
    /// Largest matched difference (or surrogate); `None` when both windows
    /// had no angles at all.
    pub max_delta_deg: Option<f64>,
    /// Per-angle differences aligned to the current window's angles
    /// (strongest first); unmatched angles carry the surrogate.
    pub per_angle_deg: Vec<f64>,
    /// Set when the two windows disagreed on the number of angles.
    pub unmatched: bool,
}

/// Greedy nearest-angle matching between consecutive estimates; returns the
/// per-angle and maximum absolute differences. Symmetric in its arguments
/// at the `max_delta_deg` level.
pub fn aoa_change(prev: &AoaEstimate, curr: &AoaEstimate) -> AoaChange {
    let mut prev_left: Vec<f64> = prev.angles_deg.clone();
    let mut curr_left: Vec<(usize, f64)> = curr.angles_deg.iter().copied().enumerate().collect();
    if prev_left.is_empty() && curr_left.is_empty() {
        return AoaChange {
            max_delta_deg: None,
            per_angle_deg: Vec::new(),
            unmatched: false,
        };
    }
    let mut per_angle = vec![UNMATCHED_DELTA_DEG; curr_left.len()];
    let mut max_delta: f64 = 0.0;
    while !prev_left.is_empty() && !curr_left.is_empty() {
        let mut best = (0usize, 0usize, f64::INFINITY);
        for (i, p) in prev_left.iter().enumerate() {
            for (j, (_, c)) in curr_left.iter().enumerate() {
                let d = (p - c).abs();
                if d < best.2 {
                    best = (i, j, d);
                }
            }
        }
        let (i, j, d) = best;
        per_angle[curr_left[j].0] = d;
        max_delta = max_delta.max(d);
        prev_left.swap_remove(i);
        curr_left.swap_remove(j);
    }
    let unmatched = !prev_left.is_empty() || !curr_left.is_empty();
    if unmatched {
        max_delta = max_delta.max(UNMATCHED_DELTA_DEG);
    }
    AoaChange {
        max_delta_deg: Some(max_delta),
        per_angle_deg: per_angle,
        unmatched,
    }
}

/// Named features the detector can consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureName {
    AoaDelta1,
    AoaDelta2,
    RssStd,
    RssRatio,
    MotionIndicator,
    SvrMean,
    RssMean,
}

impl FeatureName {
    pub fn key(self) -> &'static str {
        match self {
            FeatureName::AoaDelta1 => "aoa_delta1",
            FeatureName::AoaDelta2 => "aoa_delta2",
            FeatureName::RssStd => "rss_std",
            FeatureName::RssRatio => "rss_ratio",
            FeatureName::MotionIndicator => "motion_indicator",
            FeatureName::SvrMean => "svr_mean",
            FeatureName::RssMean => "rss_mean",
        }
    }

    pub fn from_key(key: &str) -> Result<Self> {
        Ok(match key {
            "aoa_delta1" => FeatureName::AoaDelta1,
            "aoa_delta2" => FeatureName::AoaDelta2,
            "rss_std" => FeatureName::RssStd,
            "rss_ratio" => FeatureName::RssRatio,
            "motion_indicator" => FeatureName::MotionIndicator,
            "svr_mean" => FeatureName::SvrMean,
            "rss_mean" => FeatureName::RssMean,
            other => return Err(Error::Config(format!("unknown feature name {other:?}"))),
        })
    }
}

/// Ordered feature set a model was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout(pub Vec<FeatureName>);

impl Default for FeatureLayout {
    fn default() -> Self {
        FeatureLayout(vec![
            FeatureName::AoaDelta1,
            FeatureName::AoaDelta2,
            FeatureName::RssStd,
            FeatureName::RssRatio,
            FeatureName::MotionIndicator,
            FeatureName::SvrMean,
        ])
    }
}

impl FeatureLayout {
    pub fn single(name: FeatureName) -> Self {
        FeatureLayout(vec![name])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// AoA estimate reconstructed from a feature record (for change tracking).
pub fn estimate_from_features(fv: &FeatureVector) -> AoaEstimate {
    let angles: Vec<f64> = [fv.aoa1_deg, fv.aoa2_deg].into_iter().flatten().collect();
    let peaks: Vec<f64> = (0..angles.len()).map(|i| (angles.len() - i) as f64).collect();
    let underresolved = angles.is_empty();
    AoaEstimate {
        t: fv.t,
        angles_deg: angles,
        peak_values: peaks,
        underresolved,
    }
}

/// Changes between consecutive feature records; entry `i` describes window
/// `corpus[i + 1]` against `corpus[i]`.
pub fn changes_for_corpus(corpus: &[FeatureVector]) -> Vec<AoaChange> {
    corpus
        .windows(2)
        .map(|pair| {
            aoa_change(
                &estimate_from_features(&pair[0]),
                &estimate_from_features(&pair[1]),
            )
        })
        .collect()
}

/// Raw (unstandardized) value of one named feature; `None` when the record
/// cannot supply it (missing AoAs or empty SVR).
pub fn raw_feature(name: FeatureName, fv: &FeatureVector, change: &AoaChange) -> Option<f64> {
    match name {
        FeatureName::AoaDelta1 => change.per_angle_deg.first().copied(),
        FeatureName::AoaDelta2 => change.per_angle_deg.get(1).copied(),
        FeatureName::RssStd => Some(fv.rss_std_db),
        FeatureName::RssRatio => Some(fv.rss_ratio),
        FeatureName::MotionIndicator => Some(fv.motion_indicator),
        FeatureName::SvrMean => {
            if fv.svr.is_empty() {
                None
            } else {
                Some(fv.svr.iter().sum::<f64>() / fv.svr.len() as f64)
            }
        }
        FeatureName::RssMean => Some(fv.rss_mean_db),
    }
}

/// Trained linear model plus the standardization statistics needed to
/// score new windows. Serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmModel {
    pub layout_version: u32,
    pub layout: FeatureLayout,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
    pub trained_on: String,
}

impl SvmModel {
    pub fn validate(&self) -> Result<()> {
        let d = self.layout.len();
        if self.weights.len() != d
            || self.feature_means.len() != d
            || self.feature_stds.len() != d
        {
            return Err(Error::Config(format!(
                "model dimensions inconsistent with its {d}-feature layout"
            )));
        }
        if self.feature_stds.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("model feature stds must be positive".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite()) || !self.bias.is_finite() {
            return Err(Error::Config("model weights must be finite".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: SvmModel =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("model parse: {e}")))?;
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { c: 1.0, epochs: 200, seed: 0 }
    }
}

/// Design matrix rows for windows `corpus[1..]` (the first window has no
/// predecessor for change tracking): raw feature values with `None` for
/// missing entries, plus `+1/-1` labels.
fn design_rows(
    corpus: &[FeatureVector],
    layout: &FeatureLayout,
) -> Result<(Vec<Vec<Option<f64>>>, Vec<f64>)> {
    if corpus.len() < 2 {
        return Err(Error::Training(format!(
            "corpus of {} windows is too small (need >= 2 for change tracking)",
            corpus.len()
        )));
    }
    let changes = changes_for_corpus(corpus);
    let mut rows = Vec::with_capacity(changes.len());
    let mut labels = Vec::with_capacity(changes.len());
    for (fv, change) in corpus[1..].iter().zip(&changes) {
        fv.validate()?;
        let label = fv.label.ok_or_else(|| {
            Error::Training(format!("window {} is unlabeled", fv.t))
        })?;
        rows.push(
            layout
                .0
                .iter()
                .map(|&name| raw_feature(name, fv, change))
                .collect(),
        );
        labels.push(if label { 1.0 } else { -1.0 });
    }
    Ok((rows, labels))
}

fn standardization(rows: &[Vec<Option<f64>>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut means = vec![0.0; d];
    let mut stds = vec![1.0; d];
    for j in 0..d {
        let present: Vec<f64> = rows.iter().filter_map(|r| r[j]).collect();
        if present.is_empty() {
            continue;
        }
        let n = present.len() as f64;
        let mean = present.iter().sum::<f64>() / n;
        let var = present.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        means[j] = mean;
        let std = var.sqrt();
        stds[j] = if std > 0.0 { std } else { 1.0 };
    }
    (means, stds)
}

/// Fits the linear SVM. Deterministic: identical corpus, layout, and
/// options produce a bit-identical model.
pub fn train_svm(
    corpus: &[FeatureVector],
    layout: &FeatureLayout,
    opts: &TrainOptions,
    trained_on: &str,
) -> Result<SvmModel> {
    if layout.is_empty() {
        return Err(Error::Config("empty feature layout".into()));
    }
    if !(opts.c > 0.0) || opts.epochs == 0 {
        return Err(Error::Config(format!(
            "bad hyperparameters: C={}, epochs={}",
            opts.c, opts.epochs
        )));
    }
    let d = layout.len();
    let (rows, labels) = design_rows(corpus, layout)?;
    if !labels.contains(&1.0) || !labels.contains(&-1.0) {
        return Err(Error::Training("corpus must contain both classes".into()));
    }
    let (means, stds) = standardization(&rows, d);
    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let mut z: Vec<f64> = r
                .iter()
                .enumerate()
                .map(|(j, v)| (v.unwrap_or(means[j]) - means[j]) / stds[j])
                .collect();
            z.push(1.0); // bias coordinate
            z
        })
        .collect();

    let n = x.len();
    let dim = d + 1;
    let lambda = 1.0 / (opts.c * n as f64);
    let radius = 1.0 / lambda.sqrt();
    let mut w = vec![0.0f64; dim];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0u64;
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            step += 1;
            let eta = 1.0 / (lambda * step as f64);
            let margin: f64 = labels[i] * w.iter().zip(&x[i]).map(|(a, b)| a * b).sum::<f64>();
            let keep = 1.0 - eta * lambda;
            if margin < 1.0 {
                for (wj, xj) in w.iter_mut().zip(&x[i]) {
                    *wj = keep * *wj + eta * labels[i] * xj;
                }
            } else {
                for wj in w.iter_mut() {
                    *wj *= keep;
                }
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                let scale = radius / norm;
                for wj in w.iter_mut() {
                    *wj *= scale;
                }
            }
        }
    }
    let bias = w.pop().expect("bias coordinate present");
    let model = SvmModel {
        layout_version: 1,
        layout: layout.clone(),
        weights: w,
        bias,
        feature_means: means,
        feature_stds: stds,
        c: opts.c,
        epochs: opts.epochs,
        seed: opts.seed,
        trained_on: trained_on.to_string(),
    };
    model.validate()?;
    Ok(model)
}

/// One scored window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionEvent {
    /// Window index.
    pub t: u64,
    pub motion: bool,
    /// Signed margin; motion iff positive.
    pub score: f64,
    /// Maximum tracked-AoA change vs the previous window; `None` when
    /// neither window carried angles.
    pub aoa_delta_deg: Option<f64>,
    /// Standardized per-feature values that entered the score.
    pub contributing: BTreeMap<String, f64>,
    /// True when a missing feature was imputed with its training mean.
    pub imputed: bool,
}

/// Scores one window against the model. Missing features are imputed with
/// training means (standardized zero) and flagged.
pub fn detect(
    model: &SvmModel,
    fv: &FeatureVector,
    prev_aoa: &AoaEstimate,
) -> Result<DetectionEvent> {
    model.validate()?;
    if fv.validate().is_err() {
        return Err(Error::Config(format!(
            "window {}: malformed feature vector",
            fv.t
        )));
    }
    let curr = estimate_from_features(fv);
    let change = aoa_change(prev_aoa, &curr);
    let mut contributing = BTreeMap::new();
    let mut imputed = false;
    let mut score = model.bias;
    for (j, &name) in model.layout.0.iter().enumerate() {
        let raw = raw_feature(name, fv, &change);
        let z = match raw {
            Some(v) => (v - model.feature_means[j]) / model.feature_stds[j],
            None => {
                imputed = true;
                0.0
            }
        };
        score += model.weights[j] * z;
        contributing.insert(name.key().to_string(), z);
    }
    Ok(DetectionEvent {
        t: fv.t,
        motion: score > 0.0,
        score,
        aoa_delta_deg: change.max_delta_deg,
        contributing,
        imputed,
    })
}

/// Threshold-only mode: motion when the angle change exceeds the threshold
/// for `sustain_windows` consecutive windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    pub threshold_deg: f64,
    pub sustain_windows: usize,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig { threshold_deg: 5.0, sustain_windows: 2 }
    }
}

/// Applies the sustained-threshold rule to a delta series; a missing delta
/// never counts as an exceedance.
pub fn threshold_predict(deltas: &[Option<f64>], cfg: &ThresholdConfig) -> Vec<bool> {
    let mut run = 0usize;
    deltas
        .iter()
        .map(|d| {
            match d {
                Some(v) if *v > cfg.threshold_deg => run += 1,
                _ => run = 0,
            }
            run >= cfg.sustain_windows.max(1)
        })
        .collect()
}

/// Confusion counts and the derived Table-II statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub accuracy: f64,
    pub missed_detection: f64,
    pub false_alarm: f64,
    pub true_motion: usize,
    pub false_static: usize,
    pub false_motion: usize,
    pub true_static: usize,
    pub windows: usize,
}

impl EvalReport {
    pub fn from_outcomes(pairs: &[(bool, bool)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Precondition("evaluation corpus is empty".into()));
        }
        let mut tm = 0;
        let mut fs = 0;
        let mut fm = 0;
        let mut ts = 0;
        for &(label, predicted) in pairs {
            match (label, predicted) {
                (true, true) => tm += 1,
                (true, false) => fs += 1,
                (false, true) => fm += 1,
                (false, false) => ts += 1,
            }
        }
        let motion = tm + fs;
        let stat = fm + ts;
        Ok(EvalReport {
            accuracy: (tm + ts) as f64 / pairs.len() as f64,
            missed_detection: if motion > 0 { fs as f64 / motion as f64 } else { 0.0 },
            false_alarm: if stat > 0 { fm as f64 / stat as f64 } else { 0.0 },
            true_motion: tm,
            false_static: fs,
            false_motion: fm,
            true_static: ts,
            windows: pairs.len(),
        })
    }
}

/// Runs the model over a labeled corpus (windows after the first, which
/// seeds change tracking) and tabulates misses and false alarms.
pub fn evaluate(model: &SvmModel, corpus: &[FeatureVector]) -> Result<EvalReport> {
    if corpus.len() < 2 {
        return Err(Error::Precondition(
            "evaluation needs at least 2 windows for change tracking".into(),
        ));
    }
    let mut pairs = Vec::with_capacity(corpus.len() - 1);
    for i in 1..corpus.len() {
        let label = corpus[i]
            .label
            .ok_or_else(|| Error::Data(format!("window {} is unlabeled", corpus[i].t)))?;
        let prev = estimate_from_features(&corpus[i - 1]);
        let event = detect(model, &corpus[i], &prev)?;
        pairs.push((label, event.motion));
    }
    EvalReport::from_outcomes(&pairs)
}
