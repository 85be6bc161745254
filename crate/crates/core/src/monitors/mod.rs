//! Runtime monitors. Each one is fitted on the training split and then
//! assigns every sample an anomaly score where higher means "reject".

pub mod kmeans;
pub mod logit;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bundle::{ClassifierHead, ScenarioBundle, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorKind {
    Msp,
    Energy,
    ReactMsp,
    ReactEnergy,
    Mahalanobis,
    Otb,
}

impl MonitorKind {
    pub const ALL: [MonitorKind; 6] = [
        MonitorKind::Msp,
        MonitorKind::Energy,
        MonitorKind::ReactMsp,
        MonitorKind::ReactEnergy,
        MonitorKind::Mahalanobis,
        MonitorKind::Otb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MonitorKind::Msp => "msp",
            MonitorKind::Energy => "energy",
            MonitorKind::ReactMsp => "react_msp",
            MonitorKind::ReactEnergy => "react_energy",
            MonitorKind::Mahalanobis => "mahalanobis",
            MonitorKind::Otb => "otb",
        }
    }

    /// OtB emits a hard accept/reject decision instead of a graded score.
    pub fn is_binary(self) -> bool {
        self == MonitorKind::Otb
    }
}

impl fmt::Display for MonitorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MonitorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MonitorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown monitor kind {s:?}")))
    }
}

fn default_react_percentile() -> f64 {
    90.0
}

fn default_temperature() -> f64 {
    1.0
}

fn default_clusters() -> usize {
    1
}

fn default_ridge() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    /// Report label; defaults to the kind name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: MonitorKind,
    /// Fit only on training samples the classifier gets right.
    #[serde(default)]
    pub filter_misclassified: bool,
    #[serde(default = "default_react_percentile")]
    pub react_percentile: f64,
    #[serde(default = "default_temperature")]
    pub energy_temperature: f64,
    #[serde(default = "default_clusters")]
    pub otb_clusters_per_class: usize,
    #[serde(default)]
    pub otb_enlargement: f64,
    #[serde(default = "default_ridge")]
    pub covariance_ridge: f64,
    /// Seeds k-means initialisation.
    #[serde(default)]
    pub seed: u64,
}

impl MonitorConfig {
    pub fn new(kind: MonitorKind) -> Self {
        MonitorConfig {
            name: None,
            kind,
            filter_misclassified: false,
            react_percentile: default_react_percentile(),
            energy_temperature: default_temperature(),
            otb_clusters_per_class: default_clusters(),
            otb_enlargement: 0.0,
            covariance_ridge: default_ridge(),
            seed: 0,
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.as_str().to_owned())
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.react_percentile;
        if !(p > 0.0 && p <= 100.0) {
            return Err(Error::Config(format!("react_percentile must be in (0, 100], got {p}")));
        }
        let t = self.energy_temperature;
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Config(format!("energy_temperature must be > 0, got {t}")));
        }
        if self.otb_clusters_per_class == 0 {
            return Err(Error::Config("otb_clusters_per_class must be >= 1".into()));
        }
        let e = self.otb_enlargement;
        if !(e.is_finite() && e >= 0.0) {
            return Err(Error::Config(format!("otb_enlargement must be >= 0, got {e}")));
        }
        let r = self.covariance_ridge;
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::Config(format!("covariance_ridge must be >= 0, got {r}")));
        }
        Ok(())
    }
}

/// Axis-aligned box in feature space, bounds inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoundingBox {
    fn enclosing<'a>(points: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut lower = vec![f64::INFINITY; dim];
        let mut upper = vec![f64::NEG_INFINITY; dim];
        for p in points {
            for j in 0..dim {
                lower[j] = lower[j].min(p[j]);
                upper[j] = upper[j].max(p[j]);
            }
        }
        BoundingBox { lower, upper }
    }

    fn enlarge(&mut self, eps: f64) {
        for (lo, hi) in self.lower.iter_mut().zip(self.upper.iter_mut()) {
            let pad = eps * (*hi - *lo) / 2.0;
            *lo -= pad;
            *hi += pad;
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        self.lower.iter().zip(&other.lower).all(|(a, b)| a <= b)
            && self.upper.iter().zip(&other.upper).all(|(a, b)| a >= b)
    }

    /// Sum of side lengths; a volume proxy that stays finite for flat boxes.
    pub fn total_width(&self) -> f64 {
        self.upper.iter().zip(&self.lower).map(|(h, l)| h - l).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedState {
    /// MSP and Energy need nothing beyond the classifier head.
    Logit,
    React {
        clip: f64,
    },
    Mahalanobis {
        means: Vec<Vec<f64>>,
        /// Inverse of the tied covariance, row-major `dim x dim`.
        precision: Vec<f64>,
    },
    /// Boxes indexed by class.
    Otb {
        boxes: Vec<Vec<BoundingBox>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorModel {
    config: MonitorConfig,
    state: FittedState,
    dim: usize,
    used_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    /// Scores are 0/1 decisions rather than a graded ranking.
    pub binary: bool,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn concat(mut self, other: ScoreVector) -> ScoreVector {
        self.scores.extend(other.scores);
        ScoreVector {
            scores: self.scores,
            binary: self.binary && other.binary,
        }
    }
}

/// Linear-interpolation percentile of `values` (0 < p <= 100), the same
/// rule as numpy's default: rank `p/100 * (n-1)` between order statistics.
pub fn percentile_linear(values: &mut [f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty data");
    let rank = p / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let (_, &mut lo_val, rest) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || rest.is_empty() {
        return lo_val;
    }
    let hi_val = rest.iter().copied().fold(f64::INFINITY, f64::min);
    lo_val + frac * (hi_val - lo_val)
}

fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| f64::from(v)).collect()
}

impl MonitorModel {
    pub fn kind(&self) -> MonitorKind {
        self.config.kind
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn state(&self) -> &FittedState {
        &self.state
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Training samples left after the optional misclassification filter.
    pub fn used_samples(&self) -> usize {
        self.used_samples
    }

    pub fn clip_threshold(&self) -> Option<f64> {
        match self.state {
            FittedState::React { clip } => Some(clip),
            _ => None,
        }
    }

    pub fn boxes(&self) -> Option<&[Vec<BoundingBox>]> {
        match &self.state {
            FittedState::Otb { boxes } => Some(boxes),
            _ => None,
        }
    }

    /// Builds a model from explicit fitted state, bypassing `fit`.
    pub fn from_state(config: MonitorConfig, state: FittedState, dim: usize) -> Result<Self> {
        config.validate()?;
        let ok = matches!(
            (config.kind, &state),
            (MonitorKind::Msp | MonitorKind::Energy, FittedState::Logit)
                | (
                    MonitorKind::ReactMsp | MonitorKind::ReactEnergy,
                    FittedState::React { .. }
                )
                | (MonitorKind::Mahalanobis, FittedState::Mahalanobis { .. })
                | (MonitorKind::Otb, FittedState::Otb { .. })
        );
        if !ok {
            return Err(Error::usage(format!(
                "state does not match monitor kind {}",
                config.kind
            )));
        }
        Ok(MonitorModel {
            config,
            state,
            dim,
            used_samples: 0,
        })
    }

    /// Scores every sample of `split`.
    pub fn score(&self, split: &Split, head: &ClassifierHead) -> Result<ScoreVector> {
        if split.features.cols() != self.dim || head.dim() != self.dim {
            return Err(Error::usage(format!(
                "monitor fitted on dimension {}, got split {} / head {}",
                self.dim,
                split.features.cols(),
                head.dim()
            )));
        }
        let k = head.num_classes();
        let mut logits = vec![0.0; k];
        let t = self.config.energy_temperature;
        let scores = split
            .features
            .iter_rows()
            .enumerate()
            .map(|(i, row)| {
                let mut x = widen(row);
                match (&self.state, self.config.kind) {
                    (FittedState::Logit, kind) | (FittedState::React { .. }, kind) => {
                        if let FittedState::React { clip } = self.state {
                            x.iter_mut().for_each(|v| *v = v.min(clip));
                        }
                        head.logits_f64_into(&x, &mut logits);
                        match kind {
                            MonitorKind::Msp | MonitorKind::ReactMsp => logit::msp_score(&logits),
                            _ => logit::energy_score(&logits, t),
                        }
                    }
                    (FittedState::Mahalanobis { means, precision }, _) => mahalanobis_min(&x, means, precision),
                    (FittedState::Otb { boxes }, _) => {
                        let pred = split.predictions[i] as usize;
                        let inside = boxes.get(pred).is_some_and(|bs| bs.iter().any(|b| b.contains(&x)));
                        if inside {
                            0.0
                        } else {
                            1.0
                        }
                    }
                }
            })
            .collect();
        Ok(ScoreVector {
            scores,
            binary: self.config.kind.is_binary(),
        })
    }

    /// Scores the evaluation set: `test_id` followed by `ood`.
    pub fn score_evaluation_set(&self, bundle: &ScenarioBundle) -> Result<ScoreVector> {
        let id = self.score(&bundle.test_id, &bundle.head)?;
        let ood = self.score(&bundle.ood, &bundle.head)?;
        Ok(id.concat(ood))
    }
}

/// Squared Mahalanobis distance to the closest class mean.
pub fn mahalanobis_min(x: &[f64], means: &[Vec<f64>], precision: &[f64]) -> f64 {
    let dim = x.len();
    let mut diff = vec![0.0; dim];
    means
        .iter()
        .map(|mu| {
            diff.iter_mut().zip(x.iter().zip(mu)).for_each(|(d, (a, b))| *d = a - b);
            let mut total = 0.0;
            for (r, &dr) in diff.iter().enumerate() {
                let row = &precision[r * dim..(r + 1) * dim];
                total += dr * row.iter().zip(&diff).map(|(p, d)| p * d).sum::<f64>();
            }
            total
        })
        .fold(f64::INFINITY, f64::min)
}

/// Fits a monitor on `bundle.train`.
pub fn fit(bundle: &ScenarioBundle, config: &MonitorConfig) -> Result<MonitorModel> {
    config.validate()?;
    let train = &bundle.train;
    let k = bundle.num_classes();
    let dim = bundle.dim();

    let used: Vec<usize> = (0..train.len())
        .filter(|&i| !config.filter_misclassified || train.is_correct(i))
        .collect();
    let mut per_class = vec![Vec::new(); k];
    for &i in &used {
        per_class[train.labels[i] as usize].push(widen(train.features.row(i)));
    }
    if let Some(empty) = per_class.iter().position(Vec::is_empty) {
        return Err(Error::Fit(format!(
            "class {empty} has no training samples{}",
            if config.filter_misclassified {
                " after removing misclassified ones"
            } else {
                ""
            }
        )));
    }

    let state = match config.kind {
        MonitorKind::Msp | MonitorKind::Energy => FittedState::Logit,
        MonitorKind::ReactMsp | MonitorKind::ReactEnergy => {
            let mut flat: Vec<f64> = used
                .iter()
                .flat_map(|&i| train.features.row(i).iter().map(|&v| f64::from(v)))
                .collect();
            FittedState::React {
                clip: percentile_linear(&mut flat, config.react_percentile),
            }
        }
        MonitorKind::Mahalanobis => fit_mahalanobis(&per_class, dim, config.covariance_ridge)?,
        MonitorKind::Otb => FittedState::Otb {
            boxes: per_class
                .iter()
                .enumerate()
                .map(|(class, points)| {
                    fit_boxes(
                        points,
                        dim,
                        config.otb_clusters_per_class,
                        config.otb_enlargement,
                        config.seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                    )
                })
                .collect(),
        },
    };
    Ok(MonitorModel {
        config: config.clone(),
        state,
        dim,
        used_samples: used.len(),
    })
}

fn fit_boxes(points: &[Vec<f64>], dim: usize, k: usize, eps: f64, seed: u64) -> Vec<BoundingBox> {
    let labels = kmeans::assign(points, k, seed);
    let clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
    (0..clusters)
        .filter_map(|c| {
            let members: Vec<&[f64]> = points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| p.as_slice())
                .collect();
            if members.is_empty() {
                return None;
            }
            let mut b = BoundingBox::enclosing(members, dim);
            b.enlarge(eps);
            Some(b)
        })
        .collect()
}

fn fit_mahalanobis(per_class: &[Vec<Vec<f64>>], dim: usize, ridge: f64) -> Result<FittedState> {
    let means: Vec<Vec<f64>> = per_class
        .iter()
        .map(|pts| {
            let mut m = vec![0.0; dim];
            for p in pts {
                m.iter_mut().zip(p).for_each(|(a, b)| *a += b);
            }
            m.iter_mut().for_each(|a| *a /= pts.len() as f64);
            m
        })
        .collect();

    let total: usize = per_class.iter().map(Vec::len).sum();
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut diff = vec![0.0; dim];
    for (pts, mu) in per_class.iter().zip(&means) {
        for p in pts {
            diff.iter_mut().zip(p.iter().zip(mu)).for_each(|(d, (a, b))| *d = a - b);
            for r in 0..dim {
                for c in r..dim {
                    cov[(r, c)] += diff[r] * diff[c];
                }
            }
        }
    }
    for r in 0..dim {
        for c in r..dim {
            let v = cov[(r, c)] / total as f64;
            cov[(r, c)] = v;
            cov[(c, r)] = v;
        }
    }
    // Relative ridge; a zero-trace covariance falls back to an absolute one.
    let mean_var = cov.trace() / dim as f64;
    let scale = if mean_var > 0.0 { mean_var } else { 1.0 };
    for j in 0..dim {
        cov[(j, j)] += ridge * scale;
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Fit("tied covariance is not positive definite; increase covariance_ridge".into()))?;
    let inv = chol.inverse();
    let mut precision = vec![0.0; dim * dim];
    for r in 0..dim {
        for c in 0..dim {
            precision[r * dim + c] = 0.5 * (inv[(r, c)] + inv[(c, r)]);
        }
    }
    if precision.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("inverse covariance is not finite".into()));
    }
    Ok(FittedState::Mahalanobis { means, precision })
}
