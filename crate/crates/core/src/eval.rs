//! Ground truth under the OOD and OMS settings, rejection metrics, the
//! optimal-F1 threshold search and the perfect-OOD-monitor simulation.
//!
//! The evaluation set is always `test_id` followed by `ood`. A sample is a
//! positive when it should be rejected.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bundle::ScenarioBundle;
use crate::error::{Error, Result};
use crate::monitors::ScoreVector;

/// Fixed cut-off for 0/1 monitors: reject iff score > 0.5.
pub const BINARY_THRESHOLD: f64 = 0.5;

/// Label used for the simulated perfect OOD detector in reports.
pub const PERFECT_OOD_LABEL: &str = "perfect_ood";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSetting {
    /// Reject samples from the OOD split.
    Ood,
    /// Reject samples the classifier gets wrong.
    Oms,
}

impl EvalSetting {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalSetting::Ood => "ood",
            EvalSetting::Oms => "oms",
        }
    }

    pub fn other(self) -> Self {
        match self {
            EvalSetting::Ood => EvalSetting::Oms,
            EvalSetting::Oms => EvalSetting::Ood,
        }
    }
}

impl fmt::Display for EvalSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ood" => Ok(EvalSetting::Ood),
            "oms" => Ok(EvalSetting::Oms),
            _ => Err(Error::usage(format!("unknown setting {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub setting: EvalSetting,
    pub positives: Vec<bool>,
    pub n_id: usize,
    pub n_ood: usize,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.positives.iter().filter(|&&p| p).count()
    }
}

pub fn label_ground_truth(bundle: &ScenarioBundle, setting: EvalSetting) -> GroundTruth {
    let n_id = bundle.test_id.len();
    let n_ood = bundle.ood.len();
    let positives = match setting {
        EvalSetting::Ood => std::iter::repeat_n(false, n_id)
            .chain(std::iter::repeat_n(true, n_ood))
            .collect(),
        EvalSetting::Oms => {
            let wrong = |s: &crate::bundle::Split| (0..s.len()).map(|i| !s.is_correct(i)).collect::<Vec<_>>();
            let mut p = wrong(&bundle.test_id);
            p.extend(wrong(&bundle.ood));
            p
        }
    };
    GroundTruth {
        setting,
        positives,
        n_id,
        n_ood,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `None` when nothing was rejected.
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `None` when there are no positives.
    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2tp / (2tp + fp + fn)`; `None` when that denominator is zero.
    pub fn f1(&self) -> Option<f64> {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Confusion counts of `rejections` against `truth`.
pub fn metrics(rejections: &[bool], truth: &GroundTruth) -> Result<Confusion> {
    if rejections.len() != truth.len() {
        return Err(Error::usage(format!(
            "{} rejections for {} ground-truth samples",
            rejections.len(),
            truth.len()
        )));
    }
    let mut c = Confusion::default();
    for (&r, &p) in rejections.iter().zip(&truth.positives) {
        match (r, p) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Rejects every sample with score strictly above `threshold`.
pub fn evaluate_at(scores: &ScoreVector, threshold: f64, truth: &GroundTruth) -> Result<Confusion> {
    let rejections: Vec<bool> = scores.scores.iter().map(|&s| s > threshold).collect();
    metrics(&rejections, truth)
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo / 2.0 + hi / 2.0;
    // Adjacent floats can round the midpoint onto `hi`; any value in
    // [lo, hi) gives the same rejections.
    if mid >= lo && mid < hi {
        mid
    } else {
        lo
    }
}

/// Threshold maximising F1 of the rejection class.
///
/// Candidates are `-inf`, the midpoints between consecutive distinct scores,
/// and `+inf`. Undefined F1 counts as 0. Ties go to the largest threshold,
/// i.e. the fewest rejections.
pub fn optimal_f1_threshold(scores: &ScoreVector, truth: &GroundTruth) -> Result<(f64, Confusion)> {
    if scores.binary {
        return Err(Error::usage("binary monitors have no threshold to optimise"));
    }
    if scores.len() != truth.len() {
        return Err(Error::usage(format!(
            "{} scores for {} ground-truth samples",
            scores.len(),
            truth.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores.scores[a].total_cmp(&scores.scores[b]));

    let positives = truth.positive_count();
    // Start from "reject everything".
    let mut c = Confusion {
        tp: positives,
        fp: truth.len() - positives,
        fn_: 0,
        tn: 0,
    };
    let f1_of = |c: &Confusion| c.f1().unwrap_or(0.0);
    let mut best = (f64::NEG_INFINITY, c, f1_of(&c));

    let mut i = 0;
    while i < order.len() {
        let value = scores.scores[order[i]];
        // Stop rejecting the whole group of samples sharing this score.
        while i < order.len() && scores.scores[order[i]] == value {
            if truth.positives[order[i]] {
                c.tp -= 1;
                c.fn_ += 1;
            } else {
                c.fp -= 1;
                c.tn += 1;
            }
            i += 1;
        }
        let tau = match order.get(i) {
            Some(&next) => midpoint(value, scores.scores[next]),
            None => f64::INFINITY,
        };
        let f1 = f1_of(&c);
        if f1 >= best.2 {
            best = (tau, c, f1);
        }
    }
    Ok((best.0, best.1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub setting: EvalSetting,
    pub monitor: String,
    /// `None` for the simulated perfect monitor, which has no score.
    pub threshold: Option<f64>,
    pub counts: Confusion,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl EvalReport {
    pub fn new(setting: EvalSetting, monitor: impl Into<String>, threshold: Option<f64>, counts: Confusion) -> Self {
        EvalReport {
            setting,
            monitor: monitor.into(),
            threshold,
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
        }
    }
}

/// Evaluates `scores` under `truth`. Graded scores use the optimal-F1
/// threshold found on `threshold_truth` (normally the same ground truth);
/// binary scores use [`BINARY_THRESHOLD`].
pub fn evaluate(
    monitor: &str,
    scores: &ScoreVector,
    truth: &GroundTruth,
    threshold_truth: &GroundTruth,
) -> Result<EvalReport> {
    let tau = if scores.binary {
        BINARY_THRESHOLD
    } else {
        optimal_f1_threshold(scores, threshold_truth)?.0
    };
    let counts = evaluate_at(scores, tau, truth)?;
    Ok(EvalReport::new(truth.setting, monitor, Some(tau), counts))
}

/// A detector that rejects exactly the OOD split, scored against the OMS
/// ground truth.
pub fn simulate_perfect_ood(bundle: &ScenarioBundle) -> EvalReport {
    let ood = label_ground_truth(bundle, EvalSetting::Ood);
    let oms = label_ground_truth(bundle, EvalSetting::Oms);
    let counts = metrics(&ood.positives, &oms).expect("same evaluation set");
    EvalReport::new(EvalSetting::Oms, PERFECT_OOD_LABEL, None, counts)
}
