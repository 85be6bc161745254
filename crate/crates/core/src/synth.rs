//! Seeded synthetic scenarios with a nearest-mean linear head.
//!
//! Class `k` has mean `class_sep * e_k` (so `dim >= num_classes`) and
//! isotropic noise `sigma`. The head is the nearest-mean classifier written
//! as a linear layer: row `k` of the weights is the class mean and the bias
//! is `-|mean|^2 / 2`.
//!
//! Randomness comes from a single ChaCha8 stream seeded with `seed`. Draw
//! order: train samples (class-major), test samples (class-major), outlier
//! indices and directions, then the OOD split. Normal deviates use the
//! Box-Muller transform on 53-bit uniform doubles.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{ClassifierHead, Matrix, OodKind, ScenarioBundle, Split, NOVEL_LABEL};
use crate::error::{Error, Result};

/// Relocated training outliers sit this many `class_sep` away from their mean.
pub const OUTLIER_DISTANCE: f64 = 10.0;

const OUTLIER_ATTEMPTS: usize = 64;
const BISECTION_STEPS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub seed: u64,
    #[serde(alias = "K")]
    pub num_classes: usize,
    #[serde(alias = "d")]
    pub dim: usize,
    /// Training samples per class.
    pub n_train: usize,
    /// Test samples per class; the OOD split holds `n_test * num_classes` samples.
    pub n_test: usize,
    pub class_sep: f64,
    pub sigma: f64,
    pub ood_kind: OodKind,
    pub ood_shift: f64,
    #[serde(default)]
    pub outlier_fraction: f64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.dim < self.num_classes {
            return bad(format!(
                "dim ({}) must be >= num_classes ({}) to place class means on basis vectors",
                self.dim, self.num_classes
            ));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be >= 1".into());
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma must be finite and > 0, got {}", self.sigma));
        }
        if !(self.class_sep.is_finite() && self.class_sep > 0.0) {
            return bad(format!("class_sep must be finite and > 0, got {}", self.class_sep));
        }
        if !self.ood_shift.is_finite() {
            return bad("ood_shift must be finite".into());
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad(format!(
                "outlier_fraction must lie in [0, 1), got {}",
                self.outlier_fraction
            ));
        }
        Ok(())
    }

    pub fn scenario_name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("synth-{}-{}", self.ood_kind, self.seed))
    }

    /// Number of training samples relocated as outliers.
    pub fn outlier_count(&self) -> usize {
        (self.outlier_fraction * (self.n_train * self.num_classes) as f64).round() as usize
    }
}

struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    fn normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1: f64 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random::<f64>();
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }

    fn gaussian_point(&mut self, mean: &[f64], sigma: f64) -> Vec<f32> {
        mean.iter().map(|&m| (m + sigma * self.normal()) as f32).collect()
    }
}

fn class_means(cfg: &SynthConfig) -> Vec<Vec<f64>> {
    (0..cfg.num_classes)
        .map(|k| {
            let mut m = vec![0.0; cfg.dim];
            m[k] = cfg.class_sep;
            m
        })
        .collect()
}

fn nearest_mean_head(means: &[Vec<f64>]) -> ClassifierHead {
    let dim = means[0].len();
    let weights: Vec<f32> = means.iter().flatten().map(|&v| v as f32).collect();
    let bias = means
        .iter()
        .map(|m| (-0.5 * m.iter().map(|v| v * v).sum::<f64>()) as f32)
        .collect();
    ClassifierHead {
        weights: Matrix::new(means.len(), dim, weights).expect("consistent shape"),
        bias,
    }
}

fn build_split(head: &ClassifierHead, rows: Vec<Vec<f32>>, labels: Vec<i32>) -> Split {
    let dim = head.dim();
    let predictions = rows.iter().map(|x| head.predict(x) as i32).collect();
    let features = Matrix::new(rows.len(), dim, rows.into_iter().flatten().collect()).expect("consistent shape");
    Split {
        features,
        labels,
        predictions,
    }
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (f64::from(x) - y).powi(2)).sum()
}

fn interpolate(x: &[f32], target: &[f64], t: f64) -> Vec<f32> {
    x.iter()
        .zip(target)
        .map(|(&a, &b)| (f64::from(a) + t * (b - f64::from(a))) as f32)
        .collect()
}

/// Moves `x` toward the nearest rival class mean just far enough for the
/// head's argmax to change.
fn adversarial_push(head: &ClassifierHead, means: &[Vec<f64>], x: Vec<f32>) -> Vec<f32> {
    let pred = head.predict(&x);
    let rival = (0..means.len())
        .filter(|&r| r != pred)
        .min_by(|&a, &b| sq_dist(&x, &means[a]).total_cmp(&sq_dist(&x, &means[b])))
        .expect("at least two classes");
    let target = &means[rival];
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if head.predict(&interpolate(&x, target, mid)) != pred {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    interpolate(&x, target, hi)
}

/// Generates a bundle. Identical configs yield identical bundles.
pub fn generate(cfg: &SynthConfig) -> Result<ScenarioBundle> {
    cfg.validate()?;
    let k = cfg.num_classes;
    let dim = cfg.dim;
    let means = class_means(cfg);
    let head = nearest_mean_head(&means);
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };

    let draw_class_major = |s: &mut Sampler, per_class: usize| {
        let mut rows = Vec::with_capacity(per_class * k);
        let mut labels = Vec::with_capacity(per_class * k);
        for (class, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                rows.push(s.gaussian_point(mean, cfg.sigma));
                labels.push(class as i32);
            }
        }
        (rows, labels)
    };

    let (mut train_rows, train_labels) = draw_class_major(&mut s, cfg.n_train);
    let (test_rows, test_labels) = draw_class_major(&mut s, cfg.n_test);

    let n_outliers = cfg.outlier_count();
    if n_outliers > 0 {
        let mut picked = rand::seq::index::sample(&mut s.rng, train_rows.len(), n_outliers).into_vec();
        picked.sort_unstable();
        let reach = OUTLIER_DISTANCE * cfg.class_sep;
        for idx in picked {
            let class = train_labels[idx] as usize;
            let mean = &means[class];
            let mut relocated = None;
            for _ in 0..OUTLIER_ATTEMPTS {
                let u = s.unit_vector(dim);
                let cand: Vec<f32> = mean.iter().zip(&u).map(|(&m, &ui)| (m + reach * ui) as f32).collect();
                if head.predict(&cand) != class {
                    relocated = Some(cand);
                    break;
                }
            }
            // Fallback: straight toward the next class mean, which the
            // nearest-mean head always assigns to that class.
            let relocated = relocated.unwrap_or_else(|| {
                let rival = &means[(class + 1) % k];
                let dir: Vec<f64> = rival.iter().zip(mean).map(|(r, m)| r - m).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                mean.iter()
                    .zip(&dir)
                    .map(|(&m, &v)| (m + reach * v / norm) as f32)
                    .collect()
            });
            train_rows[idx] = relocated;
        }
    }

    let (ood_rows, ood_labels) = match cfg.ood_kind {
        OodKind::Novelty => {
            let mut novel_mean = vec![0.0; dim];
            if dim > k {
                novel_mean[k] = cfg.ood_shift;
            } else {
                let c = -cfg.ood_shift / (dim as f64).sqrt();
                novel_mean.iter_mut().for_each(|v| *v = c);
            }
            let n = cfg.n_test * k;
            let rows = (0..n).map(|_| s.gaussian_point(&novel_mean, cfg.sigma)).collect();
            (rows, vec![NOVEL_LABEL; n])
        }
        OodKind::Covariate => {
            let shift: Vec<f64> = s.unit_vector(dim).into_iter().map(|v| v * cfg.ood_shift).collect();
            let (rows, labels) = draw_class_major(&mut s, cfg.n_test);
            let rows = rows
                .into_iter()
                .map(|x| x.iter().zip(&shift).map(|(&a, &b)| (f64::from(a) + b) as f32).collect())
                .collect();
            (rows, labels)
        }
        OodKind::Adversarial | OodKind::Other => {
            let (rows, labels) = draw_class_major(&mut s, cfg.n_test);
            let rows = rows.into_iter().map(|x| adversarial_push(&head, &means, x)).collect();
            (rows, labels)
        }
    };

    let bundle = ScenarioBundle {
        name: cfg.scenario_name(),
        ood_kind: cfg.ood_kind,
        train: build_split(&head, train_rows, train_labels),
        test_id: build_split(&head, test_rows, test_labels),
        ood: build_split(&head, ood_rows, ood_labels),
        head,
    };
    let finite = |values: &[f32]| values.iter().all(|v| v.is_finite());
    let all_finite = finite(bundle.head.weights.as_slice())
        && finite(&bundle.head.bias)
        && [&bundle.train, &bundle.test_id, &bundle.ood]
            .iter()
            .all(|split| finite(split.features.as_slice()));
    if !all_finite {
        return Err(Error::Config(
            "class_sep, sigma or ood_shift too large: generated values overflow f32".into(),
        ));
    }
    Ok(bundle)
}
