//! Scenario bundles: train / test-ID / OOD splits plus the classifier head,
//! stored in an OMSB container under a fixed entry-name schema.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{Tensor, TensorContainer};

/// Label value for samples whose ground truth lies outside the K classes.
pub const NOVEL_LABEL: i32 = -1;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::validation(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub features: Matrix,
    pub labels: Vec<i32>,
    pub predictions: Vec<i32>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Whether the stored prediction of sample `i` matches its label.
    pub fn is_correct(&self, i: usize) -> bool {
        self.labels[i] != NOVEL_LABEL && self.labels[i] == self.predictions[i]
    }
}

/// Final linear layer of the monitored classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub weights: Matrix,
    pub bias: Vec<f32>,
}

impl ClassifierHead {
    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    /// Logits in f32 with a fixed left-to-right accumulation order. This is
    /// the reference used for the stored-prediction invariant.
    pub fn logits_f32(&self, x: &[f32]) -> Vec<f32> {
        self.weights
            .iter_rows()
            .zip(&self.bias)
            .map(|(w, &b)| {
                let mut acc = 0.0f32;
                for (&wj, &xj) in w.iter().zip(x) {
                    acc += wj * xj;
                }
                acc + b
            })
            .collect()
    }

    /// Logits widened to f64, written into `out`.
    pub fn logits_f64_into(&self, x: &[f64], out: &mut [f64]) {
        for ((w, &b), slot) in self.weights.iter_rows().zip(&self.bias).zip(out.iter_mut()) {
            let mut acc = 0.0f64;
            for (&wj, &xj) in w.iter().zip(x) {
                acc += f64::from(wj) * xj;
            }
            *slot = acc + f64::from(b);
        }
    }

    /// Lowest-index argmax of the f32 logits.
    pub fn predict(&self, x: &[f32]) -> usize {
        argmax(&self.logits_f32(x))
    }
}

/// Index of the maximum, ties broken toward the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OodKind {
    Novelty,
    Covariate,
    Adversarial,
    Other,
}

impl OodKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OodKind::Novelty => "novelty",
            OodKind::Covariate => "covariate",
            OodKind::Adversarial => "adversarial",
            OodKind::Other => "other",
        }
    }
}

impl fmt::Display for OodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "novelty" => Ok(OodKind::Novelty),
            "covariate" => Ok(OodKind::Covariate),
            "adversarial" => Ok(OodKind::Adversarial),
            "other" => Ok(OodKind::Other),
            _ => Err(Error::schema(format!("unknown ood_kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBundle {
    pub name: String,
    pub ood_kind: OodKind,
    pub train: Split,
    pub test_id: Split,
    pub ood: Split,
    pub head: ClassifierHead,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    name: String,
    ood_kind: OodKind,
    num_classes: usize,
}

const SPLITS: [&str; 3] = ["train", "test_id", "ood"];

impl ScenarioBundle {
    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn dim(&self) -> usize {
        self.head.dim()
    }

    pub fn split(&self, name: &str) -> Option<&Split> {
        match name {
            "train" => Some(&self.train),
            "test_id" => Some(&self.test_id),
            "ood" => Some(&self.ood),
            _ => None,
        }
    }

    /// Checks every bundle invariant, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        let k = self.head.num_classes();
        let d = self.head.dim();
        if k < 2 {
            return Err(Error::validation(format!("need at least 2 classes, got {k}")));
        }
        if d < 1 {
            return Err(Error::validation("feature dimension must be at least 1"));
        }
        if self.head.bias.len() != k {
            return Err(Error::validation(format!(
                "head.bias has {} entries for {k} classes",
                self.head.bias.len()
            )));
        }
        for name in SPLITS {
            let split = self.split(name).expect("known split");
            self.validate_split(name, split, k, d)?;
        }
        Ok(())
    }

    fn validate_split(&self, name: &str, split: &Split, k: usize, d: usize) -> Result<()> {
        let n = split.features.rows();
        if n == 0 {
            return Err(Error::validation(format!("{name} split is empty")));
        }
        if split.labels.len() != n || split.predictions.len() != n {
            return Err(Error::validation(format!(
                "{name}: {n} feature rows, {} labels, {} predictions",
                split.labels.len(),
                split.predictions.len()
            )));
        }
        if split.features.cols() != d {
            return Err(Error::validation(format!(
                "{name}: feature dimension {} does not match head dimension {d}",
                split.features.cols()
            )));
        }
        for i in 0..n {
            let pred = split.predictions[i];
            if pred < 0 || pred as usize >= k {
                return Err(Error::validation_at(
                    i,
                    format!("{name}: prediction {pred} outside [0, {k})"),
                ));
            }
            let label = split.labels[i];
            let label_ok = if label == NOVEL_LABEL {
                name != "train"
            } else {
                label >= 0 && (label as usize) < k
            };
            if !label_ok {
                return Err(Error::validation_at(i, format!("{name}: label {label} not allowed")));
            }
            if name == "ood" && self.ood_kind == OodKind::Novelty && label != NOVEL_LABEL {
                return Err(Error::validation_at(
                    i,
                    format!("ood: novelty sample carries in-set label {label}"),
                ));
            }
            let expected = self.head.predict(split.features.row(i));
            if expected != pred as usize {
                return Err(Error::validation_at(
                    i,
                    format!("{name}: stored prediction {pred} but head argmax is {expected}"),
                ));
            }
        }
        Ok(())
    }

    pub fn to_container(&self) -> Result<TensorContainer> {
        let mut c = TensorContainer::new();
        for name in SPLITS {
            let split = self.split(name).expect("known split");
            let n = split.features.rows();
            c.insert(
                format!("{name}.features"),
                Tensor::from_f32(vec![n, split.features.cols()], split.features.as_slice().to_vec())?,
            )?;
            c.insert(
                format!("{name}.labels"),
                Tensor::from_i32(vec![split.labels.len()], split.labels.clone())?,
            )?;
            c.insert(
                format!("{name}.predictions"),
                Tensor::from_i32(vec![split.predictions.len()], split.predictions.clone())?,
            )?;
        }
        c.insert(
            "head.weights",
            Tensor::from_f32(
                vec![self.head.weights.rows(), self.head.weights.cols()],
                self.head.weights.as_slice().to_vec(),
            )?,
        )?;
        c.insert(
            "head.bias",
            Tensor::from_f32(vec![self.head.bias.len()], self.head.bias.clone())?,
        )?;
        let meta = BundleMeta {
            name: self.name.clone(),
            ood_kind: self.ood_kind,
            num_classes: self.num_classes(),
        };
        c.set_meta(serde_json::to_value(meta).map_err(|e| Error::format(e.to_string()))?);
        Ok(c)
    }
}

fn f32_entry<'a>(c: &'a TensorContainer, name: &str, rank: usize) -> Result<(&'a [usize], &'a [f32])> {
    let t = c
        .get(name)
        .ok_or_else(|| Error::schema(format!("missing entry {name:?}")))?;
    let values = t
        .as_f32()
        .ok_or_else(|| Error::schema(format!("entry {name:?} must be f32")))?;
    if t.shape().len() != rank {
        return Err(Error::schema(format!(
            "entry {name:?} must have rank {rank}, has shape {:?}",
            t.shape()
        )));
    }
    Ok((t.shape(), values))
}

fn i32_vector(c: &TensorContainer, name: &str) -> Result<Vec<i32>> {
    let t = c
        .get(name)
        .ok_or_else(|| Error::schema(format!("missing entry {name:?}")))?;
    let values = t
        .as_i32()
        .ok_or_else(|| Error::schema(format!("entry {name:?} must be i32")))?;
    if t.shape().len() != 1 {
        return Err(Error::schema(format!(
            "entry {name:?} must have rank 1, has shape {:?}",
            t.shape()
        )));
    }
    Ok(values.to_vec())
}

fn load_split(c: &TensorContainer, name: &str) -> Result<Split> {
    let (shape, values) = f32_entry(c, &format!("{name}.features"), 2)?;
    Ok(Split {
        features: Matrix::new(shape[0], shape[1], values.to_vec())?,
        labels: i32_vector(c, &format!("{name}.labels"))?,
        predictions: i32_vector(c, &format!("{name}.predictions"))?,
    })
}

/// Assembles and validates a bundle from a decoded container.
pub fn load_bundle(container: &TensorContainer) -> Result<ScenarioBundle> {
    let meta = container
        .meta()
        .ok_or_else(|| Error::schema("missing meta header field"))?;
    let meta: BundleMeta = serde_json::from_value(meta.clone()).map_err(|e| Error::schema(format!("meta: {e}")))?;

    let (wshape, weights) = f32_entry(container, "head.weights", 2)?;
    let (_, bias) = f32_entry(container, "head.bias", 1)?;
    let head = ClassifierHead {
        weights: Matrix::new(wshape[0], wshape[1], weights.to_vec())?,
        bias: bias.to_vec(),
    };
    if head.num_classes() != meta.num_classes {
        return Err(Error::validation(format!(
            "meta.num_classes = {} but head has {} rows",
            meta.num_classes,
            head.num_classes()
        )));
    }
    let bundle = ScenarioBundle {
        name: meta.name,
        ood_kind: meta.ood_kind,
        train: load_split(container, "train")?,
        test_id: load_split(container, "test_id")?,
        ood: load_split(container, "ood")?,
        head,
    };
    bundle.validate()?;
    Ok(bundle)
}
