//! Scores computed from a logit vector.

/// `log(sum(exp(v)))` with the max-shift trick. Empty input gives `-inf`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax probabilities, max-shifted.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `1 - max softmax`; higher means less confident.
pub fn msp_score(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // The largest softmax entry is exp(0) / sum.
    let total: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    1.0 - 1.0 / total
}

/// Negative free energy `-T * logsumexp(logits / T)`; higher means more
/// OOD-like.
pub fn energy_score(logits: &[f64], temperature: f64) -> f64 {
    if temperature == 1.0 {
        return -logsumexp(logits);
    }
    let scaled: Vec<f64> = logits.iter().map(|v| v / temperature).collect();
    -temperature * logsumexp(&scaled)
}
