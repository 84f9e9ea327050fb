//! Single-view linear probes: how well each encoder view alone predicts
//! each class's label.

use crate::error::{FusorError, Result};

use super::task::EncodedSample;

pub const PROBE_STEPS: usize = 1500;
pub const PROBE_LR: f64 = 0.05;

/// Multinomial logistic regression on standardized features, fitted with
/// full-batch Adam. Returns test accuracy.
pub fn probe_accuracy(train: &[(Vec<f64>, usize)], test: &[(Vec<f64>, usize)], num_labels: usize) -> Result<f64> {
    let d = train.first().map(|(x, _)| x.len()).ok_or_else(|| {
        FusorError::InvalidArgument("probe needs at least one training example".into())
    })?;
    if test.is_empty() || num_labels == 0 {
        return Err(FusorError::InvalidArgument("probe needs test examples and labels".into()));
    }
    let n = train.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| train.iter().map(|(x, _)| x[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| {
            let var = train.iter().map(|(x, _)| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
            var.sqrt() + 1e-9
        })
        .collect();
    let standardize = |x: &[f64]| -> Vec<f64> { x.iter().enumerate().map(|(j, v)| (v - mean[j]) / std[j]).collect() };
    let xs: Vec<Vec<f64>> = train.iter().map(|(x, _)| standardize(x)).collect();

    // parameters laid out as d×K weights followed by K biases
    let k = num_labels;
    let np = d * k + k;
    let mut w = vec![0.0; np];
    let (mut m, mut v) = (vec![0.0; np], vec![0.0; np]);
    let logits = |w: &[f64], x: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|c| w[d * k + c] + (0..d).map(|j| x[j] * w[j * k + c]).sum::<f64>())
            .collect()
    };
    for t in 1..=PROBE_STEPS {
        let mut g = vec![0.0; np];
        for (x, &(_, y)) in xs.iter().zip(train) {
            let p = crate::tensor::softmax(&logits(&w, x));
            for c in 0..k {
                let e = (p[c] - f64::from(u8::from(c == y))) / n;
                for j in 0..d {
                    g[j * k + c] += e * x[j];
                }
                g[d * k + c] += e;
            }
        }
        let c1 = 1.0 - 0.9f64.powi(t as i32);
        let c2 = 1.0 - 0.999f64.powi(t as i32);
        for i in 0..np {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            w[i] -= PROBE_LR * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
        }
    }
    let hits = test
        .iter()
        .filter(|(x, y)| crate::model::argmax(&logits(&w, &standardize(x))) == *y)
        .count();
    Ok(hits as f64 / test.len() as f64)
}

/// `result[class][encoder]`: probe accuracy of each raw view's pooled
/// features on each class's label.
pub fn probe_matrix(
    train: &[EncodedSample],
    test: &[EncodedSample],
    num_classes: usize,
    num_labels: usize,
) -> Result<Vec<Vec<f64>>> {
    let num_encoders = train
        .first()
        .map(|s| s.raw.len())
        .ok_or_else(|| FusorError::InvalidArgument("empty probe training set".into()))?;
    let rows = |set: &[EncodedSample], class: usize, enc: usize| -> Vec<(Vec<f64>, usize)> {
        set.iter()
            .filter(|s| s.class == class)
            .map(|s| (s.raw[enc].pooled(), s.label))
            .collect()
    };
    (0..num_classes)
        .map(|class| {
            (0..num_encoders)
                .map(|enc| probe_accuracy(&rows(train, class, enc), &rows(test, class, enc), num_labels))
                .collect()
        })
        .collect()
}
