//! Analysis over trained fusors: layer-wise gate aggregation, embedding
//! discriminability and forced single-encoder evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adapters::{EncoderAdapter, SyntheticImage};
use crate::config::FusorMode;
use crate::error::{FusorError, Result};
use crate::exec::{self, Execution};
use crate::model::GateVector;
use crate::train::{evaluate, EncodedSample, RoutingModel};

/// Mean normalized gate weights per layer over a group of samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub label: String,
    pub sample_count: usize,
    /// `layers[l][i]`: weight of encoder `i` in layer `l + 1`.
    pub layers: Vec<Vec<f64>>,
}

impl GateReport {
    /// Encoder with the largest mean weight in 1-based `layer`.
    pub fn argmax(&self, layer: usize) -> Option<usize> {
        let weights = self.layers.get(layer.checked_sub(1)?)?;
        Some(crate::model::argmax(weights))
    }
}

/// Averages gate traces layer by layer and renormalizes each layer to sum 1.
pub fn aggregate_traces(traces: &[Vec<GateVector>], label: &str) -> Result<GateReport> {
    let first = traces
        .first()
        .ok_or_else(|| FusorError::InvalidArgument("cannot aggregate an empty sample set".into()))?;
    let layers = first.len();
    let n = first.first().map_or(0, |g| g.weights.len());
    if traces.iter().any(|t| t.len() != layers || t.iter().any(|g| g.weights.len() != n)) {
        return Err(FusorError::InvalidArgument(
            "gate traces come from models of different shapes".into(),
        ));
    }
    let mut sums = vec![vec![0.0; n]; layers];
    for trace in traces {
        for (acc, gate) in sums.iter_mut().zip(trace) {
            for (a, w) in acc.iter_mut().zip(&gate.weights) {
                *a += w;
            }
        }
    }
    for layer in &mut sums {
        let total: f64 = layer.iter().sum();
        if total > 0.0 {
            layer.iter_mut().for_each(|w| *w /= total);
        }
    }
    Ok(GateReport {
        label: label.to_string(),
        sample_count: traces.len(),
        layers: sums,
    })
}

/// Runs `model` over `samples` and aggregates their gate traces.
pub fn aggregate_gates(
    model: &RoutingModel,
    samples: &[EncodedSample],
    mode: FusorMode,
    label: &str,
    execution: Execution,
) -> Result<GateReport> {
    if samples.is_empty() {
        return Err(FusorError::InvalidArgument("cannot aggregate an empty sample set".into()));
    }
    let traces = exec::map(execution, samples, |s| model.predict(s, mode).map(|p| p.output.gate_trace))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    aggregate_traces(&traces, label)
}

/// One report per class, labelled with the class name.
pub fn gate_reports_by_class(
    model: &RoutingModel,
    samples: &[EncodedSample],
    class_names: &[String],
    execution: Execution,
) -> Result<Vec<GateReport>> {
    class_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let subset: Vec<EncodedSample> = samples.iter().filter(|s| s.class == c).cloned().collect();
            aggregate_gates(model, &subset, FusorMode::Full, name, execution)
        })
        .collect()
}

/// Embeddings of an image series that varies one attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSeries {
    pub attribute: String,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingSeries {
    pub fn new(attribute: &str, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(FusorError::InvalidArgument(
                "an embedding series needs at least two vectors".into(),
            ));
        }
        let d = vectors[0].len();
        if d == 0 || vectors.iter().any(|v| v.len() != d) {
            return Err(FusorError::InvalidArgument(
                "embedding vectors must share one nonzero dimension".into(),
            ));
        }
        Ok(Self {
            attribute: attribute.to_string(),
            vectors,
        })
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }
}

/// Mean pairwise Euclidean distance between the L2-normalized embeddings.
pub fn discriminability(series: &EmbeddingSeries) -> Result<f64> {
    let normed = series
        .vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(FusorError::InvalidArgument(format!(
                    "embedding {i} of series `{}` cannot be normalized",
                    series.attribute
                )));
            }
            Ok(v.iter().map(|x| x / norm).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..normed.len() {
        for j in i + 1..normed.len() {
            let d: f64 = normed[i].iter().zip(&normed[j]).map(|(a, b)| (a - b).powi(2)).sum();
            total += d.sqrt();
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// A mildly textured image shifted to `steps` brightness levels evenly
/// spaced over `[lo, hi]`.
pub fn brightness_ladder(size: usize, steps: usize, lo: f64, hi: f64) -> Result<Vec<SyntheticImage>> {
    if steps < 2 {
        return Err(FusorError::InvalidArgument("a ladder needs at least two steps".into()));
    }
    (0..steps)
        .map(|k| {
            let b = lo + (hi - lo) * k as f64 / (steps - 1) as f64;
            SyntheticImage::from_fn(size, size, |c, y, x| {
                let texture = ((x * 7 + y * 13 + c * 5) % 11) as f64 / 11.0 - 0.5;
                b + 0.1 * texture
            })
            .map(|img| img.with_meta("brightness", b))
        })
        .collect()
}

/// Mean-pooled raw outputs of one encoder over an image series.
pub fn encoder_series(encoder: &dyn EncoderAdapter, images: &[SyntheticImage], attribute: &str) -> Result<EmbeddingSeries> {
    let vectors = images
        .iter()
        .map(|img| encoder.encode(img).map(|f| f.pooled()))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSeries::new(attribute, vectors)
}

/// Mean-pooled final tokens of a fusor over encoded samples.
pub fn fused_series(model: &RoutingModel, samples: &[EncodedSample], attribute: &str) -> Result<EmbeddingSeries> {
    let vectors = samples
        .iter()
        .map(|s| model.predict(s, FusorMode::Full).map(|p| p.output.tokens.mean_rows().into_vec()))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSeries::new(attribute, vectors)
}

/// `(correct, total)` per topic plus overall, for a forced-gate run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicAccuracy {
    pub encoder: usize,
    pub correct: usize,
    pub total: usize,
    pub per_topic: BTreeMap<String, (usize, usize)>,
}

impl TopicAccuracy {
    pub fn overall(&self) -> f64 {
        ratio(self.correct, self.total)
    }

    pub fn topic(&self, name: &str) -> f64 {
        self.per_topic.get(name).map_or(0.0, |&(c, t)| ratio(c, t))
    }
}

fn ratio(c: usize, t: usize) -> f64 {
    if t == 0 {
        0.0
    } else {
        c as f64 / t as f64
    }
}

/// Evaluates `model` with the gate forced to one-hot at 1-based encoder `k`
/// in every layer. Topics are class names.
pub fn forced_gate_eval(
    model: &RoutingModel,
    samples: &[EncodedSample],
    class_names: &[String],
    k: usize,
    execution: Execution,
) -> Result<TopicAccuracy> {
    let n = model.config().num_encoders;
    if k == 0 || k > n {
        return Err(FusorError::InvalidArgument(format!("encoder {k} outside 1..={n}")));
    }
    let eval = evaluate(model, samples, FusorMode::SingleEncoder(k), execution)?;
    let per_topic = eval
        .per_class
        .iter()
        .enumerate()
        .filter(|(_, &(_, t))| t > 0)
        .map(|(c, &ct)| {
            let name = class_names.get(c).cloned().unwrap_or_else(|| format!("class{c}"));
            (name, ct)
        })
        .collect();
    Ok(TopicAccuracy {
        encoder: k,
        correct: eval.correct,
        total: eval.total,
        per_topic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gate(weights: &[f64], l: usize) -> GateVector {
        GateVector {
            weights: weights.to_vec(),
            layer_index: l,
        }
    }

    #[test]
    fn single_sample_report_is_its_trace() {
        let trace = vec![gate(&[0.2, 0.8], 1), gate(&[0.6, 0.4], 2)];
        let r = aggregate_traces(std::slice::from_ref(&trace), "x").unwrap();
        assert_eq!(r.layers, vec![vec![0.2, 0.8], vec![0.6, 0.4]]);
        assert_eq!(r.sample_count, 1);
        assert_eq!(r.argmax(1), Some(1));
        assert_eq!(r.argmax(3), None);
    }

    #[test]
    fn empty_subset_is_rejected() {
        assert!(aggregate_traces(&[], "x").is_err());
    }

    #[test]
    fn discriminability_geometry() {
        let same = EmbeddingSeries::new("a", vec![vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(discriminability(&same).unwrap(), 0.0);
        let ortho = EmbeddingSeries::new("a", vec![vec![3.0, 0.0], vec![0.0, 0.5]]).unwrap();
        assert!((discriminability(&ortho).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let zero = EmbeddingSeries::new("a", vec![vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(discriminability(&zero).is_err());
        assert!(EmbeddingSeries::new("a", vec![vec![1.0]]).is_err());
    }
}
