//! Evaluation-side summaries. These read ground truth and class tags, which
//! the learners never see.

use std::io::Write;

use aad_core::active::{normalize_scores, HistoryRecord, WeightVector};
use aad_core::data::Dataset;
use aad_core::iforest::EnsembleModel;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("instance {0} has no class tag")]
    MissingClassTag(usize),
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("no curves to summarize")]
    NoCurves,
    #[error(transparent)]
    Core(#[from] aad_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Angle in radians between each unit-normalized score vector and the
/// uniform weight vector.
pub fn angles_to_uniform(model: &EnsembleModel, data: &Dataset) -> Result<Vec<f64>, MetricsError> {
    let unif = WeightVector::uniform(model.m());
    data.features()
        .rows()
        .map(|x| {
            let z = normalize_scores(&model.transform(x)?)?;
            Ok(z.dot(unif.as_slice()).clamp(-1.0, 1.0).acos())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleHistogram {
    /// `bins + 1` edges in radians.
    pub edges: Vec<f64>,
    pub anomalies: Vec<usize>,
    pub nominals: Vec<usize>,
    pub anomaly_mean: f64,
    pub nominal_mean: f64,
}

/// Histograms of the angles of anomalies and of nominals over a common range.
/// Unlabeled instances are skipped.
pub fn angle_histogram(model: &EnsembleModel, data: &Dataset, bins: usize) -> Result<AngleHistogram, MetricsError> {
    let angles = angles_to_uniform(model, data)?;
    let bins = bins.max(1);
    let (lo, hi) = angles.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &a| (l.min(a), h.max(a)));
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut anomalies = vec![0; bins];
    let mut nominals = vec![0; bins];
    let (mut sum_a, mut n_a, mut sum_n, mut n_n) = (0.0, 0usize, 0.0, 0usize);
    let truth = data.ground_truth();
    for (i, &a) in angles.iter().enumerate() {
        let k = (((a - lo) / width) as usize).min(bins - 1);
        match truth.label(i) {
            Some(l) if l.is_anomaly() => {
                anomalies[k] += 1;
                sum_a += a;
                n_a += 1;
            }
            Some(_) => {
                nominals[k] += 1;
                sum_n += a;
                n_n += 1;
            }
            None => {}
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    Ok(AngleHistogram { edges, anomalies, nominals, anomaly_mean: mean(sum_a, n_a), nominal_mean: mean(sum_n, n_n) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversitySeries {
    /// Distinct classes among each batch's queries.
    pub per_batch: Vec<usize>,
    /// Running mean of `per_batch`.
    pub cumulative_mean: Vec<f64>,
}

/// Splits the query history into consecutive batches of `batch_size` and
/// counts distinct class tags in each.
pub fn class_diversity_series(history: &[HistoryRecord], class_tags: &[Option<String>], batch_size: usize) -> Result<DiversitySeries, MetricsError> {
    if batch_size == 0 {
        return Err(MetricsError::ZeroBatch);
    }
    let mut per_batch = Vec::new();
    for chunk in history.chunks(batch_size) {
        let mut seen: Vec<&str> = Vec::with_capacity(chunk.len());
        for h in chunk {
            let tag = class_tags.get(h.queried_id).and_then(|t| t.as_deref()).ok_or(MetricsError::MissingClassTag(h.queried_id))?;
            if !seen.contains(&tag) {
                seen.push(tag);
            }
        }
        per_batch.push(seen.len());
    }
    let mut total = 0.0;
    let cumulative_mean = per_batch
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            total += c as f64;
            total / (i + 1) as f64
        })
        .collect();
    Ok(DiversitySeries { per_batch, cumulative_mean })
}

/// Element-wise `a - b` of two cumulative-mean series, over their common
/// length.
pub fn diversity_difference(a: &DiversitySeries, b: &DiversitySeries) -> Vec<f64> {
    a.cumulative_mean.iter().zip(&b.cumulative_mean).map(|(x, y)| x - y).collect()
}

/// Mean and the half-width of its two-sided 95% Student-t interval. The
/// half-width is zero for fewer than two values.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom").inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

/// Anomalies found after each query; entry 0 is before any query.
pub fn discovery_curve(history: &[HistoryRecord]) -> Vec<usize> {
    std::iter::once(0).chain(history.iter().map(|h| h.num_anomalies_so_far)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub query: usize,
    pub mean_percent: f64,
    pub ci_half_width: f64,
}

/// Per-query mean percentage of all anomalies seen, with a 95% interval
/// across seeds. Each curve is paired with its dataset's anomaly count;
/// short curves are extended with their last value.
pub fn summarize_curves(curves: &[(Vec<usize>, usize)]) -> Result<Vec<CurvePoint>, MetricsError> {
    let len = curves.iter().map(|(c, _)| c.len()).max().ok_or(MetricsError::NoCurves)?;
    Ok((0..len)
        .map(|q| {
            let pct: Vec<f64> = curves
                .iter()
                .map(|(c, total)| {
                    let v = c.get(q).or(c.last()).copied().unwrap_or(0);
                    if *total == 0 {
                        0.0
                    } else {
                        100.0 * v as f64 / *total as f64
                    }
                })
                .collect();
            let (mean_percent, ci_half_width) = mean_ci95(&pct);
            CurvePoint { query: q, mean_percent, ci_half_width }
        })
        .collect())
}

pub fn write_curve_csv<W: Write>(writer: W, points: &[CurvePoint]) -> Result<(), MetricsError> {
    let mut w = std::io::BufWriter::new(writer);
    writeln!(w, "query,mean_percent_seen,ci95_half_width")?;
    for p in points {
        writeln!(w, "{},{},{}", p.query, p.mean_percent, p.ci_half_width)?;
    }
    w.flush()?;
    Ok(())
}
