//! Datasets, the simulated analyst and stream windowing.
//!
//! Learning code only ever sees a [`FeatureMatrix`] plus instance ids. Ground
//! truth stays inside [`Dataset`] and is reachable through two doors: a
//! [`SimulatedOracle`] (one query at a time, logged) and [`GroundTruth`],
//! which the metrics layer uses after a run.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Analyst label. `Anomaly` is the rare `+1` class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Anomaly,
    Nominal,
}

impl Label {
    /// `+1` for anomalies, `-1` for nominals.
    pub fn sign(self) -> f64 {
        match self {
            Label::Anomaly => 1.0,
            Label::Nominal => -1.0,
        }
    }

    pub fn is_anomaly(self) -> bool {
        self == Label::Anomaly
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Anomaly => "anomaly",
            Label::Nominal => "nominal",
        }
    }
}

/// Dense row-major feature storage with a fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    d: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(d: usize) -> Self {
        FeatureMatrix { d, values: Vec::new() }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut m = FeatureMatrix::new(d);
        for r in rows {
            m.push_row(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, found: row.len() });
        }
        if let Some(column) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: self.len(), column });
        }
        self.values.extend_from_slice(row);
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.d).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.d.max(1))
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select(&self, ids: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(ids.len() * self.d);
        for &i in ids {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix { d: self.d, values }
    }

    pub fn slice(&self, range: Range<usize>) -> FeatureMatrix {
        FeatureMatrix {
            d: self.d,
            values: self.values[range.start * self.d..range.end * self.d].to_vec(),
        }
    }

    /// Per-dimension `(min, max)` over all rows.
    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        let mut bb = alloc::vec![(f64::INFINITY, f64::NEG_INFINITY); self.d];
        for row in self.rows() {
            for (b, &v) in bb.iter_mut().zip(row) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
        bb
    }
}

/// A loaded dataset: features in stream order plus hidden labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: FeatureMatrix,
    labels: Vec<Option<Label>>,
    class_tags: Vec<Option<String>>,
    bounding_box: Vec<(f64, f64)>,
}

impl Dataset {
    pub fn new(
        features: FeatureMatrix,
        labels: Vec<Option<Label>>,
        class_tags: Vec<Option<String>>,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Empty("dataset has no instances"));
        }
        if labels.len() != features.len() {
            return Err(Error::DimensionMismatch { expected: features.len(), found: labels.len() });
        }
        if class_tags.len() != features.len() {
            return Err(Error::DimensionMismatch { expected: features.len(), found: class_tags.len() });
        }
        let bounding_box = features.bounding_box();
        Ok(Dataset { features, labels, class_tags, bounding_box })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn d(&self) -> usize {
        self.features.d()
    }

    pub fn bounding_box(&self) -> &[(f64, f64)] {
        &self.bounding_box
    }

    /// Fraction of instances whose hidden label is `Anomaly`.
    pub fn anomaly_fraction(&self) -> f64 {
        self.ground_truth().total_anomalies() as f64 / self.len() as f64
    }

    pub fn class_tags(&self) -> &[Option<String>] {
        &self.class_tags
    }

    /// Read access to the hidden labels, for evaluation code only.
    pub fn ground_truth(&self) -> GroundTruth<'_> {
        GroundTruth { labels: &self.labels }
    }

    pub fn oracle(&self) -> SimulatedOracle<'_> {
        SimulatedOracle::new(self.ground_truth())
    }

    /// Keeps all nominals and a seeded random subset of anomalies so that
    /// anomalies make up at most `fraction` of the result. Row order is kept.
    pub fn downsample_anomalies(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(invalid("anomaly fraction must lie in (0, 1)"));
        }
        let anomalies: Vec<usize> = (0..self.len())
            .filter(|&i| self.labels[i] == Some(Label::Anomaly))
            .collect();
        let others = self.len() - anomalies.len();
        // a / (a + others) <= fraction  =>  a <= fraction * others / (1 - fraction)
        let keep = ((fraction * others as f64) / (1.0 - fraction)) as usize;
        if keep >= anomalies.len() {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chosen = index::sample(&mut rng, anomalies.len(), keep);
        let mut keep_anomaly = alloc::vec![false; self.len()];
        for c in chosen.iter() {
            keep_anomaly[anomalies[c]] = true;
        }
        let ids: Vec<usize> = (0..self.len())
            .filter(|&i| self.labels[i] != Some(Label::Anomaly) || keep_anomaly[i])
            .collect();
        Dataset::new(
            self.features.select(&ids),
            ids.iter().map(|&i| self.labels[i]).collect(),
            ids.iter().map(|&i| self.class_tags[i].clone()).collect(),
        )
    }

    /// Contiguous sub-dataset, ids renumbered from zero.
    pub fn slice(&self, range: Range<usize>) -> Result<Dataset> {
        Dataset::new(
            self.features.slice(range.clone()),
            self.labels[range.clone()].to_vec(),
            self.class_tags[range].to_vec(),
        )
    }
}

/// Hidden labels, exposed to metrics after the fact.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruth<'a> {
    labels: &'a [Option<Label>],
}

impl GroundTruth<'_> {
    pub fn label(&self, id: usize) -> Option<Label> {
        self.labels.get(id).copied().flatten()
    }

    pub fn is_anomaly(&self, id: usize) -> bool {
        self.label(id) == Some(Label::Anomaly)
    }

    pub fn total_anomalies(&self) -> usize {
        self.labels.iter().filter(|l| **l == Some(Label::Anomaly)).count()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Anything that can answer a label query for an instance id.
pub trait LabelOracle {
    fn label(&mut self, id: usize) -> Result<Label>;
}

/// Answers from ground truth and logs each distinct query once.
#[derive(Debug, Clone)]
pub struct SimulatedOracle<'a> {
    truth: GroundTruth<'a>,
    log: Vec<(usize, Label)>,
    answered: BTreeMap<usize, Label>,
}

impl<'a> SimulatedOracle<'a> {
    pub fn new(truth: GroundTruth<'a>) -> Self {
        SimulatedOracle { truth, log: Vec::new(), answered: BTreeMap::new() }
    }

    pub fn query_log(&self) -> &[(usize, Label)] {
        &self.log
    }
}

impl LabelOracle for SimulatedOracle<'_> {
    fn label(&mut self, id: usize) -> Result<Label> {
        if let Some(l) = self.answered.get(&id) {
            return Ok(*l);
        }
        if id >= self.truth.len() {
            return Err(Error::UnknownInstance(id));
        }
        let l = self.truth.label(id).ok_or(Error::MissingLabel(id))?;
        self.answered.insert(id, l);
        self.log.push((id, l));
        Ok(l)
    }
}

/// Consecutive, order-preserving windows of at most `k` ids over `0..n`.
pub fn stream_windows(n: usize, k: usize) -> Result<Vec<Range<usize>>> {
    if k == 0 {
        return Err(invalid("window size must be at least 1"));
    }
    Ok((0..n).step_by(k).map(|s| s..(s + k).min(n)).collect())
}
