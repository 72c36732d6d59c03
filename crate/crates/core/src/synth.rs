//! Seeded synthetic datasets for tests, benchmarks and demos.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureMatrix, Label};
use crate::error::{invalid, Result};
use crate::math;

struct Builder {
    rows: Vec<Vec<f64>>,
    labels: Vec<Option<Label>>,
    tags: Vec<Option<String>>,
}

impl Builder {
    fn new() -> Self {
        Builder { rows: Vec::new(), labels: Vec::new(), tags: Vec::new() }
    }

    fn push(&mut self, row: Vec<f64>, label: Label, tag: &str) {
        self.rows.push(row);
        self.labels.push(Some(label));
        self.tags.push(Some(String::from(tag)));
    }

    fn shuffled<R: Rng>(mut self, rng: &mut R) -> Result<Dataset> {
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.shuffle(rng);
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| core::mem::take(&mut self.rows[i])).collect();
        Dataset::new(
            FeatureMatrix::from_rows(&rows)?,
            order.iter().map(|&i| self.labels[i]).collect(),
            order.iter().map(|&i| self.tags[i].take()).collect(),
        )
    }
}

fn gaussian<R: Rng>(rng: &mut R, center: &[f64], sd: f64) -> Vec<f64> {
    center.iter().map(|c| c + sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn uniform<R: Rng>(rng: &mut R, d: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(lo..hi)).collect()
}

fn check_fraction(f: f64) -> Result<()> {
    if !(0.0..1.0).contains(&f) {
        return Err(invalid("anomaly fraction must lie in [0, 1)"));
    }
    Ok(())
}

/// One standard Gaussian cluster at the origin plus anomalies drawn uniformly
/// from `[-6, 6]^d` outside the radius-3 ball. Rows are shuffled.
pub fn cluster_dataset(n: usize, d: usize, anomaly_fraction: f64, seed: u64) -> Result<Dataset> {
    check_fraction(anomaly_fraction)?;
    if n == 0 || d == 0 {
        return Err(invalid("need n >= 1 and d >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anomalies = math::ceil(n as f64 * anomaly_fraction) as usize;
    let mut b = Builder::new();
    let origin = vec![0.0; d];
    for _ in 0..n - anomalies {
        b.push(gaussian(&mut rng, &origin, 1.0), Label::Nominal, "cluster");
    }
    for _ in 0..anomalies {
        let x = loop {
            let x = uniform(&mut rng, d, -6.0, 6.0);
            if math::norm(&x) > 3.0 {
                break x;
            }
        };
        b.push(x, Label::Anomaly, "outlier");
    }
    b.shuffled(&mut rng)
}

/// Shape of [`benchmark_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub n: usize,
    pub d: usize,
    pub anomaly_fraction: f64,
    /// Fraction of nominals scattered uniformly over the whole box.
    pub noise_fraction: f64,
    pub nominal_clusters: usize,
    pub anomaly_clusters: usize,
    /// Noise is uniform over `[-noise_range, noise_range]^d`.
    pub noise_range: f64,
    /// Distance of each anomaly cluster center from its anchor midpoint.
    pub anomaly_offset: f64,
    pub anomaly_sd: f64,
    /// Small, far-out nominal clusters: rare normal behavior that looks
    /// anomalous to an unsupervised detector.
    pub decoy_clusters: usize,
    pub decoy_fraction: f64,
    pub decoy_distance: f64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            n: 2000,
            d: 4,
            anomaly_fraction: 0.03,
            noise_fraction: 0.02,
            nominal_clusters: 3,
            anomaly_clusters: 3,
            noise_range: 6.0,
            anomaly_offset: 6.0,
            anomaly_sd: 0.7,
            decoy_clusters: 3,
            decoy_fraction: 0.06,
            decoy_distance: 7.0,
        }
    }
}

/// Several nominal Gaussian clusters, uniform nominal background noise, far
/// decoy nominal clusters that an unsupervised detector mistakes for
/// anomalies, and a few anomaly clusters offset from the midpoints between
/// nominal clusters. Class tags name the cluster.
pub fn benchmark_dataset(spec: &BenchmarkSpec, seed: u64) -> Result<Dataset> {
    check_fraction(spec.anomaly_fraction)?;
    check_fraction(spec.noise_fraction)?;
    check_fraction(spec.decoy_fraction)?;
    if spec.n == 0 || spec.d == 0 || spec.nominal_clusters == 0 || spec.anomaly_clusters == 0 {
        return Err(invalid("benchmark needs n, d and both cluster counts at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.d;
    let anomalies = math::ceil(spec.n as f64 * spec.anomaly_fraction) as usize;
    let noise = math::ceil(spec.n as f64 * spec.noise_fraction) as usize;
    let decoys = math::ceil(spec.n as f64 * spec.decoy_fraction) as usize;
    let clustered = spec.n.saturating_sub(anomalies + noise + decoys);

    let centers: Vec<Vec<f64>> = (0..spec.nominal_clusters).map(|_| uniform(&mut rng, d, -4.0, 4.0)).collect();
    let mut b = Builder::new();
    for i in 0..clustered {
        let c = i % spec.nominal_clusters;
        b.push(gaussian(&mut rng, &centers[c], 1.0), Label::Nominal, &format!("nominal-{c}"));
    }
    for _ in 0..noise {
        b.push(uniform(&mut rng, d, -spec.noise_range, spec.noise_range), Label::Nominal, "noise");
    }
    if spec.decoy_clusters > 0 {
        let decoy_centers: Vec<Vec<f64>> = (0..spec.decoy_clusters)
            .map(|_| {
                let dir = gaussian(&mut rng, &vec![0.0; d], 1.0);
                let scale = spec.decoy_distance / math::norm(&dir).max(1e-9);
                dir.into_iter().map(|v| v * scale).collect()
            })
            .collect();
        for i in 0..decoys {
            let k = i % spec.decoy_clusters;
            b.push(gaussian(&mut rng, &decoy_centers[k], 0.8), Label::Nominal, &format!("decoy-{k}"));
        }
    }
    // Anomaly clusters sit near the midpoint of two nominal clusters, offset
    // so they do not overlap either.
    let anomaly_centers: Vec<Vec<f64>> = (0..spec.anomaly_clusters)
        .map(|k| {
            let a = &centers[k % centers.len()];
            let c = &centers[(k + 1) % centers.len()];
            let offset = gaussian(&mut rng, &vec![0.0; d], 1.0);
            let scale = spec.anomaly_offset / math::norm(&offset).max(1e-9);
            a.iter().zip(c).zip(&offset).map(|((x, y), o)| 0.5 * (x + y) + scale * o).collect()
        })
        .collect();
    for i in 0..anomalies {
        let k = i % spec.anomaly_clusters;
        b.push(gaussian(&mut rng, &anomaly_centers[k], spec.anomaly_sd), Label::Anomaly, &format!("anomaly-{k}"));
    }
    b.shuffled(&mut rng)
}

/// 2-D data: two dense nominal clusters, a sparse nominal halo, and 30
/// anomalies scattered over three boxes away from the clusters.
pub fn toy_dataset(seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::new();
    for _ in 0..1000 {
        b.push(gaussian(&mut rng, &[0.0, 0.0], 0.8), Label::Nominal, "nominal-0");
    }
    for _ in 0..600 {
        b.push(gaussian(&mut rng, &[2.5, -2.0], 0.6), Label::Nominal, "nominal-1");
    }
    for _ in 0..20 {
        b.push(gaussian(&mut rng, &[1.0, -1.0], 2.0), Label::Nominal, "halo");
    }
    let regions: [(usize, [f64; 4]); 3] = [(12, [4.5, 6.5, 2.3, 4.4]), (10, [4.8, 6.5, -3.5, 1.5]), (8, [-0.4, 2.0, 3.7, 5.0])];
    for (k, (count, [x0, x1, y0, y1])) in regions.into_iter().enumerate() {
        for _ in 0..count {
            b.push(vec![rng.random_range(x0..x1), rng.random_range(y0..y1)], Label::Anomaly, &format!("anomaly-{k}"));
        }
    }
    b.shuffled(&mut rng)
}

/// Windowed stream of a standard Gaussian nominal cloud and anomalies placed
/// 4 to 6 units from the current nominal mean in a random direction. From
/// window `shift_from` on, the first half of the features moves by
/// `shift / ramp` per window until the full `shift` is reached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub windows: usize,
    pub window_size: usize,
    pub d: usize,
    pub anomaly_fraction: f64,
    pub shift_from: Option<usize>,
    pub shift: f64,
    /// Windows over which the shift builds up; 1 is an abrupt jump.
    pub ramp: usize,
}

impl Default for StreamSpec {
    fn default() -> Self {
        StreamSpec { windows: 20, window_size: 512, d: 4, anomaly_fraction: 0.03, shift_from: None, shift: 3.0, ramp: 1 }
    }
}

/// Rows are shuffled within each window but windows stay in order.
pub fn stream_dataset(spec: &StreamSpec, seed: u64) -> Result<Dataset> {
    check_fraction(spec.anomaly_fraction)?;
    if spec.windows == 0 || spec.window_size == 0 || spec.d == 0 {
        return Err(invalid("stream needs windows, window size and d at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_window = math::ceil(spec.window_size as f64 * spec.anomaly_fraction) as usize;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut tags = Vec::new();
    for w in 0..spec.windows {
        let offset = match spec.shift_from {
            Some(s) if w >= s => spec.shift * ((w - s + 1) as f64 / spec.ramp.max(1) as f64).min(1.0),
            _ => 0.0,
        };
        let mean: Vec<f64> = (0..spec.d).map(|f| if f < spec.d.div_ceil(2) { offset } else { 0.0 }).collect();
        let mut b = Builder::new();
        for _ in 0..spec.window_size - per_window.min(spec.window_size) {
            b.push(gaussian(&mut rng, &mean, 1.0), Label::Nominal, "nominal");
        }
        for _ in 0..per_window.min(spec.window_size) {
            let dir = gaussian(&mut rng, &vec![0.0; spec.d], 1.0);
            let r = rng.random_range(4.0..6.0) / math::norm(&dir).max(1e-9);
            b.push(mean.iter().zip(&dir).map(|(m, u)| m + r * u).collect(), Label::Anomaly, "anomaly");
        }
        let part = b.shuffled(&mut rng)?;
        let truth = part.ground_truth();
        for i in 0..part.len() {
            rows.push(part.features().row(i).to_vec());
            labels.push(truth.label(i));
            tags.push(part.class_tags()[i].clone());
        }
    }
    Dataset::new(FeatureMatrix::from_rows(&rows)?, labels, tags)
}
