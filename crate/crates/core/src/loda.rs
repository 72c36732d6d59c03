//! LODA: one-dimensional histogram detectors over sparse random projections.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{invalid, Error, Result};
use crate::math;

/// Equal-width histogram with one padding bin on each side of the training
/// range and add-one smoothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Left edge of the first bin.
    pub start: f64,
    pub width: f64,
    pub probs: Vec<f64>,
}

impl Histogram {
    pub fn fit(values: &[f64], bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(invalid("a histogram needs at least two bins"));
        }
        if values.is_empty() {
            return Err(Error::Empty("histogram of no values"));
        }
        let (mut lo, mut hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if hi - lo <= 0.0 {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let start = lo - width;
        let total_bins = bins + 2;
        let mut counts = vec![1.0; total_bins];
        let mut h = Histogram { start, width, probs: Vec::new() };
        for &v in values {
            counts[h.bin(v, total_bins)] += 1.0;
        }
        let total = values.len() as f64 + total_bins as f64;
        h.probs = counts.into_iter().map(|c| c / total).collect();
        Ok(h)
    }

    fn bin(&self, v: f64, n: usize) -> usize {
        let k = math::floor((v - self.start) / self.width);
        if k.is_nan() || k < 0.0 {
            0
        } else {
            (k as usize).min(n - 1)
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Bin index of `v`; values beyond the edges land in the edge bins.
    pub fn bin_of(&self, v: f64) -> usize {
        self.bin(v, self.probs.len())
    }

    pub fn density(&self, v: f64) -> f64 {
        self.probs[self.bin_of(v)] / self.width
    }
}

/// One sparse projection with its histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LodaProjection {
    /// `(feature, coefficient)`, ascending by feature.
    pub beta: Vec<(usize, f64)>,
    pub histogram: Histogram,
}

impl LodaProjection {
    pub fn project(&self, x: &[f64]) -> f64 {
        self.beta.iter().map(|&(f, c)| c * x[f]).sum()
    }

    /// Negative log density of the projected point.
    pub fn score(&self, x: &[f64]) -> f64 {
        -math::ln(self.histogram.density(self.project(x)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LodaEnsemble {
    d: usize,
    projections: Vec<LodaProjection>,
}

/// Sturges' rule, `ceil(1 + log2 n)`.
pub fn sturges_bins(n: usize) -> usize {
    (math::ceil(1.0 + math::ln(n.max(1) as f64) / core::f64::consts::LN_2) as usize).max(2)
}

/// Fits `members` projections, each with `ceil(sqrt d)` standard-normal
/// coefficients on randomly chosen features.
pub fn fit_loda<R: Rng + ?Sized>(data: &FeatureMatrix, members: usize, bins: Option<usize>, rng: &mut R) -> Result<LodaEnsemble> {
    if members == 0 {
        return Err(invalid("LODA needs at least one projection"));
    }
    if data.is_empty() {
        return Err(Error::Empty("cannot fit LODA on an empty batch"));
    }
    let d = data.d();
    let nnz = (math::ceil(math::sqrt(d as f64)) as usize).clamp(1, d);
    let bins = bins.unwrap_or_else(|| sturges_bins(data.len()));
    let mut projections = Vec::with_capacity(members);
    for _ in 0..members {
        let mut features = index::sample(rng, d, nnz).into_vec();
        features.sort_unstable();
        let beta: Vec<(usize, f64)> = features.into_iter().map(|f| (f, rng.sample(StandardNormal))).collect();
        let proj = LodaProjection { beta, histogram: Histogram { start: 0.0, width: 1.0, probs: Vec::new() } };
        let values: Vec<f64> = data.rows().map(|x| proj.project(x)).collect();
        projections.push(LodaProjection { histogram: Histogram::fit(&values, bins)?, ..proj });
    }
    Ok(LodaEnsemble { d, projections })
}

impl LodaEnsemble {
    /// Ensemble from given projections, e.g. hand-picked directions.
    pub fn from_projections(d: usize, projections: Vec<LodaProjection>) -> Result<Self> {
        if projections.is_empty() {
            return Err(invalid("LODA needs at least one projection"));
        }
        if projections.iter().flat_map(|p| &p.beta).any(|&(f, _)| f >= d) {
            return Err(invalid("projection references a missing feature"));
        }
        Ok(LodaEnsemble { d, projections })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn members(&self) -> usize {
        self.projections.len()
    }

    pub fn projections(&self) -> &[LodaProjection] {
        &self.projections
    }

    pub fn member_score(&self, m: usize, x: &[f64]) -> f64 {
        self.projections[m].score(x)
    }

    /// `s_m(x)` for every member.
    pub fn member_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, found: x.len() });
        }
        Ok(self.projections.iter().map(|p| p.score(x)).collect())
    }

    /// Mean member score.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let s = self.member_scores(x)?;
        Ok(s.iter().sum::<f64>() / s.len() as f64)
    }
}

/// Builds a projection along `beta` with a histogram fitted on `data`.
pub fn fixed_projection(data: &FeatureMatrix, beta: Vec<(usize, f64)>, bins: usize) -> Result<LodaProjection> {
    let proj = LodaProjection { beta, histogram: Histogram { start: 0.0, width: 1.0, probs: Vec::new() } };
    let values: Vec<f64> = data.rows().map(|x| proj.project(x)).collect();
    Ok(LodaProjection { histogram: Histogram::fit(&values, bins)?, ..proj })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_data_fills_interior_bins_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<[f64; 1]> = (0..10_000).map(|_| [rng.random_range(0.0..1.0)]).collect();
        let data = FeatureMatrix::from_rows(&rows).unwrap();
        let ens = fit_loda(&data, 1, Some(10), &mut rng).unwrap();
        let h = &ens.projections()[0].histogram;
        assert_eq!(h.len(), 12);
        assert!((h.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for p in &h.probs[1..11] {
            assert!((p - 0.1).abs() < 0.05, "{p}");
        }
        assert_eq!(ens.projections()[0].beta.len(), 1);
    }

    #[test]
    fn beta_has_ceil_sqrt_d_nonzeros() {
        let rows: Vec<[f64; 10]> = (0..50).map(|i| [i as f64; 10]).collect();
        let data = FeatureMatrix::from_rows(&rows).unwrap();
        let ens = fit_loda(&data, 5, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(ens.projections().iter().all(|p| p.beta.len() == 4));
    }

    #[test]
    fn constant_projection_widens_to_unit_range() {
        let h = Histogram::fit(&[2.0; 20], 4).unwrap();
        assert!((h.width - 0.25).abs() < 1e-12);
        assert!(h.density(2.0) > 0.0);
        assert!(h.density(1e9) > 0.0);
    }

    #[test]
    fn score_follows_density() {
        let h = Histogram::fit(&[0.0, 0.1, 0.2, 0.3, 3.9, 4.0], 4).unwrap();
        let proj = LodaProjection { beta: alloc::vec![(0, 1.0)], histogram: h };
        let dense = proj.score(&[0.05]);
        assert_eq!(dense, proj.score(&[0.15]));
        assert!(dense < proj.score(&[2.0]));
        // Halving the density adds ln 2.
        let mut halved = proj.clone();
        let k = halved.histogram.bin_of(0.05);
        halved.histogram.probs[k] /= 2.0;
        assert!((halved.score(&[0.05]) - dense - math::ln(2.0)).abs() < 1e-12);
        assert!(proj.score(&[-100.0]).is_finite());
    }

    #[test]
    fn single_member_mean_is_member_score() {
        let rows: Vec<[f64; 2]> = (0..100).map(|i| [i as f64, (i * i % 7) as f64]).collect();
        let data = FeatureMatrix::from_rows(&rows).unwrap();
        let ens = fit_loda(&data, 1, None, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(ens.score(&[3.0, 1.0]).unwrap(), ens.member_score(0, &[3.0, 1.0]));
    }
}
