//! Spectral distance matrices and their stochastic 2-D embedding.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, shape, Error, Result};

/// Added to the power before taking its log.
pub const LOG_POWER_EPSILON: f64 = 1e-12;

pub fn log_power(power: &[f64]) -> Vec<f64> {
    power.iter().map(|&p| libm::log(p + LOG_POWER_EPSILON)).collect()
}

/// Symmetric `n × n` distances with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
    classes: Vec<usize>,
}

impl DistanceMatrix {
    /// `D(i, j) = Σ_k (|P_i[k]| − |P_j[k]|)² · bin_width` over log spectra.
    pub fn from_log_spectra(spectra: &[Vec<f64>], classes: Vec<usize>, bin_width: f64) -> Result<Self> {
        let n = spectra.len();
        if classes.len() != n {
            return Err(shape(format!("{} labels for {n} spectra", classes.len())));
        }
        let bins = spectra.first().map_or(0, Vec::len);
        if spectra.iter().any(|s| s.len() != bins) {
            return Err(shape("spectra differ in length"));
        }
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let s: f64 = spectra[i]
                    .iter()
                    .zip(&spectra[j])
                    .map(|(a, b)| {
                        let e = libm::fabs(*a) - libm::fabs(*b);
                        e * e
                    })
                    .sum();
                d[i * n + j] = s * bin_width;
                d[j * n + i] = s * bin_width;
            }
        }
        Ok(Self { n, d, classes })
    }

    /// Takes a full row-major matrix; it must be symmetric, non-negative and
    /// zero on the diagonal.
    pub fn from_dense(n: usize, d: Vec<f64>, classes: Vec<usize>) -> Result<Self> {
        if d.len() != n * n || classes.len() != n {
            return Err(shape("distance matrix size"));
        }
        let m = Self { n, d, classes };
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<()> {
        for i in 0..self.n {
            if self.get(i, i) != 0.0 {
                return Err(invalid(format!("nonzero diagonal at {i}")));
            }
            for j in 0..self.n {
                let v = self.get(i, j);
                if !(v >= 0.0) || v != self.get(j, i) {
                    return Err(invalid(format!("entry ({i}, {j}) breaks symmetry or sign")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn max(&self) -> f64 {
        self.d.iter().copied().fold(0.0, f64::max)
    }

    /// Copy scaled so the largest entry is 1; unchanged when all zero.
    pub fn normalized(&self) -> Self {
        let m = self.max();
        let mut out = self.clone();
        if m > 0.0 {
            out.d.iter_mut().for_each(|v| *v /= m);
        }
        out
    }

    /// Entries above the diagonal, row by row.
    pub fn upper(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n * self.n.saturating_sub(1) / 2);
        for i in 0..self.n {
            for j in i + 1..self.n {
                v.push(self.get(i, j));
            }
        }
        v
    }
}

/// How embedded points are compared with `D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmbeddingMetric {
    /// `(x_i − x_j)² − (y_i − y_j)²`
    AsPrinted,
    /// `(x_i − x_j)² + (y_i − y_j)²`
    #[default]
    Euclidean,
}

impl EmbeddingMetric {
    pub fn name(self) -> &'static str {
        match self {
            EmbeddingMetric::AsPrinted => "as_printed",
            EmbeddingMetric::Euclidean => "euclidean",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "as_printed" => Some(Self::AsPrinted),
            "euclidean" => Some(Self::Euclidean),
            _ => None,
        }
    }

    pub fn eval(self, a: (f64, f64), b: (f64, f64)) -> f64 {
        let dx = (a.0 - b.0) * (a.0 - b.0);
        let dy = (a.1 - b.1) * (a.1 - b.1);
        match self {
            EmbeddingMetric::AsPrinted => dx - dy,
            EmbeddingMetric::Euclidean => dx + dy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D {
    pub points: Vec<(f64, f64)>,
    pub energy: f64,
    /// Best energy after each iteration, starting with the initial value.
    pub history: Vec<f64>,
    pub metric: EmbeddingMetric,
}

impl Embedding2D {
    pub fn d_hat(&self, i: usize, j: usize) -> f64 {
        self.metric.eval(self.points[i], self.points[j])
    }

    pub fn upper(&self) -> Vec<f64> {
        let n = self.points.len();
        let mut v = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                v.push(self.d_hat(i, j));
            }
        }
        v
    }
}

/// `E = Σ_{i≠j} (D̂(i, j) − D(i, j))²`
pub fn embedding_energy(d: &DistanceMatrix, points: &[(f64, f64)], metric: EmbeddingMetric) -> f64 {
    let n = d.len();
    let mut e = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let r = metric.eval(points[i], points[j]) - d.get(i, j);
            e += r * r;
        }
    }
    // both metrics are symmetric in (i, j)
    2.0 * e
}

/// Accept-only-improving random search starting from uniform points on
/// the unit square; every iteration moves all points at once.
pub fn embed_2d(d: &DistanceMatrix, metric: EmbeddingMetric, eta: f64, iters: usize, seed: u64) -> Result<Embedding2D> {
    let noise = Normal::new(0.0, eta).map_err(|_| invalid(format!("eta {eta} is not a valid deviation")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<(f64, f64)> = (0..d.len()).map(|_| (rng.random(), rng.random())).collect();
    let mut best = embedding_energy(d, &points, metric);
    let mut history = Vec::with_capacity(iters + 1);
    history.push(best);
    let mut trial = points.clone();
    for _ in 0..iters {
        for (t, p) in trial.iter_mut().zip(&points) {
            *t = (p.0 + noise.sample(&mut rng), p.1 + noise.sample(&mut rng));
        }
        let e = embedding_energy(d, &trial, metric);
        if e < best {
            best = e;
            core::mem::swap(&mut points, &mut trial);
        }
        history.push(best);
    }
    Ok(Embedding2D {
        points,
        energy: best,
        history,
        metric,
    })
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape(format!("{} vs {} samples", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::ZeroVariance("empty sample"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 {
        return Err(Error::ZeroVariance("first sample"));
    }
    if sbb == 0.0 {
        return Err(Error::ZeroVariance("second sample"));
    }
    Ok(sab / libm::sqrt(saa * sbb))
}

/// Pearson correlation of `D̂` against `D` over the pairs `i < j`.
pub fn embedding_correlation(d: &DistanceMatrix, emb: &Embedding2D) -> Result<f64> {
    if emb.points.len() != d.len() {
        return Err(shape("embedding and distance matrix differ in size"));
    }
    pearson(&emb.upper(), &d.upper())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn from_points(pts: &[(f64, f64)], metric: EmbeddingMetric) -> DistanceMatrix {
        let n = pts.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    d[i * n + j] = metric.eval(pts[i], pts[j]);
                }
            }
        }
        DistanceMatrix { n, d, classes: vec![0; n] }
    }

    #[test]
    fn spectra_distance_basics() {
        let a = vec![1.0, -2.0, 3.0];
        let b = vec![-1.0, 2.0, 3.0];
        let c = vec![0.0, 0.0, 1.0];
        let m = DistanceMatrix::from_log_spectra(&[a, b, c], vec![0, 0, 1], 0.5).unwrap();
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.get(0, 2), (1.0 + 4.0 + 4.0) * 0.5);
        m.check().unwrap();
        assert!(DistanceMatrix::from_log_spectra(&[vec![1.0], vec![1.0, 2.0]], vec![0, 0], 1.0).is_err());
        assert!(DistanceMatrix::from_dense(2, vec![0.0, 1.0, 2.0, 0.0], vec![0, 0]).is_err());
    }

    #[test]
    fn zero_iterations_keep_initialization() {
        let d = from_points(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], EmbeddingMetric::Euclidean);
        let e = embed_2d(&d, EmbeddingMetric::Euclidean, 1e-3, 0, 3).unwrap();
        assert_eq!(e.history, vec![e.energy]);
        assert_eq!(e.energy, embedding_energy(&d, &e.points, EmbeddingMetric::Euclidean));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let first: (f64, f64) = (rng.random(), rng.random());
        assert_eq!(e.points[0], first);
    }

    #[test]
    fn planar_configuration_is_recovered() {
        let pts = [(0.1, 0.2), (0.7, 0.3), (0.4, 0.9), (0.8, 0.8)];
        for metric in [EmbeddingMetric::AsPrinted, EmbeddingMetric::Euclidean] {
            let d = from_points(&pts, metric);
            let e = embed_2d(&d, metric, 1e-3, 100_000, 11).unwrap();
            assert!(e.energy <= 0.5 * e.history[0], "{metric:?}: {} vs {}", e.energy, e.history[0]);
            assert_eq!(e.energy, embedding_energy(&d, &e.points, metric));
        }
        let d = from_points(&pts, EmbeddingMetric::Euclidean);
        let e = embed_2d(&d, EmbeddingMetric::Euclidean, 1e-3, 100_000, 11).unwrap();
        assert!(embedding_correlation(&d, &e).unwrap() > 0.99);
    }

    #[test]
    fn pearson_cases() {
        let a = [1.0, 2.0, 4.0, 7.0];
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b: Vec<f64> = a.iter().map(|x| 3.0 * x + 2.0).collect();
        assert!((pearson(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((pearson(&a, &c).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(pearson(&a, &[1.0; 4]), Err(Error::ZeroVariance(_))));
        assert!(pearson(&a, &a[..2]).is_err());
    }

    #[test]
    fn correlation_of_exact_embedding_is_one() {
        let pts = vec![(0.0, 0.0), (1.0, 0.5), (0.3, 0.2), (0.9, 0.1)];
        let d = from_points(&pts, EmbeddingMetric::Euclidean);
        let emb = Embedding2D {
            points: pts,
            energy: 0.0,
            history: vec![0.0],
            metric: EmbeddingMetric::Euclidean,
        };
        assert!((embedding_correlation(&d, &emb).unwrap() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn distance_invariants(spectra in proptest::collection::vec(proptest::collection::vec(-30.0f64..30.0, 6), 1..8)) {
            let n = spectra.len();
            let m = DistanceMatrix::from_log_spectra(&spectra, vec![0; n], 0.1).unwrap();
            prop_assert!(m.check().is_ok());
            prop_assert!(m.normalized().max() <= 1.0);
        }

        #[test]
        fn energy_trace_non_increasing_and_deterministic(seed in 0u64..500, n in 2usize..8, iters in 0usize..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
            let d = from_points(&pts, EmbeddingMetric::Euclidean);
            let a = embed_2d(&d, EmbeddingMetric::AsPrinted, 1e-2, iters, seed).unwrap();
            prop_assert!(a.history.windows(2).all(|w| w[1] <= w[0]));
            prop_assert_eq!(a.history.len(), iters + 1);
            let b = embed_2d(&d, EmbeddingMetric::AsPrinted, 1e-2, iters, seed).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn correlation_affine_invariant(scale in 0.01f64..100.0, shift in -10.0f64..10.0, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<(f64, f64)> = (0..6).map(|_| (rng.random(), rng.random())).collect();
            let other: Vec<(f64, f64)> = (0..6).map(|_| (rng.random(), rng.random())).collect();
            let d = from_points(&other, EmbeddingMetric::Euclidean);
            let mut scaled = d.clone();
            for i in 0..6 {
                for j in 0..6 {
                    if i != j {
                        scaled.d[i * 6 + j] = scale * d.get(i, j) + shift.abs();
                    }
                }
            }
            let emb = Embedding2D { points: pts, energy: 0.0, history: vec![], metric: EmbeddingMetric::Euclidean };
            let r1 = embedding_correlation(&d, &emb).unwrap();
            let r2 = embedding_correlation(&scaled, &emb).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-9);
        }
    }
}
