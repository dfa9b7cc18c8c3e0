//! Dense vector arithmetic and seeded, stream-split random number generation.
//!
//! Every random draw in the simulator flows through [`RngStream`], keyed by
//! `(seed, stream_id)` so that distinct (client, round) pairs get independent
//! sequences and reruns are bit-reproducible on any platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FedsimError, Result};

/// Dense real-valued model parameters of fixed dimension.
///
/// Values are immutable after construction; every operation returns a new
/// vector. All entries must stay finite, enforced on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(FedsimError::config(format!(
                "non-finite entry at coordinate {idx}"
            )));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Largest absolute coordinate; used by the engine's divergence guard.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.dim(), other.dim());
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, alpha: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|a| alpha * a).collect())
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// alpha*x + y, element-wise. Inputs are unmodified.
pub fn axpy(alpha: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    if x.dim() != y.dim() {
        return Err(FedsimError::config(format!(
            "axpy dimension mismatch: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    if !alpha.is_finite() {
        return Err(FedsimError::config("axpy: alpha must be finite"));
    }
    Ok(ParamVector(
        x.0.iter().zip(&y.0).map(|(a, b)| alpha * a + b).collect(),
    ))
}

/// Sum_i weights[i] * vectors[i] with a fixed summation order (ascending
/// index), so results are bit-reproducible regardless of thread count.
pub fn weighted_sum(weights: &[f64], vectors: &[&ParamVector]) -> Result<ParamVector> {
    if weights.is_empty() || weights.len() != vectors.len() {
        return Err(FedsimError::config(format!(
            "weighted_sum: {} weights for {} vectors (need equal, nonzero)",
            weights.len(),
            vectors.len()
        )));
    }
    let dim = vectors[0].dim();
    for v in vectors {
        if v.dim() != dim {
            return Err(FedsimError::config("weighted_sum: dimension mismatch"));
        }
    }
    let mut out = vec![0.0; dim];
    for (w, v) in weights.iter().zip(vectors) {
        for (o, x) in out.iter_mut().zip(v.values()) {
            *o += w * x;
        }
    }
    ParamVector::new(out)
}

// Domain tags keep the stream spaces for client work, step planning, and
// data partitioning disjoint.
const DOMAIN_CLIENT_ROUND: u64 = 1 << 56;
const DOMAIN_STEPS: u64 = 2 << 56;
const DOMAIN_PARTITION: u64 = 3 << 56;

/// Seeded, splittable random stream.
///
/// Identical `(seed, stream_id)` yields identical draw sequences on every
/// platform; distinct (client, round) pairs map to distinct stream ids.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&stream_id.to_le_bytes());
        RngStream {
            seed,
            stream_id,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Stream for client `client`'s local work in round `round`.
    pub fn for_client_round(seed: u64, client: usize, round: usize) -> Self {
        debug_assert!(client < (1 << 24) && round < (1 << 32));
        Self::new(seed, DOMAIN_CLIENT_ROUND | ((client as u64) << 32) | round as u64)
    }

    /// Stream for drawing local-step counts in round `round`.
    pub fn for_steps(seed: u64, round: usize) -> Self {
        Self::new(seed, DOMAIN_STEPS | round as u64)
    }

    /// Stream for dataset partitioning.
    pub fn for_partition(seed: u64) -> Self {
        Self::new(seed, DOMAIN_PARTITION)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn axpy_hand_cases() {
        assert_eq!(
            axpy(2.0, &pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap(),
            pv(&[2.0, 1.0])
        );
        assert_eq!(
            axpy(0.0, &pv(&[5.0, 5.0]), &pv(&[1.0, 2.0])).unwrap(),
            pv(&[1.0, 2.0])
        );
        assert_eq!(axpy(-1.0, &pv(&[3.0]), &pv(&[3.0])).unwrap(), pv(&[0.0]));
    }

    #[test]
    fn axpy_dimension_mismatch() {
        assert!(axpy(1.0, &pv(&[1.0]), &pv(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn weighted_sum_hand_cases() {
        assert_eq!(
            weighted_sum(&[1.0], &[&pv(&[7.0, 7.0])]).unwrap(),
            pv(&[7.0, 7.0])
        );
        assert_eq!(
            weighted_sum(&[0.5, 0.5], &[&pv(&[0.0]), &pv(&[10.0])]).unwrap(),
            pv(&[5.0])
        );
        assert_eq!(
            weighted_sum(&[0.25, 0.75], &[&pv(&[4.0]), &pv(&[0.0])]).unwrap(),
            pv(&[1.0])
        );
    }

    #[test]
    fn weighted_sum_empty_is_error() {
        assert!(weighted_sum(&[], &[]).is_err());
    }

    #[test]
    fn weighted_sum_uniform_matches_mean() {
        let m = 100;
        let d = 1000;
        let mut stream = RngStream::new(11, 0);
        let vectors: Vec<ParamVector> = (0..m)
            .map(|_| {
                ParamVector::new((0..d).map(|_| stream.rng().random_range(-1.0..1.0)).collect())
                    .unwrap()
            })
            .collect();
        let refs: Vec<&ParamVector> = vectors.iter().collect();
        let weights = vec![1.0 / m as f64; m];
        let ws = weighted_sum(&weights, &refs).unwrap();
        for j in 0..d {
            let mean: f64 = vectors.iter().map(|v| v[j]).sum::<f64>() / m as f64;
            let denom = mean.abs().max(1.0);
            assert!((ws[j] - mean).abs() / denom < 1e-12);
        }
    }

    #[test]
    fn non_finite_rejected() {
        assert!(ParamVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ParamVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn rng_streams_reproducible_and_distinct() {
        let draws = |mut s: RngStream| -> Vec<u64> { (0..8).map(|_| s.rng().random()).collect() };
        let a = draws(RngStream::for_client_round(42, 3, 7));
        let b = draws(RngStream::for_client_round(42, 3, 7));
        assert_eq!(a, b);
        let c = draws(RngStream::for_client_round(42, 3, 8));
        let d = draws(RngStream::for_client_round(42, 4, 7));
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_ne!(c, d);
    }
}
