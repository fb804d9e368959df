//! Counter-based random streams.
//!
//! A [`RngStream`] is addressed by `(key, stream id, counter)`: the key is the
//! 64-bit master seed, the stream id is typically a trial index and the counter
//! is the 128-bit word position inside the ChaCha20 keystream. Any stream can be
//! re-created at any position without replaying its predecessors, so parallel
//! trials reproduce bit-for-bit whatever the scheduling.
//!
//! Normals use the Box–Muller transform (cosine branch only, two uniforms per
//! draw), which keeps the mapping from stream position to value fixed across
//! crate versions.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn expand_key(key: u64) -> [u8; 32] {
    let mut seed = [0u8; 32];
    let mut z = key;
    for chunk in seed.chunks_exact_mut(8) {
        z = splitmix64(z);
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    seed
}

#[derive(Clone, Debug)]
pub struct RngStream {
    key: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(key: u64, stream_id: u64) -> Self {
        Self::at(key, stream_id, 0)
    }

    /// Stream positioned at an explicit counter (ChaCha word position).
    pub fn at(key: u64, stream_id: u64, counter: u128) -> Self {
        let mut rng = ChaCha20Rng::from_seed(expand_key(key));
        rng.set_stream(stream_id);
        rng.set_word_pos(counter);
        Self { key, stream_id, rng }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Independent child stream for a named purpose (data, chain, y-samples, ...)
    /// sharing this stream's id. The child key mixes the parent key with `purpose`.
    pub fn derive(&self, purpose: u64) -> Self {
        let key = splitmix64(self.key ^ splitmix64(purpose.wrapping_add(0x5bd1_e995)));
        Self::new(key, self.stream_id)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal_vec(&mut self, len: usize) -> DVector<f64> {
        DVector::from_fn(len, |_, _| self.normal())
    }

    /// Zero-mean multivariate normal with covariance `sigma`.
    pub fn mvn_zero_mean(&mut self, sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
        let chol = cholesky(sigma)?;
        Ok(self.mvn_from_cholesky(&chol))
    }

    /// Same as [`mvn_zero_mean`](Self::mvn_zero_mean) with a precomputed factor.
    pub fn mvn_from_cholesky(&mut self, chol: &Cholesky<f64, Dyn>) -> DVector<f64> {
        let z = self.normal_vec(chol.l_dirty().nrows());
        chol.l() * z
    }

    /// Uniform point on the unit sphere S^{l-1}.
    pub fn uniform_sphere(&mut self, l: usize) -> DVector<f64> {
        assert!(l >= 1, "sphere dimension must be at least 1");
        loop {
            let z = self.normal_vec(l);
            let norm = z.norm();
            if norm > 1e-300 {
                return z / norm;
            }
        }
    }
}

pub fn cholesky(sigma: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if !sigma.is_square() {
        return Err(Error::Domain("covariance must be square".into()));
    }
    Cholesky::new(sigma.clone()).ok_or_else(|| Error::Domain("covariance is not positive definite".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_moments() {
        let mut s = RngStream::new(42, 0);
        let n = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let z = s.normal();
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() <= 0.004, "mean {mean}");
        assert!((var - 1.0).abs() <= 0.006, "var {var}");
    }

    #[test]
    fn replay_is_deterministic() {
        let mut a = RngStream::at(7, 3, 1000);
        let mut b = a.clone();
        assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        let pos = a.counter();
        let mut c = RngStream::at(7, 3, pos);
        assert_eq!(a.next_u64(), c.next_u64());
    }

    #[test]
    fn distinct_ids_differ() {
        let mut collisions = 0;
        for id in 0..10_000u64 {
            let x = RngStream::new(1, id).normal();
            let y = RngStream::new(1, id + 10_000).normal();
            if x == y {
                collisions += 1;
            }
        }
        assert_eq!(collisions, 0);
    }

    #[test]
    fn derive_changes_key_not_id() {
        let s = RngStream::new(9, 5);
        let d = s.derive(1);
        assert_eq!(d.stream_id(), 5);
        assert_ne!(d.key(), s.key());
        assert_ne!(s.derive(1).key(), s.derive(2).key());
    }

    #[test]
    fn cholesky_of_diagonal_is_sqrt() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0, 2.0]));
        let l = cholesky(&sigma).unwrap().l();
        assert_eq!(l[(0, 0)], 2.0);
        assert_eq!(l[(1, 1)], 3.0);
        assert_eq!(l[(2, 2)], 2f64.sqrt());
        assert_eq!(l[(1, 0)], 0.0);
    }

    #[test]
    fn mvn_spiked_variance() {
        let sigma = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let mut s = RngStream::new(11, 0);
        let chol = cholesky(&sigma).unwrap();
        let n = 1_000_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let x = s.mvn_from_cholesky(&chol);
            acc += &x * x.transpose();
        }
        acc /= n as f64;
        // var of x_i x_j under N(0, sigma) is sigma_ii sigma_jj + sigma_ij^2
        for i in 0..2 {
            for j in 0..2 {
                let sd = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / n as f64).sqrt();
                assert!(
                    (acc[(i, j)] - sigma[(i, j)]).abs() <= 3.0 * sd,
                    "{i}{j}: {}",
                    acc[(i, j)]
                );
            }
        }
    }

    #[test]
    fn mvn_rejects_non_pd() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(RngStream::new(0, 0).mvn_zero_mean(&sigma).is_err());
    }

    #[test]
    fn sphere_points() {
        let mut s = RngStream::new(3, 0);
        for _ in 0..100 {
            let v = s.uniform_sphere(1);
            assert!((v[0].abs() - 1.0).abs() < 1e-15);
        }
        let mut mean = DVector::zeros(5);
        let n = 100_000;
        for _ in 0..n {
            let v = s.uniform_sphere(5);
            assert!((v.norm() - 1.0).abs() <= 1e-12);
            mean += v;
        }
        mean /= n as f64;
        assert!(mean.norm() <= 0.02);
    }
}
