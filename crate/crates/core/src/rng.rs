//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, stream_id, counter)`: the key is
//! derived from the seed and stream id, and the `k`-th output is the SplitMix64
//! finalizer applied to `key + (k + 1) * GOLDEN`. Replaying a recorded prefix
//! therefore only needs the three integers, and independent sub-streams
//! (field generation, detection noise, exploration, ...) are obtained by
//! picking distinct stream ids from one master seed.
//!
//! Normals use the Box-Muller cosine branch and always consume exactly two
//! uniforms, so the counter advance per call is fixed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Well-known stream ids. Keeping them in one place avoids accidental reuse.
pub mod streams {
    pub const FIELD: u64 = 1;
    pub const PRIOR: u64 = 2;
    pub const DETECTION: u64 = 3;
    pub const START: u64 = 4;
    pub const EXPLORATION: u64 = 5;
    pub const MINIBATCH: u64 = 6;
    pub const INIT: u64 = 7;
    pub const TRAIN_EPISODES: u64 = 8;
    pub const VALIDATION: u64 = 9;
    pub const EVALUATION: u64 = 10;
    pub const POLICY: u64 = 11;

    /// Stream id for worker `index` of a per-worker family such as
    /// [`EXPLORATION`].
    pub fn worker(base: u64, index: usize) -> u64 {
        base | ((index as u64 + 1) << 32)
    }
}

/// 2x2 matrix, row major.
pub type Mat2 = [[f64; 2]; 2];

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
    #[serde(skip)]
    key: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let key = mix64(seed ^ mix64(stream_id.wrapping_add(1).wrapping_mul(GOLDEN)));
        Self { seed, stream_id, counter: 0, key }
    }

    /// Resume a stream at a recorded draw count.
    pub fn at(seed: u64, stream_id: u64, counter: u64) -> Self {
        let mut s = Self::new(seed, stream_id);
        s.counter = counter;
        s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of raw 64-bit draws consumed so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// The `k`-th raw output of this stream, without touching the counter.
    #[inline]
    pub fn value_at(&self, k: u64) -> u64 {
        mix64(self.key.wrapping_add(k.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.value_at(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be non-zero.
    #[inline]
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Bernoulli draw with success probability `p`.
    #[inline]
    pub fn next_bool(&mut self, p: f64) -> bool {
        self.next_uniform() < p
    }

    /// Standard normal via Box-Muller; consumes two draws.
    pub fn next_standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn next_normal(&mut self, mu: f64, sigma: f64) -> Result<f64> {
        if !(sigma >= 0.0) {
            return Err(Error::Parameter(format!("normal sigma must be >= 0, got {sigma}")));
        }
        let z = self.next_standard_normal();
        if sigma == 0.0 {
            return Ok(mu);
        }
        Ok(mu + sigma * z)
    }

    /// Draw from a bivariate normal; always consumes four draws.
    pub fn sample_mvn2(&mut self, mean: [f64; 2], cov: &Mat2) -> Result<[f64; 2]> {
        let l = cholesky2(cov)?;
        let z0 = self.next_standard_normal();
        let z1 = self.next_standard_normal();
        Ok([
            mean[0] + l[0][0] * z0,
            mean[1] + l[1][0] * z0 + l[1][1] * z1,
        ])
    }

    /// Fisher-Yates shuffle in place.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n` (Floyd's algorithm), in draw order.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut out: Vec<usize> = Vec::with_capacity(k);
        for j in (n - k)..n {
            let t = self.next_below(j + 1);
            if out.contains(&t) {
                out.push(j);
            } else {
                out.push(t);
            }
        }
        out
    }
}

/// Lower-triangular factor of a symmetric PSD 2x2 matrix.
///
/// A zero pivot zeroes the corresponding factor column.
pub fn cholesky2(cov: &Mat2) -> Result<Mat2> {
    let [[a, b], [b2, d]] = *cov;
    let scale = a.abs().max(d.abs()).max(b.abs()).max(1.0);
    let tol = 1e-12 * scale;
    if !(a.is_finite() && b.is_finite() && b2.is_finite() && d.is_finite()) {
        return Err(Error::Parameter("covariance must be finite".into()));
    }
    if (b - b2).abs() > tol {
        return Err(Error::Parameter(format!("covariance not symmetric: {b} vs {b2}")));
    }
    if a < -tol || d < -tol || a * d - b * b < -tol * scale {
        return Err(Error::Parameter(format!(
            "covariance not positive semi-definite: [[{a}, {b}], [{b2}, {d}]]"
        )));
    }
    let l00 = a.max(0.0).sqrt();
    let l10 = if l00 > 0.0 {
        b / l00
    } else if b.abs() <= tol {
        0.0
    } else {
        return Err(Error::Parameter("covariance not positive semi-definite".into()));
    };
    let l11 = (d - l10 * l10).max(0.0).sqrt();
    Ok([[l00, 0.0], [l10, l11]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_stream_repeat() {
        let mut a = RngStream::new(42, 3);
        let mut b = RngStream::new(42, 3);
        for _ in 0..1000 {
            assert_eq!(a.next_uniform().to_bits(), b.next_uniform().to_bits());
        }
    }

    #[test]
    fn resume_from_counter_matches() {
        let mut a = RngStream::new(7, 1);
        for _ in 0..17 {
            a.next_u64();
        }
        let mut b = RngStream::at(7, 1, a.counter());
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn streams_differ() {
        let mut a = RngStream::new(42, 1);
        let mut b = RngStream::new(42, 2);
        let same = (0..100).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn uniform_range_and_mean() {
        let mut r = RngStream::new(1, 0);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let u = r.next_uniform();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        assert!((sum / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn normal_degenerate_and_moments() {
        let mut r = RngStream::new(5, 0);
        assert_eq!(r.next_normal(100.0, 0.0).unwrap(), 100.0);
        assert!(r.next_normal(0.0, -1.0).is_err());

        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| r.next_normal(0.0, 1.0).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.02, "var {var}");

        let ys: Vec<f64> = (0..n).map(|_| r.next_normal(3.0, 2.0).unwrap()).collect();
        let m = ys.iter().sum::<f64>() / n as f64;
        let m2 = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / n as f64;
        let m3 = ys.iter().map(|y| (y - m).powi(3)).sum::<f64>() / n as f64;
        let skew = m3 / m2.powf(1.5);
        assert!(skew.abs() < 0.02, "skew {skew}");
        assert!((m - 3.0).abs() < 0.01);
    }

    #[test]
    fn counter_advance_is_fixed() {
        let mut r = RngStream::new(9, 9);
        r.next_uniform();
        assert_eq!(r.counter(), 1);
        r.next_normal(0.0, 0.0).unwrap();
        assert_eq!(r.counter(), 3);
        r.sample_mvn2([0.0, 0.0], &[[0.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(r.counter(), 7);
    }

    #[test]
    fn mvn2_zero_cov_returns_mean() {
        let mut r = RngStream::new(2, 0);
        let x = r.sample_mvn2([1.5, -2.0], &[[0.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(x, [1.5, -2.0]);
    }

    fn sample_cov(r: &mut RngStream, cov: &Mat2, n: usize) -> (f64, f64, f64) {
        let pts: Vec<[f64; 2]> = (0..n).map(|_| r.sample_mvn2([0.0, 0.0], cov).unwrap()).collect();
        let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n as f64;
        let my = pts.iter().map(|p| p[1]).sum::<f64>() / n as f64;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        let mut syy = 0.0;
        for p in &pts {
            sxx += (p[0] - mx) * (p[0] - mx);
            sxy += (p[0] - mx) * (p[1] - my);
            syy += (p[1] - my) * (p[1] - my);
        }
        let d = (n - 1) as f64;
        (sxx / d, sxy / d, syy / d)
    }

    #[test]
    fn mvn2_matches_table_covariance() {
        let mut r = RngStream::new(11, 0);
        let cov = [[5.0, 8.0], [8.0, 15.0]];
        let (sxx, sxy, syy) = sample_cov(&mut r, &cov, 100_000);
        assert!((sxx / 5.0 - 1.0).abs() < 0.05, "{sxx}");
        assert!((sxy / 8.0 - 1.0).abs() < 0.05, "{sxy}");
        assert!((syy / 15.0 - 1.0).abs() < 0.05, "{syy}");
    }

    #[test]
    fn mvn2_identity_uncorrelated() {
        let mut r = RngStream::new(12, 0);
        let (sxx, sxy, syy) = sample_cov(&mut r, &[[1.0, 0.0], [0.0, 1.0]], 1_000_000);
        let rho = sxy / (sxx * syy).sqrt();
        assert!(rho.abs() < 0.01, "rho {rho}");
    }

    #[test]
    fn cholesky_rejects_non_psd() {
        assert!(cholesky2(&[[1.0, 2.0], [2.0, 1.0]]).is_err());
        assert!(cholesky2(&[[1.0, 0.5], [0.4, 1.0]]).is_err());
        assert!(cholesky2(&[[-1.0, 0.0], [0.0, 1.0]]).is_err());
        // singular but PSD
        let l = cholesky2(&[[4.0, 2.0], [2.0, 1.0]]).unwrap();
        assert_eq!(l, [[2.0, 0.0], [1.0, 0.0]]);
        let l = cholesky2(&[[0.0, 0.0], [0.0, 9.0]]).unwrap();
        assert_eq!(l, [[0.0, 0.0], [0.0, 3.0]]);
    }

    #[test]
    fn sample_distinct_is_distinct() {
        let mut r = RngStream::new(3, 3);
        for _ in 0..200 {
            let mut v = r.sample_distinct(20, 7);
            assert_eq!(v.len(), 7);
            v.sort_unstable();
            v.dedup();
            assert_eq!(v.len(), 7);
            assert!(v.iter().all(|&i| i < 20));
        }
        assert_eq!(r.sample_distinct(3, 10).len(), 3);
    }
}
