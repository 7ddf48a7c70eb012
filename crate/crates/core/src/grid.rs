//! Row-major raster container shared by every map layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl GridMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, values: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Structural(format!(
                "{}x{} map needs {} values, got {}",
                width,
                height,
                width * height,
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.values[row * self.width + col] = v;
    }

    /// Value at a signed coordinate, or `None` outside the map.
    #[inline]
    pub fn get_signed(&self, row: isize, col: isize) -> Option<f32> {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            None
        } else {
            Some(self.get(row as usize, col as usize))
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Average pooling with a square `k x k` kernel and stride `k`.
///
/// Output size is `ceil(h / k) x ceil(w / k)`. When a dimension is not a
/// multiple of `k`, the input is extended by replicating its last row/column,
/// so every output cell is the mean of exactly `k * k` samples.
pub fn avg_pool(map: &GridMap, k: usize) -> Result<GridMap> {
    if k < 1 {
        return Err(Error::Parameter("pooling kernel must be >= 1".into()));
    }
    if k == 1 {
        return Ok(map.clone());
    }
    let out_h = map.height.div_ceil(k);
    let out_w = map.width.div_ceil(k);
    let mut out = GridMap::zeros(out_w, out_h);
    let norm = 1.0 / (k * k) as f32;
    for oi in 0..out_h {
        for oj in 0..out_w {
            let mut acc = 0.0f32;
            for di in 0..k {
                let r = (oi * k + di).min(map.height - 1);
                let row = &map.values[r * map.width..(r + 1) * map.width];
                for dj in 0..k {
                    acc += row[(oj * k + dj).min(map.width - 1)];
                }
            }
            out.values[oi * out_w + oj] = acc * norm;
        }
    }
    Ok(out)
}

/// Nearest-neighbour resize to a larger (or equal) grid.
pub fn nearest_upsample(map: &GridMap, target_w: usize, target_h: usize) -> Result<GridMap> {
    if target_w < map.width || target_h < map.height {
        return Err(Error::Parameter(format!(
            "upsample target {}x{} smaller than source {}x{}",
            target_w, target_h, map.width, map.height
        )));
    }
    let mut out = GridMap::zeros(target_w, target_h);
    for i in 0..target_h {
        let si = i * map.height / target_h;
        for j in 0..target_w {
            let sj = j * map.width / target_w;
            out.values[i * target_w + j] = map.get(si, sj);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_map(rng: &mut RngStream, w: usize, h: usize) -> GridMap {
        let v = (0..w * h).map(|_| rng.next_uniform() as f32).collect();
        GridMap::from_vec(w, h, v).unwrap()
    }

    // Independent reference: materialise the padded map, then average.
    fn brute_pool(map: &GridMap, k: usize) -> GridMap {
        let ph = map.height().div_ceil(k) * k;
        let pw = map.width().div_ceil(k) * k;
        let mut padded = vec![vec![0.0f32; pw]; ph];
        for (i, row) in padded.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = map.get(i.min(map.height() - 1), j.min(map.width() - 1));
            }
        }
        let mut out = GridMap::zeros(pw / k, ph / k);
        for oi in 0..ph / k {
            for oj in 0..pw / k {
                let mut s = 0.0f32;
                for row in padded.iter().skip(oi * k).take(k) {
                    for &cell in row.iter().skip(oj * k).take(k) {
                        s += cell;
                    }
                }
                out.set(oi, oj, s * (1.0 / (k * k) as f32));
            }
        }
        out
    }

    #[test]
    fn pool_identity_and_mean() {
        let m = GridMap::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(avg_pool(&m, 1).unwrap(), m);
        let p = avg_pool(&m, 2).unwrap();
        assert_eq!((p.width(), p.height()), (1, 1));
        assert_eq!(p.get(0, 0), 0.5);
        assert!(avg_pool(&m, 0).is_err());
    }

    #[test]
    fn pool_matches_brute_force() {
        let mut rng = RngStream::new(1, 0);
        for trial in 0..100 {
            let (w, h, k) = if trial == 0 { (9, 9, 3) } else {
                (1 + rng.next_below(20), 1 + rng.next_below(20), 1 + rng.next_below(5))
            };
            let m = random_map(&mut rng, w, h);
            assert_eq!(avg_pool(&m, k).unwrap(), brute_pool(&m, k));
        }
    }

    #[test]
    fn pool_95_by_3_is_32() {
        let m = GridMap::zeros(95, 95);
        let p = avg_pool(&m, 3).unwrap();
        assert_eq!((p.width(), p.height()), (32, 32));
    }

    #[test]
    fn upsample_cases() {
        let m = GridMap::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(nearest_upsample(&m, 2, 2).unwrap(), m);
        let u = nearest_upsample(&m, 4, 4).unwrap();
        let expected = [
            1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(u.values(), &expected);
        assert!(nearest_upsample(&m, 1, 4).is_err());
    }

    #[test]
    fn upsample_then_pool_round_trips() {
        let mut rng = RngStream::new(2, 0);
        for _ in 0..100 {
            // dyadic values keep the 16-term sums exact in f32
            let v = (0..144).map(|_| rng.next_below(17) as f32 / 16.0).collect();
            let src = GridMap::from_vec(12, 12, v).unwrap();
            let up = nearest_upsample(&src, 48, 48).unwrap();
            assert_eq!(avg_pool(&up, 4).unwrap(), src);
        }
    }

    #[test]
    fn pool_upsample_pool_idempotent() {
        let mut rng = RngStream::new(3, 0);
        for _ in 0..50 {
            let m = GridMap::from_vec(
                16,
                16,
                (0..256).map(|_| rng.next_below(2) as f32).collect(),
            )
            .unwrap();
            let once = avg_pool(&m, 4).unwrap();
            let again = avg_pool(&nearest_upsample(&once, 16, 16).unwrap(), 4).unwrap();
            assert_eq!(once, again);
        }
    }
}
