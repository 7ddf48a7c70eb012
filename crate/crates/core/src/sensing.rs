//! Simulated perception output and prior-knowledge maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{clamp_into, rasterize_points, CellRect, Field};
use crate::grid::{avg_pool, nearest_upsample, GridMap};
use crate::rng::RngStream;

/// Error model of the onboard detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionModel {
    /// False positives as a fraction of the `F * F` view.
    pub fp: f64,
    /// Probability that a visible weed is missed.
    #[serde(rename = "fn")]
    pub fn_rate: f64,
    /// Std of the per-axis position offset, in cells.
    pub pos_sigma: f64,
}

impl Default for DetectionModel {
    fn default() -> Self {
        Self::level("moderate").expect("known level")
    }
}

impl DetectionModel {
    pub const PERFECT: Self = Self { fp: 0.0, fn_rate: 0.0, pos_sigma: 0.0 };

    /// Named error level: `very_high`, `high`, `moderate`, `low`, `perfect`.
    pub fn level(name: &str) -> Option<Self> {
        let (fp, fn_rate, pos_sigma) = match name {
            "very_high" => (0.01, 0.5, 0.5),
            "high" => (0.001, 0.1, 0.1),
            "moderate" => (0.0001, 0.05, 0.05),
            "low" => (0.00005, 0.02, 0.02),
            "perfect" => (0.0, 0.0, 0.0),
            _ => return None,
        };
        Some(Self { fp, fn_rate, pos_sigma })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fp >= 0.0) || !(0.0..=1.0).contains(&self.fn_rate) || !(self.pos_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "detection model needs fp >= 0, 0 <= fn <= 1, pos_sigma >= 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Error model and resolution of the prior-knowledge map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorModel {
    /// Spurious weeds as a fraction of the `M * M` cells.
    pub fp: f64,
    /// Fraction of true weeds removed.
    #[serde(rename = "fn")]
    pub fn_rate: f64,
    pub pos_sigma: f64,
    /// Prior resolution `P x P`; 0 means no prior knowledge.
    pub resolution: usize,
}

impl Default for PriorModel {
    fn default() -> Self {
        Self::level("moderate").expect("known level")
    }
}

impl PriorModel {
    pub fn none() -> Self {
        Self { fp: 0.0, fn_rate: 0.0, pos_sigma: 0.0, resolution: 0 }
    }

    pub fn perfect(m: usize) -> Self {
        Self { fp: 0.0, fn_rate: 0.0, pos_sigma: 0.0, resolution: m }
    }

    /// Named quality level for a 48x48 field: `none`, `low`, `moderate`,
    /// `high`, `perfect`.
    pub fn level(name: &str) -> Option<Self> {
        let (fp, fn_rate, pos_sigma, resolution) = match name {
            "none" => return Some(Self::none()),
            "low" => (0.002, 0.40, 1.0, 2),
            "moderate" => (0.001, 0.20, 0.5, 12),
            "high" => (0.0005, 0.05, 0.25, 24),
            "perfect" => (0.0, 0.0, 0.0, 48),
            _ => return None,
        };
        Some(Self { fp, fn_rate, pos_sigma, resolution })
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.fp >= 0.0) || !(0.0..=1.0).contains(&self.fn_rate) || !(self.pos_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "prior model needs fp >= 0, 0 <= fn <= 1, pos_sigma >= 0: {self:?}"
            )));
        }
        if self.resolution > m {
            return Err(Error::Config(format!(
                "prior resolution {} exceeds field size {m}",
                self.resolution
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutput {
    /// Binary `F x F` map centered on the drone.
    pub map: GridMap,
    /// Ground-truth weeds in view that survived the miss filter.
    pub visible_true_ids: Vec<usize>,
    /// Number of cells set by false positives.
    pub fp_cells: usize,
}

/// Simulate one detector output for the `f x f` view centered on `center`.
///
/// Visible weeds are dropped independently with probability `fn`; survivors
/// get a Gaussian offset and are clipped to the part of the view inside the
/// field. Then `round(fp * f^2)` false positives are placed on distinct,
/// still empty cells of that region.
pub fn simulate_detection_map(
    field: &Field,
    center: (usize, usize),
    f: usize,
    model: &DetectionModel,
    rng: &mut RngStream,
) -> Result<DetectionOutput> {
    if f % 2 == 0 {
        return Err(Error::Config(format!("F must be odd, got {f}")));
    }
    if center.0 >= field.m || center.1 >= field.m {
        return Err(Error::Parameter(format!(
            "view center {center:?} outside {0}x{0} field",
            field.m
        )));
    }
    let window = CellRect::centered(center.0, center.1, f);
    let m = field.m as isize;
    let r_lo = window.row0.max(0);
    let r_hi = (window.row0 + f as isize - 1).min(m - 1);
    let c_lo = window.col0.max(0);
    let c_hi = (window.col0 + f as isize - 1).min(m - 1);

    let mut map = GridMap::zeros(f, f);
    let mut visible_true_ids = Vec::new();
    for (id, w) in field.weeds.iter().enumerate() {
        let (r, c) = w.cell();
        if !window.contains(r as isize, c as isize) {
            continue;
        }
        let missed = rng.next_bool(model.fn_rate);
        let dy = rng.next_normal(0.0, model.pos_sigma)?;
        let dx = rng.next_normal(0.0, model.pos_sigma)?;
        if missed {
            continue;
        }
        visible_true_ids.push(id);
        let dr = ((w.y + dy).floor() as isize).clamp(r_lo, r_hi);
        let dc = ((w.x + dx).floor() as isize).clamp(c_lo, c_hi);
        map.set((dr - window.row0) as usize, (dc - window.col0) as usize, 1.0);
    }

    let n_fp = (model.fp * (f * f) as f64).round() as usize;
    let mut fp_cells = 0;
    if n_fp > 0 {
        let mut empty = Vec::new();
        for r in r_lo..=r_hi {
            for c in c_lo..=c_hi {
                let (lr, lc) = ((r - window.row0) as usize, (c - window.col0) as usize);
                if map.get(lr, lc) == 0.0 {
                    empty.push((lr, lc));
                }
            }
        }
        for idx in rng.sample_distinct(empty.len(), n_fp) {
            let (lr, lc) = empty[idx];
            map.set(lr, lc, 1.0);
            fp_cells += 1;
        }
    }
    Ok(DetectionOutput { map, visible_true_ids, fp_cells })
}

/// Build the corrupted, reduced-resolution prior map for one episode.
pub fn generate_prior_map(field: &Field, model: &PriorModel, rng: &mut RngStream) -> Result<GridMap> {
    let m = field.m;
    model.validate(m)?;
    if model.resolution == 0 {
        return Ok(GridMap::zeros(m, m));
    }
    let n = field.n();
    let n_remove = (model.fn_rate * n as f64).round() as usize;
    let mut keep = vec![true; n];
    for i in rng.sample_distinct(n, n_remove) {
        keep[i] = false;
    }
    let mut points: Vec<(f64, f64)> = field
        .weeds
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(w, _)| (w.x, w.y))
        .collect();
    let n_add = (model.fp * (m * m) as f64).round() as usize;
    for _ in 0..n_add {
        let x = rng.next_uniform() * m as f64;
        let y = rng.next_uniform() * m as f64;
        points.push((x, y));
    }
    for p in points.iter_mut() {
        let dx = rng.next_normal(0.0, model.pos_sigma)?;
        let dy = rng.next_normal(0.0, model.pos_sigma)?;
        *p = (clamp_into(p.0 + dx, m), clamp_into(p.1 + dy, m));
    }
    let raster = rasterize_points(points, CellRect::whole(m));
    let k = m / model.resolution;
    let pooled = avg_pool(&raster, k)?;
    nearest_upsample(&pooled, m, m)
}
