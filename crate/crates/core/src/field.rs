//! Ground-truth target fields.
//!
//! Positions are continuous: `x` is the column coordinate and `y` the row
//! coordinate, both in `[0, M)`. A weed occupies cell `(floor(y), floor(x))`.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridMap;
use crate::rng::{cholesky2, Mat2, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    Strong,
    Medium,
    Uniform,
}

impl DistributionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DistributionKind::Strong => "strong",
            DistributionKind::Medium => "medium",
            DistributionKind::Uniform => "uniform",
        }
    }
}

impl FromStr for DistributionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strong" => Ok(Self::Strong),
            "medium" => Ok(Self::Medium),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::Parse(format!("unknown distribution kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    /// Side length of the square field in cells.
    pub m: usize,
    pub kind: DistributionKind,
    pub obj_mu: f64,
    pub obj_sigma: f64,
    pub dist_mu: f64,
    pub dist_sigma: f64,
    pub covariances: Vec<Mat2>,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self::strong()
    }
}

impl FieldConfig {
    /// Standard configuration of a distribution kind on a 48x48 field.
    pub fn of_kind(kind: DistributionKind) -> Self {
        match kind {
            DistributionKind::Strong => Self::strong(),
            DistributionKind::Medium => Self::medium(),
            DistributionKind::Uniform => Self::uniform(),
        }
    }

    /// Default strongly clustered field.
    pub fn strong() -> Self {
        Self {
            m: 48,
            kind: DistributionKind::Strong,
            obj_mu: 100.0,
            obj_sigma: 30.0,
            dist_mu: 3.0,
            dist_sigma: 2.0,
            covariances: vec![[[5.0, 8.0], [8.0, 15.0]], [[15.0, 0.0], [0.0, 5.0]]],
        }
    }

    pub fn medium() -> Self {
        Self {
            kind: DistributionKind::Medium,
            dist_mu: 4.0,
            dist_sigma: 1.0,
            covariances: vec![
                [[10.0, 16.0], [16.0, 40.0]],
                [[40.0, 0.0], [0.0, 10.0]],
                [[30.0, 12.0], [12.0, 12.0]],
                [[15.0, 4.0], [4.0, 20.0]],
            ],
            ..Self::strong()
        }
    }

    pub fn uniform() -> Self {
        Self { kind: DistributionKind::Uniform, covariances: Vec::new(), ..Self::strong() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::Config("field.m must be >= 1".into()));
        }
        if !(self.obj_mu > 0.0) {
            return Err(Error::Config("field.obj_mu must be > 0".into()));
        }
        if !(self.obj_sigma >= 0.0) || !(self.dist_sigma >= 0.0) {
            return Err(Error::Config("field sigmas must be >= 0".into()));
        }
        if self.kind != DistributionKind::Uniform {
            if self.covariances.is_empty() {
                return Err(Error::Config(
                    "field.covariances must be non-empty for clustered kinds".into(),
                ));
            }
            for c in &self.covariances {
                cholesky2(c).map_err(|e| Error::Config(format!("field.covariances: {e}")))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weed {
    pub x: f64,
    pub y: f64,
    pub cluster: usize,
}

impl Weed {
    /// `(row, col)` of the occupied cell.
    #[inline]
    pub fn cell(&self) -> (usize, usize) {
        (self.y.floor() as usize, self.x.floor() as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub m: usize,
    pub weeds: Vec<Weed>,
}

/// Axis-aligned block of cells; may extend past the field edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub row0: isize,
    pub col0: isize,
    pub rows: usize,
    pub cols: usize,
}

impl CellRect {
    pub fn whole(m: usize) -> Self {
        Self { row0: 0, col0: 0, rows: m, cols: m }
    }

    /// Square window of side `f` centered on `(row, col)`.
    pub fn centered(row: usize, col: usize, f: usize) -> Self {
        let h = (f / 2) as isize;
        Self { row0: row as isize - h, col0: col as isize - h, rows: f, cols: f }
    }

    #[inline]
    pub fn contains(&self, row: isize, col: isize) -> bool {
        row >= self.row0
            && col >= self.col0
            && row < self.row0 + self.rows as isize
            && col < self.col0 + self.cols as isize
    }
}

/// Largest representable coordinate strictly below `m`.
#[inline]
pub(crate) fn clamp_into(v: f64, m: usize) -> f64 {
    let hi = f64::from_bits((m as f64).to_bits() - 1);
    v.clamp(0.0, hi)
}

fn inside(p: [f64; 2], m: usize) -> bool {
    let m = m as f64;
    p[0] >= 0.0 && p[1] >= 0.0 && p[0] < m && p[1] < m
}

pub fn generate_field(cfg: &FieldConfig, rng: &mut RngStream) -> Result<Field> {
    cfg.validate()?;
    let m = cfg.m;
    let n = rng.next_normal(cfg.obj_mu, cfg.obj_sigma)?.round().max(0.0) as usize;

    if cfg.kind == DistributionKind::Uniform {
        let n = n.min(m * m);
        let cells = rng.sample_distinct(m * m, n);
        let weeds = cells
            .into_iter()
            .map(|c| {
                let (row, col) = (c / m, c % m);
                let x = clamp_into(col as f64 + rng.next_uniform(), m);
                let y = clamp_into(row as f64 + rng.next_uniform(), m);
                Weed { x, y, cluster: 0 }
            })
            .collect();
        return Ok(Field { m, weeds });
    }

    let k = rng.next_normal(cfg.dist_mu, cfg.dist_sigma)?.round().max(1.0) as usize;
    let clusters: Vec<([f64; 2], usize)> = (0..k)
        .map(|_| {
            let mean = [rng.next_uniform() * m as f64, rng.next_uniform() * m as f64];
            (mean, rng.next_below(cfg.covariances.len()))
        })
        .collect();

    let mut weeds = Vec::with_capacity(n);
    for _ in 0..n {
        let cluster = rng.next_below(k);
        let (mean, cov_idx) = clusters[cluster];
        let cov = &cfg.covariances[cov_idx];
        // The mean lies inside the field, so each draw lands inside with
        // probability >= 1/4 and this terminates quickly.
        let p = loop {
            let p = rng.sample_mvn2(mean, cov)?;
            if inside(p, m) {
                break p;
            }
        };
        weeds.push(Weed { x: p[0], y: p[1], cluster });
    }
    Ok(Field { m, weeds })
}

/// Binary occupancy raster of `region`; cells outside the field stay zero.
pub fn rasterize(field: &Field, region: CellRect) -> GridMap {
    rasterize_points(field.weeds.iter().map(|w| (w.x, w.y)), region)
}

pub(crate) fn rasterize_points(
    points: impl IntoIterator<Item = (f64, f64)>,
    region: CellRect,
) -> GridMap {
    let mut map = GridMap::zeros(region.cols, region.rows);
    for (x, y) in points {
        let (r, c) = (y.floor() as isize, x.floor() as isize);
        if region.contains(r, c) {
            map.set((r - region.row0) as usize, (c - region.col0) as usize, 1.0);
        }
    }
    map
}

impl Field {
    pub fn n(&self) -> usize {
        self.weeds.len()
    }

    /// Plain-text record: a header followed by one `x y cluster` line per weed.
    pub fn to_text(&self, seed: u64, kind: DistributionKind) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# uav-search field v1");
        let _ = writeln!(s, "m {}", self.m);
        let _ = writeln!(s, "seed {seed}");
        let _ = writeln!(s, "kind {}", kind.as_str());
        let _ = writeln!(s, "n {}", self.weeds.len());
        for w in &self.weeds {
            // `{:?}` on f64 prints the shortest string that round-trips.
            let _ = writeln!(s, "{:?} {:?} {}", w.x, w.y, w.cluster);
        }
        s
    }

    /// Parse the format written by [`Field::to_text`]; returns the field,
    /// seed and kind.
    pub fn from_text(text: &str) -> Result<(Field, u64, DistributionKind)> {
        let mut m = None;
        let mut seed = None;
        let mut kind = None;
        let mut n = None;
        let mut weeds = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Parse(format!("field record line {}: '{line}'", lineno + 1));
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["m", v] => m = Some(v.parse::<usize>().map_err(|_| bad())?),
                ["seed", v] => seed = Some(v.parse::<u64>().map_err(|_| bad())?),
                ["kind", v] => kind = Some(v.parse::<DistributionKind>()?),
                ["n", v] => n = Some(v.parse::<usize>().map_err(|_| bad())?),
                [x, y, c] => weeds.push(Weed {
                    x: x.parse().map_err(|_| bad())?,
                    y: y.parse().map_err(|_| bad())?,
                    cluster: c.parse().map_err(|_| bad())?,
                }),
                _ => return Err(bad()),
            }
        }
        let m = m.ok_or_else(|| Error::Parse("field record missing 'm'".into()))?;
        let seed = seed.ok_or_else(|| Error::Parse("field record missing 'seed'".into()))?;
        let kind = kind.ok_or_else(|| Error::Parse("field record missing 'kind'".into()))?;
        if let Some(n) = n {
            if n != weeds.len() {
                return Err(Error::Parse(format!(
                    "field record declares {n} weeds but lists {}",
                    weeds.len()
                )));
            }
        }
        if let Some(w) = weeds.iter().find(|w| !inside([w.x, w.y], m)) {
            return Err(Error::Parse(format!("weed ({}, {}) outside {m}x{m} field", w.x, w.y)));
        }
        Ok((Field { m, weeds }, seed, kind))
    }
}
