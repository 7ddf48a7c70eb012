//! Row-by-row (boustrophedon) coverage baseline.
//!
//! Vertical swaths of width `F` run edge to edge over the field. Swath
//! centers are spaced `F` apart starting half a view in from the start
//! corner; the last one is clamped so its view ends on the far edge (it may
//! overlap its neighbour). The plan is expressed in the agent's action
//! vocabulary so it runs through the same environment and logging path.

use serde::{Deserialize, Serialize};

use crate::env::{Action, Corner};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoveragePlan {
    pub start: (usize, usize),
    pub actions: Vec<Action>,
    /// Column of each swath, in flight order.
    pub swath_centers: Vec<usize>,
}

impl CoveragePlan {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Every cell visited, starting with `start`.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        let mut pos = self.start;
        let mut out = Vec::with_capacity(self.actions.len() + 1);
        out.push(pos);
        for a in &self.actions {
            let (dr, dc) = a.delta();
            pos = ((pos.0 as isize + dr) as usize, (pos.1 as isize + dc) as usize);
            out.push(pos);
        }
        out
    }
}

fn push_n(actions: &mut Vec<Action>, a: Action, n: usize) {
    actions.extend(std::iter::repeat_n(a, n));
}

pub fn plan_row_by_row(m: usize, f: usize, start: Corner) -> Result<CoveragePlan> {
    if f % 2 == 0 {
        return Err(Error::Parameter(format!("F must be odd, got {f}")));
    }
    if f > m {
        return Err(Error::Parameter(format!("F ({f}) must not exceed M ({m})")));
    }
    let h = f / 2;
    let start_cell = start.start_cell(m, f);
    if f == m {
        // The first view already covers the field.
        return Ok(CoveragePlan { start: start_cell, actions: Vec::new(), swath_centers: vec![h] });
    }

    let n_swaths = m.div_ceil(f);
    let swath_centers: Vec<usize> = (0..n_swaths)
        .map(|i| match start {
            Corner::TopLeft => (h + i * f).min(m - 1 - h),
            Corner::BottomRight => (m - 1 - h).saturating_sub(i * f).max(h),
        })
        .collect();

    let (toward_start_edge, away, lateral) = match start {
        Corner::TopLeft => (Action::North, Action::South, Action::East),
        Corner::BottomRight => (Action::South, Action::North, Action::West),
    };

    let mut actions = Vec::new();
    // reach the near edge, then sweep
    push_n(&mut actions, toward_start_edge, h);
    for (i, &c) in swath_centers.iter().enumerate() {
        if i > 0 {
            push_n(&mut actions, lateral, c.abs_diff(swath_centers[i - 1]));
        }
        let dir = if i % 2 == 0 { away } else { toward_start_edge };
        push_n(&mut actions, dir, m - 1);
    }
    Ok(CoveragePlan { start: start_cell, actions, swath_centers })
}
