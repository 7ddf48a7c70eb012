//! SVG rendering of an episode: field grid, weeds and flight path.

use std::fmt::Write as _;

use crate::eval::EpisodeLog;

const CELL: usize = 16;
const MARGIN: usize = 8;
const FOUND: &str = "#1b3d1b";
const MISSED: &str = "#a0a0a0";
const EARLY: &str = "#d62728";
const LATE: &str = "#1f55b4";

/// Path is drawn red up to the step where this fraction of weeds is found
/// and blue afterwards.
pub const COLOR_SWITCH_FRACTION: f64 = 0.8;

fn center(i: usize) -> f64 {
    (MARGIN + i * CELL) as f64 + CELL as f64 / 2.0
}

/// Step at which the path colour switches, if the threshold is reached.
pub fn switch_step(log: &EpisodeLog) -> Option<usize> {
    log.step_reaching(COLOR_SWITCH_FRACTION)
}

pub fn render_svg(log: &EpisodeLog) -> String {
    let m = log.m;
    let side = 2 * MARGIN + m * CELL;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{side}" viewBox="0 0 {side} {side}">"#);
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{side}" height="{side}" fill="#ffffff"/>"##);
    let _ = writeln!(s, r##"<g stroke="#dddddd" stroke-width="1">"##);
    for i in 0..=m {
        let p = MARGIN + i * CELL;
        let (a, b) = (MARGIN, MARGIN + m * CELL);
        let _ = writeln!(s, r#"<line x1="{p}" y1="{a}" x2="{p}" y2="{b}"/>"#);
        let _ = writeln!(s, r#"<line x1="{a}" y1="{p}" x2="{b}" y2="{p}"/>"#);
    }
    s.push_str("</g>\n");

    let r = CELL as f64 * 0.3;
    for w in &log.weeds {
        let fill = if w.found_step.is_some() { FOUND } else { MISSED };
        let _ = writeln!(s, r#"<circle cx="{}" cy="{}" r="{r}" fill="{fill}"/>"#, center(w.col), center(w.row));
    }

    let k = switch_step(log);
    let mut prev = log.start;
    for rec in &log.records {
        let cur = (rec.row, rec.col);
        if cur != prev {
            let color = if k.is_some_and(|k| rec.step > k) { LATE } else { EARLY };
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="3" stroke-linecap="round"/>"#,
                center(prev.1),
                center(prev.0),
                center(cur.1),
                center(cur.0)
            );
        }
        prev = cur;
    }
    let _ = writeln!(
        s,
        r##"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="none" stroke="#000000" stroke-width="2"/>"##,
        MARGIN + log.start.1 * CELL,
        MARGIN + log.start.0 * CELL
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, StepRecord};
    use crate::eval::{baseline_env_config, run_episode, PlanPolicy, WeedRecord};
    use crate::sensing::DetectionModel;

    fn empty_log() -> EpisodeLog {
        EpisodeLog {
            fingerprint: 0,
            seed: 0,
            m: 4,
            fov: 1,
            start: (0, 0),
            weeds: vec![],
            initial_found: 0,
            records: vec![],
            values: vec![],
            steps: 0,
            path_length: 0,
            found: 0,
            found_fraction: 1.0,
            reward_sum: 0.0,
            end_reason: "all_found".into(),
        }
    }

    fn record(step: usize, col: usize, cumulative_found: usize) -> StepRecord {
        StepRecord {
            step,
            row: 0,
            col,
            action: crate::env::Action::East,
            reward: 0.0,
            newly_found: 0,
            cumulative_found,
            budget: 1.0,
            done_reason: None,
        }
    }

    #[test]
    fn empty_field_has_no_weeds() {
        let svg = render_svg(&empty_log());
        assert!(svg.starts_with("<svg"));
        assert!(!svg.contains("<circle"));
    }

    #[test]
    fn colour_switches_at_threshold_step() {
        let mut log = empty_log();
        log.weeds = (0..5).map(|i| WeedRecord { row: 3, col: i % 4, found_step: Some(i) }).collect();
        // 4 of 5 found (80 %) at step 2
        log.records = vec![record(1, 1, 2), record(2, 2, 4), record(3, 3, 5)];
        log.steps = 3;
        assert_eq!(switch_step(&log), Some(2));
        let svg = render_svg(&log);
        let segs: Vec<&str> = svg.lines().filter(|l| l.contains("stroke-width=\"3\"")).collect();
        assert_eq!(segs.len(), 3);
        assert!(segs[0].contains(EARLY) && segs[1].contains(EARLY) && segs[2].contains(LATE));
    }

    #[test]
    fn baseline_render_is_stable() {
        let cfg = baseline_env_config(&EnvConfig { detection: DetectionModel::PERFECT, ..EnvConfig::default() });
        let a = render_svg(&run_episode(&mut PlanPolicy::default(), &cfg, 5).unwrap());
        let b = render_svg(&run_episode(&mut PlanPolicy::default(), &cfg, 5).unwrap());
        assert_eq!(a, b);
        // serpentine: the path turns at both field edges
        assert!(a.matches("stroke-width=\"3\"").count() > 200);
    }
}
