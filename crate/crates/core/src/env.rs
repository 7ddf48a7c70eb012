//! Search MDP: episode state, transitions, rewards and drone-centric
//! observations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{generate_field, CellRect, Field, FieldConfig};
use crate::grid::{avg_pool, GridMap};
use crate::nn::NetInput;
use crate::rng::{streams, RngStream};
use crate::sensing::{generate_prior_map, simulate_detection_map, DetectionModel, PriorModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rewards {
    /// Per newly found weed.
    pub detection: f64,
    /// For trying to leave the field.
    pub no_fly_zone: f64,
    /// Every action.
    pub step: f64,
    /// Battery exhausted.
    pub crash: f64,
}

impl Default for Rewards {
    fn default() -> Self {
        Self { detection: 1.0, no_fly_zone: -1.0, step: -0.5, crash: -150.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StoppingCriterion {
    AllFound,
    Coverage { fraction: f64 },
    Stalled {
        window: usize,
        #[serde(default = "default_min_detected")]
        min_detected: usize,
    },
    LearnedLand,
    /// Only a crash (or landing, if enabled) ends the episode; used to fly
    /// fixed plans to completion.
    Never,
}

fn default_min_detected() -> usize {
    2
}

impl StoppingCriterion {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StoppingCriterion::Coverage { fraction } if !(fraction > 0.0 && fraction <= 1.0) => {
                Err(Error::Config(format!("coverage fraction must be in (0, 1], got {fraction}")))
            }
            StoppingCriterion::Stalled { window: 0, .. } => {
                Err(Error::Config("stalled window must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub field: FieldConfig,
    pub detection: DetectionModel,
    pub prior: PriorModel,
    /// Side of the square field of view; odd.
    pub fov: usize,
    pub g_global: usize,
    pub b_init: f64,
    pub b_step: f64,
    pub rewards: Rewards,
    pub stopping: StoppingCriterion,
    pub land_action: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            field: FieldConfig::strong(),
            detection: DetectionModel::level("moderate").expect("known level"),
            prior: PriorModel::level("moderate").expect("known level"),
            fov: 11,
            g_global: 3,
            b_init: 75.0,
            b_step: 0.2,
            rewards: Rewards::default(),
            stopping: StoppingCriterion::AllFound,
            land_action: false,
        }
    }
}

impl EnvConfig {
    pub fn m(&self) -> usize {
        self.field.m
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        self.detection.validate()?;
        self.prior.validate(self.field.m)?;
        self.stopping.validate()?;
        if self.fov % 2 == 0 {
            return Err(Error::Config(format!("F must be odd, got {}", self.fov)));
        }
        if self.fov > self.field.m {
            return Err(Error::Config(format!(
                "F ({}) must not exceed M ({})",
                self.fov, self.field.m
            )));
        }
        if self.g_global < 1 {
            return Err(Error::Config("g_global must be >= 1".into()));
        }
        if !(self.b_init > 0.0) || !(self.b_step > 0.0) {
            return Err(Error::Config("b_init and b_step must be > 0".into()));
        }
        if self.stopping == StoppingCriterion::LearnedLand && !self.land_action {
            return Err(Error::Config("learned_land stopping requires land_action = true".into()));
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        if self.land_action {
            5
        } else {
            4
        }
    }

    /// Side of the pooled global map.
    pub fn global_size(&self) -> usize {
        (2 * self.field.m - 1).div_ceil(self.g_global)
    }

    /// Step index at which the battery runs out.
    pub fn crash_step(&self) -> usize {
        let mut s = (self.b_init / self.b_step).floor() as usize;
        while budget_at(self.b_init, self.b_step, s) > 0.0 {
            s += 1;
        }
        while s > 0 && budget_at(self.b_init, self.b_step, s - 1) <= 0.0 {
            s -= 1;
        }
        s
    }
}

/// Remaining battery after `steps` actions; tiny float residue snaps to 0.
fn budget_at(b_init: f64, b_step: f64, steps: usize) -> f64 {
    let b = b_init - steps as f64 * b_step;
    if b <= 1e-9 * b_init {
        0.0
    } else {
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    North,
    East,
    South,
    West,
    Land,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::North, Action::East, Action::South, Action::West, Action::Land];
    pub const MOVES: [Action; 4] = [Action::North, Action::East, Action::South, Action::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    /// `(d_row, d_col)`; north is towards row 0.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::North => (-1, 0),
            Action::East => (0, 1),
            Action::South => (1, 0),
            Action::West => (0, -1),
            Action::Land => (0, 0),
        }
    }

    pub fn is_move(self) -> bool {
        self != Action::Land
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::North => "north",
            Action::East => "east",
            Action::South => "south",
            Action::West => "west",
            Action::Land => "land",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    AllFound,
    Crashed,
    Landed,
    Coverage,
    Stalled,
}

impl DoneReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DoneReason::AllFound => "all_found",
            DoneReason::Crashed => "crashed",
            DoneReason::Landed => "landed",
            DoneReason::Coverage => "coverage",
            DoneReason::Stalled => "stalled",
        }
    }
}

impl FromStr for DoneReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all_found" => Self::AllFound,
            "crashed" => Self::Crashed,
            "landed" => Self::Landed,
            "coverage" => Self::Coverage,
            "stalled" => Self::Stalled,
            other => return Err(Error::Parse(format!("unknown done reason '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    TopLeft,
    BottomRight,
}

impl Corner {
    /// Start cell inset by half a view so the first view lies inside the field.
    pub fn start_cell(self, m: usize, f: usize) -> (usize, usize) {
        let h = f / 2;
        match self {
            Corner::TopLeft => (h, h),
            Corner::BottomRight => (m - 1 - h, m - 1 - h),
        }
    }
}

/// Network input for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// `3 x F x F`: field-area, detected weeds, current detection.
    pub local: Vec<f32>,
    /// `3 x G x G`: field-area, detected weeds, prior knowledge.
    pub global: Vec<f32>,
    /// Remaining battery normalised by `b_init`.
    pub budget: f32,
}

impl Observation {
    pub fn net_input(&self) -> NetInput<'_> {
        NetInput { local: &self.local, global: &self.global, budget: self.budget }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub field: Field,
    pub prior_map: GridMap,
    pub start: Corner,
    /// `(row, col)` of the drone; always inside the field.
    pub drone: (usize, usize),
    pub found: Vec<bool>,
    pub total_found: usize,
    /// Weeds found by the detection pass at reset (no reward is paid for these).
    pub initial_found: usize,
    pub detected_memory: GridMap,
    pub coverage: Vec<bool>,
    pub covered_cells: usize,
    pub steps: usize,
    pub boundary_hits: usize,
    pub last_new_found_step: usize,
    pub done_reason: Option<DoneReason>,
    /// Detector output of the most recent view.
    pub detection: GridMap,
}

impl EnvState {
    pub fn done(&self) -> bool {
        self.done_reason.is_some()
    }

    pub fn n_weeds(&self) -> usize {
        self.field.n()
    }

    /// Found fraction; an empty field counts as fully found.
    pub fn found_fraction(&self) -> f64 {
        if self.field.n() == 0 {
            1.0
        } else {
            self.total_found as f64 / self.field.n() as f64
        }
    }

    pub fn coverage_fraction(&self) -> f64 {
        self.covered_cells as f64 / self.coverage.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepInfo {
    pub newly_found: usize,
    pub hit_boundary: bool,
    pub crashed: bool,
    pub reason: Option<DoneReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One line of the step-level episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub row: usize,
    pub col: usize,
    pub action: Action,
    pub reward: f64,
    pub newly_found: usize,
    pub cumulative_found: usize,
    pub budget: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub done_reason: Option<DoneReason>,
}

/// Evaluate a stopping criterion on a state. `LearnedLand` never fires here.
pub fn check_stop(state: &EnvState, criterion: &StoppingCriterion) -> Option<DoneReason> {
    match *criterion {
        StoppingCriterion::AllFound => {
            (state.total_found == state.field.n()).then_some(DoneReason::AllFound)
        }
        StoppingCriterion::Coverage { fraction } => {
            (state.coverage_fraction() >= fraction).then_some(DoneReason::Coverage)
        }
        StoppingCriterion::Stalled { window, min_detected } => (state.total_found >= min_detected
            && state.steps - state.last_new_found_step >= window)
            .then_some(DoneReason::Stalled),
        StoppingCriterion::LearnedLand | StoppingCriterion::Never => None,
    }
}

/// Random streams an environment consumes, derived from one episode seed.
#[derive(Debug, Clone)]
pub struct EpisodeStreams {
    pub field: RngStream,
    pub prior: RngStream,
    pub detection: RngStream,
    pub start: RngStream,
}

impl EpisodeStreams {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            field: RngStream::new(seed, streams::FIELD),
            prior: RngStream::new(seed, streams::PRIOR),
            detection: RngStream::new(seed, streams::DETECTION),
            start: RngStream::new(seed, streams::START),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    state: EnvState,
    detection_rng: RngStream,
    // reusable canvas for the global map
    canvas: GridMap,
}

impl Env {
    /// Fresh episode from a single seed.
    pub fn reset(cfg: &EnvConfig, seed: u64) -> Result<(Env, Observation)> {
        Self::reset_with(cfg, EpisodeStreams::from_seed(seed))
    }

    pub fn reset_with(cfg: &EnvConfig, mut rngs: EpisodeStreams) -> Result<(Env, Observation)> {
        cfg.validate()?;
        let field = generate_field(&cfg.field, &mut rngs.field)?;
        let prior = generate_prior_map(&field, &cfg.prior, &mut rngs.prior)?;
        let start = if rngs.start.next_bool(0.5) { Corner::BottomRight } else { Corner::TopLeft };
        Self::from_parts(cfg, field, prior, start, rngs.detection)
    }

    /// Start an episode on a given field and prior; used for constructed
    /// scenarios and replays.
    pub fn from_parts(
        cfg: &EnvConfig,
        field: Field,
        prior_map: GridMap,
        start: Corner,
        detection_rng: RngStream,
    ) -> Result<(Env, Observation)> {
        cfg.validate()?;
        let m = cfg.m();
        if field.m != m || prior_map.width() != m || prior_map.height() != m {
            return Err(Error::Structural(format!("field/prior do not match M = {m}")));
        }
        let drone = start.start_cell(m, cfg.fov);
        let n = field.n();
        let canvas_side = 2 * m - 1;
        let state = EnvState {
            field,
            prior_map,
            start,
            drone,
            found: vec![false; n],
            total_found: 0,
            initial_found: 0,
            detected_memory: GridMap::zeros(m, m),
            coverage: vec![false; m * m],
            covered_cells: 0,
            steps: 0,
            boundary_hits: 0,
            last_new_found_step: 0,
            done_reason: None,
            detection: GridMap::zeros(cfg.fov, cfg.fov),
        };
        let mut env = Env {
            cfg: cfg.clone(),
            state,
            detection_rng,
            canvas: GridMap::zeros(canvas_side, canvas_side),
        };
        env.state.initial_found = env.sense()?;
        env.state.done_reason = check_stop(&env.state, &env.cfg.stopping);
        let obs = env.observe();
        Ok((env, obs))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Mutable access for constructed test scenarios.
    pub fn state_mut(&mut self) -> &mut EnvState {
        &mut self.state
    }

    pub fn budget(&self) -> f64 {
        budget_at(self.cfg.b_init, self.cfg.b_step, self.state.steps)
    }

    /// Remaining budget normalised to `[0, 1]`.
    pub fn budget_scalar(&self) -> f64 {
        self.budget() / self.cfg.b_init
    }

    // Run the detector at the current position and fold the result into the
    // state. Returns the number of newly found weeds.
    fn sense(&mut self) -> Result<usize> {
        let (row, col) = self.state.drone;
        let f = self.cfg.fov;
        let out = simulate_detection_map(
            &self.state.field,
            (row, col),
            f,
            &self.cfg.detection,
            &mut self.detection_rng,
        )?;
        let mut newly = 0;
        for id in out.visible_true_ids {
            if !self.state.found[id] {
                self.state.found[id] = true;
                newly += 1;
            }
        }
        self.state.total_found += newly;
        if newly > 0 {
            self.state.last_new_found_step = self.state.steps;
        }

        let m = self.cfg.m() as isize;
        let window = CellRect::centered(row, col, f);
        for lr in 0..f {
            let r = window.row0 + lr as isize;
            if r < 0 || r >= m {
                continue;
            }
            for lc in 0..f {
                let c = window.col0 + lc as isize;
                if c < 0 || c >= m {
                    continue;
                }
                let idx = (r * m + c) as usize;
                if !self.state.coverage[idx] {
                    self.state.coverage[idx] = true;
                    self.state.covered_cells += 1;
                }
                if out.map.get(lr, lc) != 0.0 {
                    self.state.detected_memory.set(r as usize, c as usize, 1.0);
                }
            }
        }
        self.state.detection = out.map;
        Ok(newly)
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.state.done() {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        if action == Action::Land && !self.cfg.land_action {
            return Err(Error::Usage("land action is disabled in this configuration".into()));
        }
        let rewards = self.cfg.rewards.clone();
        self.state.steps += 1;
        let mut info = StepInfo::default();
        let mut reward = rewards.step;

        if action == Action::Land {
            self.state.done_reason = Some(DoneReason::Landed);
            info.reason = self.state.done_reason;
            return Ok(StepResult { obs: self.observe(), reward, done: true, info });
        }

        let m = self.cfg.m() as isize;
        let (dr, dc) = action.delta();
        let (r, c) = (self.state.drone.0 as isize + dr, self.state.drone.1 as isize + dc);
        if r < 0 || c < 0 || r >= m || c >= m {
            info.hit_boundary = true;
            self.state.boundary_hits += 1;
            reward += rewards.no_fly_zone;
        } else {
            self.state.drone = (r as usize, c as usize);
        }

        info.newly_found = self.sense()?;
        reward += rewards.detection * info.newly_found as f64;

        if self.budget() <= 0.0 {
            reward += rewards.crash;
            info.crashed = true;
            self.state.done_reason = Some(DoneReason::Crashed);
        } else {
            self.state.done_reason = check_stop(&self.state, &self.cfg.stopping);
        }
        info.reason = self.state.done_reason;
        Ok(StepResult { obs: self.observe(), reward, done: self.state.done(), info })
    }

    pub fn observe(&mut self) -> Observation {
        Observation {
            local: self.encode_local(),
            global: self.encode_global(),
            budget: self.budget_scalar() as f32,
        }
    }

    /// `3 x F x F` window centered on the drone. Outside the field the
    /// field-area layer is 1 and the other layers 0.
    pub fn encode_local(&self) -> Vec<f32> {
        let f = self.cfg.fov;
        let m = self.cfg.m() as isize;
        let window = CellRect::centered(self.state.drone.0, self.state.drone.1, f);
        let mut out = vec![0.0f32; 3 * f * f];
        let (area, rest) = out.split_at_mut(f * f);
        let (seen, current) = rest.split_at_mut(f * f);
        for lr in 0..f {
            let r = window.row0 + lr as isize;
            for lc in 0..f {
                let c = window.col0 + lc as isize;
                let i = lr * f + lc;
                if r < 0 || c < 0 || r >= m || c >= m {
                    area[i] = 1.0;
                } else {
                    seen[i] = self.state.detected_memory.get(r as usize, c as usize);
                }
            }
        }
        current.copy_from_slice(self.state.detection.values());
        out
    }

    /// `3 x G x G` pooled drone-centric view of the whole field.
    ///
    /// Each `M x M` layer is placed on a `(2M - 1)^2` canvas with the drone
    /// cell at the canvas center, padded with 1 (field-area) or 0 (detections,
    /// prior), then average pooled with kernel `g_global`.
    pub fn encode_global(&mut self) -> Vec<f32> {
        let g = self.cfg.global_size();
        let mut out = Vec::with_capacity(3 * g * g);
        let layers: [(Option<&GridMap>, f32); 3] = [
            (None, 1.0),
            (Some(&self.state.detected_memory), 0.0),
            (Some(&self.state.prior_map), 0.0),
        ];
        let m = self.cfg.m();
        let side = 2 * m - 1;
        let off_r = (m - 1) as isize - self.state.drone.0 as isize;
        let off_c = (m - 1) as isize - self.state.drone.1 as isize;
        for (layer, pad) in layers {
            let canvas = self.canvas.values_mut();
            canvas.fill(pad);
            for r in 0..m {
                let cr = (r as isize + off_r) as usize;
                let dst = &mut canvas[cr * side + off_c as usize..cr * side + off_c as usize + m];
                match layer {
                    None => dst.fill(0.0),
                    Some(map) => dst.copy_from_slice(&map.values()[r * m..(r + 1) * m]),
                }
            }
            let pooled = avg_pool(&self.canvas, self.cfg.g_global).expect("g_global >= 1");
            out.extend_from_slice(pooled.values());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Weed;

    fn perfect_cfg() -> EnvConfig {
        EnvConfig {
            detection: DetectionModel::PERFECT,
            prior: PriorModel::perfect(48),
            ..EnvConfig::default()
        }
    }

    fn scenario(cfg: &EnvConfig, weeds: Vec<Weed>, start: Corner) -> Env {
        let m = cfg.m();
        let field = Field { m, weeds };
        Env::from_parts(cfg, field, GridMap::zeros(m, m), start, RngStream::new(0, 0)).unwrap().0
    }

    #[test]
    fn start_cells() {
        assert_eq!(Corner::TopLeft.start_cell(48, 11), (5, 5));
        assert_eq!(Corner::BottomRight.start_cell(48, 11), (42, 42));
    }

    #[test]
    fn reset_split_and_budget() {
        let cfg = EnvConfig::default();
        let mut top = 0;
        for s in 0..1000 {
            let (env, obs) = Env::reset(&cfg, s).unwrap();
            assert_eq!(obs.budget, 1.0);
            assert!(env.state().drone == (5, 5) || env.state().drone == (42, 42));
            if env.state().start == Corner::TopLeft {
                top += 1;
            }
        }
        assert!((450..=550).contains(&top), "top-left starts {top}");
    }

    #[test]
    fn blocked_move_reward() {
        let cfg = perfect_cfg();
        let mut env = scenario(&cfg, vec![Weed { x: 40.5, y: 40.5, cluster: 0 }], Corner::TopLeft);
        env.state_mut().drone = (0, 5);
        let res = env.step(Action::North).unwrap();
        assert!(res.info.hit_boundary);
        assert_eq!(res.reward, -1.5);
        assert_eq!(env.state().drone, (0, 5));
    }

    #[test]
    fn three_new_weeds_reward() {
        let cfg = perfect_cfg();
        // row 11 enters the view when moving south from row 5
        let weeds = (0..3).map(|i| Weed { x: 2.5 + i as f64, y: 11.5, cluster: 0 }).collect();
        let mut env = scenario(&cfg, weeds, Corner::TopLeft);
        assert_eq!(env.state().total_found, 0);
        let res = env.step(Action::South).unwrap();
        assert_eq!(res.info.newly_found, 3);
        assert_eq!(res.reward, 2.5);
        assert!(res.done);
        assert_eq!(res.info.reason, Some(DoneReason::AllFound));
    }

    #[test]
    fn crash_at_step_375() {
        let cfg = perfect_cfg();
        assert_eq!(cfg.crash_step(), 375);
        let mut env = scenario(&cfg, vec![Weed { x: 40.5, y: 40.5, cluster: 0 }], Corner::TopLeft);
        let mut last = None;
        for i in 1..=375 {
            let a = if i % 2 == 0 { Action::East } else { Action::West };
            let res = env.step(a).unwrap();
            if res.done {
                last = Some((i, res));
                break;
            }
        }
        let (i, res) = last.expect("episode must end");
        assert_eq!(i, 375);
        assert!(res.info.crashed);
        assert_eq!(res.reward, -150.5);
        assert!(env.step(Action::East).is_err());
    }

    #[test]
    fn budget_scalar_values() {
        let cfg = perfect_cfg();
        let mut env = scenario(&cfg, vec![Weed { x: 40.5, y: 40.5, cluster: 0 }], Corner::TopLeft);
        assert_eq!(env.budget_scalar(), 1.0);
        env.state_mut().steps = 100;
        assert!((env.budget() - 55.0).abs() < 1e-9);
        assert!((env.budget_scalar() - 55.0 / 75.0).abs() < 1e-12);
        env.state_mut().steps = 375;
        assert_eq!(env.budget_scalar(), 0.0);
    }

    #[test]
    fn land_costs_one_step() {
        let cfg = EnvConfig { land_action: true, stopping: StoppingCriterion::LearnedLand, ..perfect_cfg() };
        let mut env = scenario(&cfg, vec![Weed { x: 2.5, y: 2.5, cluster: 0 }], Corner::TopLeft);
        assert_eq!(env.state().initial_found, 1);
        let res = env.step(Action::Land).unwrap();
        assert!(res.done);
        assert_eq!(res.reward, -0.5);
        assert_eq!(res.info.reason, Some(DoneReason::Landed));
        let no_land = perfect_cfg();
        let mut env = scenario(&no_land, vec![Weed { x: 40.5, y: 40.5, cluster: 0 }], Corner::TopLeft);
        assert!(matches!(env.step(Action::Land), Err(Error::Usage(_))));
    }

    #[test]
    fn local_padding_at_corner() {
        let cfg = perfect_cfg();
        let mut env = scenario(&cfg, vec![Weed { x: 40.5, y: 40.5, cluster: 0 }], Corner::TopLeft);
        let local = env.encode_local();
        assert!(local[..121].iter().all(|&v| v == 0.0));
        env.state_mut().drone = (0, 0);
        let local = env.encode_local();
        for r in 0..11 {
            for c in 0..11 {
                let want = if r < 5 || c < 5 { 1.0 } else { 0.0 };
                assert_eq!(local[r * 11 + c], want);
            }
        }
    }

    #[test]
    fn stop_criteria() {
        let cfg = perfect_cfg();
        let mut env = scenario(&cfg, vec![Weed { x: 40.5, y: 40.5, cluster: 0 }], Corner::TopLeft);
        let st = env.state_mut();
        st.total_found = 1;
        st.found[0] = true;
        assert_eq!(check_stop(st, &StoppingCriterion::AllFound), Some(DoneReason::AllFound));

        st.steps = 100;
        st.last_new_found_step = 0;
        let stalled = StoppingCriterion::Stalled { window: 50, min_detected: 2 };
        assert_eq!(check_stop(st, &stalled), None);
        st.total_found = 2;
        assert_eq!(check_stop(st, &stalled), Some(DoneReason::Stalled));
        st.last_new_found_step = 51;
        assert_eq!(check_stop(st, &stalled), None);

        let n = st.coverage.len();
        st.covered_cells = (n as f64 * 0.51).ceil() as usize;
        let cov = StoppingCriterion::Coverage { fraction: 0.5 };
        assert_eq!(check_stop(st, &cov), Some(DoneReason::Coverage));
        st.covered_cells = n / 2 - 1;
        assert_eq!(check_stop(st, &cov), None);
        assert_eq!(check_stop(st, &StoppingCriterion::LearnedLand), None);
    }

    #[test]
    fn config_rejects_even_fov() {
        let cfg = EnvConfig { fov: 10, ..EnvConfig::default() };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("F must be odd"), "{err}");
        assert_eq!(EnvConfig::default().global_size(), 32);
    }
}
