//! Experiment configuration: defaults, presets, TOML files and overrides.
//!
//! Layers are applied in order: built-in defaults, presets (in the order
//! given), the config file, then `key.path=value` overrides. Every layer is
//! checked against the schema, so a misspelt key is an error rather than a
//! silently ignored setting.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::dqn::TrainConfig;
use crate::env::{EnvConfig, StoppingCriterion};
use crate::error::{Error, Result};
use crate::field::{DistributionKind, FieldConfig};
use crate::nn::{QNetwork, QNetworkSpec};
use crate::sensing::{DetectionModel, PriorModel};

/// Field side the standard distribution and prior levels are defined for.
const REFERENCE_M: usize = 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// `[channels, kernel]` per local convolution.
    pub local_convs: Vec<[usize; 2]>,
    pub global_convs: Vec<[usize; 2]>,
    /// Hidden dense widths; the output layer is added from the action count.
    pub head: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { local_convs: vec![[16, 5], [16, 5]], global_convs: vec![[16, 5], [16, 5]], head: vec![256, 256, 256] }
    }
}

impl NetworkConfig {
    pub fn spec(&self, env: &EnvConfig) -> QNetworkSpec {
        let pairs = |v: &[[usize; 2]]| v.iter().map(|&[c, k]| (c, k)).collect::<Vec<_>>();
        let (f, g) = (env.fov, env.global_size());
        QNetworkSpec::build([3, f, f], [3, g, g], &pairs(&self.local_convs), &pairs(&self.global_convs), &self.head, env.n_actions())
    }

    pub fn build(&self, env: &EnvConfig) -> Result<QNetwork> {
        QNetwork::new(self.spec(env))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_episodes: usize,
    /// Steps at which the found fraction is reported.
    pub checkpoints: Vec<usize>,
    /// Significance level of the comparison tests.
    pub alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_episodes: 1000, checkpoints: vec![100, 200, 300], alpha: 0.001 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("out"),
            env: EnvConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        self.network.build(&self.env)?;
        if self.eval.n_episodes == 0 {
            return Err(Error::Config("eval.n_episodes must be at least 1".into()));
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return Err(Error::Config(format!("eval.alpha must be in (0, 1), got {}", self.eval.alpha)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Apply one TOML layer on top of this config.
    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        let layer: Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        self.apply_table(&layer)
    }

    /// Apply a `key.path=value` override. The value is read as TOML and
    /// falls back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("override '{assignment}' is not of the form key.path=value")))?;
        let path = path.trim();
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        let mut layer = Table::new();
        let keys: Vec<&str> = path.split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(Error::Parse(format!("bad key path '{path}'")));
        }
        let mut cur = &mut layer;
        for k in &keys[..keys.len() - 1] {
            cur = cur
                .entry(k.to_string())
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .expect("fresh table");
        }
        cur.insert(keys[keys.len() - 1].to_string(), value);
        self.apply_table(&layer)
    }

    fn apply_table(&mut self, layer: &Table) -> Result<()> {
        let field_layer = layer.get("env").and_then(|e| e.get("field")).and_then(Value::as_table);
        if let Some(kind) = field_layer.and_then(|f| f.get("kind")) {
            // a new kind brings its own cluster statistics
            let kind: DistributionKind = kind
                .as_str()
                .ok_or_else(|| Error::Config("env.field.kind must be a string".into()))?
                .parse()?;
            let m = match field_layer.and_then(|f| f.get("m")) {
                Some(v) => usize::try_from(v.as_integer().unwrap_or(-1))
                    .map_err(|_| Error::Config("env.field.m must be a positive integer".into()))?,
                None => self.env.field.m,
            };
            self.env.field = scaled_field(kind, m, &self.env.field);
        }
        let mut base = Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        merge(base.as_table_mut().expect("table"), layer, "")?;
        *self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Apply a named preset.
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let (group, level) = name.split_once(':').unwrap_or((name, ""));
        let m = self.env.field.m;
        match (group, level) {
            ("paper-default", "") => *self = ExperimentConfig { seed: self.seed, out_dir: self.out_dir.clone(), ..Default::default() },
            ("desk-scale", "") => self.apply_desk_scale(),
            ("distribution", kind) => {
                let kind: DistributionKind = kind.parse()?;
                self.env.field = scaled_field(kind, m, &self.env.field);
            }
            ("detection", level) => {
                self.env.detection =
                    DetectionModel::level(level).ok_or_else(|| Error::Config(format!("unknown detection level '{level}'")))?;
            }
            ("prior", level) => {
                let mut p = PriorModel::level(level).ok_or_else(|| Error::Config(format!("unknown prior level '{level}'")))?;
                if p.resolution > 0 {
                    p.resolution = ((p.resolution * m) as f64 / REFERENCE_M as f64).round().clamp(1.0, m as f64) as usize;
                }
                self.env.prior = p;
            }
            ("stopping", level) => {
                self.env.land_action = false;
                self.env.stopping = match level {
                    "all_found" => StoppingCriterion::AllFound,
                    "coverage50" => StoppingCriterion::Coverage { fraction: 0.5 },
                    "coverage75" => StoppingCriterion::Coverage { fraction: 0.75 },
                    "stalled15" => StoppingCriterion::Stalled { window: 15, min_detected: 2 },
                    "stalled25" => StoppingCriterion::Stalled { window: 25, min_detected: 2 },
                    "stalled50" => StoppingCriterion::Stalled { window: 50, min_detected: 2 },
                    "land" => {
                        self.env.land_action = true;
                        StoppingCriterion::LearnedLand
                    }
                    other => return Err(Error::Config(format!("unknown stopping level '{other}'"))),
                };
            }
            _ => return Err(Error::Config(format!("unknown preset '{name}'; known: {}", PRESETS.join(", ")))),
        }
        Ok(())
    }

    fn apply_desk_scale(&mut self) {
        let m = 16;
        let s = (m as f64 / REFERENCE_M as f64).powi(2);
        self.env.field = FieldConfig {
            m,
            obj_mu: 20.0,
            obj_sigma: 6.0,
            dist_mu: 2.0,
            dist_sigma: 0.0,
            covariances: FieldConfig::strong().covariances.iter().map(|c| scale_cov(c, s)).collect(),
            ..FieldConfig::strong()
        };
        self.env.detection = DetectionModel::PERFECT;
        self.env.prior = PriorModel::perfect(m);
        self.env.fov = 5;
        self.env.g_global = 3;
        self.env.b_init = 75.0;
        self.env.b_step = 0.75;
        self.network = NetworkConfig { local_convs: vec![[16, 3], [16, 3]], global_convs: vec![[16, 3], [16, 3]], head: vec![48, 48, 48] };
        self.train = TrainConfig {
            alpha: 1e-4,
            n_batch: 32,
            n_steps: 200_000,
            n_buffer: 50_000,
            n_val: 60,
            val_interval: 2_500,
            n_envs: 4,
            train_freq: 1,
            ..TrainConfig::default()
        };
        self.eval = EvalConfig { n_episodes: 200, checkpoints: vec![29, 58, 87], alpha: 0.001 };
    }
}

/// Names accepted by [`ExperimentConfig::apply_preset`].
pub const PRESETS: &[&str] = &[
    "paper-default",
    "desk-scale",
    "distribution:strong",
    "distribution:medium",
    "distribution:uniform",
    "detection:perfect",
    "detection:low",
    "detection:moderate",
    "detection:high",
    "detection:very_high",
    "prior:none",
    "prior:low",
    "prior:moderate",
    "prior:high",
    "prior:perfect",
    "stopping:all_found",
    "stopping:coverage50",
    "stopping:coverage75",
    "stopping:stalled15",
    "stopping:stalled25",
    "stopping:stalled50",
    "stopping:land",
];

fn scale_cov(c: &[[f64; 2]; 2], s: f64) -> [[f64; 2]; 2] {
    [[c[0][0] * s, c[0][1] * s], [c[1][0] * s, c[1][1] * s]]
}

/// Standard cluster statistics of `kind`, with covariances scaled to an
/// `m`-cell field; weed counts are kept from `current`.
fn scaled_field(kind: DistributionKind, m: usize, current: &FieldConfig) -> FieldConfig {
    let std = FieldConfig::of_kind(kind);
    let s = (m as f64 / REFERENCE_M as f64).powi(2);
    FieldConfig {
        m,
        obj_mu: current.obj_mu,
        obj_sigma: current.obj_sigma,
        covariances: std.covariances.iter().map(|c| scale_cov(c, s)).collect(),
        ..std
    }
}

// Tagged enums change their key set with the tag, so their tables are left
// to the deserializer.
const OPEN_TABLES: &[&str] = &["env.stopping"];

fn merge(base: &mut Table, layer: &Table, prefix: &str) -> Result<()> {
    for (k, v) in layer {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if OPEN_TABLES.contains(&path.as_str()) {
            base.insert(k.clone(), v.clone());
            continue;
        }
        match (base.get_mut(k), v) {
            (None, _) => return Err(Error::Config(format!("unknown key `{path}`"))),
            (Some(Value::Table(b)), Value::Table(l)) => merge(b, l, &path)?,
            (Some(Value::Table(_)), _) => return Err(Error::Config(format!("`{path}` must be a table"))),
            (Some(slot), _) => {
                // integers are accepted where floats are expected
                *slot = match (&*slot, v) {
                    (Value::Float(_), Value::Integer(i)) => Value::Float(*i as f64),
                    _ => v.clone(),
                };
            }
        }
    }
    Ok(())
}

/// Resolve a configuration from presets, an optional file and overrides.
pub fn parse_config(presets: &[String], file_text: Option<&str>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for p in presets {
        cfg.apply_preset(p)?;
    }
    if let Some(text) = file_text {
        cfg.apply_toml(text)?;
    }
    for o in overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_config(&[], Some(""), &[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.env.m(), 48);
        assert_eq!(cfg.env.fov, 11);
        assert_eq!(cfg.train.gamma, 0.95);
        assert_eq!(cfg.train.n_batch, 128);
        let net = cfg.network.build(&cfg.env).unwrap();
        assert_eq!(net.param_count(), 2_544_548);
    }

    #[test]
    fn even_fov_rejected() {
        let err = parse_config(&[], None, &["env.fov=10".into()]).unwrap_err();
        assert!(err.to_string().contains("F must be odd"), "{err}");
    }

    #[test]
    fn flag_beats_file() {
        let cfg = parse_config(&[], Some("[train]\nlambda = 0.2\n"), &["train.lambda=0.1".into()]).unwrap();
        assert_eq!(cfg.train.lambda, 0.1);
        let cfg = parse_config(&[], Some("[train]\nlambda = 0.2\n"), &[]).unwrap();
        assert_eq!(cfg.train.lambda, 0.2);
    }

    #[test]
    fn unknown_keys_rejected_with_path() {
        let err = parse_config(&[], Some("[train]\nlamda = 0.2\n"), &[]).unwrap_err();
        assert!(err.to_string().contains("train.lamda"), "{err}");
        let err = parse_config(&[], None, &["env.field.size=3".into()]).unwrap_err();
        assert!(err.to_string().contains("env.field.size"), "{err}");
        assert!(parse_config(&[], Some("[env.stopping]\nkind = \"coverage\"\nfrac = 0.5\n"), &[]).is_err());
    }

    #[test]
    fn round_trip_through_toml() {
        for presets in [vec![], vec!["desk-scale".to_string(), "stopping:land".into()], vec!["stopping:stalled25".into()]] {
            let cfg = parse_config(&presets, None, &[]).unwrap();
            let back = parse_config(&[], Some(&cfg.to_toml().unwrap()), &[]).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn stopping_from_file() {
        let cfg = parse_config(&[], Some("[env.stopping]\nkind = \"coverage\"\nfraction = 0.75\n"), &[]).unwrap();
        assert_eq!(cfg.env.stopping, StoppingCriterion::Coverage { fraction: 0.75 });
        let err = parse_config(&[], Some("[env.stopping]\nkind = \"learned_land\"\n"), &[]).unwrap_err();
        assert!(err.to_string().contains("land_action"));
    }

    #[test]
    fn kind_switch_brings_its_statistics() {
        let cfg = parse_config(&[], Some("[env.field]\nkind = \"medium\"\n"), &[]).unwrap();
        assert_eq!(cfg.env.field, FieldConfig::medium());
        let cfg = parse_config(&["desk-scale".into(), "distribution:medium".into()], None, &[]).unwrap();
        assert_eq!(cfg.env.field.covariances.len(), 4);
        assert_eq!(cfg.env.field.m, 16);
        assert!((cfg.env.field.covariances[0][0][0] - 10.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn desk_scale_preset() {
        let cfg = parse_config(&["desk-scale".into()], None, &[]).unwrap();
        assert_eq!(cfg.env.global_size(), 11);
        assert_eq!(cfg.env.crash_step(), 100);
        let n = cfg.network.build(&cfg.env).unwrap().param_count();
        assert!((40_000..60_000).contains(&n), "{n}");
        let cfg = parse_config(&["desk-scale".into(), "prior:perfect".into()], None, &[]).unwrap();
        assert_eq!(cfg.env.prior, PriorModel::perfect(16));
        let cfg = parse_config(&["desk-scale".into(), "prior:moderate".into()], None, &[]).unwrap();
        assert_eq!(cfg.env.prior.resolution, 4);
        assert!(parse_config(&["nope".into()], None, &[]).is_err());
    }

    #[test]
    fn override_parsing() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_override("out_dir=runs/a").unwrap();
        assert_eq!(cfg.out_dir, PathBuf::from("runs/a"));
        cfg.apply_override("env.b_init = 80").unwrap();
        assert_eq!(cfg.env.b_init, 80.0);
        assert!(cfg.apply_override("no-equals").is_err());
        assert!(cfg.apply_override("env.fov=\"x\"").is_err());
    }
}
