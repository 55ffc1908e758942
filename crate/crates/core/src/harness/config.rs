//! Flat `section.key = value` experiment configuration.
//!
//! Lines may appear in any order; blank lines and `#` comments are ignored.
//! Unknown or repeated keys are errors.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use super::HarnessError;
use crate::diffnet::NetConfig;
use crate::losses::{LossWeights, RegularizerId};
use crate::meta::{AdaptConfig, FehMode, MetaConfig, MetaGradientMode, ObjectiveConfig, DEFAULT_EXCLUSION_RADIUS};
use crate::optim::{AdamWConfig, LrSchedule};

#[derive(Debug, Clone, PartialEq)]
pub struct TasksSection {
    pub n_models: usize,
    pub extent_x: f64,
    pub extent_z: f64,
    pub spacing: f64,
    pub min_layers: usize,
    pub max_layers: usize,
    pub freqs: Vec<f64>,
    pub source_x: f64,
    pub source_z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSection {
    pub layers: usize,
    pub width: usize,
    pub rank: usize,
    pub input_dim: usize,
    pub act_scale: f64,
    pub chunk_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FehSection {
    pub width: usize,
    pub freq_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossesSection {
    pub scale: f64,
    pub physics: f64,
    pub reg: f64,
    pub ortho: f64,
    pub reg_hook: RegularizerId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSection {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaSection {
    pub tasks_per_epoch: usize,
    pub inner_steps: usize,
    pub lr_inner: f64,
    pub lr: f64,
    pub epochs: usize,
    pub decay_every: u64,
    pub decay_factor: f64,
    pub gradient_mode: MetaGradientMode,
    pub batch_points: usize,
    pub exclusion_radius: f64,
    pub cross_frequency: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSection {
    pub epochs: usize,
    pub lr: f64,
    pub milestones: Vec<u64>,
    pub decay_factor: f64,
    pub batch_points: usize,
    pub exclusion_radius: f64,
    pub resample: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub interval: usize,
    /// Radius of the excluded source disk, in grid cells.
    pub source_cells: f64,
    /// PML thickness of the FD reference, in cells.
    pub pml_cells: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub tasks: TasksSection,
    pub network: NetworkSection,
    pub feh: FehSection,
    pub losses: LossesSection,
    pub optimizer: OptimizerSection,
    pub meta: MetaSection,
    pub test: TestSection,
    pub eval: EvalSection,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Keys given explicitly in the parsed text.
    explicit: BTreeSet<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        let adam = AdamWConfig::default();
        let weights = LossWeights::default();
        Self {
            tasks: TasksSection {
                n_models: 8,
                extent_x: 1.0,
                extent_z: 1.0,
                spacing: crate::gridmodel::DEFAULT_SPACING,
                min_layers: 2,
                max_layers: 4,
                freqs: vec![2.0, 3.0, 4.0, 5.0, 6.0],
                source_x: 0.5,
                source_z: crate::gridmodel::DEFAULT_SOURCE_DEPTH,
            },
            network: NetworkSection {
                layers: net.layers,
                width: net.width,
                rank: net.rank,
                input_dim: net.input_dim,
                act_scale: net.act_scale,
                chunk_points: crate::meta::objective::DEFAULT_CHUNK,
            },
            feh: FehSection { width: net.feh_width, freq_scale: net.freq_scale },
            losses: LossesSection {
                scale: weights.scale,
                physics: weights.physics,
                reg: weights.reg,
                ortho: weights.ortho,
                reg_hook: RegularizerId::None,
            },
            optimizer: OptimizerSection {
                beta1: adam.beta1,
                beta2: adam.beta2,
                eps: adam.eps,
                weight_decay: adam.weight_decay,
                clip_norm: 0.0,
            },
            meta: MetaSection {
                tasks_per_epoch: 5,
                inner_steps: 1,
                lr_inner: 2e-3,
                lr: 1e-3,
                epochs: 2000,
                decay_every: 5000,
                decay_factor: 0.8,
                gradient_mode: MetaGradientMode::FirstOrder,
                batch_points: 1000,
                exclusion_radius: DEFAULT_EXCLUSION_RADIUS,
                cross_frequency: false,
            },
            test: TestSection {
                epochs: 1000,
                lr: 1e-3,
                milestones: vec![2000, 4000, 8000],
                decay_factor: 0.5,
                batch_points: 1000,
                exclusion_radius: DEFAULT_EXCLUSION_RADIUS,
                resample: true,
            },
            eval: EvalSection { interval: 50, source_cells: 2.0, pml_cells: 20 },
            seed: 0,
            output_dir: PathBuf::from("runs"),
            explicit: BTreeSet::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value.parse().map_err(|_| HarnessError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, HarnessError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(HarnessError::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, HarnessError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn mode_name(mode: MetaGradientMode) -> &'static str {
    match mode {
        MetaGradientMode::FirstOrder => "first_order",
        MetaGradientMode::Exact => "exact",
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected section.key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !cfg.explicit.insert(key.to_string()) {
                return Err(HarnessError::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Whether `key` was set explicitly by the parsed text.
    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), HarnessError> {
        match key {
            "tasks.n_models" => self.tasks.n_models = parse_num(key, v)?,
            "tasks.extent_x" => self.tasks.extent_x = parse_num(key, v)?,
            "tasks.extent_z" => self.tasks.extent_z = parse_num(key, v)?,
            "tasks.spacing" => self.tasks.spacing = parse_num(key, v)?,
            "tasks.min_layers" => self.tasks.min_layers = parse_num(key, v)?,
            "tasks.max_layers" => self.tasks.max_layers = parse_num(key, v)?,
            "tasks.freqs" => self.tasks.freqs = parse_list(key, v)?,
            "tasks.source_x" => self.tasks.source_x = parse_num(key, v)?,
            "tasks.source_z" => self.tasks.source_z = parse_num(key, v)?,
            "network.layers" => self.network.layers = parse_num(key, v)?,
            "network.width" => self.network.width = parse_num(key, v)?,
            "network.rank" => self.network.rank = parse_num(key, v)?,
            "network.input_dim" => self.network.input_dim = parse_num(key, v)?,
            "network.act_scale" => self.network.act_scale = parse_num(key, v)?,
            "network.chunk_points" => self.network.chunk_points = parse_num(key, v)?,
            "feh.width" => self.feh.width = parse_num(key, v)?,
            "feh.freq_scale" => self.feh.freq_scale = parse_num(key, v)?,
            "losses.scale" => self.losses.scale = parse_num(key, v)?,
            "losses.physics" => self.losses.physics = parse_num(key, v)?,
            "losses.reg" => self.losses.reg = parse_num(key, v)?,
            "losses.ortho" => self.losses.ortho = parse_num(key, v)?,
            "losses.reg_hook" => self.losses.reg_hook = v.parse().map_err(|e| HarnessError::Config(format!("{key}: {e}")))?,
            "optimizer.beta1" => self.optimizer.beta1 = parse_num(key, v)?,
            "optimizer.beta2" => self.optimizer.beta2 = parse_num(key, v)?,
            "optimizer.eps" => self.optimizer.eps = parse_num(key, v)?,
            "optimizer.weight_decay" => self.optimizer.weight_decay = parse_num(key, v)?,
            "optimizer.clip_norm" => self.optimizer.clip_norm = parse_num(key, v)?,
            "meta.tasks_per_epoch" => self.meta.tasks_per_epoch = parse_num(key, v)?,
            "meta.inner_steps" => self.meta.inner_steps = parse_num(key, v)?,
            "meta.lr_inner" => self.meta.lr_inner = parse_num(key, v)?,
            "meta.lr" => self.meta.lr = parse_num(key, v)?,
            "meta.epochs" => self.meta.epochs = parse_num(key, v)?,
            "meta.decay_every" => self.meta.decay_every = parse_num(key, v)?,
            "meta.decay_factor" => self.meta.decay_factor = parse_num(key, v)?,
            "meta.gradient_mode" => {
                self.meta.gradient_mode = v.parse().map_err(|e| HarnessError::Config(format!("{key}: {e}")))?
            }
            "meta.batch_points" => self.meta.batch_points = parse_num(key, v)?,
            "meta.exclusion_radius" => self.meta.exclusion_radius = parse_num(key, v)?,
            "meta.cross_frequency" => self.meta.cross_frequency = parse_bool(key, v)?,
            "test.epochs" => self.test.epochs = parse_num(key, v)?,
            "test.lr" => self.test.lr = parse_num(key, v)?,
            "test.milestones" => self.test.milestones = parse_list(key, v)?,
            "test.decay_factor" => self.test.decay_factor = parse_num(key, v)?,
            "test.batch_points" => self.test.batch_points = parse_num(key, v)?,
            "test.exclusion_radius" => self.test.exclusion_radius = parse_num(key, v)?,
            "test.resample" => self.test.resample = parse_bool(key, v)?,
            "eval.interval" => self.eval.interval = parse_num(key, v)?,
            "eval.source_cells" => self.eval.source_cells = parse_num(key, v)?,
            "eval.pml_cells" => self.eval.pml_cells = parse_num(key, v)?,
            "seeds.master" => self.seed = parse_num(key, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            other => return Err(HarnessError::Config(format!("unknown key {other}"))),
        }
        Ok(())
    }

    /// Every key with its effective value, in sorted order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.tasks;
        let n = &self.network;
        let l = &self.losses;
        let o = &self.optimizer;
        let m = &self.meta;
        let s = &self.test;
        let mut e = vec![
            ("eval.interval", self.eval.interval.to_string()),
            ("eval.pml_cells", self.eval.pml_cells.to_string()),
            ("eval.source_cells", self.eval.source_cells.to_string()),
            ("feh.freq_scale", self.feh.freq_scale.to_string()),
            ("feh.width", self.feh.width.to_string()),
            ("losses.ortho", l.ortho.to_string()),
            ("losses.physics", l.physics.to_string()),
            ("losses.reg", l.reg.to_string()),
            ("losses.reg_hook", l.reg_hook.to_string()),
            ("losses.scale", l.scale.to_string()),
            ("meta.batch_points", m.batch_points.to_string()),
            ("meta.cross_frequency", m.cross_frequency.to_string()),
            ("meta.decay_every", m.decay_every.to_string()),
            ("meta.decay_factor", m.decay_factor.to_string()),
            ("meta.epochs", m.epochs.to_string()),
            ("meta.exclusion_radius", m.exclusion_radius.to_string()),
            ("meta.gradient_mode", mode_name(m.gradient_mode).to_string()),
            ("meta.inner_steps", m.inner_steps.to_string()),
            ("meta.lr", m.lr.to_string()),
            ("meta.lr_inner", m.lr_inner.to_string()),
            ("meta.tasks_per_epoch", m.tasks_per_epoch.to_string()),
            ("network.act_scale", n.act_scale.to_string()),
            ("network.chunk_points", n.chunk_points.to_string()),
            ("network.input_dim", n.input_dim.to_string()),
            ("network.layers", n.layers.to_string()),
            ("network.rank", n.rank.to_string()),
            ("network.width", n.width.to_string()),
            ("optimizer.beta1", o.beta1.to_string()),
            ("optimizer.beta2", o.beta2.to_string()),
            ("optimizer.clip_norm", o.clip_norm.to_string()),
            ("optimizer.eps", o.eps.to_string()),
            ("optimizer.weight_decay", o.weight_decay.to_string()),
            ("output.dir", self.output_dir.display().to_string()),
            ("seeds.master", self.seed.to_string()),
            ("tasks.extent_x", t.extent_x.to_string()),
            ("tasks.extent_z", t.extent_z.to_string()),
            ("tasks.freqs", join(&t.freqs)),
            ("tasks.max_layers", t.max_layers.to_string()),
            ("tasks.min_layers", t.min_layers.to_string()),
            ("tasks.n_models", t.n_models.to_string()),
            ("tasks.source_x", t.source_x.to_string()),
            ("tasks.source_z", t.source_z.to_string()),
            ("tasks.spacing", t.spacing.to_string()),
            ("test.batch_points", s.batch_points.to_string()),
            ("test.decay_factor", s.decay_factor.to_string()),
            ("test.epochs", s.epochs.to_string()),
            ("test.exclusion_radius", s.exclusion_radius.to_string()),
            ("test.lr", s.lr.to_string()),
            ("test.milestones", join(&s.milestones)),
            ("test.resample", s.resample.to_string()),
        ];
        e.sort_by_key(|(k, _)| *k);
        e
    }

    /// The effective configuration in a form [`ExperimentConfig::parse`] accepts.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        let t = &self.tasks;
        if t.n_models == 0 || t.freqs.is_empty() {
            return bad("tasks.n_models and tasks.freqs must be non-empty".into());
        }
        if t.freqs.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return bad("tasks.freqs must be positive".into());
        }
        if !(2..=8).contains(&t.min_layers) || !(t.min_layers..=8).contains(&t.max_layers) {
            return bad("tasks.min_layers..=tasks.max_layers must lie in 2..=8".into());
        }
        if self.eval.interval == 0 || self.network.chunk_points == 0 {
            return bad("eval.interval and network.chunk_points must be positive".into());
        }
        if !(self.eval.source_cells >= 0.0) {
            return bad("eval.source_cells must be non-negative".into());
        }
        if !(self.optimizer.clip_norm >= 0.0) {
            return bad("optimizer.clip_norm must be non-negative".into());
        }
        if self.meta.inner_steps == 0 || self.meta.tasks_per_epoch == 0 {
            return bad("meta.inner_steps and meta.tasks_per_epoch must be at least 1".into());
        }
        self.adam(1e-3).validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.weights().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.test_schedule()?;
        self.meta_schedule()?;
        self.net_config(((0.0, t.extent_x), (0.0, t.extent_z)))
            .validate().map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn net_config(&self, bounds: ((f64, f64), (f64, f64))) -> NetConfig {
        let n = &self.network;
        let mut cfg = NetConfig::new(n.layers, n.width, n.rank).with_input_dim(n.input_dim);
        cfg.act_scale = n.act_scale;
        cfg.feh_width = self.feh.width;
        cfg.freq_scale = self.feh.freq_scale;
        if (3..=4).contains(&n.input_dim) {
            cfg = cfg.with_domain(bounds);
        }
        cfg
    }

    pub fn weights(&self) -> LossWeights {
        let l = &self.losses;
        LossWeights { scale: l.scale, physics: l.physics, reg: l.reg, ortho: l.ortho }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig { weights: self.weights(), reg: self.losses.reg_hook, chunk: self.network.chunk_points }
    }

    pub fn adam(&self, lr: f64) -> AdamWConfig {
        let o = &self.optimizer;
        AdamWConfig {
            lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
            clip_norm: (o.clip_norm > 0.0).then_some(o.clip_norm),
        }
    }

    pub fn meta_schedule(&self) -> Result<LrSchedule, HarnessError> {
        let m = &self.meta;
        LrSchedule::periodic(m.lr, m.decay_every, m.decay_factor, m.epochs as u64)
            .map_err(|e| HarnessError::Config(format!("meta schedule: {e}")))
    }

    pub fn test_schedule(&self) -> Result<LrSchedule, HarnessError> {
        let s = &self.test;
        let milestones = s.milestones.iter().map(|&e| (e, s.decay_factor)).collect();
        LrSchedule::new(s.lr, milestones).map_err(|e| HarnessError::Config(format!("test schedule: {e}")))
    }

    pub fn meta_config(&self, record_wall_time: bool) -> Result<MetaConfig, HarnessError> {
        let m = &self.meta;
        Ok(MetaConfig {
            tasks_per_epoch: m.tasks_per_epoch,
            inner_steps: m.inner_steps,
            lr_inner: m.lr_inner,
            lr_meta: m.lr,
            epochs: m.epochs,
            schedule: Some(self.meta_schedule()?),
            gradient_mode: m.gradient_mode,
            batch_points: m.batch_points,
            exclusion_radius: m.exclusion_radius,
            cross_frequency: m.cross_frequency,
            record_wall_time,
            optimizer: self.adam(m.lr),
        })
    }

    pub fn adapt_config(&self, feh_mode: FehMode, record_wall_time: bool) -> Result<AdaptConfig, HarnessError> {
        let s = &self.test;
        Ok(AdaptConfig {
            epochs: s.epochs,
            lr: s.lr,
            schedule: Some(self.test_schedule()?),
            feh_mode,
            rank: None,
            batch_points: s.batch_points,
            exclusion_radius: s.exclusion_radius,
            resample: s.resample,
            eval_interval: self.eval.interval,
            record_wall_time,
            poison_pruned_feh: false,
            optimizer: self.adam(s.lr),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips() {
        let mut cfg = ExperimentConfig::parse("network.width = 64\nnetwork.rank = 16\ntasks.freqs = 2,4.5\n").unwrap();
        assert!(cfg.is_explicit("network.rank"));
        assert!(!cfg.is_explicit("network.layers"));
        cfg.explicit.clear();
        let mut again = ExperimentConfig::parse(&cfg.dump()).unwrap();
        again.explicit.clear();
        assert_eq!(again, cfg);
        assert_eq!(cfg.tasks.freqs, vec![2.0, 4.5]);
    }

    #[test]
    fn order_insensitive_with_comments() {
        let a = ExperimentConfig::parse("meta.epochs = 10\n# note\n\nmeta.lr = 0.01").unwrap();
        let b = ExperimentConfig::parse("meta.lr = 0.01 # inline\nmeta.epochs = 10").unwrap();
        assert_eq!(a.meta, b.meta);
    }

    #[test]
    fn rejects_unknown_duplicate_and_invalid() {
        assert!(ExperimentConfig::parse("meta.colour = red").is_err());
        assert!(ExperimentConfig::parse("meta.lr = 1\nmeta.lr = 2").is_err());
        assert!(ExperimentConfig::parse("meta.lr = fast").is_err());
        assert!(ExperimentConfig::parse("no equals sign").is_err());
        assert!(ExperimentConfig::parse("network.rank = 400").is_err());
        assert!(ExperimentConfig::parse("test.milestones = 10,5").is_err());
        assert!(ExperimentConfig::parse("meta.gradient_mode = second").is_err());
        assert!(ExperimentConfig::parse("test.resample = yes").is_err());
    }

    #[test]
    fn defaults_follow_stated_configuration() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.meta.tasks_per_epoch, 5);
        assert_eq!(cfg.meta.lr_inner, 2e-3);
        assert_eq!(cfg.meta.lr, 1e-3);
        assert_eq!(cfg.eval.interval, 50);
        assert!((cfg.test_schedule().unwrap().lr_at(5000) - 2.5e-4).abs() < 1e-18);
        assert_eq!(cfg.meta_config(true).unwrap().gradient_mode, MetaGradientMode::FirstOrder);
    }
}
