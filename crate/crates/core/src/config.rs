//! Run configuration: flat `key = value` text, layered as
//! defaults < preset < file < environment (`VIDLOC_<KEY>`) < explicit overrides.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::integrate::IntegratorKind;
use crate::locator::TemporalKind;
use crate::model::ModelConfig;
use crate::sac::SacConfig;
use crate::spatial::SpatialKind;

pub const ENV_PREFIX: &str = "VIDLOC_";

/// How the frame count enters the per-step penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    /// Frames observed by all locators so far.
    Cumulative,
    /// Frames observed during the current step only.
    PerStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub warmup_epochs: usize,
    pub policy_epochs: usize,
    pub finetune_cycles: usize,
    /// Epochs per block when stage three alternates.
    pub finetune_period: usize,
    pub lr_warmup: f64,
    pub lr_finetune: f64,
    pub video_batch: usize,
    pub finetune_policy_first: bool,
    pub updates_per_batch: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            warmup_epochs: 15,
            policy_epochs: 30,
            finetune_cycles: 2,
            finetune_period: 5,
            lr_warmup: 1e-5,
            lr_finetune: 1e-5,
            video_batch: 8,
            finetune_policy_first: false,
            updates_per_batch: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Directory with `train/` and `test/` VIMF files; synthetic data when unset.
    pub data_dir: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    pub model: ModelConfig,
    pub sac: SacConfig,
    pub stages: StageConfig,
    pub lambda: f64,
    pub penalty: Penalty,
    pub frame_basis: f64,
    pub baseline_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: None,
            synthetic: SyntheticConfig::default(),
            model: ModelConfig::default(),
            sac: SacConfig::default(),
            stages: StageConfig::default(),
            lambda: 0.1,
            penalty: Penalty::Cumulative,
            frame_basis: 120.0,
            baseline_fraction: 0.25,
        }
    }
}

/// Named starting points. `default` (alias `full`) is the full-size setup; `desk` shrinks the
/// networks and raises learning rates so a full run fits a CPU budget.
pub fn preset(name: &str) -> Result<RunConfig> {
    match name {
        "default" | "full" => Ok(RunConfig::default()),
        "desk" => Ok(RunConfig::desk()),
        "tiny" => Ok(RunConfig::tiny()),
        other => Err(Error::Config(format!("unknown preset {other:?}"))),
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        let mut c = Self::default();
        let m = &mut c.model;
        m.lstm_hidden = 32;
        m.transformer_layers = 2;
        m.transformer_dim = 32;
        m.transformer_ff = 64;
        m.forward_width = 64;
        m.policy_width = 64;
        m.critic_width = 64;
        c.stages.warmup_epochs = 10;
        c.stages.policy_epochs = 6;
        c.stages.finetune_cycles = 1;
        c.stages.finetune_period = 3;
        c.stages.lr_warmup = 2e-3;
        c.stages.lr_finetune = 5e-4;
        c.sac.lr_policy = 1e-3;
        c.sac.lr_critic = 1e-3;
        c.sac.lr_alpha = 3e-3;
        c.model.alpha_init = 0.1;
        c
    }

    /// Seconds-scale configuration for smoke tests and examples.
    pub fn tiny() -> Self {
        let mut c = Self::desk();
        c.synthetic.n_train = 60;
        c.synthetic.n_test = 30;
        c.model.lstm_hidden = 16;
        c.model.transformer_dim = 16;
        c.model.transformer_ff = 32;
        c.model.transformer_layers = 1;
        c.model.policy_width = 16;
        c.model.critic_width = 16;
        c.stages.warmup_epochs = 2;
        c.stages.policy_epochs = 2;
        c.stages.finetune_cycles = 1;
        c.stages.finetune_period = 1;
        c.sac.batch_size = 16;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.model.validate()?;
        self.synthetic.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda {} must be >= 0", self.lambda));
        }
        let s = &self.sac;
        if !(0.0..=1.0).contains(&s.gamma) || !(0.0..=1.0).contains(&s.tau) {
            return bad("gamma and tau must lie in [0, 1]".into());
        }
        if s.batch_size == 0 || s.capacity < s.batch_size {
            return bad(format!("sac batch {} vs capacity {}", s.batch_size, s.capacity));
        }
        for (k, v) in [
            ("lr_policy", s.lr_policy),
            ("lr_critic", s.lr_critic),
            ("lr_alpha", s.lr_alpha),
            ("lr_warmup", self.stages.lr_warmup),
            ("lr_finetune", self.stages.lr_finetune),
            ("frame_basis", self.frame_basis),
        ] {
            if !(v > 0.0) {
                return bad(format!("{k} must be positive, got {v}"));
            }
        }
        if self.stages.video_batch == 0 || self.stages.finetune_period == 0 || self.stages.updates_per_batch == 0 {
            return bad("video_batch, finetune_period and updates_per_batch must be >= 1".into());
        }
        if !(self.baseline_fraction > 0.0 && self.baseline_fraction <= 1.0) {
            return bad(format!("baseline_fraction {}", self.baseline_fraction));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let d = &mut self.synthetic;
        let m = &mut self.model;
        let s = &mut self.sac;
        let st = &mut self.stages;
        match key.trim() {
            "seed" => self.seed = uint(key, v, 0)? as u64,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data_seed" => d.seed = uint(key, v, 0)? as u64,
            "frames" => d.frames = uint(key, v, 2)?,
            "dim" => d.dim = uint(key, v, 1)?,
            "classes" => d.classes = uint(key, v, 2)?,
            "units" => d.units = uint(key, v, 1)?,
            "salient_per_unit" => d.salient_per_unit = uint(key, v, 1)?,
            "noise_std" => d.noise_std = real(key, v, 0.0)?,
            "n_train" => d.n_train = uint(key, v, 1)?,
            "n_test" => d.n_test = uint(key, v, 1)?,
            "motif_vocab" => d.motif_vocab = uint(key, v, 1)?,
            "salient_strength" => d.salient_strength = real(key, v, 0.0)?,
            "context_strength" => d.context_strength = real(key, v, 0.0)?,
            "scene_strength" => d.scene_strength = real(key, v, 0.0)?,
            "distractor_frac" => d.distractor_frac = fraction(key, v)?,
            "span_jitter" => d.span_jitter = fraction(key, v)?,
            "locators" => m.locators = uint(key, v, 1)?,
            "max_moves" => m.max_moves = uint(key, v, 1)?,
            "delta" => m.delta = uint(key, v, 1)?,
            "spatial" => {
                m.spatial = match v {
                    "passthrough" => SpatialKind::Passthrough,
                    "mlp" => SpatialKind::Mlp,
                    _ => return mismatch(key, v, "passthrough|mlp"),
                }
            }
            "spatial_hidden" => m.spatial_hidden = uint(key, v, 1)?,
            "spatial_out" => m.spatial_out = uint(key, v, 1)?,
            "spatial_cost" => m.spatial_cost = real(key, v, 0.0)?,
            "temporal" => m.temporal = parse_temporal(v).ok_or_else(|| type_err(key, v, "lstm|mean|max|sum"))?,
            "lstm_hidden" => m.lstm_hidden = uint(key, v, 1)?,
            "integrator" => {
                m.integrator = parse_integrator(v).ok_or_else(|| type_err(key, v, "mean|max|forward|transformer"))?
            }
            "forward_width" => m.forward_width = uint(key, v, 1)?,
            "transformer_layers" => m.transformer_layers = uint(key, v, 0)?,
            "transformer_heads" => m.transformer_heads = uint(key, v, 1)?,
            "transformer_dim" => m.transformer_dim = uint(key, v, 1)?,
            "transformer_ff" => m.transformer_ff = uint(key, v, 1)?,
            "position_embeddings" => m.position_embeddings = boolean(key, v)?,
            "policy_layers" => m.policy_layers = uint(key, v, 1)?,
            "policy_width" => m.policy_width = uint(key, v, 1)?,
            "critic_layers" => m.critic_layers = uint(key, v, 1)?,
            "critic_width" => m.critic_width = uint(key, v, 1)?,
            "initial_fusion" => m.initial_fusion = boolean(key, v)?,
            "fence" => m.fence = boolean(key, v)?,
            "alpha_init" => {
                let a = real(key, v, 0.0)?;
                if a == 0.0 {
                    return Err(Error::Config("alpha_init must be > 0".into()));
                }
                m.alpha_init = a;
            }
            "lambda" => self.lambda = real(key, v, 0.0)?,
            "penalty" => {
                self.penalty = match v {
                    "cumulative" => Penalty::Cumulative,
                    "per_step" => Penalty::PerStep,
                    _ => return mismatch(key, v, "cumulative|per_step"),
                }
            }
            "gamma" => s.gamma = fraction(key, v)?,
            "tau" => s.tau = fraction(key, v)?,
            "target_entropy" => s.target_entropy = real(key, v, 0.0)?,
            "replay_capacity" => s.capacity = uint(key, v, 1)?,
            "sac_batch" => s.batch_size = uint(key, v, 1)?,
            "lr_policy" => s.lr_policy = real(key, v, 0.0)?,
            "lr_critic" => s.lr_critic = real(key, v, 0.0)?,
            "lr_alpha" => s.lr_alpha = real(key, v, 0.0)?,
            "warmup_epochs" => st.warmup_epochs = uint(key, v, 0)?,
            "policy_epochs" => st.policy_epochs = uint(key, v, 0)?,
            "finetune_cycles" => st.finetune_cycles = uint(key, v, 0)?,
            "finetune_period" => st.finetune_period = uint(key, v, 1)?,
            "lr_warmup" => st.lr_warmup = real(key, v, 0.0)?,
            "lr_finetune" => st.lr_finetune = real(key, v, 0.0)?,
            "video_batch" => st.video_batch = uint(key, v, 1)?,
            "finetune_order" => {
                st.finetune_policy_first = match v {
                    "backbone_first" => false,
                    "policy_first" => true,
                    _ => return mismatch(key, v, "backbone_first|policy_first"),
                }
            }
            "updates_per_batch" => st.updates_per_batch = uint(key, v, 1)?,
            "frame_basis" => self.frame_basis = real(key, v, 0.0)?,
            "baseline_fraction" => self.baseline_fraction = fraction(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let d = &self.synthetic;
        let m = &self.model;
        let s = &self.sac;
        let st = &self.stages;
        let data_dir = self
            .data_dir
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        vec![
            ("seed", self.seed.to_string()),
            ("data_dir", data_dir),
            ("data_seed", d.seed.to_string()),
            ("frames", d.frames.to_string()),
            ("dim", d.dim.to_string()),
            ("classes", d.classes.to_string()),
            ("units", d.units.to_string()),
            ("salient_per_unit", d.salient_per_unit.to_string()),
            ("noise_std", d.noise_std.to_string()),
            ("n_train", d.n_train.to_string()),
            ("n_test", d.n_test.to_string()),
            ("motif_vocab", d.motif_vocab.to_string()),
            ("salient_strength", d.salient_strength.to_string()),
            ("context_strength", d.context_strength.to_string()),
            ("scene_strength", d.scene_strength.to_string()),
            ("distractor_frac", d.distractor_frac.to_string()),
            ("span_jitter", d.span_jitter.to_string()),
            ("locators", m.locators.to_string()),
            ("max_moves", m.max_moves.to_string()),
            ("delta", m.delta.to_string()),
            (
                "spatial",
                match m.spatial {
                    SpatialKind::Passthrough => "passthrough",
                    SpatialKind::Mlp => "mlp",
                }
                .into(),
            ),
            ("spatial_hidden", m.spatial_hidden.to_string()),
            ("spatial_out", m.spatial_out.to_string()),
            ("spatial_cost", m.spatial_cost.to_string()),
            ("temporal", temporal_name(m.temporal).into()),
            ("lstm_hidden", m.lstm_hidden.to_string()),
            ("integrator", integrator_name(m.integrator).into()),
            ("forward_width", m.forward_width.to_string()),
            ("transformer_layers", m.transformer_layers.to_string()),
            ("transformer_heads", m.transformer_heads.to_string()),
            ("transformer_dim", m.transformer_dim.to_string()),
            ("transformer_ff", m.transformer_ff.to_string()),
            ("position_embeddings", m.position_embeddings.to_string()),
            ("policy_layers", m.policy_layers.to_string()),
            ("policy_width", m.policy_width.to_string()),
            ("critic_layers", m.critic_layers.to_string()),
            ("critic_width", m.critic_width.to_string()),
            ("initial_fusion", m.initial_fusion.to_string()),
            ("fence", m.fence.to_string()),
            ("alpha_init", m.alpha_init.to_string()),
            ("lambda", self.lambda.to_string()),
            (
                "penalty",
                match self.penalty {
                    Penalty::Cumulative => "cumulative",
                    Penalty::PerStep => "per_step",
                }
                .into(),
            ),
            ("gamma", s.gamma.to_string()),
            ("tau", s.tau.to_string()),
            ("target_entropy", s.target_entropy.to_string()),
            ("replay_capacity", s.capacity.to_string()),
            ("sac_batch", s.batch_size.to_string()),
            ("lr_policy", s.lr_policy.to_string()),
            ("lr_critic", s.lr_critic.to_string()),
            ("lr_alpha", s.lr_alpha.to_string()),
            ("warmup_epochs", st.warmup_epochs.to_string()),
            ("policy_epochs", st.policy_epochs.to_string()),
            ("finetune_cycles", st.finetune_cycles.to_string()),
            ("finetune_period", st.finetune_period.to_string()),
            ("lr_warmup", st.lr_warmup.to_string()),
            ("lr_finetune", st.lr_finetune.to_string()),
            ("video_batch", st.video_batch.to_string()),
            (
                "finetune_order",
                if st.finetune_policy_first { "policy_first" } else { "backbone_first" }.into(),
            ),
            ("updates_per_batch", st.updates_per_batch.to_string()),
            ("frame_basis", self.frame_basis.to_string()),
            ("baseline_fraction", self.baseline_fraction.to_string()),
        ]
    }

    /// Snapshot that [`parse_config`] reads back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

pub fn temporal_name(k: TemporalKind) -> &'static str {
    match k {
        TemporalKind::Lstm => "lstm",
        TemporalKind::MeanPool => "mean",
        TemporalKind::MaxPool => "max",
        TemporalKind::SumPool => "sum",
    }
}

pub fn parse_temporal(v: &str) -> Option<TemporalKind> {
    Some(match v {
        "lstm" => TemporalKind::Lstm,
        "mean" => TemporalKind::MeanPool,
        "max" => TemporalKind::MaxPool,
        "sum" => TemporalKind::SumPool,
        _ => return None,
    })
}

pub fn integrator_name(k: IntegratorKind) -> &'static str {
    match k {
        IntegratorKind::MeanPool => "mean",
        IntegratorKind::MaxPool => "max",
        IntegratorKind::Forward => "forward",
        IntegratorKind::Transformer => "transformer",
    }
}

pub fn parse_integrator(v: &str) -> Option<IntegratorKind> {
    Some(match v {
        "mean" => IntegratorKind::MeanPool,
        "max" => IntegratorKind::MaxPool,
        "forward" => IntegratorKind::Forward,
        "transformer" => IntegratorKind::Transformer,
        _ => return None,
    })
}

fn type_err(key: &str, v: &str, want: &str) -> Error {
    Error::Config(format!("{key}: expected {want}, got {v:?}"))
}

fn mismatch<T>(key: &str, v: &str, want: &str) -> Result<T> {
    Err(type_err(key, v, want))
}

fn uint(key: &str, v: &str, min: i64) -> Result<usize> {
    let n: i64 = v.parse().map_err(|_| type_err(key, v, "an integer"))?;
    if n < min {
        return Err(Error::Config(format!("{key} = {n} is out of range (minimum {min})")));
    }
    Ok(n as usize)
}

fn real(key: &str, v: &str, min: f64) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| type_err(key, v, "a number"))?;
    if !x.is_finite() || x < min {
        return Err(Error::Config(format!("{key} = {x} is out of range (minimum {min})")));
    }
    Ok(x)
}

fn fraction(key: &str, v: &str) -> Result<f64> {
    let x = real(key, v, 0.0)?;
    if x > 1.0 {
        return Err(Error::Config(format!("{key} = {x} is out of range [0, 1]")));
    }
    Ok(x)
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => mismatch(key, v, "a boolean"),
    }
}

/// Splits config text into `(key, value)` pairs, skipping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Layers file text, environment and overrides over a preset.
/// `preset` may come from any layer; the last one wins.
pub fn parse_config(
    file_text: Option<&str>,
    env: &[(String, String)],
    overrides: &[(String, String)],
) -> Result<RunConfig> {
    let file = file_text.map(parse_pairs).transpose()?.unwrap_or_default();
    let env: Vec<(String, String)> = env
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_ascii_lowercase(), v.clone())))
        .collect();
    let layers = [file, env, overrides.to_vec()];
    let preset_name = layers
        .iter()
        .flatten()
        .filter(|(k, _)| k == "preset")
        .last()
        .map(|(_, v)| v.as_str())
        .unwrap_or("default");
    let mut cfg = preset(preset_name)?;
    for (k, v) in layers.iter().flatten().filter(|(k, _)| k != "preset") {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
