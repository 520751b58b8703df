use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datagen::{MaskKind, MaskSampler, MaskSource, StrokeParams};
use crate::error::{invalid, Error, Result};
use crate::losses::LossWeights;
use crate::networks::{DiscriminatorConfig, GeneratorConfig, UpsamplerConfig};

/// Every tunable of a training run. Parsed from a flat `key = value` file;
/// see [`TrainConfig::KEYS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub t_train: usize,
    /// Steps before the confidence term joins the generator objective.
    pub confidence_warmup: u64,
    pub resolution: usize,
    pub max_steps: u64,
    pub validation_every: u64,
    pub validation_size: usize,
    pub val_iterations: usize,
    pub patience: usize,
    pub adversarial_weight: f64,
    pub fine_l1_weight: f64,
    pub coarse_l1_weight: f64,
    pub gen_base_channels: usize,
    pub gen_depth: usize,
    pub disc_base_channels: usize,
    pub disc_stages: usize,
    /// Object-shaped holes (rectangles when `realistic_data` is off) versus
    /// strokes.
    pub object_share: f64,
    /// Object masks plus saliency subtraction; off means rectangles and
    /// strokes with no saliency handling.
    pub realistic_data: bool,
    pub stroke_count: usize,
    pub stroke_max_vertices: usize,
    pub stroke_width_min: f64,
    pub stroke_width_max: f64,
    pub stroke_angle_jitter: f64,
    pub stroke_max_segment: f64,
    pub object_scale_min: f64,
    pub object_scale_max: f64,
    pub pool_size: usize,
    pub image_dir_a: Option<PathBuf>,
    pub image_dir_b: Option<PathBuf>,
    pub saliency_dir: Option<PathBuf>,
    pub mask_dir: Option<PathBuf>,
    pub ups_base_channels: usize,
    pub ups_sim_patch: usize,
    pub ups_steps: u64,
    pub ups_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = StrokeParams::default();
        Self {
            seed: 0,
            batch_size: 8,
            lr: 1e-4,
            lambda: 0.1,
            t_train: 2,
            confidence_warmup: 0,
            resolution: 64,
            max_steps: 2000,
            validation_every: 100,
            validation_size: 32,
            val_iterations: 4,
            patience: 10,
            adversarial_weight: 1.0,
            fine_l1_weight: 1.0,
            coarse_l1_weight: 1.0,
            gen_base_channels: 16,
            gen_depth: 3,
            disc_base_channels: 16,
            disc_stages: 4,
            object_share: 0.5,
            realistic_data: true,
            stroke_count: s.n_strokes,
            stroke_max_vertices: s.max_vertices,
            stroke_width_min: s.brush_width_range.0,
            stroke_width_max: s.brush_width_range.1,
            stroke_angle_jitter: s.angle_jitter,
            stroke_max_segment: s.max_segment,
            object_scale_min: 0.5,
            object_scale_max: 1.5,
            pool_size: 100_000,
            image_dir_a: None,
            image_dir_b: None,
            saliency_dir: None,
            mask_dir: None,
            ups_base_channels: 8,
            ups_sim_patch: 2,
            ups_steps: 300,
            ups_batch_size: 4,
        }
    }
}

fn parse<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| Error::Config { line, msg: format!("{key}: cannot parse {v:?}: {e}") })
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "batch_size",
        "lr",
        "lambda",
        "t_train",
        "confidence_warmup",
        "resolution",
        "max_steps",
        "validation_every",
        "validation_size",
        "val_iterations",
        "patience",
        "adversarial_weight",
        "fine_l1_weight",
        "coarse_l1_weight",
        "gen_base_channels",
        "gen_depth",
        "disc_base_channels",
        "disc_stages",
        "object_share",
        "realistic_data",
        "stroke_count",
        "stroke_max_vertices",
        "stroke_width_min",
        "stroke_width_max",
        "stroke_angle_jitter",
        "stroke_max_segment",
        "object_scale_min",
        "object_scale_max",
        "pool_size",
        "image_dir_a",
        "image_dir_b",
        "saliency_dir",
        "mask_dir",
        "ups_base_channels",
        "ups_sim_patch",
        "ups_steps",
        "ups_batch_size",
    ];

    /// Set one key; `line` is used for error reporting.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let v = value;
        match key {
            "seed" => self.seed = parse(line, key, v)?,
            "batch_size" => self.batch_size = parse(line, key, v)?,
            "lr" => self.lr = parse(line, key, v)?,
            "lambda" => self.lambda = parse(line, key, v)?,
            "t_train" => self.t_train = parse(line, key, v)?,
            "confidence_warmup" => self.confidence_warmup = parse(line, key, v)?,
            "resolution" => self.resolution = parse(line, key, v)?,
            "max_steps" => self.max_steps = parse(line, key, v)?,
            "validation_every" => self.validation_every = parse(line, key, v)?,
            "validation_size" => self.validation_size = parse(line, key, v)?,
            "val_iterations" => self.val_iterations = parse(line, key, v)?,
            "patience" => self.patience = parse(line, key, v)?,
            "adversarial_weight" => self.adversarial_weight = parse(line, key, v)?,
            "fine_l1_weight" => self.fine_l1_weight = parse(line, key, v)?,
            "coarse_l1_weight" => self.coarse_l1_weight = parse(line, key, v)?,
            "gen_base_channels" => self.gen_base_channels = parse(line, key, v)?,
            "gen_depth" => self.gen_depth = parse(line, key, v)?,
            "disc_base_channels" => self.disc_base_channels = parse(line, key, v)?,
            "disc_stages" => self.disc_stages = parse(line, key, v)?,
            "object_share" => self.object_share = parse(line, key, v)?,
            "realistic_data" => self.realistic_data = parse(line, key, v)?,
            "stroke_count" => self.stroke_count = parse(line, key, v)?,
            "stroke_max_vertices" => self.stroke_max_vertices = parse(line, key, v)?,
            "stroke_width_min" => self.stroke_width_min = parse(line, key, v)?,
            "stroke_width_max" => self.stroke_width_max = parse(line, key, v)?,
            "stroke_angle_jitter" => self.stroke_angle_jitter = parse(line, key, v)?,
            "stroke_max_segment" => self.stroke_max_segment = parse(line, key, v)?,
            "object_scale_min" => self.object_scale_min = parse(line, key, v)?,
            "object_scale_max" => self.object_scale_max = parse(line, key, v)?,
            "pool_size" => self.pool_size = parse(line, key, v)?,
            "image_dir_a" => self.image_dir_a = path(v),
            "image_dir_b" => self.image_dir_b = path(v),
            "saliency_dir" => self.saliency_dir = path(v),
            "mask_dir" => self.mask_dir = path(v),
            "ups_base_channels" => self.ups_base_channels = parse(line, key, v)?,
            "ups_sim_patch" => self.ups_sim_patch = parse(line, key, v)?,
            "ups_steps" => self.ups_steps = parse(line, key, v)?,
            "ups_batch_size" => self.ups_batch_size = parse(line, key, v)?,
            _ => return Err(Error::Config { line, msg: format!("unknown key {key:?}") }),
        }
        Ok(())
    }

    /// Parse `key = value` lines over the defaults. `#` starts a comment;
    /// blank lines are ignored; a repeated key is an error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| Error::Config { line, msg: format!("expected key = value, got {content:?}") })?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_owned()) {
                return Err(Error::Config { line, msg: format!("duplicate key {k:?}") });
            }
            cfg.set(k, v, line)?;
        }
        cfg.validate().map_err(|e| Error::Config { line: 0, msg: e.to_string() })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical `key = value` rendering; parses back to an equal config.
    pub fn to_kv(&self) -> String {
        let json = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for key in Self::KEYS {
            let v = &json[*key];
            let s = match v {
                serde_json::Value::Null => "none".to_owned(),
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            let _ = writeln!(out, "{key} = {s}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_size % 2 != 0 {
            return Err(invalid(format!("batch_size must be even and positive, got {}", self.batch_size)));
        }
        if self.ups_batch_size == 0 || self.ups_batch_size % 2 != 0 {
            return Err(invalid("ups_batch_size must be even and positive"));
        }
        for (name, w) in [
            ("adversarial_weight", self.adversarial_weight),
            ("fine_l1_weight", self.fine_l1_weight),
            ("coarse_l1_weight", self.coarse_l1_weight),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(invalid(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(invalid(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.lr > 0.0) {
            return Err(invalid("lr must be > 0"));
        }
        if self.t_train == 0 || self.val_iterations == 0 {
            return Err(invalid("t_train and val_iterations must be >= 1"));
        }
        if self.validation_every == 0 || self.validation_size == 0 {
            return Err(invalid("validation_every and validation_size must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.object_share) {
            return Err(invalid("object_share must lie in [0, 1]"));
        }
        if self.pool_size == 0 {
            return Err(invalid("pool_size must be >= 1"));
        }
        if !(self.object_scale_min > 0.0 && self.object_scale_min <= self.object_scale_max) {
            return Err(invalid("object scale range must satisfy 0 < min <= max"));
        }
        if !(self.stroke_width_min > 0.0 && self.stroke_width_min <= self.stroke_width_max) {
            return Err(invalid("stroke width range must satisfy 0 < min <= max"));
        }
        self.generator().validate()?;
        if self.resolution < 16 {
            return Err(invalid("resolution must be at least 16"));
        }
        self.upsampler().validate()?;
        Ok(())
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            base_channels: self.gen_base_channels,
            input_resolution: self.resolution,
            depth: self.gen_depth,
            seed: crate::datagen::mix_seed(self.seed, 0x6e6e),
        }
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            base_channels: self.disc_base_channels,
            stages: self.disc_stages,
            seed: crate::datagen::mix_seed(self.seed, 0xd15c),
        }
    }

    pub fn upsampler(&self) -> UpsamplerConfig {
        UpsamplerConfig {
            base_channels: self.ups_base_channels,
            lr_resolution: self.resolution,
            sim_patch: self.ups_sim_patch,
            seed: crate::datagen::mix_seed(self.seed, 0x0b5a),
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            adversarial: self.adversarial_weight,
            fine_l1: self.fine_l1_weight,
            coarse_l1: self.coarse_l1_weight,
        }
    }

    pub fn stroke_params(&self) -> StrokeParams {
        StrokeParams {
            n_strokes: self.stroke_count,
            max_vertices: self.stroke_max_vertices,
            brush_width_range: (self.stroke_width_min, self.stroke_width_max),
            angle_jitter: self.stroke_angle_jitter,
            max_segment: self.stroke_max_segment,
        }
    }

    /// Training mask sampler per `realistic_data` and `object_share`.
    pub fn sampler(&self) -> Result<MaskSampler> {
        let kind = if self.realistic_data { MaskKind::Object } else { MaskKind::Rectangle };
        self.sampler_with(kind)
    }

    /// Evaluation masks are always the realistic mix.
    pub fn eval_sampler(&self) -> Result<MaskSampler> {
        self.sampler_with(MaskKind::Object)
    }

    fn sampler_with(&self, kind: MaskKind) -> Result<MaskSampler> {
        let sources = vec![
            MaskSource { kind, probability: self.object_share },
            MaskSource { kind: MaskKind::RandomStroke, probability: 1.0 - self.object_share },
        ];
        let s = MaskSampler::new(sources, self.stroke_params(), (self.object_scale_min, self.object_scale_max))?;
        match (&self.mask_dir, kind) {
            (Some(dir), MaskKind::Object) => s.with_library(MaskSampler::load_library(dir)?),
            _ => Ok(s),
        }
    }
}
