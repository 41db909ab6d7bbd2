//! Run configuration: defaults, `key=value` config files, and the
//! canonical echoed form written to run logs.
//!
//! A config file is a sequence of `key=value` lines; blank lines and lines
//! starting with `#` are ignored. Every key has a default, unknown keys are
//! rejected, and later assignments win. [`RunConfig::echo`] renders the
//! effective configuration in a fixed key order so two runs can be compared
//! line by line.

use std::path::Path;

use crate::encoder::{layers_from_string, layers_to_string, EncoderConfig, EncoderLayer};
use crate::error::{Error, Result};
use crate::gabor::{GaborConfig, GaborPart};
use crate::screening::CosineMode;
use crate::synth::{ShapeFamily, SynthConfig};
use crate::trainer::TrainConfig;

/// Merged view of defaults, config file, and flag overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub gabor: GaborConfig,
    pub encoder_layers: Vec<EncoderLayer>,
    /// Initialization seed for encoders built without a checkpoint;
    /// training replaces it with `train.seed` so one knob fixes a run.
    pub encoder_seed: u64,
    /// Attention window side length P.
    pub patch: usize,
    /// Propagation binarization threshold.
    pub threshold: f32,
    pub cosine: CosineMode,
    pub epochs: usize,
    pub batch: usize,
    pub lr0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub train_seed: u64,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            gabor: GaborConfig::default(),
            encoder_layers: layers_from_string("16:1,16:1,16:1").unwrap(),
            encoder_seed: 0,
            patch: train.window,
            threshold: 0.5,
            cosine: CosineMode::Flat,
            epochs: train.epochs,
            batch: train.batch_size,
            lr0: train.lr0,
            lambda1: train.lambda1,
            lambda2: train.lambda2,
            train_seed: train.seed,
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses config-file text on top of the defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            Error::Validation(msg) => {
                Error::validation(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }

    /// Applies `key=value` lines from `text` onto `self`.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::validation(format!("line {}: expected key=value, got `{line}`", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Assigns a single key. Used for both config files and flag overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::validation(format!("bad value `{value}` for {key}")))
        }
        match key {
            "gabor.scales" => self.gabor.scales = num(key, value)?,
            "gabor.orientations" => self.gabor.orientations = num(key, value)?,
            "gabor.kernel" => self.gabor.kernel = num(key, value)?,
            "gabor.wavelength" => self.gabor.wavelength = num(key, value)?,
            "gabor.part" => self.gabor.part = GaborPart::parse(value)?,
            "encoder.layers" => self.encoder_layers = layers_from_string(value)?,
            "encoder.seed" => self.encoder_seed = num(key, value)?,
            "recon.patch" => self.patch = num(key, value)?,
            "prop.threshold" => self.threshold = num(key, value)?,
            "screen.cosine" => self.cosine = CosineMode::parse(value)?,
            "train.epochs" => self.epochs = num(key, value)?,
            "train.batch" => self.batch = num(key, value)?,
            "train.lr0" => self.lr0 = num(key, value)?,
            "train.lambda1" => self.lambda1 = num(key, value)?,
            "train.lambda2" => self.lambda2 = num(key, value)?,
            "train.seed" => self.train_seed = num(key, value)?,
            "synth.depth" => self.synth.depth = num(key, value)?,
            "synth.height" => self.synth.height = num(key, value)?,
            "synth.width" => self.synth.width = num(key, value)?,
            "synth.shape" => self.synth.shape = ShapeFamily::parse(value)?,
            "synth.drift_y" => self.synth.drift.0 = num(key, value)?,
            "synth.drift_x" => self.synth.drift.1 = num(key, value)?,
            "synth.growth" => self.synth.growth = num(key, value)?,
            "synth.noise" => self.synth.noise_amplitude = num(key, value)?,
            "synth.correlation" => self.synth.correlation = num(key, value)?,
            "synth.seed" => self.synth.seed = num(key, value)?,
            other => {
                return Err(Error::validation(format!("unknown config key `{other}`")))
            }
        }
        Ok(())
    }

    /// The effective configuration as config-file text, fixed key order.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        put("gabor.scales", self.gabor.scales.to_string());
        put("gabor.orientations", self.gabor.orientations.to_string());
        put("gabor.kernel", self.gabor.kernel.to_string());
        put("gabor.wavelength", self.gabor.wavelength.to_string());
        put("gabor.part", self.gabor.part.name().to_string());
        put("encoder.layers", layers_to_string(&self.encoder_layers));
        put("encoder.seed", self.encoder_seed.to_string());
        put("recon.patch", self.patch.to_string());
        put("prop.threshold", self.threshold.to_string());
        put("screen.cosine", self.cosine.name().to_string());
        put("train.epochs", self.epochs.to_string());
        put("train.batch", self.batch.to_string());
        put("train.lr0", self.lr0.to_string());
        put("train.lambda1", self.lambda1.to_string());
        put("train.lambda2", self.lambda2.to_string());
        put("train.seed", self.train_seed.to_string());
        put("synth.depth", self.synth.depth.to_string());
        put("synth.height", self.synth.height.to_string());
        put("synth.width", self.synth.width.to_string());
        put("synth.shape", self.synth.shape.name().to_string());
        put("synth.drift_y", self.synth.drift.0.to_string());
        put("synth.drift_x", self.synth.drift.1.to_string());
        put("synth.growth", self.synth.growth.to_string());
        put("synth.noise", self.synth.noise_amplitude.to_string());
        put("synth.correlation", self.synth.correlation.to_string());
        put("synth.seed", self.synth.seed.to_string());
        out
    }

    /// Encoder config for the bank this run would build; `in_channels`
    /// comes from the bank because it depends on the Gabor keys.
    pub fn encoder_config(&self, in_channels: usize) -> EncoderConfig {
        EncoderConfig {
            layers: self.encoder_layers.clone(),
            in_channels,
            seed: self.encoder_seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            lr0: self.lr0,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            window: self.patch,
            seed: self.train_seed,
            cosine: self.cosine,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.synth.validate()?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::validation(format!(
                "prop.threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        if self.encoder_layers.is_empty() {
            return Err(Error::validation("encoder.layers must name >= 1 layer"));
        }
        Ok(())
    }
}
