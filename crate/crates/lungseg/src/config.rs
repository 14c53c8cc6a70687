//! Pipeline configuration: plain `key=value` lines, `#` comments.
//! Every knob has a declared default; unknown keys are rejected.

use std::path::Path;

use thiserror::Error;

use crate::augment::AugmentParams;
use crate::preprocess::BodyBoxParams;
use crate::tinynet::{NetConfig, Upsample};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {value:?} ({reason})")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("malformed line {line}: expected key=value")]
    MalformedLine { line: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    // Body-region crop.
    pub body_threshold_hu: i16,
    pub closing_radius: usize,
    pub box_pad: usize,
    pub target_resolution: usize,
    // Augmentation.
    pub aug_rot_deg: f64,
    pub aug_elastic_sigma_px: f64,
    pub aug_noise_sigma: f64,
    // Network.
    pub depth: usize,
    pub base_channels: usize,
    pub residual: bool,
    pub upsample: Upsample,
    // Training.
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            body_threshold_hu: -500,
            closing_radius: 3,
            box_pad: 5,
            target_resolution: 256,
            aug_rot_deg: 10.0,
            aug_elastic_sigma_px: 6.0,
            aug_noise_sigma: 0.02,
            depth: 3,
            base_channels: 8,
            residual: false,
            upsample: Upsample::Transposed,
            lr: 0.05,
            momentum: 0.9,
            epochs: 4,
            batch_size: 14,
        }
    }
}

impl PipelineConfig {
    pub fn body_box_params(&self) -> BodyBoxParams {
        BodyBoxParams {
            body_threshold_hu: self.body_threshold_hu,
            closing_radius: self.closing_radius,
            box_pad: self.box_pad,
        }
    }

    pub fn augment_params(&self) -> AugmentParams {
        AugmentParams {
            rot_deg: self.aug_rot_deg,
            elastic_sigma_px: self.aug_elastic_sigma_px,
            noise_sigma: self.aug_noise_sigma,
            ..AugmentParams::default()
        }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            depth: self.depth,
            base_channels: self.base_channels,
            residual: self.residual,
            upsample: self.upsample,
            ..NetConfig::default()
        }
    }

    /// Load defaults overridden by a `key=value` file.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_str(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::MalformedLine { line: i + 1 })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::BadValue {
                key: key.into(),
                value: value.into(),
                reason: e.to_string(),
            })
        }
        match key {
            "body_threshold_hu" => self.body_threshold_hu = parse(key, value)?,
            "closing_radius" => self.closing_radius = parse(key, value)?,
            "box_pad" => self.box_pad = parse(key, value)?,
            "target_resolution" => self.target_resolution = parse(key, value)?,
            "aug_rot_deg" => self.aug_rot_deg = parse(key, value)?,
            "aug_elastic_sigma_px" => self.aug_elastic_sigma_px = parse(key, value)?,
            "aug_noise_sigma" => self.aug_noise_sigma = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "base_channels" => self.base_channels = parse(key, value)?,
            "residual" => self.residual = parse(key, value)?,
            "upsample" => {
                self.upsample = match value {
                    "transposed" => Upsample::Transposed,
                    "nearest" => Upsample::Nearest,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: other.into(),
                            reason: "expected transposed or nearest".into(),
                        })
                    }
                }
            }
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let mut cfg = PipelineConfig::default();
        assert_eq!(cfg.target_resolution, 256);
        cfg.apply_str("# comment\n\ntarget_resolution = 64\nresidual=true\nupsample=nearest\n")
            .unwrap();
        assert_eq!(cfg.target_resolution, 64);
        assert!(cfg.residual);
        assert_eq!(cfg.upsample, Upsample::Nearest);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = PipelineConfig::default();
        assert!(matches!(
            cfg.apply_str("learning_rate=0.1"),
            Err(ConfigError::UnknownKey(_))
        ));
    }

    #[test]
    fn bad_value_rejected() {
        let mut cfg = PipelineConfig::default();
        assert!(matches!(
            cfg.apply_str("epochs=three"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            cfg.apply_str("upsample=bilinear"),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn malformed_line_rejected() {
        let mut cfg = PipelineConfig::default();
        assert!(matches!(
            cfg.apply_str("epochs 3"),
            Err(ConfigError::MalformedLine { line: 1 })
        ));
    }
}
