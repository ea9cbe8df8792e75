use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gan::GanConfig;
use crate::optim::AdamConfig;

/// Which label set conditions training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttributeSource {
    Original,
    /// Labels from a cleaned copy of the dataset (`denoised_root`).
    Denoised,
}

/// What the condition tokens describe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditionMode {
    /// Every active attribute.
    Attributes,
    /// Only the coarse category attributes (names starting with `shape_`).
    Coarse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub lambda: f64,
    pub seed: u64,
    pub image_size: usize,
    pub checkpoint_interval: u64,
    pub sample_interval: u64,
    pub dataset_root: PathBuf,
    pub attribute_source: AttributeSource,
    pub denoised_root: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub pretrain_iterations: u64,
    pub condition: ConditionMode,
    pub use_mask: bool,
    pub use_part: bool,
    pub non_saturating: bool,
    /// Also score generated images against their own condition in the
    /// conditional head, and let the generator fool it.
    pub condition_fakes: bool,
    /// Probability that a sample's tokens are replaced by a single random
    /// token or, equally often, a random non-empty subset.
    pub attribute_dropout: f64,
    /// Decay of the running average of generator-side weights used for
    /// sampling; warmed up as `min(d, (1 + t) / (10 + t))`. 0 keeps the
    /// live weights.
    pub average_decay: f64,
    pub z_dim: usize,
    pub cond_dim: usize,
    pub gen_channels: [usize; 3],
    pub disc_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            batch_size: 8,
            iterations: 300,
            lambda: 5.0,
            seed: 0,
            image_size: 64,
            checkpoint_interval: 100,
            sample_interval: 100,
            dataset_root: PathBuf::from("data"),
            attribute_source: AttributeSource::Original,
            denoised_root: None,
            output_dir: PathBuf::from("runs/default"),
            pretrain_iterations: 1000,
            condition: ConditionMode::Attributes,
            use_mask: true,
            use_part: true,
            non_saturating: true,
            condition_fakes: true,
            attribute_dropout: 0.5,
            average_decay: 0.999,
            z_dim: 100,
            cond_dim: 16,
            gen_channels: [32, 16, 8],
            disc_width: 32,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, ..AdamConfig::default() }
    }

    pub fn gan(&self) -> GanConfig {
        GanConfig {
            image_size: self.image_size,
            z_dim: self.z_dim,
            cond_dim: self.cond_dim,
            gen_channels: self.gen_channels,
            disc_width: self.disc_width,
            use_mask: self.use_mask,
            ..GanConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        for (k, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{k} must lie in [0, 1), got {b}")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2 for the contrastive matching loss, got {}",
                self.batch_size
            )));
        }
        if !(0.0..1.0).contains(&self.average_decay) {
            return Err(Error::Config("average_decay must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.attribute_dropout) {
            return Err(Error::Config("attribute_dropout must lie in [0, 1]".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if self.attribute_source == AttributeSource::Denoised && self.denoised_root.is_none() {
            return Err(Error::Config("attribute_source=denoised needs denoised_root".into()));
        }
        self.gan().validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "lr" => c.lr = parse(k, v)?,
                "beta1" => c.beta1 = parse(k, v)?,
                "beta2" => c.beta2 = parse(k, v)?,
                "batch_size" => c.batch_size = parse(k, v)?,
                "iterations" => c.iterations = parse(k, v)?,
                "lambda" => c.lambda = parse(k, v)?,
                "seed" => c.seed = parse(k, v)?,
                "image_size" => c.image_size = parse(k, v)?,
                "checkpoint_interval" => c.checkpoint_interval = parse(k, v)?,
                "sample_interval" => c.sample_interval = parse(k, v)?,
                "dataset_root" => c.dataset_root = PathBuf::from(v),
                "attribute_source" => {
                    c.attribute_source = match v {
                        "original" => AttributeSource::Original,
                        "denoised" => AttributeSource::Denoised,
                        _ => return Err(Error::Config(format!("attribute_source: unknown {v:?}"))),
                    }
                }
                "denoised_root" => c.denoised_root = Some(PathBuf::from(v)),
                "output_dir" => c.output_dir = PathBuf::from(v),
                "pretrain_iterations" => c.pretrain_iterations = parse(k, v)?,
                "condition" => {
                    c.condition = match v {
                        "attributes" => ConditionMode::Attributes,
                        "coarse" => ConditionMode::Coarse,
                        _ => return Err(Error::Config(format!("condition: unknown {v:?}"))),
                    }
                }
                "use_mask" => c.use_mask = parse_bool(k, v)?,
                "use_part" => c.use_part = parse_bool(k, v)?,
                "non_saturating" => c.non_saturating = parse_bool(k, v)?,
                "condition_fakes" => c.condition_fakes = parse_bool(k, v)?,
                "attribute_dropout" => c.attribute_dropout = parse(k, v)?,
                "average_decay" => c.average_decay = parse(k, v)?,
                "z_dim" => c.z_dim = parse(k, v)?,
                "cond_dim" => c.cond_dim = parse(k, v)?,
                "gen_channels" => {
                    let parts: Vec<usize> = v.split(',').map(|p| parse(k, p.trim())).collect::<Result<_>>()?;
                    c.gen_channels = parts
                        .try_into()
                        .map_err(|_| Error::Config("gen_channels needs three values".into()))?;
                }
                "disc_width" => c.disc_width = parse(k, v)?,
                _ => return Err(Error::Config(format!("line {}: unknown key {k:?}", n + 1))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Keys that shape the model, the data or the optimisation trajectory.
    fn model_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "beta1={}", self.beta1);
        let _ = writeln!(s, "beta2={}", self.beta2);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "lambda={}", self.lambda);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "image_size={}", self.image_size);
        let source = match self.attribute_source {
            AttributeSource::Original => "original",
            AttributeSource::Denoised => "denoised",
        };
        let _ = writeln!(s, "attribute_source={source}");
        let _ = writeln!(s, "pretrain_iterations={}", self.pretrain_iterations);
        let condition = match self.condition {
            ConditionMode::Attributes => "attributes",
            ConditionMode::Coarse => "coarse",
        };
        let _ = writeln!(s, "condition={condition}");
        let _ = writeln!(s, "use_mask={}", self.use_mask);
        let _ = writeln!(s, "use_part={}", self.use_part);
        let _ = writeln!(s, "non_saturating={}", self.non_saturating);
        let _ = writeln!(s, "condition_fakes={}", self.condition_fakes);
        let _ = writeln!(s, "attribute_dropout={}", self.attribute_dropout);
        let _ = writeln!(s, "average_decay={}", self.average_decay);
        let _ = writeln!(s, "z_dim={}", self.z_dim);
        let _ = writeln!(s, "cond_dim={}", self.cond_dim);
        let g = self.gen_channels;
        let _ = writeln!(s, "gen_channels={},{},{}", g[0], g[1], g[2]);
        let _ = writeln!(s, "disc_width={}", self.disc_width);
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = self.model_text();
        let _ = writeln!(s, "iterations={}", self.iterations);
        let _ = writeln!(s, "checkpoint_interval={}", self.checkpoint_interval);
        let _ = writeln!(s, "sample_interval={}", self.sample_interval);
        let _ = writeln!(s, "dataset_root={}", self.dataset_root.display());
        if let Some(d) = &self.denoised_root {
            let _ = writeln!(s, "denoised_root={}", d.display());
        }
        let _ = writeln!(s, "output_dir={}", self.output_dir.display());
        s
    }

    /// SHA-256 of the model-relevant keys. Paths, run length and logging
    /// cadence are excluded so a run can be resumed elsewhere or extended.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.model_text().as_bytes()).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_defaults() {
        let c = TrainConfig {
            denoised_root: Some("x".into()),
            attribute_source: AttributeSource::Denoised,
            gen_channels: [24, 12, 6],
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
        let d = TrainConfig::default();
        assert_eq!((d.lr, d.beta1, d.beta2), (0.0002, 0.5, 0.999));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(TrainConfig::parse("batch_size=1").is_err());
        assert!(TrainConfig::parse("lr=0").is_err());
        assert!(TrainConfig::parse("beta1=1.0").is_err());
        assert!(TrainConfig::parse("bogus=3").is_err());
        assert!(TrainConfig::parse("attribute_source=denoised").is_err());
    }

    #[test]
    fn hash_ignores_paths_and_length() {
        let a = TrainConfig::default();
        let b = TrainConfig { iterations: 5000, output_dir: "elsewhere".into(), ..a.clone() };
        let c = TrainConfig { lambda: 1.0, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
