//! Training configuration and its flat `key = value` text form.
//!
//! The text form is the single source of truth for checkpoints and config
//! files; field order is fixed and floats print in shortest round-trip
//! form, so serialize(parse(s)) is bit-stable.

use crate::adam::AdamHyper;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::models::{DiscriminatorSpec, GenArch, GeneratorSpec};

/// Which generated image the adversarial and fake-classification losses
/// target: the forward output, the same-domain cycle re-generation, or both.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdversarialTarget {
    Forward,
    Cycle,
    Both,
}

impl AdversarialTarget {
    pub fn name(self) -> &'static str {
        match self {
            AdversarialTarget::Forward => "forward",
            AdversarialTarget::Cycle => "cycle",
            AdversarialTarget::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(AdversarialTarget::Forward),
            "cycle" => Ok(AdversarialTarget::Cycle),
            "both" => Ok(AdversarialTarget::Both),
            other => Err(Error::Config(format!("unknown adversarial_target '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub n_domains: usize,
    pub in_channels: usize,
    pub image_size: usize,
    pub gen_arch: GenArch,
    pub gen_base_width: usize,
    pub gen_depth: usize,
    pub residual_blocks: usize,
    pub dsc_base_width: usize,
    pub dsc_downsamples: usize,
    pub dsc_multi_scale: bool,
    pub dsc_dropout: f64,
    pub weights: LossWeights,
    pub adam: AdamHyper,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub joint_steps: u64,
    pub input_dropout_rate: f64,
    /// Applies fresh input dropout when assembling the backward cycle
    /// inputs too, not only the forward pass.
    pub cycle_input_dropout: bool,
    pub seed: u64,
    pub adversarial_target: AdversarialTarget,
    pub eval_interval: u64,
    pub checkpoint_interval: u64,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_domains: 4,
            in_channels: 1,
            image_size: 32,
            gen_arch: GenArch::PlainUnet,
            gen_base_width: 8,
            gen_depth: 3,
            residual_blocks: 2,
            dsc_base_width: 16,
            dsc_downsamples: 4,
            dsc_multi_scale: false,
            dsc_dropout: 0.25,
            weights: LossWeights::default(),
            adam: AdamHyper::default(),
            batch_size: 4,
            pretrain_epochs: 10,
            joint_steps: 2000,
            input_dropout_rate: 0.3,
            cycle_input_dropout: false,
            seed: 0,
            adversarial_target: AdversarialTarget::Forward,
            eval_interval: 200,
            checkpoint_interval: 1000,
            train_frac: 0.8,
            val_frac: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.eval_interval == 0 || self.checkpoint_interval == 0 {
            return Err(Error::Config("intervals must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.input_dropout_rate) {
            return Err(Error::Config(format!(
                "input_dropout_rate {} outside [0, 1)",
                self.input_dropout_rate
            )));
        }
        if self.train_frac < 0.0 || self.val_frac < 0.0 || self.train_frac + self.val_frac > 1.0 + 1e-9
        {
            return Err(Error::Config("split fractions out of range".into()));
        }
        self.weights.validate()?;
        self.generator_spec().validate()?;
        self.discriminator_spec().validate()?;
        Ok(())
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            arch: self.gen_arch,
            n_domains: self.n_domains,
            in_channels: self.in_channels,
            base_width: self.gen_base_width,
            depth: self.gen_depth,
            residual_blocks: self.residual_blocks,
        }
    }

    pub fn discriminator_spec(&self) -> DiscriminatorSpec {
        DiscriminatorSpec {
            n_domains: self.n_domains,
            in_channels: self.in_channels,
            image_size: self.image_size,
            base_width: self.dsc_base_width,
            n_downsamples: self.dsc_downsamples,
            multi_scale: self.dsc_multi_scale,
            dropout_rate: self.dsc_dropout,
        }
    }

    pub fn split_fractions(&self) -> (f64, f64, f64) {
        (
            self.train_frac,
            self.val_frac,
            1.0 - self.train_frac - self.val_frac,
        )
    }

    /// Ordered (key, value) pairs of every field.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_domains", self.n_domains.to_string()),
            ("in_channels", self.in_channels.to_string()),
            ("image_size", self.image_size.to_string()),
            ("gen_arch", self.gen_arch.name().to_string()),
            ("gen_base_width", self.gen_base_width.to_string()),
            ("gen_depth", self.gen_depth.to_string()),
            ("residual_blocks", self.residual_blocks.to_string()),
            ("dsc_base_width", self.dsc_base_width.to_string()),
            ("dsc_downsamples", self.dsc_downsamples.to_string()),
            ("dsc_multi_scale", self.dsc_multi_scale.to_string()),
            ("dsc_dropout", self.dsc_dropout.to_string()),
            ("lambda_mcc", self.weights.mcc.to_string()),
            ("lambda_mcc_ssim", self.weights.mcc_ssim.to_string()),
            ("lambda_gan", self.weights.gan.to_string()),
            ("lambda_clsf", self.weights.clsf.to_string()),
            ("adam_lr", self.adam.lr.to_string()),
            ("adam_beta1", self.adam.beta1.to_string()),
            ("adam_beta2", self.adam.beta2.to_string()),
            ("adam_eps", self.adam.eps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("joint_steps", self.joint_steps.to_string()),
            ("input_dropout_rate", self.input_dropout_rate.to_string()),
            ("cycle_input_dropout", self.cycle_input_dropout.to_string()),
            ("seed", self.seed.to_string()),
            ("adversarial_target", self.adversarial_target.name().to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("checkpoint_interval", self.checkpoint_interval.to_string()),
            ("train_frac", self.train_frac.to_string()),
            ("val_frac", self.val_frac.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_pairs() {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
        }
        match key {
            "n_domains" => self.n_domains = parse(key, value)?,
            "in_channels" => self.in_channels = parse(key, value)?,
            "image_size" => self.image_size = parse(key, value)?,
            "gen_arch" => self.gen_arch = GenArch::parse(value)?,
            "gen_base_width" => self.gen_base_width = parse(key, value)?,
            "gen_depth" => self.gen_depth = parse(key, value)?,
            "residual_blocks" => self.residual_blocks = parse(key, value)?,
            "dsc_base_width" => self.dsc_base_width = parse(key, value)?,
            "dsc_downsamples" => self.dsc_downsamples = parse(key, value)?,
            "dsc_multi_scale" => self.dsc_multi_scale = parse(key, value)?,
            "dsc_dropout" => self.dsc_dropout = parse(key, value)?,
            "lambda_mcc" => self.weights.mcc = parse(key, value)?,
            "lambda_mcc_ssim" => self.weights.mcc_ssim = parse(key, value)?,
            "lambda_gan" => self.weights.gan = parse(key, value)?,
            "lambda_clsf" => self.weights.clsf = parse(key, value)?,
            "adam_lr" => self.adam.lr = parse(key, value)?,
            "adam_beta1" => self.adam.beta1 = parse(key, value)?,
            "adam_beta2" => self.adam.beta2 = parse(key, value)?,
            "adam_eps" => self.adam.eps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "joint_steps" => self.joint_steps = parse(key, value)?,
            "input_dropout_rate" => self.input_dropout_rate = parse(key, value)?,
            "cycle_input_dropout" => self.cycle_input_dropout = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "adversarial_target" => {
                self.adversarial_target = AdversarialTarget::parse(value)?
            }
            "eval_interval" => self.eval_interval = parse(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, value)?,
            "train_frac" => self.train_frac = parse(key, value)?,
            "val_frac" => self.val_frac = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parses flat `key = value` text (comments start with '#').
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }
}
