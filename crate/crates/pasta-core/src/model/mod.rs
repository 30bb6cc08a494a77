//! The reconstruction network: shallow feature extraction, inter-frame
//! temporal attention, and coarse-to-fine aggregation over a wavelet
//! pyramid, built from channel-attention and shifted-window attention
//! blocks.

pub mod attention;
pub mod blocks;
pub mod checkpoint;
pub mod params;
pub mod pasta;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use params::ParamSet;
pub use pasta::PastaModel;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Temporal attention + long skip from the fused attention features.
    PastaI,
    /// Alignment-free: plain concatenation, skip from a convolution of the
    /// reference frame's features.
    PastaU,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::PastaI => "pasta-i",
            Variant::PastaU => "pasta-u",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "pasta-i" => Ok(Variant::PastaI),
            "pasta-u" => Ok(Variant::PastaU),
            other => Err(Error::Parse(format!("unknown variant {other:?}"))),
        }
    }
}

/// How the pyramid downsamples; `Dwt` is the real model, the others exist
/// for the efficiency ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    Dwt,
    PixelUnshuffle,
    StridedConv,
}

impl Sampling {
    pub fn as_str(&self) -> &'static str {
        match self {
            Sampling::Dwt => "dwt",
            Sampling::PixelUnshuffle => "pixel_unshuffle",
            Sampling::StridedConv => "strided_conv",
        }
    }

    pub fn parse(s: &str) -> Result<Sampling> {
        match s {
            "dwt" => Ok(Sampling::Dwt),
            "pixel_unshuffle" => Ok(Sampling::PixelUnshuffle),
            "strided_conv" => Ok(Sampling::StridedConv),
            other => Err(Error::Parse(format!("unknown sampling variant {other:?}"))),
        }
    }
}

/// Architecture hyperparameters. Stage lists run from the coarsest wavelet
/// stage (index 0) to the full-resolution stage (index K).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Shallow feature channels per frame; the pyramid runs at 3·c.
    pub c: usize,
    /// Working width of the aggregation stages.
    pub embed: usize,
    /// Attention layers per stage, length K+1.
    pub stl_per_stage: Vec<usize>,
    /// Heads per stage, length K+1.
    pub heads_per_stage: Vec<usize>,
    /// Channel-attention reduction per wavelet stage, length K.
    pub reduction: Vec<usize>,
    pub mlp_ratio: f32,
    pub window: usize,
    /// Pyramid depth.
    pub k: usize,
    pub variant: Variant,
    pub tiny: bool,
    pub sampling: Sampling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            c: 16,
            embed: 160,
            stl_per_stage: vec![6, 6, 6, 6],
            heads_per_stage: vec![4, 4, 4, 4],
            reduction: vec![4, 4, 4],
            mlp_ratio: 2.0,
            window: 8,
            k: 3,
            variant: Variant::PastaI,
            tiny: false,
            sampling: Sampling::Dwt,
        }
    }
}

impl ModelConfig {
    pub fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            c: 12,
            embed: 120,
            stl_per_stage: vec![2, 2, 2, 2],
            heads_per_stage: vec![3, 3, 3, 3],
            variant,
            tiny: true,
            ..ModelConfig::default()
        }
    }

    pub fn with_variant(variant: Variant, tiny: bool) -> ModelConfig {
        if tiny {
            ModelConfig::tiny(variant)
        } else {
            ModelConfig {
                variant,
                ..ModelConfig::default()
            }
        }
    }

    /// Pyramid channel count 3·c.
    pub fn fused_channels(&self) -> usize {
        3 * self.c
    }

    /// The spatial multiple the input is padded to before the forward pass.
    pub fn pad_multiple(&self) -> usize {
        (1 << self.k) * self.window
    }

    /// Smallest input dimension a single reflect pad can bring to
    /// `pad_multiple`.
    pub fn min_input_dim(&self) -> usize {
        self.pad_multiple() / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.c == 0 || self.embed == 0 || self.window == 0 {
            return Err(Error::arg("c, embed and window must be positive"));
        }
        if !(1..=5).contains(&self.k) {
            return Err(Error::arg(format!("k must be in 1..=5, got {}", self.k)));
        }
        if self.stl_per_stage.len() != self.k + 1 || self.heads_per_stage.len() != self.k + 1 {
            return Err(Error::arg(format!(
                "stl/heads lists must have K+1 = {} entries, got {}/{}",
                self.k + 1,
                self.stl_per_stage.len(),
                self.heads_per_stage.len()
            )));
        }
        if self.reduction.len() != self.k {
            return Err(Error::arg(format!(
                "reduction list must have K = {} entries, got {}",
                self.k,
                self.reduction.len()
            )));
        }
        for (&h, &n) in self.heads_per_stage.iter().zip(&self.stl_per_stage) {
            if h == 0 || n == 0 {
                return Err(Error::arg("stl and head counts must be positive"));
            }
            if self.embed % h != 0 {
                return Err(Error::arg(format!(
                    "embed {} not divisible by heads {h}",
                    self.embed
                )));
            }
        }
        for &r in &self.reduction {
            if r == 0 || (4 * self.fused_channels()) % r != 0 {
                return Err(Error::arg(format!(
                    "reduction {r} must divide {}",
                    4 * self.fused_channels()
                )));
            }
        }
        if self.mlp_ratio <= 0.0 {
            return Err(Error::arg("mlp_ratio must be positive"));
        }
        Ok(())
    }

    /// Flat `key = value` form, shared by config files and checkpoints.
    pub fn to_kv(&self) -> String {
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "c = {}\nembed = {}\nstl = {}\nheads = {}\nreduction = {}\nmlp_ratio = {}\nwindow = {}\nk = {}\nvariant = {}\ntiny = {}\nsampling = {}\n",
            self.c,
            self.embed,
            list(&self.stl_per_stage),
            list(&self.heads_per_stage),
            list(&self.reduction),
            self.mlp_ratio,
            self.window,
            self.k,
            self.variant.as_str(),
            self.tiny,
            self.sampling.as_str(),
        )
    }

    /// Apply one `key = value` assignment. Unknown keys error.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let parse_usize = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Parse(format!("bad integer {v:?} for {key}")))
        };
        let parse_list = |v: &str| -> Result<Vec<usize>> {
            v.split(',')
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad list entry {t:?} for {key}")))
                })
                .collect()
        };
        match key {
            "c" => self.c = parse_usize(value)?,
            "embed" => self.embed = parse_usize(value)?,
            "stl" => self.stl_per_stage = parse_list(value)?,
            "heads" => self.heads_per_stage = parse_list(value)?,
            "reduction" => self.reduction = parse_list(value)?,
            "mlp_ratio" => {
                self.mlp_ratio = value
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad float {value:?} for mlp_ratio")))?
            }
            "window" => self.window = parse_usize(value)?,
            "k" => self.k = parse_usize(value)?,
            "variant" => self.variant = Variant::parse(value)?,
            "tiny" => {
                self.tiny = value
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad bool {value:?} for tiny")))?
            }
            "sampling" => self.sampling = Sampling::parse(value)?,
            other => return Err(Error::Parse(format!("unknown model config key {other:?}"))),
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected `key = value`, got {line:?}")))?;
            cfg.apply_kv(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_published_rows() {
        let full = ModelConfig::default();
        assert_eq!(full.c, 16);
        assert_eq!(full.stl_per_stage, vec![6, 6, 6, 6]);
        assert_eq!(full.heads_per_stage, vec![4, 4, 4, 4]);
        assert_eq!(full.reduction, vec![4, 4, 4]);
        assert_eq!(full.mlp_ratio, 2.0);
        assert_eq!(full.window, 8);
        assert_eq!(full.fused_channels(), 48);
        let tiny = ModelConfig::tiny(Variant::PastaI);
        assert_eq!(tiny.c, 12);
        assert_eq!(tiny.stl_per_stage, vec![2, 2, 2, 2]);
        assert_eq!(tiny.heads_per_stage, vec![3, 3, 3, 3]);
        full.validate().unwrap();
        tiny.validate().unwrap();
    }

    #[test]
    fn kv_roundtrip() {
        let mut cfg = ModelConfig::tiny(Variant::PastaU);
        cfg.sampling = Sampling::PixelUnshuffle;
        let text = cfg.to_kv();
        let back = ModelConfig::from_kv(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(ModelConfig::from_kv("bogus = 3\n").is_err());
    }

    #[test]
    fn validation_catches_bad_lists() {
        let mut cfg = ModelConfig::default();
        cfg.k = 2;
        assert!(cfg.validate().is_err()); // lists still sized for k=3
        cfg.stl_per_stage = vec![6, 6, 6];
        cfg.heads_per_stage = vec![4, 4, 4];
        cfg.reduction = vec![4, 4];
        cfg.validate().unwrap();
    }
}
