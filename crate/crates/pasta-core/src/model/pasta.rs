//! The full reconstruction network.
//!
//! Shallow 3×3 convolutions lift each 6-channel input to C features. The
//! aligned variant gates every frame by its per-pixel similarity to the
//! reference frame (temporal attention); the alignment-free variant
//! concatenates frames directly. The fused 3C map is decomposed into a
//! K-level pyramid; each level is refined coarse-to-fine by a channel
//! attention block over the concatenated subbands, a windowed-attention
//! stack at the embed width, and a coefficient head whose output is
//! upsampled into the next finer level. The final stage fuses the
//! reconstructed full-resolution map with a skip path and renders the HDR
//! output through a sigmoid head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::attention::Rstb;
use crate::model::blocks::{Conv, Rcab};
use crate::model::params::ParamSet;
use crate::model::{ModelConfig, Sampling, Variant};
use crate::tensor::shape as shp;
use crate::tensor::{ops, Tape, Tensor};
use crate::wavelet::{self, SubbandSet};

struct AggStage {
    rcab: Rcab,
    fuse: Conv,
    rstb: Rstb,
    head: Conv,
}

/// Downsampling-specific adapters. The aggregation stages are shared; only
/// how stage inputs are produced and refinements propagated differs.
enum Sampler {
    /// Wavelet pyramid: recursion on the low band, inverse transform back up.
    Dwt,
    /// Space-to-depth. Invertibility forces the full channel volume
    /// `3C·4^j` to be carried at every level, with learned 1×1 adapters in
    /// and out of the shared stage width.
    PixelUnshuffle { adapt: Vec<Conv>, expand: Vec<Conv> },
    /// Learned strided-conv encoder with pixel-shuffle decoding.
    StridedConv { down: Vec<Conv>, up: Vec<Conv> },
}

pub struct PastaModel {
    pub cfg: ModelConfig,
    pub params: ParamSet,
    shallow: Vec<Conv>,
    /// Similarity embeddings (aligned variant only).
    phi: Vec<Conv>,
    /// Reference-frame skip convolution (alignment-free variant only).
    skip_conv: Option<Conv>,
    stages: Vec<AggStage>,
    sampler: Sampler,
    final_fuse: Conv,
    final_rstb: Rstb,
    out_head: Conv,
}

impl PastaModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<PastaModel> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.c;
        let fc = cfg.fused_channels(); // 3C
        let sc = 4 * fc; // stage input width
        let e = cfg.embed;

        let mut shallow = Vec::with_capacity(3);
        for i in 0..3 {
            shallow.push(Conv::conv3x3(&mut ps, &mut rng, &format!("shallow{i}"), 6, c)?);
        }
        let mut phi = Vec::new();
        let mut skip_conv = None;
        match cfg.variant {
            Variant::PastaI => {
                for i in 0..3 {
                    phi.push(Conv::conv3x3(&mut ps, &mut rng, &format!("phi{i}"), c, c)?);
                }
            }
            Variant::PastaU => {
                skip_conv = Some(Conv::conv3x3(&mut ps, &mut rng, "skip", c, fc)?);
            }
        }

        let mut stages = Vec::with_capacity(cfg.k);
        for s in 0..cfg.k {
            let name = format!("stage{}", cfg.k - s); // stage index == pyramid level
            stages.push(AggStage {
                rcab: Rcab::new(&mut ps, &mut rng, &format!("{name}.rcab"), sc, cfg.reduction[s])?,
                fuse: Conv::conv1x1(&mut ps, &mut rng, &format!("{name}.fuse"), sc, e)?,
                rstb: Rstb::new(
                    &mut ps,
                    &mut rng,
                    &format!("{name}.rstb"),
                    e,
                    cfg.stl_per_stage[s],
                    cfg.heads_per_stage[s],
                    cfg.window,
                    cfg.mlp_ratio,
                )?,
                head: Conv::conv1x1(&mut ps, &mut rng, &format!("{name}.head"), e, sc)?,
            });
        }

        let sampler = match cfg.sampling {
            Sampling::Dwt => Sampler::Dwt,
            Sampling::PixelUnshuffle => {
                let mut adapt = Vec::with_capacity(cfg.k);
                let mut expand = Vec::with_capacity(cfg.k);
                for j in 1..=cfg.k {
                    let full = fc << (2 * j); // 3C·4^j
                    let in_ch = if j == cfg.k { full } else { 2 * full };
                    adapt.push(Conv::conv1x1(
                        &mut ps,
                        &mut rng,
                        &format!("pus.adapt{j}"),
                        in_ch,
                        sc,
                    )?);
                    expand.push(Conv::conv1x1(
                        &mut ps,
                        &mut rng,
                        &format!("pus.expand{j}"),
                        sc,
                        full,
                    )?);
                }
                Sampler::PixelUnshuffle { adapt, expand }
            }
            Sampling::StridedConv => {
                let mut down = Vec::with_capacity(cfg.k);
                let mut up = Vec::with_capacity(cfg.k);
                for j in 1..=cfg.k {
                    down.push(Conv::new(
                        &mut ps,
                        &mut rng,
                        &format!("sconv.down{j}"),
                        fc,
                        sc,
                        3,
                        2,
                        1,
                    )?);
                    up.push(Conv::conv1x1(&mut ps, &mut rng, &format!("sconv.up{j}"), sc, sc)?);
                }
                Sampler::StridedConv { down, up }
            }
        };

        let final_fuse = Conv::conv1x1(&mut ps, &mut rng, "final.fuse", 2 * fc, e)?;
        let final_rstb = Rstb::new(
            &mut ps,
            &mut rng,
            "final.rstb",
            e,
            cfg.stl_per_stage[cfg.k],
            cfg.heads_per_stage[cfg.k],
            cfg.window,
            cfg.mlp_ratio,
        )?;
        let out_head = Conv::conv3x3(&mut ps, &mut rng, "out", e, 3)?;

        Ok(PastaModel {
            cfg,
            params: ps,
            shallow,
            phi,
            skip_conv,
            stages,
            sampler,
            final_fuse,
            final_rstb,
            out_head,
        })
    }

    /// Total learnable scalar count.
    pub fn count_params(&self) -> usize {
        self.params.count_scalars()
    }

    fn validate_inputs(&self, inputs: &[Tensor]) -> Result<(usize, usize, usize)> {
        if inputs.len() != 3 {
            return Err(Error::arg(format!("expected 3 input frames, got {}", inputs.len())));
        }
        let sh = inputs[0].shape().to_vec();
        if sh.len() != 4 || sh[1] != 6 {
            return Err(Error::shape(format!(
                "inputs must be [B,6,H,W], got {:?}",
                sh
            )));
        }
        for x in inputs.iter().skip(1) {
            if x.shape() != sh {
                return Err(Error::shape(format!(
                    "input frames disagree: {:?} vs {:?}",
                    x.shape(),
                    sh
                )));
            }
        }
        let min = self.cfg.min_input_dim();
        if sh[2] < min || sh[3] < min {
            return Err(Error::arg(format!(
                "input {}x{} too small; this configuration needs at least {min}x{min} \
                 (reflect padding to multiples of {})",
                sh[2],
                sh[3],
                self.cfg.pad_multiple()
            )));
        }
        Ok((sh[0], sh[2], sh[3]))
    }

    /// Pad to the stage-divisible size, run shallow extraction and frame
    /// fusion. Returns (F_t, skip, original H, original W).
    fn backbone(
        &self,
        inputs: &[Tensor],
        tape: Option<&Tape>,
    ) -> Result<(Tensor, Tensor, usize, usize)> {
        let (_, h, w) = self.validate_inputs(inputs)?;
        let m = self.cfg.pad_multiple();
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let mut feats = Vec::with_capacity(3);
        for (i, x) in inputs.iter().enumerate() {
            let padded = if ph == h && pw == w {
                x.clone()
            } else {
                shp::pad_reflect_nchw(x, (0, ph - h, 0, pw - w), tape)?
            };
            feats.push(self.shallow[i].forward(&padded, tape)?);
        }
        let (f_t, skip) = match self.cfg.variant {
            Variant::PastaI => {
                let gates = self.gates_from_features(&feats, tape)?;
                let mut gated = Vec::with_capacity(3);
                for (f, g) in feats.iter().zip(&gates) {
                    gated.push(ops::mul(f, g, tape)?);
                }
                let f_t = shp::concat(&[&gated[0], &gated[1], &gated[2]], 1, tape)?;
                let skip = f_t.clone();
                (f_t, skip)
            }
            Variant::PastaU => {
                let f_t = shp::concat(&[&feats[0], &feats[1], &feats[2]], 1, tape)?;
                let skip = self
                    .skip_conv
                    .as_ref()
                    .expect("alignment-free variant has a skip conv")
                    .forward(&feats[1], tape)?;
                (f_t, skip)
            }
        };
        Ok((f_t, skip, h, w))
    }

    /// Per-frame sigmoid gates from the similarity of embedded features to
    /// the embedded reference (includes the reference's self-similarity).
    fn gates_from_features(&self, feats: &[Tensor], tape: Option<&Tape>) -> Result<Vec<Tensor>> {
        let embedded: Vec<Tensor> = self
            .phi
            .iter()
            .zip(feats)
            .map(|(conv, f)| conv.forward(f, tape))
            .collect::<Result<_>>()?;
        let reference = &embedded[1];
        let mut gates = Vec::with_capacity(3);
        for e in &embedded {
            let prod = ops::mul(e, reference, tape)?;
            let sim = ops::sum_axis_keepdim(&prod, 1, tape)?; // [B,1,H,W]
            gates.push(ops::sigmoid(&sim, tape)?);
        }
        Ok(gates)
    }

    /// The three attention maps for a stack, exposed for analysis.
    pub fn attention_gates(&self, inputs: &[Tensor], tape: Option<&Tape>) -> Result<Vec<Tensor>> {
        if self.cfg.variant != Variant::PastaI {
            return Err(Error::arg(
                "attention gates only exist in the aligned variant",
            ));
        }
        let (_, h, w) = self.validate_inputs(inputs)?;
        let m = self.cfg.pad_multiple();
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let mut feats = Vec::with_capacity(3);
        for (i, x) in inputs.iter().enumerate() {
            let padded = if ph == h && pw == w {
                x.clone()
            } else {
                shp::pad_reflect_nchw(x, (0, ph - h, 0, pw - w), tape)?
            };
            feats.push(self.shallow[i].forward(&padded, tape)?);
        }
        self.gates_from_features(&feats, tape)
    }

    /// Fused features F_t (at padded resolution), for correlation analysis.
    pub fn fused_features(&self, inputs: &[Tensor], tape: Option<&Tape>) -> Result<Tensor> {
        let (f_t, _, _, _) = self.backbone(inputs, tape)?;
        Ok(f_t)
    }

    fn run_stage(&self, s: usize, input: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
        let stage = &self.stages[s];
        let x = stage.rcab.forward(input, tape)?;
        let x = stage.fuse.forward(&x, tape)?;
        let x = stage.rstb.forward(&x, tape)?;
        stage.head.forward(&x, tape)
    }

    /// Coarse-to-fine aggregation: returns the reconstructed full-resolution
    /// 3C feature map.
    fn aggregate(&self, f_t: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
        let k = self.cfg.k;
        let fc = self.cfg.fused_channels();
        match &self.sampler {
            Sampler::Dwt => {
                let pyramid = wavelet::build_pyramid(f_t, k, tape)?;
                let mut ll = pyramid.root_ll.clone();
                for s in 0..k {
                    let lvl = &pyramid.levels[k - 1 - s];
                    let input = shp::concat(&[&ll, &lvl.lh, &lvl.hl, &lvl.hh], 1, tape)?;
                    let refined = self.run_stage(s, &input, tape)?;
                    let band = |i: usize| shp::slice_axis(&refined, 1, i * fc, fc, tape);
                    let set = SubbandSet {
                        ll: band(0)?,
                        lh: band(1)?,
                        hl: band(2)?,
                        hh: band(3)?,
                    };
                    ll = wavelet::idwt2(&set, tape)?;
                }
                Ok(ll)
            }
            Sampler::PixelUnshuffle { adapt, expand } => {
                // carriers: the full space-to-depth volume per level
                let mut volumes = Vec::with_capacity(k + 1);
                volumes.push(f_t.clone());
                for _ in 0..k {
                    let next = shp::pixel_unshuffle2(volumes.last().unwrap(), tape)?;
                    volumes.push(next);
                }
                let mut refined_carrier: Option<Tensor> = None;
                for s in 0..k {
                    let j = k - s; // pyramid level of this stage
                    let input = match &refined_carrier {
                        None => adapt[j - 1].forward(&volumes[j], tape)?,
                        Some(r) => {
                            let cat = shp::concat(&[r, &volumes[j]], 1, tape)?;
                            adapt[j - 1].forward(&cat, tape)?
                        }
                    };
                    let refined = self.run_stage(s, &input, tape)?;
                    let up = shp::pixel_shuffle2(&expand[j - 1].forward(&refined, tape)?, tape)?;
                    refined_carrier = Some(up);
                }
                Ok(refined_carrier.expect("k >= 1"))
            }
            Sampler::StridedConv { down, up } => {
                let mut encoded = Vec::with_capacity(k);
                let mut carrier = f_t.clone();
                for d in down.iter().take(k) {
                    let enc = d.forward(&carrier, tape)?; // [B,4·3C,h/2,w/2]
                    carrier = shp::slice_axis(&enc, 1, 0, fc, tape)?;
                    encoded.push(enc);
                }
                let mut refined_carrier: Option<Tensor> = None;
                for s in 0..k {
                    let j = k - s;
                    let input = match &refined_carrier {
                        None => encoded[j - 1].clone(),
                        Some(r) => {
                            let detail = shp::slice_axis(&encoded[j - 1], 1, fc, 3 * fc, tape)?;
                            shp::concat(&[r, &detail], 1, tape)?
                        }
                    };
                    let refined = self.run_stage(s, &input, tape)?;
                    let shuffled = shp::pixel_shuffle2(&up[j - 1].forward(&refined, tape)?, tape)?;
                    refined_carrier = Some(shuffled);
                }
                Ok(refined_carrier.expect("k >= 1"))
            }
        }
    }

    /// End-to-end reconstruction: three `[B,6,H,W]` inputs to an HDR
    /// estimate `[B,3,H,W]` in [0,1].
    pub fn forward(&self, inputs: &[Tensor], tape: Option<&Tape>) -> Result<Tensor> {
        let (f_t, skip, h, w) = self.backbone(inputs, tape)?;
        let ll0 = self.aggregate(&f_t, tape)?;
        let fused = shp::concat(&[&ll0, &skip], 1, tape)?;
        let x = self.final_fuse.forward(&fused, tape)?;
        let x = self.final_rstb.forward(&x, tape)?;
        let out = ops::sigmoid(&self.out_head.forward(&x, tape)?, tape)?;
        let out = if out.shape()[2] != h || out.shape()[3] != w {
            shp::crop_nchw(&out, 0, 0, h, w, tape)?
        } else {
            out
        };
        out.validate_finite("model output")?;
        Ok(out)
    }
}
