//! Convolution/linear/norm wrappers around the raw ops, plus the residual
//! channel-attention block.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::params::ParamSet;
use crate::tensor::{linalg, norm, ops, Tape, Tensor};

pub struct Conv {
    pub w: Tensor,
    pub b: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// Fan-in-scaled uniform init.
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Conv> {
        let fan_in = c_in * k * k;
        let w = ps.uniform_fan_in(rng, &format!("{name}.weight"), &[c_out, c_in, k, k], fan_in)?;
        let b = ps.uniform_fan_in(rng, &format!("{name}.bias"), &[c_out], fan_in)?;
        Ok(Conv { w, b, stride, pad })
    }

    /// Zero-initialized weights and bias (residual tails).
    pub fn new_zeroed(
        ps: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Conv> {
        let w = ps.zeros(&format!("{name}.weight"), &[c_out, c_in, k, k])?;
        let b = ps.zeros(&format!("{name}.bias"), &[c_out])?;
        Ok(Conv { w, b, stride, pad })
    }

    pub fn conv3x3(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> Result<Conv> {
        Conv::new(ps, rng, name, c_in, c_out, 3, 1, 1)
    }

    pub fn conv1x1(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> Result<Conv> {
        Conv::new(ps, rng, name, c_in, c_out, 1, 1, 0)
    }

    pub fn forward(&self, x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
        linalg::conv2d(x, &self.w, Some(&self.b), self.stride, self.pad, tape)
    }
}

/// Token-wise affine map `[.., in] -> [.., out]`.
pub struct Linear {
    pub w: Tensor, // [in, out]
    pub b: Tensor, // [out]
}

impl Linear {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Result<Linear> {
        let w = ps.trunc_normal(rng, &format!("{name}.weight"), &[d_in, d_out], 0.02)?;
        let b = ps.zeros(&format!("{name}.bias"), &[d_out])?;
        Ok(Linear { w, b })
    }

    pub fn forward(&self, x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
        let y = linalg::matmul(x, &self.w, tape)?;
        ops::add(&y, &self.b, tape)
    }
}

pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f32,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gamma: ps.ones(&format!("{name}.gamma"), &[d])?,
            beta: ps.zeros(&format!("{name}.beta"), &[d])?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
        norm::layer_norm(x, &self.gamma, &self.beta, self.eps, tape)
    }
}

/// Residual channel attention: `x + s(x) ⊙ f(x)` where `f` is
/// conv–ReLU–conv (zero-initialized tail, so the block starts as identity)
/// and `s` squeezes global statistics through a bottleneck to per-channel
/// sigmoid weights.
pub struct Rcab {
    conv1: Conv,
    conv2: Conv,
    se_down: Conv,
    se_up: Conv,
}

impl Rcab {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Result<Rcab> {
        assert!(channels % reduction == 0, "checked by ModelConfig::validate");
        let mid = channels / reduction;
        Ok(Rcab {
            conv1: Conv::conv3x3(ps, rng, &format!("{name}.body0"), channels, channels)?,
            conv2: Conv::new_zeroed(ps, &format!("{name}.body1"), channels, channels, 3, 1, 1)?,
            se_down: Conv::conv1x1(ps, rng, &format!("{name}.se0"), channels, mid)?,
            se_up: Conv::conv1x1(ps, rng, &format!("{name}.se1"), mid, channels)?,
        })
    }

    /// Per-channel pooled descriptor and sigmoid gate, exposed for tests.
    pub fn channel_gate(&self, x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
        let pooled = ops::global_avg_pool(x, tape)?;
        let mid = ops::relu(&self.se_down.forward(&pooled, tape)?, tape)?;
        ops::sigmoid(&self.se_up.forward(&mid, tape)?, tape)
    }

    pub fn forward(&self, x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
        let body = self
            .conv2
            .forward(&ops::relu(&self.conv1.forward(x, tape)?, tape)?, tape)?;
        let gate = self.channel_gate(x, tape)?;
        let scaled = ops::mul(&body, &gate, tape)?;
        ops::add(x, &scaled, tape)
    }
}
