//! Shifted-window multi-head self-attention and the residual transformer
//! block built from it.
//!
//! Layers alternate shift 0 and window/2. Attention runs per window with a
//! learned relative position bias; shifted layers add the standard region
//! mask so tokens wrapped together by the cyclic shift cannot attend to each
//! other.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::blocks::{Conv, LayerNorm, Linear};
use crate::model::params::ParamSet;
use crate::tensor::shape as shp;
use crate::tensor::{norm, ops, Tape, Tensor};

const MASK_OFF: f32 = -1e9;

/// Relative-position index table for a `win × win` window:
/// `idx[i·L + j]` addresses a `(2·win−1)²` bias table.
pub fn relative_position_index(win: usize) -> Vec<usize> {
    let l = win * win;
    let span = 2 * win - 1;
    let mut idx = vec![0usize; l * l];
    for i in 0..l {
        let (yi, xi) = (i / win, i % win);
        for j in 0..l {
            let (yj, xj) = (j / win, j % win);
            let dy = yi as isize - yj as isize + (win - 1) as isize;
            let dx = xi as isize - xj as isize + (win - 1) as isize;
            idx[i * l + j] = dy as usize * span + dx as usize;
        }
    }
    idx
}

/// Additive attention mask for a cyclic shift: `[nW, L, L]` with 0 for
/// same-region pairs and a large negative number otherwise.
pub fn shift_mask(padded_h: usize, padded_w: usize, win: usize, shift: usize) -> Tensor {
    let (gh, gw) = (padded_h / win, padded_w / win);
    let nw = gh * gw;
    let l = win * win;
    // Region labels over the rolled canvas: after rolling by (−shift,−shift),
    // rows/cols [0, H−shift) hold contiguous content and [H−shift, H) holds
    // wrapped content; the extra band [H−win, H−shift) separates the
    // boundary window's contiguous part. Standard 3×3 slicing.
    let mut labels = vec![0i32; padded_h * padded_w];
    let mut cnt = 0i32;
    let h_slices = [
        (0, padded_h - win),
        (padded_h - win, padded_h - shift),
        (padded_h - shift, padded_h),
    ];
    let w_slices = [
        (0, padded_w - win),
        (padded_w - win, padded_w - shift),
        (padded_w - shift, padded_w),
    ];
    for (hs, he) in h_slices {
        for (ws, we) in w_slices {
            for y in hs..he {
                for x in ws..we {
                    labels[y * padded_w + x] = cnt;
                }
            }
            cnt += 1;
        }
    }
    let mut data = vec![0.0f32; nw * l * l];
    for ty in 0..gh {
        for tx in 0..gw {
            let widx = ty * gw + tx;
            let mut lab = vec![0i32; l];
            for iy in 0..win {
                for ix in 0..win {
                    lab[iy * win + ix] = labels[(ty * win + iy) * padded_w + tx * win + ix];
                }
            }
            let base = widx * l * l;
            for i in 0..l {
                for j in 0..l {
                    if lab[i] != lab[j] {
                        data[base + i * l + j] = MASK_OFF;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[nw, l, l], data).expect("mask")
}

pub struct WindowAttention {
    qkv: Linear,
    proj: Linear,
    /// `[(2·win−1)², heads]`, learned.
    rel_bias: Tensor,
    rel_index: Vec<usize>,
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
}

impl WindowAttention {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
    ) -> Result<WindowAttention> {
        if dim % heads != 0 {
            return Err(Error::arg(format!("dim {dim} not divisible by heads {heads}")));
        }
        let span = 2 * window - 1;
        Ok(WindowAttention {
            qkv: Linear::new(ps, rng, &format!("{name}.qkv"), dim, 3 * dim)?,
            proj: Linear::new(ps, rng, &format!("{name}.proj"), dim, dim)?,
            rel_bias: ps.trunc_normal(
                rng,
                &format!("{name}.rel_bias"),
                &[span * span, heads],
                0.02,
            )?,
            rel_index: relative_position_index(window),
            dim,
            heads,
            window,
        })
    }

    /// Attention over windowed tokens `[B, nW, L, dim]`; `mask` is
    /// `[nW, L, L]` additive or absent.
    pub fn forward(
        &self,
        x: &Tensor,
        mask: Option<&Tensor>,
        tape: Option<&Tape>,
    ) -> Result<Tensor> {
        let sh = x.shape().to_vec();
        if sh.len() != 4 || sh[3] != self.dim {
            return Err(Error::shape(format!(
                "window attention wants [B,nW,L,{}], got {:?}",
                self.dim, sh
            )));
        }
        let (b, nw, l) = (sh[0], sh[1], sh[2]);
        let (h, hd) = (self.heads, self.dim / self.heads);
        let scale = 1.0 / (hd as f32).sqrt();

        let qkv = self.qkv.forward(x, tape)?; // [B,nW,L,3E]
        let split = |o: usize| -> Result<Tensor> {
            let t = shp::slice_axis(&qkv, 3, o * self.dim, self.dim, tape)?;
            let t = t.reshape(&[b, nw, l, h, hd])?;
            shp::permute(&t, &[0, 1, 3, 2, 4], tape) // [B,nW,h,L,hd]
        };
        let q = split(0)?;
        let k = split(1)?;
        let v = split(2)?;
        let kt = shp::permute(&k, &[0, 1, 2, 4, 3], tape)?; // [B,nW,h,hd,L]
        let scores = ops::affine(&crate::tensor::linalg::matmul(&q, &kt, tape)?, scale, 0.0, tape)?;

        // learned relative-position bias, broadcast over batch and windows
        let bias_rows = shp::gather_rows(&self.rel_bias, &self.rel_index, tape)?; // [L·L, h]
        let bias = bias_rows.reshape(&[l, l, h])?;
        let bias = shp::permute(&bias, &[2, 0, 1], tape)?.reshape(&[1, 1, h, l, l])?;
        let mut scores = ops::add(&scores, &bias, tape)?;
        if let Some(m) = mask {
            let m5 = m.reshape(&[1, nw, 1, l, l])?;
            scores = ops::add(&scores, &m5, tape)?;
        }
        let attn = norm::softmax_lastdim(&scores, tape)?;
        let out = crate::tensor::linalg::matmul(&attn, &v, tape)?; // [B,nW,h,L,hd]
        let out = shp::permute(&out, &[0, 1, 3, 2, 4], tape)?.reshape(&[b, nw, l, self.dim])?;
        self.proj.forward(&out, tape)
    }
}

/// One transformer layer: windowed attention then a pointwise MLP, both with
/// pre-norm and residual.
pub struct SwinLayer {
    norm1: LayerNorm,
    pub attn: WindowAttention,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    pub shift: usize,
}

impl SwinLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
        mlp_ratio: f32,
        shift: usize,
    ) -> Result<SwinLayer> {
        let hidden = (dim as f32 * mlp_ratio).round() as usize;
        Ok(SwinLayer {
            norm1: LayerNorm::new(ps, &format!("{name}.norm1"), dim)?,
            attn: WindowAttention::new(ps, rng, &format!("{name}.attn"), dim, heads, window)?,
            norm2: LayerNorm::new(ps, &format!("{name}.norm2"), dim)?,
            fc1: Linear::new(ps, rng, &format!("{name}.mlp0"), dim, hidden)?,
            fc2: Linear::new(ps, rng, &format!("{name}.mlp1"), hidden, dim)?,
            shift,
        })
    }

    /// `x` is NHWC `[B, H, W, dim]`.
    pub fn forward(&self, x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
        let win = self.attn.window;
        let (wins, layout) = shp::window_partition(x, win, self.shift, tape)?;
        let l = win * win;
        let nw = layout.windows_per_image();
        let tokens = wins.reshape(&[layout.batch, nw, l, self.attn.dim])?;
        let mask = if self.shift > 0 {
            Some(shift_mask(layout.padded_h, layout.padded_w, win, self.shift))
        } else {
            None
        };
        let normed = self.norm1.forward(&tokens, tape)?;
        let attn_out = self.attn.forward(&normed, mask.as_ref(), tape)?;
        let res = ops::add(&tokens, &attn_out, tape)?;
        let merged = shp::window_merge(
            &res.reshape(&[layout.batch * nw, l, self.attn.dim])?,
            &layout,
            tape,
        )?;
        // pointwise MLP with residual
        let normed = self.norm2.forward(&merged, tape)?;
        let hidden = ops::gelu(&self.fc1.forward(&normed, tape)?, tape)?;
        let mlp_out = self.fc2.forward(&hidden, tape)?;
        ops::add(&merged, &mlp_out, tape)
    }
}

/// A stack of swin layers (alternating shift 0 and window/2) closed by a
/// 3×3 convolution and an outer residual connection.
pub struct Rstb {
    layers: Vec<SwinLayer>,
    conv: Conv,
    pub dim: usize,
}

impl Rstb {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        depth: usize,
        heads: usize,
        window: usize,
        mlp_ratio: f32,
    ) -> Result<Rstb> {
        let mut layers = Vec::with_capacity(depth);
        for d in 0..depth {
            let shift = if d % 2 == 1 { window / 2 } else { 0 };
            layers.push(SwinLayer::new(
                ps,
                rng,
                &format!("{name}.stl{d}"),
                dim,
                heads,
                window,
                mlp_ratio,
                shift,
            )?);
        }
        Ok(Rstb {
            layers,
            conv: Conv::new_zeroed(ps, &format!("{name}.conv"), dim, dim, 3, 1, 1)?,
            dim,
        })
    }

    /// `x` is NCHW `[B, dim, H, W]`.
    pub fn forward(&self, x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
        let mut t = shp::permute(x, &[0, 2, 3, 1], tape)?; // NHWC
        for layer in &self.layers {
            t = layer.forward(&t, tape)?;
        }
        let back = shp::permute(&t, &[0, 3, 1, 2], tape)?;
        let y = self.conv.forward(&back, tape)?;
        ops::add(x, &y, tape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Dense masked attention over all L tokens of one window batch,
    /// computed with straight f64 loops from the same weights.
    fn dense_attention_oracle(
        attn: &WindowAttention,
        tokens: &[f32], // [nW, L, dim]
        nw: usize,
        l: usize,
        mask: Option<&[f32]>, // [nW, L, L]
    ) -> Vec<f32> {
        let dim = attn.dim;
        let heads = attn.heads;
        let hd = dim / heads;
        let scale = 1.0 / (hd as f32).sqrt();
        let qkv_w = attn.qkv.w.to_vec();
        let qkv_b = attn.qkv.b.to_vec();
        let proj_w = attn.proj.w.to_vec();
        let proj_b = attn.proj.b.to_vec();
        let bias = attn.rel_bias.to_vec();
        let mut out = vec![0.0f32; nw * l * dim];
        for w in 0..nw {
            // qkv per token
            let mut q = vec![0.0f64; l * dim];
            let mut k = vec![0.0f64; l * dim];
            let mut v = vec![0.0f64; l * dim];
            for t in 0..l {
                for o in 0..3 * dim {
                    let mut s = qkv_b[o] as f64;
                    for i in 0..dim {
                        s += tokens[(w * l + t) * dim + i] as f64 * qkv_w[i * 3 * dim + o] as f64;
                    }
                    if o < dim {
                        q[t * dim + o] = s;
                    } else if o < 2 * dim {
                        k[t * dim + (o - dim)] = s;
                    } else {
                        v[t * dim + (o - 2 * dim)] = s;
                    }
                }
            }
            let mut heads_out = vec![0.0f64; l * dim];
            for h in 0..heads {
                for i in 0..l {
                    // scores over all tokens
                    let mut sc = vec![0.0f64; l];
                    for j in 0..l {
                        let mut s = 0.0f64;
                        for d in 0..hd {
                            s += q[i * dim + h * hd + d] * k[j * dim + h * hd + d];
                        }
                        s = s * scale as f64
                            + bias[attn.rel_index[i * l + j] * heads + h] as f64;
                        if let Some(m) = mask {
                            s += m[(w * l + i) * l + j] as f64;
                        }
                        sc[j] = s;
                    }
                    let mx = sc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut denom = 0.0f64;
                    for s in sc.iter_mut() {
                        *s = (*s - mx).exp();
                        denom += *s;
                    }
                    for d in 0..hd {
                        let mut acc = 0.0f64;
                        for j in 0..l {
                            acc += sc[j] / denom * v[j * dim + h * hd + d];
                        }
                        heads_out[i * dim + h * hd + d] = acc;
                    }
                }
            }
            for t in 0..l {
                for o in 0..dim {
                    let mut s = proj_b[o] as f64;
                    for i in 0..dim {
                        s += heads_out[t * dim + i] * proj_w[i * dim + o] as f64;
                    }
                    out[(w * l + t) * dim + o] = s as f32;
                }
            }
        }
        out
    }

    #[test]
    fn windowed_attention_equals_global_on_single_window() {
        // 8x8 input with window 8, shift 0: one window spanning the image,
        // so windowed attention IS global attention over 64 tokens.
        let mut ps = ParamSet::new();
        let mut r = rng(42);
        let attn = WindowAttention::new(&mut ps, &mut r, "a", 16, 4, 8).unwrap();
        let mut rr = rng(43);
        let tokens: Vec<f32> = (0..64 * 16).map(|_| rr.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(&[1, 1, 64, 16], tokens.clone()).unwrap();
        let y = attn.forward(&x, None, None).unwrap();
        let want = dense_attention_oracle(&attn, &tokens, 1, 64, None);
        for (a, b) in y.to_vec().iter().zip(&want) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    /// Global masked attention over the whole H×W token grid in rolled
    /// coordinates. A pair attends iff it shares a window AND, per axis,
    /// both tokens are on the same side of the wrap seam — derived from
    /// first principles, independent of `shift_mask`.
    fn global_shift_oracle(
        attn: &WindowAttention,
        img: &[f32], // [H, W, dim] original coordinates
        h: usize,
        w: usize,
        shift: usize,
    ) -> Vec<f32> {
        let dim = attn.dim;
        let heads = attn.heads;
        let hd = dim / heads;
        let win = attn.window;
        let scale = 1.0 / (hd as f32).sqrt();
        let n = h * w;
        // roll by (-shift, -shift): rolled[y] = img[(y+shift) % h]
        let mut rolled = vec![0.0f32; n * dim];
        for y in 0..h {
            for x in 0..w {
                let sy = (y + shift) % h;
                let sx = (x + shift) % w;
                rolled[(y * w + x) * dim..][..dim]
                    .copy_from_slice(&img[(sy * w + sx) * dim..][..dim]);
            }
        }
        let qkv_w = attn.qkv.w.to_vec();
        let qkv_b = attn.qkv.b.to_vec();
        let proj_w = attn.proj.w.to_vec();
        let proj_b = attn.proj.b.to_vec();
        let bias = attn.rel_bias.to_vec();
        let mut q = vec![0.0f64; n * dim];
        let mut k = vec![0.0f64; n * dim];
        let mut v = vec![0.0f64; n * dim];
        for t in 0..n {
            for o in 0..3 * dim {
                let mut s = qkv_b[o] as f64;
                for i in 0..dim {
                    s += rolled[t * dim + i] as f64 * qkv_w[i * 3 * dim + o] as f64;
                }
                match o / dim {
                    0 => q[t * dim + o] = s,
                    1 => k[t * dim + o - dim] = s,
                    _ => v[t * dim + o - 2 * dim] = s,
                }
            }
        }
        let wrapped = |coord: usize, extent: usize| coord >= extent - shift;
        let allowed = |p: usize, qt: usize| -> bool {
            let (y1, x1) = (p / w, p % w);
            let (y2, x2) = (qt / w, qt % w);
            y1 / win == y2 / win
                && x1 / win == x2 / win
                && wrapped(y1, h) == wrapped(y2, h)
                && wrapped(x1, w) == wrapped(x2, w)
        };
        let mut out_rolled = vec![0.0f32; n * dim];
        let mut heads_out = vec![0.0f64; dim];
        for p in 0..n {
            heads_out.fill(0.0);
            for hh in 0..heads {
                let mut sc = Vec::new();
                for qt in 0..n {
                    if !allowed(p, qt) {
                        continue;
                    }
                    let mut s = 0.0f64;
                    for d in 0..hd {
                        s += q[p * dim + hh * hd + d] * k[qt * dim + hh * hd + d];
                    }
                    let (iy, ix) = ((p / w) % win, (p % w) % win);
                    let (jy, jx) = ((qt / w) % win, (qt % w) % win);
                    let span = 2 * win - 1;
                    let ridx = (iy + win - 1 - jy) * span + (ix + win - 1 - jx);
                    s = s * scale as f64 + bias[ridx * heads + hh] as f64;
                    sc.push((qt, s));
                }
                let mx = sc.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = sc.iter().map(|(_, s)| (s - mx).exp()).sum();
                for d in 0..hd {
                    let mut acc = 0.0f64;
                    for (qt, s) in &sc {
                        acc += (s - mx).exp() / denom * v[qt * dim + hh * hd + d];
                    }
                    heads_out[hh * hd + d] = acc;
                }
            }
            for o in 0..dim {
                let mut s = proj_b[o] as f64;
                for i in 0..dim {
                    s += heads_out[i] * proj_w[i * dim + o] as f64;
                }
                out_rolled[p * dim + o] = s as f32;
            }
        }
        // back to original coordinates
        let mut out = vec![0.0f32; n * dim];
        for y in 0..h {
            for x in 0..w {
                let ry = (y + h - shift) % h;
                let rx = (x + w - shift) % w;
                out[(y * w + x) * dim..][..dim]
                    .copy_from_slice(&out_rolled[(ry * w + rx) * dim..][..dim]);
            }
        }
        out
    }

    #[test]
    fn shifted_attention_matches_masked_global_oracle() {
        // 16x16, window 8, shift 4: the full partition→attend→merge pipeline
        // must equal dense global attention with the cyclic-shift mask.
        let mut ps = ParamSet::new();
        let mut r = rng(7);
        let dim = 12;
        let attn = WindowAttention::new(&mut ps, &mut r, "a", dim, 3, 8).unwrap();
        let mut rr = rng(8);
        let img: Vec<f32> = (0..16 * 16 * dim).map(|_| rr.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(&[1, 16, 16, dim], img.clone()).unwrap();
        let (wins, layout) = shp::window_partition(&x, 8, 4, None).unwrap();
        let nw = layout.windows_per_image();
        let tokens = wins.reshape(&[1, nw, 64, dim]).unwrap();
        let mask = shift_mask(16, 16, 8, 4);
        let y = attn.forward(&tokens, Some(&mask), None).unwrap();
        let merged = shp::window_merge(&y.reshape(&[nw, 64, dim]).unwrap(), &layout, None).unwrap();
        let want = global_shift_oracle(&attn, &img, 16, 16, 4);
        for (a, b) in merged.to_vec().iter().zip(&want) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        // probe the softmax through a uniform-value trick: with value
        // projection forced to identity-like behaviour we can't directly read
        // weights, so instead check on raw scores via the public op.
        let mut rr = rng(9);
        let scores = Tensor::from_vec(
            &[2, 3, 4, 4],
            (0..96).map(|_| rr.gen_range(-3.0..3.0)).collect::<Vec<f32>>(),
        )
        .unwrap();
        let p = norm::softmax_lastdim(&scores, None).unwrap();
        let pd = p.to_vec();
        for row in pd.chunks(4) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn mask_blocks_cross_region_pairs() {
        let m = shift_mask(16, 16, 8, 4);
        assert_eq!(m.shape(), &[4, 64, 64]);
        let md = m.to_vec();
        // first window ends up with mixed regions after the shift: some pairs
        // must be masked; self-pairs never are.
        for w in 0..4 {
            for i in 0..64 {
                assert_eq!(md[(w * 64 + i) * 64 + i], 0.0, "self pair masked");
            }
        }
        let blocked = md.iter().filter(|&&v| v != 0.0).count();
        assert!(blocked > 0, "shifted mask should block something");
    }

    #[test]
    fn rstb_zero_init_tail_keeps_residual_visible() {
        // loose smoke: with the trailing conv zero-initialized, an RSTB still
        // changes the input only through the attention path, and stays finite
        let mut ps = ParamSet::new();
        let mut r = rng(10);
        let rstb = Rstb::new(&mut ps, &mut r, "rstb", 8, 2, 2, 4, 2.0).unwrap();
        let mut rr = rng(11);
        let x = Tensor::from_vec(
            &[1, 8, 8, 8],
            (0..8 * 64).map(|_| rr.gen_range(-1.0..1.0)).collect::<Vec<f32>>(),
        )
        .unwrap();
        let y = rstb.forward(&x, None).unwrap();
        assert_eq!(y.shape(), x.shape());
        y.validate_finite("rstb").unwrap();
    }

    #[test]
    fn rstb_gradients_flow_to_all_params() {
        let mut ps = ParamSet::new();
        let mut r = rng(12);
        let rstb = Rstb::new(&mut ps, &mut r, "rstb", 6, 2, 2, 4, 2.0).unwrap();
        let tape = Tape::new();
        let mut rr = rng(13);
        let x = Tensor::from_vec(
            &[1, 6, 4, 4],
            (0..96).map(|_| rr.gen_range(-1.0..1.0)).collect::<Vec<f32>>(),
        )
        .unwrap();
        let y = rstb.forward(&x, Some(&tape)).unwrap();
        let loss = ops::mean_all(&ops::mul(&y, &y, Some(&tape)).unwrap(), Some(&tape)).unwrap();
        tape.backward(&loss).unwrap();
        // all gradients present and finite (layers behind the zero-init
        // trailing conv carry zeros at step 0, which is fine)
        for (name, p) in ps.iter() {
            let g = p.grad();
            assert!(g.is_some(), "{name} got no gradient");
            assert!(
                g.unwrap().iter().all(|v| v.is_finite()),
                "{name} gradient not finite"
            );
        }
        let g = ps.get("rstb.conv.weight").unwrap().grad().unwrap();
        assert!(g.iter().any(|&v| v != 0.0));
    }
}
