//! Training objective, computed in the μ-law tonemapped domain:
//! `L = L1 + α·Lp + β·Le`.
//!
//! * `L1` — mean absolute tonemapped difference.
//! * `Lp` — perceptual proxy: L1 distance between fixed multi-scale
//!   high-pass (Laplacian-pyramid style) features, 3 levels. Constant
//!   offsets score zero; blur and texture changes dominate.
//! * `Le` — edge loss: per-pixel Charbonnier `sqrt(‖∇d‖² + ε²)` of the
//!   Sobel-gradient difference, mean-reduced. Its floor at identical inputs
//!   is exactly ε.

use crate::error::{Error, Result};
use crate::tensor::ops;
use crate::tensor::shape as shp;
use crate::tensor::{linalg, Tape, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub alpha: f32,
    pub beta: f32,
    pub eps: f32,
    pub mu: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.01,
            beta: 1.0,
            eps: 1e-3,
            mu: 5000.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.eps <= 0.0 || self.mu <= 0.0 {
            return Err(Error::arg(format!("invalid loss weights {:?}", self)));
        }
        Ok(())
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean |T(pred) − T(target)| in the tonemapped domain.
pub fn l1_loss(pred: &Tensor, target: &Tensor, mu: f32, tape: Option<&Tape>) -> Result<Tensor> {
    check_same_shape(pred, target, "l1_loss")?;
    let tp = ops::mu_law(pred, mu, tape)?;
    let tt = ops::mu_law(target, mu, tape)?;
    let d = ops::sub(&tp, &tt, tape)?;
    ops::mean_all(&ops::abs(&d, tape)?, tape)
}

/// Depthwise 3×3 convolution with a fixed kernel bank, reflect-padded.
///
/// Input `[B,C,H,W]`, kernels `[K,1,3,3]` -> output `[B·C,K,H,W]`.
fn depthwise_fixed3(x: &Tensor, kernels: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
    let sh = x.shape().to_vec();
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    let flat = x.reshape(&[b * c, 1, h, w])?;
    let padded = shp::pad_reflect_nchw(&flat, (1, 1, 1, 1), tape)?;
    linalg::conv2d(&padded, kernels, None, 1, 0, tape)
}

fn sobel_kernels() -> Tensor {
    // horizontal and vertical derivative kernels
    let kx = [-1.0f32, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    let ky = [-1.0f32, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
    let mut data = Vec::with_capacity(18);
    data.extend_from_slice(&kx);
    data.extend_from_slice(&ky);
    Tensor::from_vec(&[2, 1, 3, 3], data).expect("sobel")
}

fn binomial_kernel() -> Tensor {
    let k: Vec<f32> = [1.0f32, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0]
        .iter()
        .map(|v| v / 16.0)
        .collect();
    Tensor::from_vec(&[1, 1, 3, 3], k).expect("binomial")
}

/// Charbonnier edge objective `mean sqrt(gx² + gy² + ε²)` over the Sobel
/// gradients of the tonemapped difference. Equals ε exactly when the
/// gradients agree everywhere.
pub fn edge_loss(
    pred: &Tensor,
    target: &Tensor,
    eps: f32,
    mu: f32,
    tape: Option<&Tape>,
) -> Result<Tensor> {
    check_same_shape(pred, target, "edge_loss")?;
    if eps <= 0.0 {
        return Err(Error::arg("edge_loss eps must be positive"));
    }
    let sobel = sobel_kernels();
    let tp = ops::mu_law(pred, mu, tape)?;
    let tt = ops::mu_law(target, mu, tape)?;
    let gp = depthwise_fixed3(&tp, &sobel, tape)?;
    let gt = depthwise_fixed3(&tt, &sobel, tape)?;
    let d = ops::sub(&gt, &gp, tape)?;
    let d2 = ops::mul(&d, &d, tape)?;
    // ‖∇d‖² per pixel: sum gx²+gy² over the kernel axis
    let norm2 = ops::sum_axis_keepdim(&d2, 1, tape)?;
    let shifted = ops::affine(&norm2, 1.0, eps * eps, tape)?;
    let char_map = ops::sqrt(&shifted, tape)?;
    ops::mean_all(&char_map, tape)
}

/// Multi-scale high-pass feature distance; 3 levels, fixed binomial filters.
pub fn perceptual_proxy(
    pred: &Tensor,
    target: &Tensor,
    mu: f32,
    tape: Option<&Tape>,
) -> Result<Tensor> {
    check_same_shape(pred, target, "perceptual_proxy")?;
    let sh = pred.shape();
    if sh[2] < 8 || sh[3] < 8 {
        return Err(Error::arg(format!(
            "perceptual_proxy needs at least 8x8 input, got {}x{}",
            sh[2], sh[3]
        )));
    }
    let blur = binomial_kernel();
    let mut p = ops::mu_law(pred, mu, tape)?;
    let mut t = ops::mu_law(target, mu, tape)?;
    let mut acc: Option<Tensor> = None;
    for level in 0..3 {
        let (bp, bt) = (
            depthwise_fixed3(&p, &blur, tape)?,
            depthwise_fixed3(&t, &blur, tape)?,
        );
        // high-pass features at this scale
        let shp_p = p.shape().to_vec();
        let flat_p = p.reshape(&[shp_p[0] * shp_p[1], 1, shp_p[2], shp_p[3]])?;
        let flat_t = t.reshape(&[shp_p[0] * shp_p[1], 1, shp_p[2], shp_p[3]])?;
        let hp_p = ops::sub(&flat_p, &bp, tape)?;
        let hp_t = ops::sub(&flat_t, &bt, tape)?;
        let dist = ops::mean_all(&ops::abs(&ops::sub(&hp_p, &hp_t, tape)?, tape)?, tape)?;
        acc = Some(match acc {
            None => dist,
            Some(a) => ops::add(&a, &dist, tape)?,
        });
        if level < 2 {
            // decimate the blurred approximation: keep the even-even phase
            let next = |b: &Tensor, c: usize, h: usize, w: usize| -> Result<Tensor> {
                let full = b.reshape(&[shp_p[0], c, h, w])?;
                let packed = shp::pixel_unshuffle2(&full, tape)?;
                shp::slice_axis(&packed, 1, 0, c, tape)
            };
            p = next(&bp, shp_p[1], shp_p[2], shp_p[3])?;
            t = next(&bt, shp_p[1], shp_p[2], shp_p[3])?;
        }
    }
    Ok(acc.expect("three levels"))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown {
    pub l1: f32,
    pub lp: f32,
    pub le: f32,
    pub total: f32,
}

/// `L1 + α·Lp + β·Le`, plus the per-term values for logging.
pub fn total_loss(
    pred: &Tensor,
    target: &Tensor,
    w: &LossWeights,
    tape: Option<&Tape>,
) -> Result<(Tensor, LossBreakdown)> {
    w.validate()?;
    let l1 = l1_loss(pred, target, w.mu, tape)?;
    let lp = perceptual_proxy(pred, target, w.mu, tape)?;
    let le = edge_loss(pred, target, w.eps, w.mu, tape)?;
    let wlp = ops::affine(&lp, w.alpha, 0.0, tape)?;
    let wle = ops::affine(&le, w.beta, 0.0, tape)?;
    let total = ops::add(&ops::add(&l1, &wlp, tape)?, &wle, tape)?;
    let breakdown = LossBreakdown {
        l1: l1.item()?,
        lp: lp.item()?,
        le: le.item()?,
        total: total.item()?,
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_img(seed: u64, shape: &[usize]) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn mu_t(v: f64) -> f64 {
        (1.0 + 5000.0 * v).ln() / 5001.0f64.ln()
    }

    /// f32-faithful tonemap mirroring the op's arithmetic.
    fn mu_t32(v: f32) -> f32 {
        (5000.0f32 * v.clamp(0.0, 1.0)).ln_1p() / 5000.0f32.ln_1p()
    }

    #[test]
    fn l1_zero_on_identical() {
        let x = rand_img(1, &[1, 3, 8, 8]);
        let l = l1_loss(&x, &x, 5000.0, None).unwrap().item().unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn l1_single_pixel_delta() {
        let x = rand_img(2, &[1, 3, 4, 4]);
        let mut y = x.to_vec();
        y[5] = (y[5] + 0.1).min(1.0);
        let yt = Tensor::from_vec(x.shape(), y.clone()).unwrap();
        let l = l1_loss(&x, &yt, 5000.0, None).unwrap().item().unwrap();
        let delta = (mu_t32(y[5]) - mu_t32(x.to_vec()[5])).abs() as f64;
        let want = delta / 48.0;
        assert!((l as f64 - want).abs() < 1e-7, "{l} vs {want}");
    }

    #[test]
    fn l1_matches_direct_oracle() {
        let x = rand_img(3, &[2, 3, 6, 6]);
        let y = rand_img(4, &[2, 3, 6, 6]);
        let l = l1_loss(&x, &y, 5000.0, None).unwrap().item().unwrap();
        let (xd, yd) = (x.to_vec(), y.to_vec());
        let want: f64 = xd
            .iter()
            .zip(&yd)
            .map(|(&a, &b)| (mu_t32(a) - mu_t32(b)).abs() as f64)
            .sum::<f64>()
            / xd.len() as f64;
        assert!((l as f64 - want).abs() < 1e-7, "{l} vs {want}");
    }

    #[test]
    fn edge_loss_floor_is_exactly_eps() {
        let x = rand_img(5, &[1, 3, 8, 8]);
        let le = edge_loss(&x, &x, 1e-3, 5000.0, None).unwrap().item().unwrap();
        assert_eq!(le, 1e-3);
        // different constants still have zero gradients everywhere
        let a = Tensor::full(&[1, 3, 8, 8], 0.25).unwrap();
        let b = Tensor::full(&[1, 3, 8, 8], 0.75).unwrap();
        let le = edge_loss(&a, &b, 1e-3, 5000.0, None).unwrap().item().unwrap();
        assert_eq!(le, 1e-3);
    }

    #[test]
    fn edge_loss_matches_direct_sobel_oracle() {
        // 4x4 ramp vs flat image, oracle computed with explicit loops
        let mut ramp = vec![0.0f32; 16];
        for (i, v) in ramp.iter_mut().enumerate() {
            *v = (i % 4) as f32 / 6.0 + (i / 4) as f32 / 12.0;
        }
        let x = Tensor::from_vec(&[1, 1, 4, 4], ramp.clone()).unwrap();
        let flat = Tensor::full(&[1, 1, 4, 4], 0.3).unwrap();
        let le = edge_loss(&x, &flat, 1e-3, 5000.0, None).unwrap().item().unwrap();

        // oracle
        let tm: Vec<f32> = ramp.iter().map(|&v| mu_t32(v)).collect();
        let tf: Vec<f32> = vec![mu_t32(0.3); 16];
        let refl = |i: isize, n: isize| -> usize {
            let mut v = i;
            if v < 0 {
                v = -v;
            }
            if v >= n {
                v = 2 * (n - 1) - v;
            }
            v as usize
        };
        let sobel_at = |img: &[f32], y: isize, x0: isize, k: &[f32; 9]| -> f32 {
            let mut s = 0.0;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let yy = refl(y + dy, 4);
                    let xx = refl(x0 + dx, 4);
                    s += img[yy * 4 + xx] * k[((dy + 1) * 3 + dx + 1) as usize];
                }
            }
            s
        };
        let kx = [-1.0f32, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
        let ky = [-1.0f32, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
        let mut acc = 0.0f64;
        for y in 0..4isize {
            for x0 in 0..4isize {
                let gx = sobel_at(&tf, y, x0, &kx) - sobel_at(&tm, y, x0, &kx);
                let gy = sobel_at(&tf, y, x0, &ky) - sobel_at(&tm, y, x0, &ky);
                acc += ((gx * gx + gy * gy + 1e-6) as f64).sqrt();
            }
        }
        let want = acc / 16.0;
        assert!((le as f64 - want).abs() < 1e-6, "{le} vs {want}");
    }

    #[test]
    fn proxy_zero_and_symmetric() {
        let x = rand_img(6, &[1, 3, 16, 16]);
        let y = rand_img(7, &[1, 3, 16, 16]);
        assert_eq!(perceptual_proxy(&x, &x, 5000.0, None).unwrap().item().unwrap(), 0.0);
        let ab = perceptual_proxy(&x, &y, 5000.0, None).unwrap().item().unwrap();
        let ba = perceptual_proxy(&y, &x, 5000.0, None).unwrap().item().unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn proxy_penalizes_blur_over_offset() {
        // blurred-vs-sharp scores higher than an equal-L1 constant offset
        let x = rand_img(8, &[1, 1, 16, 16]);
        let blur = binomial_kernel();
        let padded = shp::pad_reflect_nchw(&x, (1, 1, 1, 1), None).unwrap();
        let blurred = linalg::conv2d(&padded, &blur, None, 1, 0, None).unwrap();
        let l1_blur: f32 = {
            let (a, b) = (x.to_vec(), blurred.to_vec());
            a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum::<f32>() / a.len() as f32
        };
        let offset = Tensor::from_vec(
            x.shape(),
            x.to_vec().iter().map(|&v| v + l1_blur).collect(),
        )
        .unwrap();
        let p_blur = perceptual_proxy(&x, &blurred, 5000.0, None).unwrap().item().unwrap();
        let p_off = perceptual_proxy(&x, &offset, 5000.0, None).unwrap().item().unwrap();
        assert!(
            p_blur > p_off,
            "blur should dominate: blur {p_blur} vs offset {p_off}"
        );
    }

    #[test]
    fn total_loss_floor_and_degenerate_weights() {
        let x = rand_img(9, &[1, 3, 8, 8]);
        let w = LossWeights::default();
        let (total, parts) = total_loss(&x, &x, &w, None).unwrap();
        assert_eq!(total.item().unwrap(), 1e-3); // β·ε floor
        assert_eq!(parts.l1, 0.0);
        assert_eq!(parts.lp, 0.0);

        let y = rand_img(10, &[1, 3, 8, 8]);
        let degenerate = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            ..LossWeights::default()
        };
        // alpha = beta = 0 reduces to pure L1 (eps/mu untouched)
        let (t2, _) = total_loss(&x, &y, &degenerate, None).unwrap();
        let l1 = l1_loss(&x, &y, w.mu, None).unwrap();
        assert_eq!(t2.item().unwrap(), l1.item().unwrap());
    }

    #[test]
    fn total_loss_gradient_check() {
        use crate::gradcheck::assert_grads_close;
        let base = rand_img(11, &[1, 3, 8, 8]);
        let pred = Tensor::leaf(base.shape(), base.to_vec().iter().map(|v| v * 0.8 + 0.1).collect()).unwrap();
        let target = rand_img(12, &[1, 3, 8, 8]);
        let w = LossWeights::default();
        assert_grads_close(
            &[&pred],
            |xs, t| {
                let (loss, _) = total_loss(xs[0], &target, &w, t)?;
                Ok(loss)
            },
            1e-3,
            "total_loss",
        );
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Tensor::zeros(&[1, 3, 8, 8]).unwrap();
        let b = Tensor::zeros(&[1, 3, 8, 4]).unwrap();
        assert!(l1_loss(&a, &b, 5000.0, None).is_err());
        assert!(edge_loss(&a, &b, 1e-3, 5000.0, None).is_err());
        assert!(perceptual_proxy(&a, &b, 5000.0, None).is_err());
    }
}
