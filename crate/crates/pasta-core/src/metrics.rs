//! Evaluation metrics: PSNR and SSIM, each in the linear and tonemapped
//! domain. Pure f64 computations on images, independent of the autodiff
//! path.

use crate::error::{Error, Result};
use crate::hdr::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Linear,
    Mu,
}

pub const METRIC_MU: f64 = 5000.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn tonemap(v: f64) -> f64 {
    (1.0 + METRIC_MU * v.clamp(0.0, 1.0)).ln() / (1.0 + METRIC_MU).ln()
}

fn prepared(img: &Image, domain: Domain) -> Vec<f64> {
    img.data
        .iter()
        .map(|&v| match domain {
            Domain::Linear => v as f64,
            Domain::Mu => tonemap(v as f64),
        })
        .collect()
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if a.channels != b.channels || a.height != b.height || a.width != b.width {
        return Err(Error::shape(format!(
            "metric images differ: {}x{}x{} vs {}x{}x{}",
            a.channels, a.height, a.width, b.channels, b.height, b.width
        )));
    }
    Ok(())
}

/// `10·log10(1/MSE)` with peak 1; +∞ when the images are identical.
pub fn psnr(a: &Image, b: &Image, domain: Domain) -> Result<f64> {
    check_pair(a, b)?;
    let (pa, pb) = (prepared(a, domain), prepared(b, domain));
    let mse: f64 = pa
        .iter()
        .zip(&pb)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / pa.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    let mut total = 0.0;
    for y in -half..=half {
        for x in -half..=half {
            let v = (-((x * x + y * y) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w.push(v);
            total += v;
        }
    }
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Mean SSIM over valid 11×11 Gaussian windows (σ=1.5), averaged across
/// channels. Peak value 1.
pub fn ssim(a: &Image, b: &Image, domain: Domain) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = (a.height, a.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::arg(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    let (pa, pb) = (prepared(a, domain), prepared(b, domain));
    let win = gaussian_window();
    let c1 = (K1 * 1.0) * (K1 * 1.0);
    let c2 = (K2 * 1.0) * (K2 * 1.0);
    let plane = h * w;
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0f64;
    for c in 0..a.channels {
        let xa = &pa[c * plane..(c + 1) * plane];
        let xb = &pb[c * plane..(c + 1) * plane];
        let mut acc = 0.0f64;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut mx = 0.0;
                let mut my = 0.0;
                let mut mxx = 0.0;
                let mut myy = 0.0;
                let mut mxy = 0.0;
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let g = win[ky * SSIM_WINDOW + kx];
                        let va = xa[(oy + ky) * w + ox + kx];
                        let vb = xb[(oy + ky) * w + ox + kx];
                        mx += g * va;
                        my += g * vb;
                        mxx += g * va * va;
                        myy += g * vb * vb;
                        mxy += g * va * vb;
                    }
                }
                let vx = mxx - mx * mx;
                let vy = myy - my * my;
                let cov = mxy - mx * my;
                let s = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                acc += s;
            }
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / a.channels as f64)
}

#[derive(Clone, Copy, Debug)]
pub struct SceneMetrics {
    pub psnr_l: f64,
    pub psnr_mu: f64,
    pub ssim_l: f64,
    pub ssim_mu: f64,
}

/// The four standard scores for one prediction/GT pair.
pub fn evaluate_pair(pred: &Image, gt: &Image) -> Result<SceneMetrics> {
    Ok(SceneMetrics {
        psnr_l: psnr(pred, gt, Domain::Linear)?,
        psnr_mu: psnr(pred, gt, Domain::Mu)?,
        ssim_l: ssim(pred, gt, Domain::Linear)?,
        ssim_mu: ssim(pred, gt, Domain::Mu)?,
    })
}
