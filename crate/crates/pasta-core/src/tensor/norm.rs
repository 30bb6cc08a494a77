//! Layer normalization and softmax over the trailing dimension.

use super::{tracking, Tape, Tensor};
use crate::error::{Error, Result};

/// Per-last-dim-slice normalization: `(x − mean)/sqrt(var + eps) · gamma + beta`.
pub fn layer_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
    tape: Option<&Tape>,
) -> Result<Tensor> {
    let sh = x.shape();
    if sh.is_empty() {
        return Err(Error::shape("layer_norm on 0-d tensor"));
    }
    let d = sh[sh.len() - 1];
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape(format!(
            "layer_norm gamma/beta must be [{d}], got {:?}/{:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let rows = x.numel() / d;
    let mut out = Tensor::uninit_buffer(x.numel())?;
    // saved statistics for backward
    let mut means = vec![0.0f32; rows];
    let mut rstds = vec![0.0f32; rows];
    {
        let xd = x.data();
        let gd = gamma.data();
        let bd = beta.data();
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mut s = 0.0f64;
            for &v in row {
                s += v as f64;
            }
            let mean = (s / d as f64) as f32;
            let mut var = 0.0f64;
            for &v in row {
                let c = v - mean;
                var += (c * c) as f64;
            }
            let rstd = 1.0 / (((var / d as f64) as f32) + eps).sqrt();
            means[r] = mean;
            rstds[r] = rstd;
            let dst = &mut out[r * d..(r + 1) * d];
            for i in 0..d {
                dst[i] = (row[i] - mean) * rstd * gd[i] + bd[i];
            }
        }
    }
    let track = tracking(tape, &[x, gamma, beta]);
    let out = Tensor::output(sh.to_vec(), out, track)?;
    if track {
        let (x2, g2, b2, o2) = (x.clone(), gamma.clone(), beta.clone(), out.clone());
        tape.unwrap().record("layer_norm", move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let xd = x2.data();
                let gd = g2.data();
                let mut dgamma = vec![0.0f32; d];
                let mut dbeta = vec![0.0f32; d];
                let mut dx = vec![0.0f32; x2.numel()];
                for r in 0..rows {
                    let row = &xd[r * d..(r + 1) * d];
                    let grow = &g[r * d..(r + 1) * d];
                    let (mean, rstd) = (means[r], rstds[r]);
                    // xhat and the two row means needed for dx
                    let mut sum_dxhat = 0.0f64;
                    let mut sum_dxhat_xhat = 0.0f64;
                    for i in 0..d {
                        let xhat = (row[i] - mean) * rstd;
                        let dxhat = grow[i] * gd[i];
                        sum_dxhat += dxhat as f64;
                        sum_dxhat_xhat += (dxhat * xhat) as f64;
                        dgamma[i] += grow[i] * xhat;
                        dbeta[i] += grow[i];
                    }
                    let m1 = (sum_dxhat / d as f64) as f32;
                    let m2 = (sum_dxhat_xhat / d as f64) as f32;
                    let dst = &mut dx[r * d..(r + 1) * d];
                    for i in 0..d {
                        let xhat = (row[i] - mean) * rstd;
                        let dxhat = grow[i] * gd[i];
                        dst[i] = rstd * (dxhat - m1 - xhat * m2);
                    }
                }
                drop(xd);
                drop(gd);
                if x2.requires_grad() {
                    x2.accumulate_grad(&dx);
                }
                if g2.requires_grad() {
                    g2.accumulate_grad(&dgamma);
                }
                if b2.requires_grad() {
                    b2.accumulate_grad(&dbeta);
                }
                Ok(())
            })
        });
    }
    Ok(out)
}

/// Softmax over the trailing dimension (max-subtracted).
pub fn softmax_lastdim(x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
    let sh = x.shape();
    if sh.is_empty() {
        return Err(Error::shape("softmax on 0-d tensor"));
    }
    let d = sh[sh.len() - 1];
    let rows = x.numel() / d;
    let mut out = Tensor::uninit_buffer(x.numel())?;
    {
        let xd = x.data();
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mut m = f32::NEG_INFINITY;
            for &v in row {
                m = m.max(v);
            }
            let dst = &mut out[r * d..(r + 1) * d];
            let mut s = 0.0f64;
            for i in 0..d {
                let e = (row[i] - m).exp();
                dst[i] = e;
                s += e as f64;
            }
            let inv = (1.0 / s) as f32;
            for v in dst.iter_mut() {
                *v *= inv;
            }
        }
    }
    let track = tracking(tape, &[x]);
    let out = Tensor::output(sh.to_vec(), out, track)?;
    if track {
        let (x2, o2) = (x.clone(), out.clone());
        tape.unwrap().record("softmax", move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let od = o2.data();
                let mut dx = vec![0.0f32; x2.numel()];
                for r in 0..rows {
                    let yrow = &od[r * d..(r + 1) * d];
                    let grow = &g[r * d..(r + 1) * d];
                    let mut dot = 0.0f64;
                    for i in 0..d {
                        dot += (grow[i] * yrow[i]) as f64;
                    }
                    let dot = dot as f32;
                    let dst = &mut dx[r * d..(r + 1) * d];
                    for i in 0..d {
                        dst[i] = yrow[i] * (grow[i] - dot);
                    }
                }
                drop(od);
                x2.accumulate_grad(&dx);
                Ok(())
            })
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_constant_slice_is_zero() {
        let x = Tensor::from_vec(&[2, 4], vec![3.0; 8]).unwrap();
        let gamma = Tensor::from_vec(&[4], vec![1.0; 4]).unwrap();
        let beta = Tensor::from_vec(&[4], vec![0.0; 4]).unwrap();
        let y = layer_norm(&x, &gamma, &beta, 1e-5, None).unwrap();
        for v in y.to_vec() {
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_already_normalized() {
        let x = Tensor::from_vec(&[1, 2], vec![1.0, -1.0]).unwrap();
        let gamma = Tensor::from_vec(&[2], vec![1.0; 2]).unwrap();
        let beta = Tensor::from_vec(&[2], vec![0.0; 2]).unwrap();
        let y = layer_norm(&x, &gamma, &beta, 1e-12, None).unwrap().to_vec();
        assert!((y[0] - 1.0).abs() < 1e-4);
        assert!((y[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_moments() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let d = 16;
        let data: Vec<f32> = (0..4 * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = Tensor::from_vec(&[4, d], data).unwrap();
        let gamma = Tensor::from_vec(&[d], vec![1.5; d]).unwrap();
        let beta = Tensor::from_vec(&[d], vec![0.25; d]).unwrap();
        let y = layer_norm(&x, &gamma, &beta, 1e-7, None).unwrap();
        let yd = y.to_vec();
        for r in 0..4 {
            let row = &yd[r * d..(r + 1) * d];
            let mean: f32 = row.iter().sum::<f32>() / d as f32;
            let var: f32 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            assert!((mean - 0.25).abs() < 1e-5, "mean {mean}");
            assert!((var.sqrt() - 1.5).abs() < 1e-4, "std {}", var.sqrt());
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f32> = (0..6 * 5).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let x = Tensor::from_vec(&[6, 5], data).unwrap();
        let y = softmax_lastdim(&x, None).unwrap();
        let yd = y.to_vec();
        for r in 0..6 {
            let s: f32 = yd[r * 5..(r + 1) * 5].iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "row {r} sums to {s}");
        }
    }
}
