//! Matrix product and convolution, with their backward rules.
//!
//! The gemm kernels are plain safe Rust tuned for the auto-vectorizer:
//! fixed-size column blocks with stack accumulators, `mul_add` in the inner
//! loop (packed FMA when the target has it). Accumulation order is fixed, so
//! results are bitwise reproducible run to run.

use super::{tracking, Tape, Tensor};
use crate::error::{Error, Result};

/// Fused multiply-add when the target supports it; `a*b+c` otherwise
/// (`f32::mul_add` without an FMA unit lowers to a slow libm call).
#[inline(always)]
fn fma(a: f32, b: f32, c: f32) -> f32 {
    #[cfg(target_feature = "fma")]
    {
        a.mul_add(b, c)
    }
    #[cfg(not(target_feature = "fma"))]
    {
        a * b + c
    }
}

const MR: usize = 4; // row block
const NR: usize = 128; // column block (fits L1 together with accumulators)

/// C[M,N] += A[M,K] * B[K,N], all row-major contiguous.
pub fn gemm_nn(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut i0 = 0;
    while i0 < m {
        let mr = MR.min(m - i0);
        let mut j0 = 0;
        while j0 < n {
            let nr = NR.min(n - j0);
            let mut acc = [[0.0f32; NR]; MR];
            for kk in 0..k {
                let brow = &b[kk * n + j0..kk * n + j0 + nr];
                for r in 0..mr {
                    let ar = a[(i0 + r) * k + kk];
                    let accr = &mut acc[r];
                    for (j, &bv) in brow.iter().enumerate() {
                        accr[j] = fma(ar, bv, accr[j]);
                    }
                }
            }
            for r in 0..mr {
                let crow = &mut c[(i0 + r) * n + j0..(i0 + r) * n + j0 + nr];
                for (j, cv) in crow.iter_mut().enumerate() {
                    *cv += acc[r][j];
                }
            }
            j0 += nr;
        }
        i0 += mr;
    }
}

/// C[M,N] += A[M,K] * B[N,K]^T — dot-product kernel, both operands row-major.
pub fn gemm_nt(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            // four partial sums to break the dependency chain
            let mut s = [0.0f32; 4];
            let chunks = k / 4;
            for q in 0..chunks {
                let base = q * 4;
                s[0] = fma(arow[base], brow[base], s[0]);
                s[1] = fma(arow[base + 1], brow[base + 1], s[1]);
                s[2] = fma(arow[base + 2], brow[base + 2], s[2]);
                s[3] = fma(arow[base + 3], brow[base + 3], s[3]);
            }
            let mut tail = 0.0f32;
            for q in chunks * 4..k {
                tail = fma(arow[q], brow[q], tail);
            }
            c[i * n + j] += ((s[0] + s[1]) + (s[2] + s[3])) + tail;
        }
    }
}

pub fn transpose2d(rows: usize, cols: usize, src: &[f32], dst: &mut [f32]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

/// Broadcast batch dims of two shapes (everything but the trailing two).
fn broadcast_batch(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let ab = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    let n = ab.len().max(bb.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let av = if i < n - ab.len() { 1 } else { ab[i - (n - ab.len())] };
        let bv = if i < n - bb.len() { 1 } else { bb[i - (n - bb.len())] };
        if av == bv || av == 1 || bv == 1 {
            out[i] = av.max(bv);
        } else {
            return Err(Error::shape(format!(
                "matmul batch dims incompatible: {:?} vs {:?}",
                a, b
            )));
        }
    }
    Ok(out)
}

/// For flat batch index `idx` over `out_batch`, the operand's flat batch
/// offset honouring broadcast (dims of size 1 stay at 0).
fn batch_offset(idx: usize, out_batch: &[usize], op_batch: &[usize]) -> usize {
    let n = out_batch.len();
    let skip = n - op_batch.len();
    let mut rem = idx;
    let mut coords = vec![0usize; n];
    for d in (0..n).rev() {
        coords[d] = rem % out_batch[d];
        rem /= out_batch[d];
    }
    let mut off = 0usize;
    for (d, &dim) in op_batch.iter().enumerate() {
        let c = if dim == 1 { 0 } else { coords[skip + d] };
        off = off * dim + c;
    }
    off
}

/// Batched matrix product `a[..,M,K] × b[..,K,N] -> [..,M,N]` with
/// broadcastable leading dims.
pub fn matmul(a: &Tensor, b: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
    let (ash, bsh) = (a.shape().to_vec(), b.shape().to_vec());
    if ash.len() < 2 || bsh.len() < 2 {
        return Err(Error::shape("matmul operands need at least 2 dims"));
    }
    let (m, ka) = (ash[ash.len() - 2], ash[ash.len() - 1]);
    let (kb, n) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
    if ka != kb {
        return Err(Error::shape(format!(
            "matmul inner dims disagree: {:?} vs {:?}",
            ash, bsh
        )));
    }
    let batch = broadcast_batch(&ash, &bsh)?;
    let nbatch: usize = batch.iter().product();
    let a_batch = ash[..ash.len() - 2].to_vec();
    let b_batch = bsh[..bsh.len() - 2].to_vec();

    let mut out = Tensor::uninit_buffer(nbatch * m * n)?;
    {
        let ad = a.data();
        let bd = b.data();
        for i in 0..nbatch {
            let ao = batch_offset(i, &batch, &a_batch) * m * ka;
            let bo = batch_offset(i, &batch, &b_batch) * ka * n;
            gemm_nn(
                m,
                n,
                ka,
                &ad[ao..ao + m * ka],
                &bd[bo..bo + ka * n],
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
    }
    let mut out_shape = batch.clone();
    out_shape.push(m);
    out_shape.push(n);
    let track = tracking(tape, &[a, b]);
    let out = Tensor::output(out_shape, out, track)?;

    if track {
        let (a2, b2, o2) = (a.clone(), b.clone(), out.clone());
        let k = ka;
        tape.unwrap().record("matmul", move || {
            o2.with_grad(|g| -> Result<()> {
                let Some(g) = g else { return Ok(()) };
                let a_batch = a2.shape()[..a2.shape().len() - 2].to_vec();
                let b_batch = b2.shape()[..b2.shape().len() - 2].to_vec();
                let batch = broadcast_batch(a2.shape(), b2.shape())?;
                let nbatch: usize = batch.iter().product();
                if a2.requires_grad() {
                    // dA = dY * B^T
                    let bd = b2.data();
                    let mut da = vec![0.0f32; a2.numel()];
                    for i in 0..nbatch {
                        let ao = batch_offset(i, &batch, &a_batch) * m * k;
                        let bo = batch_offset(i, &batch, &b_batch) * k * n;
                        gemm_nt(
                            m,
                            k,
                            n,
                            &g[i * m * n..(i + 1) * m * n],
                            &bd[bo..bo + k * n],
                            &mut da[ao..ao + m * k],
                        );
                    }
                    drop(bd);
                    a2.accumulate_grad(&da);
                }
                if b2.requires_grad() {
                    // dB = A^T * dY, via transposing each A slice
                    let ad = a2.data();
                    let mut db = vec![0.0f32; b2.numel()];
                    let mut at = vec![0.0f32; m * k];
                    for i in 0..nbatch {
                        let ao = batch_offset(i, &batch, &a_batch) * m * k;
                        let bo = batch_offset(i, &batch, &b_batch) * k * n;
                        transpose2d(m, k, &ad[ao..ao + m * k], &mut at);
                        gemm_nn(
                            k,
                            n,
                            m,
                            &at,
                            &g[i * m * n..(i + 1) * m * n],
                            &mut db[bo..bo + k * n],
                        );
                    }
                    drop(ad);
                    b2.accumulate_grad(&db);
                }
                Ok(())
            })
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

/// Gather input windows into columns: `col[ci*kh*kw + tap][y*w_out + x]`,
/// restricted to output rows `[y0, y1)`. Zero padding.
#[allow(clippy::too_many_arguments)]
fn im2col(
    input: &[f32],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    w_out: usize,
    y0: usize,
    y1: usize,
    col: &mut [f32],
) {
    let rows = y1 - y0;
    let cols = rows * w_out;
    for ci in 0..c_in {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let crow = &mut col[((ci * kh + ky) * kw + kx) * cols..][..cols];
                for oy in y0..y1 {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut crow[(oy - y0) * w_out..(oy - y0 + 1) * w_out];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add of columns back into the input layout (adjoint of [`im2col`]).
#[allow(clippy::too_many_arguments)]
fn col2im(
    col: &[f32],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    w_out: usize,
    y0: usize,
    y1: usize,
    dinput: &mut [f32],
) {
    let rows = y1 - y0;
    let cols = rows * w_out;
    for ci in 0..c_in {
        let plane = &mut dinput[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let crow = &col[((ci * kh + ky) * kw + kx) * cols..][..cols];
                for oy in y0..y1 {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &crow[(oy - y0) * w_out..(oy - y0 + 1) * w_out];
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &s) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

/// Output rows per im2col chunk, sized to keep the column buffer modest.
fn conv_chunk_rows(c_in: usize, kh: usize, kw: usize, w_out: usize, h_out: usize) -> usize {
    const BUDGET: usize = 8 << 20; // 8 MiB of f32s per column chunk
    let per_row = c_in * kh * kw * w_out * 4;
    (BUDGET / per_row.max(1)).clamp(1, h_out)
}

/// 2-D cross-correlation over NCHW input with OIHW weights.
///
/// `H' = (H + 2·pad − kh)/stride + 1`, likewise for width.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
    tape: Option<&Tape>,
) -> Result<Tensor> {
    if stride == 0 {
        return Err(Error::arg("conv2d stride must be positive"));
    }
    let ish = input.shape();
    let wsh = weight.shape();
    if ish.len() != 4 || wsh.len() != 4 {
        return Err(Error::shape(format!(
            "conv2d expects 4-D input and weight, got {:?} and {:?}",
            ish, wsh
        )));
    }
    let (b, c_in, h, w) = (ish[0], ish[1], ish[2], ish[3]);
    let (c_out, wc_in, kh, kw) = (wsh[0], wsh[1], wsh[2], wsh[3]);
    if c_in != wc_in {
        return Err(Error::shape(format!(
            "conv2d channel mismatch: input has {}, weight expects {}",
            c_in, wc_in
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::arg("conv2d kernel dims must be odd"));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::shape(format!(
            "conv2d input {}x{} too small for {}x{} kernel with padding {}",
            h, w, kh, kw, padding
        )));
    }
    if let Some(bias) = bias {
        if bias.shape() != [c_out] {
            return Err(Error::shape(format!(
                "conv2d bias shape {:?} != [{}]",
                bias.shape(),
                c_out
            )));
        }
    }
    let h_out = (h + 2 * padding - kh) / stride + 1;
    let w_out = (w + 2 * padding - kw) / stride + 1;

    let mut out = Tensor::uninit_buffer(b * c_out * h_out * w_out)?;
    {
        let xd = input.data();
        let wd = weight.data();
        if kh == 1 && kw == 1 && stride == 1 && padding == 0 {
            // pointwise: plain gemm per batch item
            for bi in 0..b {
                gemm_nn(
                    c_out,
                    h * w,
                    c_in,
                    &wd,
                    &xd[bi * c_in * h * w..(bi + 1) * c_in * h * w],
                    &mut out[bi * c_out * h * w..(bi + 1) * c_out * h * w],
                );
            }
        } else {
            let chunk = conv_chunk_rows(c_in, kh, kw, w_out, h_out);
            let mut col = Tensor::uninit_buffer(c_in * kh * kw * chunk * w_out)?;
            for bi in 0..b {
                let x = &xd[bi * c_in * h * w..(bi + 1) * c_in * h * w];
                let mut y0 = 0;
                while y0 < h_out {
                    let y1 = (y0 + chunk).min(h_out);
                    let cols = (y1 - y0) * w_out;
                    im2col(
                        x, c_in, h, w, kh, kw, stride, padding, w_out, y0, y1,
                        &mut col[..c_in * kh * kw * cols],
                    );
                    // out rows are strided by the full plane; gemm into a contiguous
                    // scratch then scatter? Not needed: chunk rows are contiguous
                    // within each output channel only if chunk == h_out. Use a
                    // per-chunk staging buffer.
                    if y0 == 0 && y1 == h_out {
                        gemm_nn(
                            c_out,
                            cols,
                            c_in * kh * kw,
                            &wd,
                            &col[..c_in * kh * kw * cols],
                            &mut out[bi * c_out * h_out * w_out..(bi + 1) * c_out * h_out * w_out],
                        );
                    } else {
                        let mut stage = vec![0.0f32; c_out * cols];
                        gemm_nn(
                            c_out,
                            cols,
                            c_in * kh * kw,
                            &wd,
                            &col[..c_in * kh * kw * cols],
                            &mut stage,
                        );
                        for co in 0..c_out {
                            let dst = &mut out[(bi * c_out + co) * h_out * w_out + y0 * w_out..]
                                [..cols];
                            dst.copy_from_slice(&stage[co * cols..(co + 1) * cols]);
                        }
                    }
                    y0 = y1;
                }
            }
        }
        if let Some(bias) = bias {
            let bd = bias.data();
            for bi in 0..b {
                for co in 0..c_out {
                    let bv = bd[co];
                    for v in
                        &mut out[(bi * c_out + co) * h_out * w_out..][..h_out * w_out]
                    {
                        *v += bv;
                    }
                }
            }
        }
    }

    let mut inputs: Vec<&Tensor> = vec![input, weight];
    if let Some(bias) = bias {
        inputs.push(bias);
    }
    let track = tracking(tape, &inputs);
    let out = Tensor::output(vec![b, c_out, h_out, w_out], out, track)?;

    if track {
        let x2 = input.clone();
        let w2 = weight.clone();
        let b2 = bias.cloned();
        let o2 = out.clone();
        tape.unwrap().record("conv2d", move || {
            conv2d_backward(&x2, &w2, b2.as_ref(), stride, padding, &o2)
        });
    }
    Ok(out)
}

fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
    out: &Tensor,
) -> Result<()> {
    out.with_grad(|g| -> Result<()> {
        let Some(g) = g else { return Ok(()) };
        let ish = input.shape();
        let wsh = weight.shape();
        let (b, c_in, h, w) = (ish[0], ish[1], ish[2], ish[3]);
        let (c_out, _, kh, kw) = (wsh[0], wsh[1], wsh[2], wsh[3]);
        let osh = out.shape();
        let (h_out, w_out) = (osh[2], osh[3]);

        if let Some(bias) = bias {
            if bias.requires_grad() {
                let mut db = vec![0.0f32; c_out];
                for bi in 0..b {
                    for co in 0..c_out {
                        let mut s = 0.0f64;
                        for &v in &g[(bi * c_out + co) * h_out * w_out..][..h_out * w_out] {
                            s += v as f64;
                        }
                        db[co] += s as f32;
                    }
                }
                bias.accumulate_grad(&db);
            }
        }

        let need_dx = input.requires_grad();
        let need_dw = weight.requires_grad();
        if !need_dx && !need_dw {
            return Ok(());
        }

        let xd = input.data();
        let wd = weight.data();
        let kk = c_in * kh * kw;
        let mut dx = if need_dx { vec![0.0f32; input.numel()] } else { Vec::new() };
        let mut dw = if need_dw { vec![0.0f32; weight.numel()] } else { Vec::new() };

        // W^T once, for dCol = W^T * dOut
        let mut wt = vec![0.0f32; kk * c_out];
        transpose2d(c_out, kk, &wd, &mut wt);

        let chunk = conv_chunk_rows(c_in, kh, kw, w_out, h_out);
        let mut col = vec![0.0f32; kk * chunk * w_out];
        let mut dcol = vec![0.0f32; kk * chunk * w_out];
        let mut gstage = vec![0.0f32; c_out * chunk * w_out];
        for bi in 0..b {
            let x = &xd[bi * c_in * h * w..(bi + 1) * c_in * h * w];
            let mut y0 = 0;
            while y0 < h_out {
                let y1 = (y0 + chunk).min(h_out);
                let cols = (y1 - y0) * w_out;
                // contiguous [c_out, cols] view of this chunk's output grad
                for co in 0..c_out {
                    gstage[co * cols..(co + 1) * cols].copy_from_slice(
                        &g[(bi * c_out + co) * h_out * w_out + y0 * w_out..][..cols],
                    );
                }
                if need_dw {
                    im2col(
                        x, c_in, h, w, kh, kw, stride, padding, w_out, y0, y1,
                        &mut col[..kk * cols],
                    );
                    // dW += dOut_chunk * col_chunk^T
                    gemm_nt(
                        c_out,
                        kk,
                        cols,
                        &gstage[..c_out * cols],
                        &col[..kk * cols],
                        &mut dw,
                    );
                }
                if need_dx {
                    dcol[..kk * cols].fill(0.0);
                    gemm_nn(
                        kk,
                        cols,
                        c_out,
                        &wt,
                        &gstage[..c_out * cols],
                        &mut dcol[..kk * cols],
                    );
                    col2im(
                        &dcol[..kk * cols],
                        c_in,
                        h,
                        w,
                        kh,
                        kw,
                        stride,
                        padding,
                        w_out,
                        y0,
                        y1,
                        &mut dx[bi * c_in * h * w..(bi + 1) * c_in * h * w],
                    );
                }
                y0 = y1;
            }
        }
        drop(xd);
        drop(wd);
        if need_dx {
            input.accumulate_grad(&dx);
        }
        if need_dw {
            weight.accumulate_grad(&dw);
        }
        Ok(())
    })
}
