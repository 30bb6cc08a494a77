//! Data-movement ops: permutation, concatenation, slicing, padding and the
//! window machinery used by shifted-window attention. All are linear index
//! maps; backward runs the map in reverse with accumulation.

use super::{tracking, Tape, Tensor};
use crate::error::{Error, Result};

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

// ---------------------------------------------------------------------------
// permute
// ---------------------------------------------------------------------------

/// Reorder axes; `axes` is a permutation of `0..ndim`.
pub fn permute(x: &Tensor, axes: &[usize], tape: Option<&Tape>) -> Result<Tensor> {
    let sh = x.shape();
    if axes.len() != sh.len() {
        return Err(Error::arg(format!(
            "permute axes {:?} rank mismatch with {:?}",
            axes, sh
        )));
    }
    let mut seen = vec![false; sh.len()];
    for &a in axes {
        if a >= sh.len() || seen[a] {
            return Err(Error::arg(format!("invalid permutation {:?}", axes)));
        }
        seen[a] = true;
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| sh[a]).collect();
    let mut out = Tensor::uninit_buffer(x.numel())?;
    permute_copy(&x.data(), sh, axes, &mut out);
    let track = tracking(tape, &[x]);
    let out = Tensor::output(out_shape, out, track)?;
    if track {
        let (x2, o2) = (x.clone(), out.clone());
        // inverse permutation
        let mut inv = vec![0usize; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inv[a] = i;
        }
        tape.unwrap().record("permute", move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let mut dx = vec![0.0f32; x2.numel()];
                permute_copy(g, o2.shape(), &inv, &mut dx);
                x2.accumulate_grad(&dx);
                Ok(())
            })
        });
    }
    Ok(out)
}

/// dst[perm(idx)] = src[idx], iterating dst linearly with carry counters.
fn permute_copy(src: &[f32], src_shape: &[usize], axes: &[usize], dst: &mut [f32]) {
    let n = src_shape.len();
    if n == 0 {
        dst[0] = src[0];
        return;
    }
    let src_strides = strides_of(src_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| src_shape[a]).collect();
    // stride in src for each output axis
    let stride_for_out: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
    let inner = out_shape[n - 1];
    let inner_stride = stride_for_out[n - 1];
    let outer: usize = out_shape[..n - 1].iter().product();
    let mut coords = vec![0usize; n - 1];
    let mut dst_off = 0usize;
    for _ in 0..outer {
        let mut src_off = 0usize;
        for (d, &c) in coords.iter().enumerate() {
            src_off += c * stride_for_out[d];
        }
        if inner_stride == 1 {
            dst[dst_off..dst_off + inner].copy_from_slice(&src[src_off..src_off + inner]);
        } else {
            for i in 0..inner {
                dst[dst_off + i] = src[src_off + i * inner_stride];
            }
        }
        dst_off += inner;
        for d in (0..coords.len()).rev() {
            coords[d] += 1;
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
        }
    }
}

// ---------------------------------------------------------------------------
// concat / slice
// ---------------------------------------------------------------------------

pub fn concat(parts: &[&Tensor], axis: usize, tape: Option<&Tape>) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::arg("concat of zero tensors"));
    }
    let first = parts[0].shape();
    if axis >= first.len() {
        return Err(Error::arg(format!("concat axis {} out of range", axis)));
    }
    let mut axis_total = 0usize;
    for p in parts {
        let sh = p.shape();
        if sh.len() != first.len() {
            return Err(Error::shape("concat rank mismatch"));
        }
        for (d, (&a, &b)) in sh.iter().zip(first.iter()).enumerate() {
            if d != axis && a != b {
                return Err(Error::shape(format!(
                    "concat shapes differ off-axis: {:?} vs {:?}",
                    sh, first
                )));
            }
        }
        axis_total += sh[axis];
    }
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let mut out_shape = first.to_vec();
    out_shape[axis] = axis_total;
    let mut out = Tensor::uninit_buffer(outer * axis_total * inner)?;
    {
        let mut base = 0usize;
        for p in parts {
            let d = p.shape()[axis];
            let pd = p.data();
            for o in 0..outer {
                let src = &pd[o * d * inner..(o + 1) * d * inner];
                let dst = &mut out[(o * axis_total + base) * inner..][..d * inner];
                dst.copy_from_slice(src);
            }
            base += d;
        }
    }
    let track = tape.is_some() && parts.iter().any(|p| p.requires_grad());
    let out = Tensor::output(out_shape, out, track)?;
    if track {
        let parts2: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        let o2 = out.clone();
        tape.unwrap().record("concat", move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let mut base = 0usize;
                for p in &parts2 {
                    let d = p.shape()[axis];
                    if p.requires_grad() {
                        let mut dp = vec![0.0f32; p.numel()];
                        for o in 0..outer {
                            let src = &g[(o * axis_total + base) * inner..][..d * inner];
                            dp[o * d * inner..(o + 1) * d * inner].copy_from_slice(src);
                        }
                        p.accumulate_grad(&dp);
                    }
                    base += d;
                }
                Ok(())
            })
        });
    }
    Ok(out)
}

/// Contiguous sub-range `[start, start+len)` along one axis.
pub fn slice_axis(
    x: &Tensor,
    axis: usize,
    start: usize,
    len: usize,
    tape: Option<&Tape>,
) -> Result<Tensor> {
    let sh = x.shape();
    if axis >= sh.len() || start + len > sh[axis] {
        return Err(Error::arg(format!(
            "slice [{start}, {}) on axis {axis} out of range for {:?}",
            start + len,
            sh
        )));
    }
    let outer: usize = sh[..axis].iter().product();
    let dim = sh[axis];
    let inner: usize = sh[axis + 1..].iter().product();
    let mut out = Tensor::uninit_buffer(outer * len * inner)?;
    {
        let xd = x.data();
        for o in 0..outer {
            let src = &xd[(o * dim + start) * inner..][..len * inner];
            out[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
        }
    }
    let mut out_shape = sh.to_vec();
    out_shape[axis] = len;
    let track = tracking(tape, &[x]);
    let out = Tensor::output(out_shape, out, track)?;
    if track {
        let (x2, o2) = (x.clone(), out.clone());
        tape.unwrap().record("slice_axis", move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let mut dx = vec![0.0f32; x2.numel()];
                for o in 0..outer {
                    let dst = &mut dx[(o * dim + start) * inner..][..len * inner];
                    dst.copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                x2.accumulate_grad(&dx);
                Ok(())
            })
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// padding / cropping (NCHW)
// ---------------------------------------------------------------------------

/// Mirror index into `[0, n)` without repeating the edge sample.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    debug_assert!(n > 0);
    let mut v = i;
    if v < 0 {
        v = -v;
    }
    if v >= n {
        v = 2 * (n - 1) - v;
    }
    debug_assert!(v >= 0 && v < n);
    v as usize
}

/// Reflect-pad the two spatial dims of an NCHW tensor.
///
/// Each pad amount must be at most `dim − 1` (single reflection).
pub fn pad_reflect_nchw(
    x: &Tensor,
    (top, bottom, left, right): (usize, usize, usize, usize),
    tape: Option<&Tape>,
) -> Result<Tensor> {
    let sh = x.shape();
    if sh.len() != 4 {
        return Err(Error::shape(format!("pad_reflect_nchw needs NCHW, got {:?}", sh)));
    }
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    if top >= h || bottom >= h || left >= w || right >= w {
        return Err(Error::arg(format!(
            "reflect pad ({top},{bottom},{left},{right}) too large for {h}x{w} input"
        )));
    }
    let (ho, wo) = (h + top + bottom, w + left + right);
    let mut out = Tensor::uninit_buffer(b * c * ho * wo)?;
    {
        let xd = x.data();
        for p in 0..b * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for oy in 0..ho {
                let iy = reflect(oy as isize - top as isize, h);
                let srow = &src[iy * w..(iy + 1) * w];
                let drow = &mut dst[oy * wo..(oy + 1) * wo];
                for (ox, d) in drow.iter_mut().enumerate() {
                    let ix = reflect(ox as isize - left as isize, w);
                    *d = srow[ix];
                }
            }
        }
    }
    let track = tracking(tape, &[x]);
    let out = Tensor::output(vec![b, c, ho, wo], out, track)?;
    if track {
        let (x2, o2) = (x.clone(), out.clone());
        tape.unwrap().record("pad_reflect", move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let mut dx = vec![0.0f32; x2.numel()];
                for p in 0..b * c {
                    let gsl = &g[p * ho * wo..(p + 1) * ho * wo];
                    let dsl = &mut dx[p * h * w..(p + 1) * h * w];
                    for oy in 0..ho {
                        let iy = reflect(oy as isize - top as isize, h);
                        for ox in 0..wo {
                            let ix = reflect(ox as isize - left as isize, w);
                            dsl[iy * w + ix] += gsl[oy * wo + ox];
                        }
                    }
                }
                x2.accumulate_grad(&dx);
                Ok(())
            })
        });
    }
    Ok(out)
}

/// Crop an NCHW tensor to `[top..top+h, left..left+w]`.
pub fn crop_nchw(
    x: &Tensor,
    top: usize,
    left: usize,
    h: usize,
    w: usize,
    tape: Option<&Tape>,
) -> Result<Tensor> {
    let sh = x.shape();
    if sh.len() != 4 {
        return Err(Error::shape(format!("crop_nchw needs NCHW, got {:?}", sh)));
    }
    let (b, c, hi, wi) = (sh[0], sh[1], sh[2], sh[3]);
    if top + h > hi || left + w > wi {
        return Err(Error::arg(format!(
            "crop [{top}+{h}, {left}+{w}] exceeds {hi}x{wi}"
        )));
    }
    let mut out = Tensor::uninit_buffer(b * c * h * w)?;
    {
        let xd = x.data();
        for p in 0..b * c {
            let src = &xd[p * hi * wi..(p + 1) * hi * wi];
            let dst = &mut out[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                let srow = &src[(top + y) * wi + left..][..w];
                dst[y * w..(y + 1) * w].copy_from_slice(srow);
            }
        }
    }
    let track = tracking(tape, &[x]);
    let out = Tensor::output(vec![b, c, h, w], out, track)?;
    if track {
        let (x2, o2) = (x.clone(), out.clone());
        tape.unwrap().record("crop", move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let mut dx = vec![0.0f32; x2.numel()];
                for p in 0..b * c {
                    let gsl = &g[p * h * w..(p + 1) * h * w];
                    let dsl = &mut dx[p * hi * wi..(p + 1) * hi * wi];
                    for y in 0..h {
                        let drow = &mut dsl[(top + y) * wi + left..][..w];
                        for (d, s) in drow.iter_mut().zip(&gsl[y * w..(y + 1) * w]) {
                            *d += s;
                        }
                    }
                }
                x2.accumulate_grad(&dx);
                Ok(())
            })
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// windows (NHWC)
// ---------------------------------------------------------------------------

/// Cyclic roll of the H and W axes of an NHWC tensor:
/// `out[y][x] = in[(y+dy) mod H][(x+dx) mod W]`.
pub fn roll_nhwc(x: &Tensor, dy: isize, dx: isize, tape: Option<&Tape>) -> Result<Tensor> {
    let sh = x.shape();
    if sh.len() != 4 {
        return Err(Error::shape(format!("roll_nhwc needs NHWC, got {:?}", sh)));
    }
    let (b, h, w, c) = (sh[0], sh[1], sh[2], sh[3]);
    let mut out = Tensor::uninit_buffer(x.numel())?;
    {
        let xd = x.data();
        roll_copy(&xd, b, h, w, c, dy, dx, &mut out);
    }
    let track = tracking(tape, &[x]);
    let out = Tensor::output(sh.to_vec(), out, track)?;
    if track {
        let (x2, o2) = (x.clone(), out.clone());
        tape.unwrap().record("roll", move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let mut dx_buf = vec![0.0f32; x2.numel()];
                roll_copy(g, b, h, w, c, -dy, -dx, &mut dx_buf);
                x2.accumulate_grad(&dx_buf);
                Ok(())
            })
        });
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn roll_copy(src: &[f32], b: usize, h: usize, w: usize, c: usize, dy: isize, dx: isize, dst: &mut [f32]) {
    let hh = h as isize;
    let ww = w as isize;
    for bi in 0..b {
        for y in 0..h {
            let sy = ((y as isize + dy).rem_euclid(hh)) as usize;
            for x in 0..w {
                let sx = ((x as isize + dx).rem_euclid(ww)) as usize;
                let so = ((bi * h + sy) * w + sx) * c;
                let do_ = ((bi * h + y) * w + x) * c;
                dst[do_..do_ + c].copy_from_slice(&src[so..so + c]);
            }
        }
    }
}

/// How `window_partition` laid out its tiles; needed to invert it.
#[derive(Clone, Debug)]
pub struct WindowLayout {
    pub batch: usize,
    pub orig_h: usize,
    pub orig_w: usize,
    pub padded_h: usize,
    pub padded_w: usize,
    pub win: usize,
    pub shift: usize,
    pub channels: usize,
}

impl WindowLayout {
    pub fn windows_per_image(&self) -> usize {
        (self.padded_h / self.win) * (self.padded_w / self.win)
    }
}

/// Cyclic-shift by `(-shift, -shift)`, reflect-pad H and W up to multiples of
/// `win` if needed, and split into non-overlapping `win×win` tiles:
/// `[B,H,W,C] -> [B·nW, win², C]`.
pub fn window_partition(
    x: &Tensor,
    win: usize,
    shift: usize,
    tape: Option<&Tape>,
) -> Result<(Tensor, WindowLayout)> {
    if win == 0 {
        return Err(Error::arg("window size must be positive"));
    }
    if shift >= win {
        return Err(Error::arg(format!("shift {shift} must be < window {win}")));
    }
    let sh = x.shape();
    if sh.len() != 4 {
        return Err(Error::shape(format!("window_partition needs NHWC, got {:?}", sh)));
    }
    let (b, h, w, c) = (sh[0], sh[1], sh[2], sh[3]);
    let ph = h.div_ceil(win) * win;
    let pw = w.div_ceil(win) * win;

    // pad in NHWC via permute-free direct path: reuse the NCHW pad by going
    // through roll only when no padding is needed (the common case); else pad
    // first.
    let padded = if ph == h && pw == w {
        x.clone()
    } else {
        pad_reflect_nhwc(x, ph - h, pw - w, tape)?
    };
    let shifted = if shift == 0 {
        padded
    } else {
        roll_nhwc(&padded, shift as isize, shift as isize, tape)?
    };

    let layout = WindowLayout {
        batch: b,
        orig_h: h,
        orig_w: w,
        padded_h: ph,
        padded_w: pw,
        win,
        shift,
        channels: c,
    };
    let (gh, gw) = (ph / win, pw / win);
    let mut out = Tensor::uninit_buffer(b * ph * pw * c)?;
    {
        let xd = shifted.data();
        gather_windows(&xd, b, ph, pw, c, win, &mut out);
    }
    let track = tracking(tape, &[&shifted]);
    let out = Tensor::output(vec![b * gh * gw, win * win, c], out, track)?;
    if track {
        let (s2, o2) = (shifted.clone(), out.clone());
        tape.unwrap().record("window_gather", move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let mut dx = vec![0.0f32; s2.numel()];
                scatter_windows(g, b, ph, pw, c, win, &mut dx);
                s2.accumulate_grad(&dx);
                Ok(())
            })
        });
    }
    Ok((out, layout))
}

/// Exact inverse of [`window_partition`] for the same layout.
pub fn window_merge(wins: &Tensor, layout: &WindowLayout, tape: Option<&Tape>) -> Result<Tensor> {
    let (b, ph, pw, c, win) = (
        layout.batch,
        layout.padded_h,
        layout.padded_w,
        layout.channels,
        layout.win,
    );
    let (gh, gw) = (ph / win, pw / win);
    let want = [b * gh * gw, win * win, c];
    if wins.shape() != want {
        return Err(Error::shape(format!(
            "window_merge expects {:?}, got {:?}",
            want,
            wins.shape()
        )));
    }
    let mut out = Tensor::uninit_buffer(b * ph * pw * c)?;
    {
        let wd = wins.data();
        scatter_windows(&wd, b, ph, pw, c, win, &mut out);
    }
    let track = tracking(tape, &[wins]);
    let merged = Tensor::output(vec![b, ph, pw, c], out, track)?;
    if track {
        let (w2, m2) = (wins.clone(), merged.clone());
        tape.unwrap().record("window_scatter", move || {
            m2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let mut dw = vec![0.0f32; w2.numel()];
                gather_windows(g, b, ph, pw, c, win, &mut dw);
                w2.accumulate_grad(&dw);
                Ok(())
            })
        });
    }
    let unshifted = if layout.shift == 0 {
        merged
    } else {
        roll_nhwc(&merged, -(layout.shift as isize), -(layout.shift as isize), tape)?
    };
    if ph == layout.orig_h && pw == layout.orig_w {
        Ok(unshifted)
    } else {
        crop_nhwc(&unshifted, layout.orig_h, layout.orig_w, tape)
    }
}

fn gather_windows(src: &[f32], b: usize, ph: usize, pw: usize, c: usize, win: usize, dst: &mut [f32]) {
    let (gh, gw) = (ph / win, pw / win);
    let mut wo = 0usize;
    for bi in 0..b {
        for ty in 0..gh {
            for tx in 0..gw {
                for iy in 0..win {
                    let row = ((bi * ph + ty * win + iy) * pw + tx * win) * c;
                    dst[wo..wo + win * c].copy_from_slice(&src[row..row + win * c]);
                    wo += win * c;
                }
            }
        }
    }
}

fn scatter_windows(src: &[f32], b: usize, ph: usize, pw: usize, c: usize, win: usize, dst: &mut [f32]) {
    let (gh, gw) = (ph / win, pw / win);
    let mut wo = 0usize;
    for bi in 0..b {
        for ty in 0..gh {
            for tx in 0..gw {
                for iy in 0..win {
                    let row = ((bi * ph + ty * win + iy) * pw + tx * win) * c;
                    dst[row..row + win * c].copy_from_slice(&src[wo..wo + win * c]);
                    wo += win * c;
                }
            }
        }
    }
}

/// Reflect-pad bottom/right of an NHWC tensor (used before windowing).
fn pad_reflect_nhwc(x: &Tensor, pad_h: usize, pad_w: usize, tape: Option<&Tape>) -> Result<Tensor> {
    let sh = x.shape();
    let (b, h, w, c) = (sh[0], sh[1], sh[2], sh[3]);
    if pad_h >= h || pad_w >= w {
        return Err(Error::arg(format!(
            "window padding ({pad_h},{pad_w}) too large for {h}x{w}"
        )));
    }
    let (ho, wo) = (h + pad_h, w + pad_w);
    let mut out = Tensor::uninit_buffer(b * ho * wo * c)?;
    {
        let xd = x.data();
        for bi in 0..b {
            for oy in 0..ho {
                let iy = reflect(oy as isize, h);
                for ox in 0..wo {
                    let ix = reflect(ox as isize, w);
                    let so = ((bi * h + iy) * w + ix) * c;
                    let do_ = ((bi * ho + oy) * wo + ox) * c;
                    out[do_..do_ + c].copy_from_slice(&xd[so..so + c]);
                }
            }
        }
    }
    let track = tracking(tape, &[x]);
    let out = Tensor::output(vec![b, ho, wo, c], out, track)?;
    if track {
        let (x2, o2) = (x.clone(), out.clone());
        tape.unwrap().record("pad_reflect_nhwc", move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let mut dx = vec![0.0f32; x2.numel()];
                for bi in 0..b {
                    for oy in 0..ho {
                        let iy = reflect(oy as isize, h);
                        for ox in 0..wo {
                            let ix = reflect(ox as isize, w);
                            let so = ((bi * h + iy) * w + ix) * c;
                            let go = ((bi * ho + oy) * wo + ox) * c;
                            for k in 0..c {
                                dx[so + k] += g[go + k];
                            }
                        }
                    }
                }
                x2.accumulate_grad(&dx);
                Ok(())
            })
        });
    }
    Ok(out)
}

fn crop_nhwc(x: &Tensor, h: usize, w: usize, tape: Option<&Tape>) -> Result<Tensor> {
    let sh = x.shape();
    let (b, hi, wi, c) = (sh[0], sh[1], sh[2], sh[3]);
    let mut out = Tensor::uninit_buffer(b * h * w * c)?;
    {
        let xd = x.data();
        for bi in 0..b {
            for y in 0..h {
                let so = ((bi * hi + y) * wi) * c;
                let do_ = ((bi * h + y) * w) * c;
                out[do_..do_ + w * c].copy_from_slice(&xd[so..so + w * c]);
            }
        }
    }
    let track = tracking(tape, &[x]);
    let out = Tensor::output(vec![b, h, w, c], out, track)?;
    if track {
        let (x2, o2) = (x.clone(), out.clone());
        tape.unwrap().record("crop_nhwc", move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let mut dx = vec![0.0f32; x2.numel()];
                for bi in 0..b {
                    for y in 0..h {
                        let so = ((bi * hi + y) * wi) * c;
                        let go = ((bi * h + y) * w) * c;
                        for k in 0..w * c {
                            dx[so + k] += g[go + k];
                        }
                    }
                }
                x2.accumulate_grad(&dx);
                Ok(())
            })
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// row gather
// ---------------------------------------------------------------------------

/// `out[i] = table[idx[i]]` over a `[T, D]` table -> `[N, D]`; backward
/// scatter-adds into the table (used for learned position-bias lookups).
pub fn gather_rows(table: &Tensor, idx: &[usize], tape: Option<&Tape>) -> Result<Tensor> {
    let sh = table.shape();
    if sh.len() != 2 {
        return Err(Error::shape(format!("gather_rows wants [T,D], got {:?}", sh)));
    }
    let (t, d) = (sh[0], sh[1]);
    if let Some(&bad) = idx.iter().find(|&&i| i >= t) {
        return Err(Error::arg(format!("gather index {bad} out of range {t}")));
    }
    let mut out = Tensor::uninit_buffer(idx.len() * d)?;
    {
        let td = table.data();
        for (row, &i) in idx.iter().enumerate() {
            out[row * d..(row + 1) * d].copy_from_slice(&td[i * d..(i + 1) * d]);
        }
    }
    let track = tracking(tape, &[table]);
    let out = Tensor::output(vec![idx.len(), d], out, track)?;
    if track {
        let (t2, o2) = (table.clone(), out.clone());
        let idx2 = idx.to_vec();
        tape.unwrap().record("gather_rows", move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let mut dt = vec![0.0f32; t2.numel()];
                for (row, &i) in idx2.iter().enumerate() {
                    for k in 0..d {
                        dt[i * d + k] += g[row * d + k];
                    }
                }
                t2.accumulate_grad(&dt);
                Ok(())
            })
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// pixel shuffle (NCHW)
// ---------------------------------------------------------------------------

/// Space-to-depth with factor 2: `[B,C,H,W] -> [B,4C,H/2,W/2]`.
///
/// Output channel blocks are the four polyphase components in order
/// (even,even), (even,odd), (odd,even), (odd,odd).
pub fn pixel_unshuffle2(x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
    let sh = x.shape();
    if sh.len() != 4 {
        return Err(Error::shape(format!("pixel_unshuffle needs NCHW, got {:?}", sh)));
    }
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::arg(format!("pixel_unshuffle needs even H,W, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::uninit_buffer(x.numel())?;
    {
        let xd = x.data();
        unshuffle_copy(&xd, b, c, h, w, &mut out);
    }
    let track = tracking(tape, &[x]);
    let out = Tensor::output(vec![b, 4 * c, ho, wo], out, track)?;
    if track {
        let (x2, o2) = (x.clone(), out.clone());
        tape.unwrap().record("pixel_unshuffle", move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let mut dx = vec![0.0f32; x2.numel()];
                shuffle_copy(g, b, c, h, w, &mut dx);
                x2.accumulate_grad(&dx);
                Ok(())
            })
        });
    }
    Ok(out)
}

/// Depth-to-space with factor 2: `[B,4C,H,W] -> [B,C,2H,2W]`; exact inverse
/// of [`pixel_unshuffle2`].
pub fn pixel_shuffle2(x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
    let sh = x.shape();
    if sh.len() != 4 {
        return Err(Error::shape(format!("pixel_shuffle needs NCHW, got {:?}", sh)));
    }
    let (b, c4, hi, wi) = (sh[0], sh[1], sh[2], sh[3]);
    if c4 % 4 != 0 {
        return Err(Error::arg(format!("pixel_shuffle needs channels % 4 == 0, got {c4}")));
    }
    let c = c4 / 4;
    let (h, w) = (hi * 2, wi * 2);
    let mut out = Tensor::uninit_buffer(x.numel())?;
    {
        let xd = x.data();
        shuffle_copy(&xd, b, c, h, w, &mut out);
    }
    let track = tracking(tape, &[x]);
    let out = Tensor::output(vec![b, c, h, w], out, track)?;
    if track {
        let (x2, o2) = (x.clone(), out.clone());
        tape.unwrap().record("pixel_shuffle", move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let mut dx = vec![0.0f32; x2.numel()];
                unshuffle_copy(g, b, c, h, w, &mut dx);
                x2.accumulate_grad(&dx);
                Ok(())
            })
        });
    }
    Ok(out)
}

/// full-res [b,c,h,w] -> packed [b,4c,h/2,w/2]
fn unshuffle_copy(src: &[f32], b: usize, c: usize, h: usize, w: usize, dst: &mut [f32]) {
    let (ho, wo) = (h / 2, w / 2);
    for bi in 0..b {
        for ci in 0..c {
            let plane = &src[(bi * c + ci) * h * w..][..h * w];
            for (q, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                let dplane =
                    &mut dst[((bi * 4 * c) + q * c + ci) * ho * wo..][..ho * wo];
                for y in 0..ho {
                    let srow = &plane[(2 * y + dy) * w..];
                    for x in 0..wo {
                        dplane[y * wo + x] = srow[2 * x + dx];
                    }
                }
            }
        }
    }
}

/// packed [b,4c,h/2,w/2] -> full-res [b,c,h,w]
fn shuffle_copy(src: &[f32], b: usize, c: usize, h: usize, w: usize, dst: &mut [f32]) {
    let (ho, wo) = (h / 2, w / 2);
    for bi in 0..b {
        for ci in 0..c {
            let dplane = &mut dst[(bi * c + ci) * h * w..][..h * w];
            for (q, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                let splane = &src[((bi * 4 * c) + q * c + ci) * ho * wo..][..ho * wo];
                for y in 0..ho {
                    let drow = &mut dplane[(2 * y + dy) * w..];
                    for x in 0..wo {
                        drow[2 * x + dx] = splane[y * wo + x];
                    }
                }
            }
        }
    }
}
