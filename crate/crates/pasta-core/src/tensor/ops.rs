//! Elementwise arithmetic, activations and reductions.

use super::{tracking, Tape, Tensor};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// broadcasting machinery
// ---------------------------------------------------------------------------

/// NumPy-style broadcast of two shapes (size-1 dims expand).
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let av = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let bv = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        if av == bv || av == 1 || bv == 1 {
            out[i] = av.max(bv);
        } else {
            return Err(Error::shape(format!(
                "cannot broadcast {:?} with {:?}",
                a, b
            )));
        }
    }
    Ok(out)
}

/// Row-major strides of `shape` right-aligned into `out`, with 0 on
/// broadcast dims.
fn bstrides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let n = out.len();
    let k = shape.len();
    let mut strides = vec![0usize; n];
    let mut s = 1usize;
    for i in (0..k).rev() {
        strides[n - k + i] = if shape[i] == 1 { 0 } else { s };
        s *= shape[i];
    }
    strides
}

/// Apply `f(out_off, a_off, b_off, len, a_step, b_step)` over contiguous
/// innermost runs of the broadcast iteration space.
fn for_each_run(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    f: &mut impl FnMut(usize, usize, usize, usize, usize, usize),
) {
    let n = out_shape.len();
    if n == 0 {
        f(0, 0, 0, 1, 1, 1);
        return;
    }
    let inner = out_shape[n - 1];
    let (ia, ib) = (sa[n - 1], sb[n - 1]);
    let outer: usize = out_shape[..n - 1].iter().product();
    let mut coords = vec![0usize; n.saturating_sub(1)];
    let mut off_out = 0usize;
    for _ in 0..outer {
        let mut ao = 0usize;
        let mut bo = 0usize;
        for (d, &c) in coords.iter().enumerate() {
            ao += c * sa[d];
            bo += c * sb[d];
        }
        f(off_out, ao, bo, inner, ia, ib);
        off_out += inner;
        for d in (0..coords.len()).rev() {
            coords[d] += 1;
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
        }
    }
}

/// Sum `grad` (shaped `out_shape`) down to `to_shape` for broadcast backward.
pub(crate) fn reduce_to_shape(grad: &[f32], out_shape: &[usize], to_shape: &[usize]) -> Vec<f32> {
    let to_numel: usize = to_shape.iter().product();
    if out_shape == to_shape {
        return grad.to_vec();
    }
    let mut out = vec![0.0f32; to_numel];
    let st = bstrides(to_shape, out_shape);
    let n = out_shape.len();
    let inner = out_shape[n - 1];
    let it = st[n - 1];
    let outer: usize = out_shape[..n - 1].iter().product();
    let mut coords = vec![0usize; n.saturating_sub(1)];
    let mut src = 0usize;
    for _ in 0..outer {
        let mut to_off = 0usize;
        for (d, &c) in coords.iter().enumerate() {
            to_off += c * st[d];
        }
        if it == 0 {
            let mut s = 0.0f32;
            for &g in &grad[src..src + inner] {
                s += g;
            }
            out[to_off] += s;
        } else {
            for (j, &g) in grad[src..src + inner].iter().enumerate() {
                out[to_off + j * it] += g;
            }
        }
        src += inner;
        for d in (0..coords.len()).rev() {
            coords[d] += 1;
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// binary elementwise
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

fn binary(a: &Tensor, b: &Tensor, kind: BinKind, tape: Option<&Tape>) -> Result<Tensor> {
    let out_shape = broadcast_shapes(a.shape(), b.shape())?;
    let numel: usize = out_shape.iter().product();
    let mut out = Tensor::uninit_buffer(numel)?;
    {
        let ad = a.data();
        let bd = b.data();
        let sa = bstrides(a.shape(), &out_shape);
        let sb = bstrides(b.shape(), &out_shape);
        for_each_run(&out_shape, &sa, &sb, &mut |oo, ao, bo, len, ia, ib| {
            let dst = &mut out[oo..oo + len];
            match kind {
                BinKind::Add => {
                    if ia == 1 && ib == 1 {
                        let (x, y) = (&ad[ao..ao + len], &bd[bo..bo + len]);
                        for i in 0..len {
                            dst[i] = x[i] + y[i];
                        }
                    } else {
                        for (i, d) in dst.iter_mut().enumerate() {
                            *d = ad[ao + i * ia] + bd[bo + i * ib];
                        }
                    }
                }
                BinKind::Sub => {
                    if ia == 1 && ib == 1 {
                        let (x, y) = (&ad[ao..ao + len], &bd[bo..bo + len]);
                        for i in 0..len {
                            dst[i] = x[i] - y[i];
                        }
                    } else {
                        for (i, d) in dst.iter_mut().enumerate() {
                            *d = ad[ao + i * ia] - bd[bo + i * ib];
                        }
                    }
                }
                BinKind::Mul => {
                    if ia == 1 && ib == 1 {
                        let (x, y) = (&ad[ao..ao + len], &bd[bo..bo + len]);
                        for i in 0..len {
                            dst[i] = x[i] * y[i];
                        }
                    } else {
                        for (i, d) in dst.iter_mut().enumerate() {
                            *d = ad[ao + i * ia] * bd[bo + i * ib];
                        }
                    }
                }
            }
        });
    }
    let track = tracking(tape, &[a, b]);
    let out = Tensor::output(out_shape.clone(), out, track)?;
    if track {
        let (a2, b2, o2) = (a.clone(), b.clone(), out.clone());
        let name = match kind {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
        };
        tape.unwrap().record(name, move || {
            o2.with_grad(|g| -> Result<()> {
                let Some(g) = g else { return Ok(()) };
                let out_shape = o2.shape();
                match kind {
                    BinKind::Add => {
                        if a2.requires_grad() {
                            a2.accumulate_grad(&reduce_to_shape(g, out_shape, a2.shape()));
                        }
                        if b2.requires_grad() {
                            b2.accumulate_grad(&reduce_to_shape(g, out_shape, b2.shape()));
                        }
                    }
                    BinKind::Sub => {
                        if a2.requires_grad() {
                            a2.accumulate_grad(&reduce_to_shape(g, out_shape, a2.shape()));
                        }
                        if b2.requires_grad() {
                            let mut neg = reduce_to_shape(g, out_shape, b2.shape());
                            for v in &mut neg {
                                *v = -*v;
                            }
                            b2.accumulate_grad(&neg);
                        }
                    }
                    BinKind::Mul => {
                        // d(a*b) = g*b into a, g*a into b, with broadcast reduce
                        if a2.requires_grad() {
                            let bd = b2.data();
                            let sb = bstrides(b2.shape(), out_shape);
                            let sa_full = bstrides(out_shape, out_shape);
                            let mut tmp = vec![0.0f32; g.len()];
                            for_each_run(out_shape, &sa_full, &sb, &mut |oo, _ao, bo, len, _ia, ib| {
                                for i in 0..len {
                                    tmp[oo + i] = g[oo + i] * bd[bo + i * ib];
                                }
                            });
                            drop(bd);
                            a2.accumulate_grad(&reduce_to_shape(&tmp, out_shape, a2.shape()));
                        }
                        if b2.requires_grad() {
                            let ad = a2.data();
                            let sa = bstrides(a2.shape(), out_shape);
                            let sb_full = bstrides(out_shape, out_shape);
                            let mut tmp = vec![0.0f32; g.len()];
                            for_each_run(out_shape, &sa, &sb_full, &mut |oo, ao, _bo, len, ia, _ib| {
                                for i in 0..len {
                                    tmp[oo + i] = g[oo + i] * ad[ao + i * ia];
                                }
                            });
                            drop(ad);
                            b2.accumulate_grad(&reduce_to_shape(&tmp, out_shape, b2.shape()));
                        }
                    }
                }
                Ok(())
            })
        });
    }
    Ok(out)
}

pub fn add(a: &Tensor, b: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
    binary(a, b, BinKind::Add, tape)
}

pub fn sub(a: &Tensor, b: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
    binary(a, b, BinKind::Sub, tape)
}

pub fn mul(a: &Tensor, b: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
    binary(a, b, BinKind::Mul, tape)
}

/// y = a*x + b with scalar constants (no gradient to the constants).
pub fn affine(x: &Tensor, a: f32, b: f32, tape: Option<&Tape>) -> Result<Tensor> {
    let mut out = Tensor::uninit_buffer(x.numel())?;
    for (o, &v) in out.iter_mut().zip(x.data().iter()) {
        *o = a * v + b;
    }
    let track = tracking(tape, &[x]);
    let out = Tensor::output(x.shape().to_vec(), out, track)?;
    if track {
        let (x2, o2) = (x.clone(), out.clone());
        tape.unwrap().record("affine", move || {
            o2.with_grad(|g| {
                if let Some(g) = g {
                    let scaled: Vec<f32> = g.iter().map(|&v| v * a).collect();
                    x2.accumulate_grad(&scaled);
                }
                Ok(())
            })
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// unary activations
// ---------------------------------------------------------------------------

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid_scalar(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unary(
    x: &Tensor,
    name: &'static str,
    fwd: impl Fn(f32) -> f32,
    // df(input, output) -> local derivative
    dfn: impl Fn(f32, f32) -> f32 + 'static,
    tape: Option<&Tape>,
) -> Result<Tensor> {
    let mut out = Tensor::uninit_buffer(x.numel())?;
    for (o, &v) in out.iter_mut().zip(x.data().iter()) {
        *o = fwd(v);
    }
    let track = tracking(tape, &[x]);
    let out = Tensor::output(x.shape().to_vec(), out, track)?;
    if track {
        let (x2, o2) = (x.clone(), out.clone());
        tape.unwrap().record(name, move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let xd = x2.data();
                let od = o2.data();
                let mut dx = vec![0.0f32; g.len()];
                for i in 0..g.len() {
                    dx[i] = g[i] * dfn(xd[i], od[i]);
                }
                drop(xd);
                drop(od);
                x2.accumulate_grad(&dx);
                Ok(())
            })
        });
    }
    Ok(out)
}

pub fn sigmoid(x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
    unary(x, "sigmoid", sigmoid_scalar, |_, y| y * (1.0 - y), tape)
}

pub fn relu(x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
    unary(
        x,
        "relu",
        |v| v.max(0.0),
        |xi, _| if xi > 0.0 { 1.0 } else { 0.0 },
        tape,
    )
}

const GELU_C: f32 = 0.797_884_56; // sqrt(2/pi)

fn gelu_scalar(x: f32) -> f32 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f32) -> f32 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn gelu(x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
    unary(x, "gelu", gelu_scalar, |xi, _| gelu_grad(xi), tape)
}

pub fn abs(x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
    unary(
        x,
        "abs",
        |v| v.abs(),
        |xi, _| {
            if xi > 0.0 {
                1.0
            } else if xi < 0.0 {
                -1.0
            } else {
                0.0
            }
        },
        tape,
    )
}

/// Elementwise square root; the input must be non-negative.
pub fn sqrt(x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
    if x.data().iter().any(|v| *v < 0.0) {
        return Err(Error::arg("sqrt of negative value"));
    }
    unary(
        x,
        "sqrt",
        |v| v.sqrt(),
        |_, y| if y > 0.0 { 0.5 / y } else { 0.0 },
        tape,
    )
}

/// μ-law tonemap `T(x) = ln(1+μx)/ln(1+μ)` with inputs clamped to [0,1].
///
/// Outside-range values contribute zero gradient, matching the clamp.
pub fn mu_law(x: &Tensor, mu: f32, tape: Option<&Tape>) -> Result<Tensor> {
    if mu <= 0.0 {
        return Err(Error::arg("mu must be positive"));
    }
    let denom = mu.ln_1p();
    unary(
        x,
        "mu_law",
        move |v| (mu * v.clamp(0.0, 1.0)).ln_1p() / denom,
        move |xi, _| {
            if (0.0..=1.0).contains(&xi) {
                mu / ((1.0 + mu * xi) * denom)
            } else {
                0.0
            }
        },
        tape,
    )
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

/// Sum of all elements (f64 accumulation), as a 1-element tensor.
pub fn sum_all(x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
    let s: f64 = x.data().iter().map(|&v| v as f64).sum();
    let track = tracking(tape, &[x]);
    let out = Tensor::output(vec![1], vec![s as f32], track)?;
    if track {
        let (x2, o2) = (x.clone(), out.clone());
        tape.unwrap().record("sum_all", move || {
            o2.with_grad(|g| {
                if let Some(g) = g {
                    x2.accumulate_grad(&vec![g[0]; x2.numel()]);
                }
                Ok(())
            })
        });
    }
    Ok(out)
}

/// Mean of all elements (f64 accumulation), as a 1-element tensor.
pub fn mean_all(x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
    let n = x.numel();
    if n == 0 {
        return Err(Error::arg("mean of empty tensor"));
    }
    let s: f64 = x.data().iter().map(|&v| v as f64).sum();
    let mean = (s / n as f64) as f32;
    let track = tracking(tape, &[x]);
    let out = Tensor::output(vec![1], vec![mean], track)?;
    if track {
        let (x2, o2) = (x.clone(), out.clone());
        tape.unwrap().record("mean_all", move || {
            o2.with_grad(|g| {
                if let Some(g) = g {
                    let gv = g[0] / x2.numel() as f32;
                    x2.accumulate_grad(&vec![gv; x2.numel()]);
                }
                Ok(())
            })
        });
    }
    Ok(out)
}

/// Sum over one axis, keeping it as size 1.
pub fn sum_axis_keepdim(x: &Tensor, axis: usize, tape: Option<&Tape>) -> Result<Tensor> {
    let sh = x.shape();
    if axis >= sh.len() {
        return Err(Error::arg(format!(
            "sum axis {} out of range for shape {:?}",
            axis, sh
        )));
    }
    let outer: usize = sh[..axis].iter().product();
    let dim = sh[axis];
    let inner: usize = sh[axis + 1..].iter().product();
    let mut out = Tensor::uninit_buffer(outer * inner)?;
    {
        let xd = x.data();
        for o in 0..outer {
            for d in 0..dim {
                let src = &xd[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for i in 0..inner {
                    dst[i] += src[i];
                }
            }
        }
    }
    let mut out_shape = sh.to_vec();
    out_shape[axis] = 1;
    let track = tracking(tape, &[x]);
    let out = Tensor::output(out_shape, out, track)?;
    if track {
        let (x2, o2) = (x.clone(), out.clone());
        tape.unwrap().record("sum_axis", move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let mut dx = vec![0.0f32; x2.numel()];
                for o in 0..outer {
                    for d in 0..dim {
                        let dst = &mut dx[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                        dst.copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                x2.accumulate_grad(&dx);
                Ok(())
            })
        });
    }
    Ok(out)
}

/// Spatial mean of an NCHW tensor -> `[B,C,1,1]`.
pub fn global_avg_pool(x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
    let sh = x.shape();
    if sh.len() != 4 {
        return Err(Error::shape(format!("global_avg_pool needs NCHW, got {:?}", sh)));
    }
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    let hw = h * w;
    let mut out = Tensor::uninit_buffer(b * c)?;
    {
        let xd = x.data();
        for i in 0..b * c {
            let mut s = 0.0f64;
            for &v in &xd[i * hw..(i + 1) * hw] {
                s += v as f64;
            }
            out[i] = (s / hw as f64) as f32;
        }
    }
    let track = tracking(tape, &[x]);
    let out = Tensor::output(vec![b, c, 1, 1], out, track)?;
    if track {
        let (x2, o2) = (x.clone(), out.clone());
        tape.unwrap().record("global_avg_pool", move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let mut dx = vec![0.0f32; x2.numel()];
                for i in 0..b * c {
                    let gv = g[i] / hw as f32;
                    for v in &mut dx[i * hw..(i + 1) * hw] {
                        *v = gv;
                    }
                }
                x2.accumulate_grad(&dx);
                Ok(())
            })
        });
    }
    Ok(out)
}
