//! Orthonormal Haar wavelet transform, per channel, plus the recursive
//! pyramid over the low-frequency band and a Pearson-correlation tool for
//! inspecting subband channel statistics.
//!
//! Over each disjoint 2×2 block `[a b; c d]`:
//!
//! ```text
//! ll = ( a + b + c + d) / 2      lh = (−a − b + c + d) / 2
//! hl = (−a + b − c + d) / 2      hh = ( a − b − c + d) / 2
//! ```
//!
//! The analysis matrix is orthogonal, so synthesis is its transpose, energy
//! is preserved, and the backward pass of each direction is simply the other
//! direction applied to gradients. No learnable parameters anywhere.

use crate::error::{Error, Result};
use crate::tensor::{tracking, Tape, Tensor};

/// One decomposition level: four half-resolution subbands of equal shape.
#[derive(Clone)]
pub struct SubbandSet {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

impl SubbandSet {
    pub fn shape(&self) -> &[usize] {
        self.ll.shape()
    }
}

/// Detail bands for levels 1..=K plus the coarsest approximation.
pub struct WaveletPyramid {
    /// `levels[k-1]` holds level-k subbands; `ll` there is the approximation
    /// that was further decomposed (for k < K) or equals `root_ll` (k = K).
    pub levels: Vec<SubbandSet>,
    pub root_ll: Tensor,
    pub k: usize,
}

fn check_nchw(x: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    let sh = x.shape();
    if sh.len() != 4 {
        return Err(Error::shape(format!("{what} needs NCHW, got {:?}", sh)));
    }
    Ok((sh[0], sh[1], sh[2], sh[3]))
}

fn dwt_plane(src: &[f32], h: usize, w: usize, ll: &mut [f32], lh: &mut [f32], hl: &mut [f32], hh: &mut [f32]) {
    let (ho, wo) = (h / 2, w / 2);
    for y in 0..ho {
        let r0 = &src[2 * y * w..(2 * y + 1) * w];
        let r1 = &src[(2 * y + 1) * w..(2 * y + 2) * w];
        let lr = &mut ll[y * wo..(y + 1) * wo];
        let hr = &mut lh[y * wo..(y + 1) * wo];
        let vr = &mut hl[y * wo..(y + 1) * wo];
        let dr = &mut hh[y * wo..(y + 1) * wo];
        for x in 0..wo {
            let (a, b) = (r0[2 * x], r0[2 * x + 1]);
            let (c, d) = (r1[2 * x], r1[2 * x + 1]);
            lr[x] = 0.5 * (a + b + c + d);
            hr[x] = 0.5 * (-a - b + c + d);
            vr[x] = 0.5 * (-a + b - c + d);
            dr[x] = 0.5 * (a - b - c + d);
        }
    }
}

fn idwt_plane(ll: &[f32], lh: &[f32], hl: &[f32], hh: &[f32], h: usize, w: usize, dst: &mut [f32]) {
    let (ho, wo) = (h / 2, w / 2);
    for y in 0..ho {
        let lr = &ll[y * wo..(y + 1) * wo];
        let hr = &lh[y * wo..(y + 1) * wo];
        let vr = &hl[y * wo..(y + 1) * wo];
        let dr = &hh[y * wo..(y + 1) * wo];
        let (r0, r1) = dst[2 * y * w..(2 * y + 2) * w].split_at_mut(w);
        for x in 0..wo {
            let (l, lhv, hlv, hhv) = (lr[x], hr[x], vr[x], dr[x]);
            r0[2 * x] = 0.5 * (l - lhv - hlv + hhv);
            r0[2 * x + 1] = 0.5 * (l - lhv + hlv - hhv);
            r1[2 * x] = 0.5 * (l + lhv - hlv - hhv);
            r1[2 * x + 1] = 0.5 * (l + lhv + hlv + hhv);
        }
    }
}

/// Single-level analysis of an NCHW tensor with even spatial dims.
pub fn dwt2(x: &Tensor, tape: Option<&Tape>) -> Result<SubbandSet> {
    let (b, c, h, w) = check_nchw(x, "dwt2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::arg(format!("dwt2 needs even H and W, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let plane = ho * wo;
    let mut ll = Tensor::uninit_buffer(b * c * plane)?;
    let mut lh = Tensor::uninit_buffer(b * c * plane)?;
    let mut hl = Tensor::uninit_buffer(b * c * plane)?;
    let mut hh = Tensor::uninit_buffer(b * c * plane)?;
    {
        let xd = x.data();
        for p in 0..b * c {
            dwt_plane(
                &xd[p * h * w..(p + 1) * h * w],
                h,
                w,
                &mut ll[p * plane..(p + 1) * plane],
                &mut lh[p * plane..(p + 1) * plane],
                &mut hl[p * plane..(p + 1) * plane],
                &mut hh[p * plane..(p + 1) * plane],
            );
        }
    }
    let track = tracking(tape, &[x]);
    let out_shape = vec![b, c, ho, wo];
    let set = SubbandSet {
        ll: Tensor::output(out_shape.clone(), ll, track)?,
        lh: Tensor::output(out_shape.clone(), lh, track)?,
        hl: Tensor::output(out_shape.clone(), hl, track)?,
        hh: Tensor::output(out_shape, hh, track)?,
    };
    if track {
        let x2 = x.clone();
        let s2 = set.clone();
        tape.unwrap().record("dwt2", move || {
            // orthogonal transform: d/dx = synthesis of subband grads
            let gll = s2.ll.grad();
            let glh = s2.lh.grad();
            let ghl = s2.hl.grad();
            let ghh = s2.hh.grad();
            if gll.is_none() && glh.is_none() && ghl.is_none() && ghh.is_none() {
                return Ok(());
            }
            let plane = (h / 2) * (w / 2);
            let zero = vec![0.0f32; b * c * plane];
            let gll = gll.unwrap_or_else(|| zero.clone());
            let glh = glh.unwrap_or_else(|| zero.clone());
            let ghl = ghl.unwrap_or_else(|| zero.clone());
            let ghh = ghh.unwrap_or(zero);
            let mut dx = vec![0.0f32; x2.numel()];
            for p in 0..b * c {
                idwt_plane(
                    &gll[p * plane..(p + 1) * plane],
                    &glh[p * plane..(p + 1) * plane],
                    &ghl[p * plane..(p + 1) * plane],
                    &ghh[p * plane..(p + 1) * plane],
                    h,
                    w,
                    &mut dx[p * h * w..(p + 1) * h * w],
                );
            }
            x2.accumulate_grad(&dx);
            Ok(())
        });
    }
    Ok(set)
}

/// Exact inverse of [`dwt2`].
pub fn idwt2(s: &SubbandSet, tape: Option<&Tape>) -> Result<Tensor> {
    let (b, c, ho, wo) = check_nchw(&s.ll, "idwt2")?;
    for (name, t) in [("lh", &s.lh), ("hl", &s.hl), ("hh", &s.hh)] {
        if t.shape() != s.ll.shape() {
            return Err(Error::shape(format!(
                "idwt2 subband {name} shape {:?} != ll {:?}",
                t.shape(),
                s.ll.shape()
            )));
        }
    }
    let (h, w) = (ho * 2, wo * 2);
    let plane = ho * wo;
    let mut out = Tensor::uninit_buffer(b * c * h * w)?;
    {
        let (ll, lh, hl, hh) = (s.ll.data(), s.lh.data(), s.hl.data(), s.hh.data());
        for p in 0..b * c {
            idwt_plane(
                &ll[p * plane..(p + 1) * plane],
                &lh[p * plane..(p + 1) * plane],
                &hl[p * plane..(p + 1) * plane],
                &hh[p * plane..(p + 1) * plane],
                h,
                w,
                &mut out[p * h * w..(p + 1) * h * w],
            );
        }
    }
    let track = tracking(tape, &[&s.ll, &s.lh, &s.hl, &s.hh]);
    let out = Tensor::output(vec![b, c, h, w], out, track)?;
    if track {
        let s2 = s.clone();
        let o2 = out.clone();
        tape.unwrap().record("idwt2", move || {
            o2.with_grad(|g| {
                let Some(g) = g else { return Ok(()) };
                let plane = ho * wo;
                let n = b * c * plane;
                let mut gll = vec![0.0f32; n];
                let mut glh = vec![0.0f32; n];
                let mut ghl = vec![0.0f32; n];
                let mut ghh = vec![0.0f32; n];
                for p in 0..b * c {
                    dwt_plane(
                        &g[p * h * w..(p + 1) * h * w],
                        h,
                        w,
                        &mut gll[p * plane..(p + 1) * plane],
                        &mut glh[p * plane..(p + 1) * plane],
                        &mut ghl[p * plane..(p + 1) * plane],
                        &mut ghh[p * plane..(p + 1) * plane],
                    );
                }
                if s2.ll.requires_grad() {
                    s2.ll.accumulate_grad(&gll);
                }
                if s2.lh.requires_grad() {
                    s2.lh.accumulate_grad(&glh);
                }
                if s2.hl.requires_grad() {
                    s2.hl.accumulate_grad(&ghl);
                }
                if s2.hh.requires_grad() {
                    s2.hh.accumulate_grad(&ghh);
                }
                Ok(())
            })
        });
    }
    Ok(out)
}

/// Recursively decompose the low-frequency band K times.
pub fn build_pyramid(x: &Tensor, k: usize, tape: Option<&Tape>) -> Result<WaveletPyramid> {
    if k < 1 {
        return Err(Error::arg("pyramid depth K must be >= 1"));
    }
    let (_, _, h, w) = check_nchw(x, "build_pyramid")?;
    let div = 1usize << k;
    if h % div != 0 || w % div != 0 {
        return Err(Error::arg(format!(
            "build_pyramid K={k} needs H,W divisible by {div}, got {h}x{w}"
        )));
    }
    let mut levels = Vec::with_capacity(k);
    let mut current = x.clone();
    for _ in 0..k {
        let set = dwt2(&current, tape)?;
        current = set.ll.clone();
        levels.push(set);
    }
    Ok(WaveletPyramid {
        levels,
        root_ll: current,
        k,
    })
}

/// Inverse of [`build_pyramid`]: synthesize from level K up to level 1.
pub fn collapse_pyramid(p: &WaveletPyramid, tape: Option<&Tape>) -> Result<Tensor> {
    if p.levels.len() != p.k || p.k < 1 {
        return Err(Error::arg(format!(
            "pyramid has {} levels, expected K={}",
            p.levels.len(),
            p.k
        )));
    }
    let mut current = p.root_ll.clone();
    for set in p.levels.iter().rev() {
        let merged = SubbandSet {
            ll: current,
            lh: set.lh.clone(),
            hl: set.hl.clone(),
            hh: set.hh.clone(),
        };
        current = idwt2(&merged, tape)?;
    }
    Ok(current)
}

// ---------------------------------------------------------------------------
// Pearson correlation between channels
// ---------------------------------------------------------------------------

/// Channel-by-channel Pearson correlation matrix.
pub struct PccMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols` coefficients.
    pub data: Vec<f64>,
    /// True when some channel had zero variance (its entries are 0).
    pub degenerate: bool,
}

impl PccMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// Entry (i,j) correlates flattened channel i of `x` with channel j of `y`
/// over all batch items and pixels.
pub fn pcc_matrix(x: &Tensor, y: &Tensor) -> Result<PccMatrix> {
    let (b, c, h, w) = check_nchw(x, "pcc_matrix")?;
    if x.shape() != y.shape() {
        return Err(Error::shape(format!(
            "pcc_matrix shapes differ: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let n = b * h * w;
    // center and normalize each channel once, in f64
    let prep = |t: &Tensor| -> (Vec<f64>, Vec<bool>) {
        let td = t.data();
        let plane = h * w;
        let mut out = vec![0.0f64; c * n];
        let mut degen = vec![false; c];
        for ci in 0..c {
            let dst = &mut out[ci * n..(ci + 1) * n];
            for bi in 0..b {
                let src = &td[(bi * c + ci) * plane..][..plane];
                for (k, &v) in src.iter().enumerate() {
                    dst[bi * plane + k] = v as f64;
                }
            }
            let mean = dst.iter().sum::<f64>() / n as f64;
            let mut ss = 0.0f64;
            for v in dst.iter_mut() {
                *v -= mean;
                ss += *v * *v;
            }
            if ss <= 0.0 {
                degen[ci] = true;
            } else {
                let inv = 1.0 / ss.sqrt();
                for v in dst.iter_mut() {
                    *v *= inv;
                }
            }
        }
        (out, degen)
    };
    let (xc, xdeg) = prep(x);
    let (yc, ydeg) = prep(y);
    let mut data = vec![0.0f64; c * c];
    for i in 0..c {
        if xdeg[i] {
            continue;
        }
        let xi = &xc[i * n..(i + 1) * n];
        for j in 0..c {
            if ydeg[j] {
                continue;
            }
            let yj = &yc[j * n..(j + 1) * n];
            let mut s = 0.0f64;
            for k in 0..n {
                s += xi[k] * yj[k];
            }
            data[i * c + j] = s;
        }
    }
    Ok(PccMatrix {
        rows: c,
        cols: c,
        data,
        degenerate: xdeg.iter().chain(ydeg.iter()).any(|&d| d),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_nchw(seed: u64, shape: &[usize]) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_image_gives_zero_subbands() {
        let x = Tensor::zeros(&[1, 2, 4, 4]).unwrap();
        let s = dwt2(&x, None).unwrap();
        for t in [&s.ll, &s.lh, &s.hl, &s.hh] {
            assert!(t.to_vec().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn constant_image_concentrates_in_ll() {
        let c = 0.37f32;
        let x = Tensor::full(&[1, 1, 6, 6], c).unwrap();
        let s = dwt2(&x, None).unwrap();
        for v in s.ll.to_vec() {
            assert!((v - 2.0 * c).abs() < 1e-6);
        }
        for t in [&s.lh, &s.hl, &s.hh] {
            assert!(t.to_vec().iter().all(|&v| v.abs() < 1e-7));
        }
    }

    #[test]
    fn horizontal_step_lands_in_hl_only() {
        // width 4, step inside block column 0: columns [0]=0, [1..]=1
        let mut data = vec![1.0f32; 16];
        for y in 0..4 {
            data[y * 4] = 0.0;
        }
        let x = Tensor::from_vec(&[1, 1, 4, 4], data).unwrap();
        let s = dwt2(&x, None).unwrap();
        assert!(s.lh.to_vec().iter().all(|&v| v.abs() < 1e-7));
        assert!(s.hh.to_vec().iter().all(|&v| v.abs() < 1e-7));
        let hl = s.hl.to_vec(); // 2x2
        assert!((hl[0] - 1.0).abs() < 1e-6 && (hl[2] - 1.0).abs() < 1e-6);
        assert!(hl[1].abs() < 1e-7 && hl[3].abs() < 1e-7);
    }

    #[test]
    fn idwt_inverts_dwt() {
        let x = rand_nchw(5, &[2, 3, 8, 10]);
        let s = dwt2(&x, None).unwrap();
        let back = idwt2(&s, None).unwrap();
        for (a, b) in back.to_vec().iter().zip(x.to_vec()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn idwt_of_constant_ll() {
        let c = 0.81f32;
        let shape = [1usize, 1, 2, 2];
        let s = SubbandSet {
            ll: Tensor::full(&shape, 2.0 * c).unwrap(),
            lh: Tensor::zeros(&shape).unwrap(),
            hl: Tensor::zeros(&shape).unwrap(),
            hh: Tensor::zeros(&shape).unwrap(),
        };
        let img = idwt2(&s, None).unwrap();
        for v in img.to_vec() {
            assert!((v - c).abs() < 1e-6);
        }
    }

    #[test]
    fn odd_dims_rejected() {
        let x = Tensor::zeros(&[1, 1, 5, 4]).unwrap();
        assert!(dwt2(&x, None).is_err());
    }

    #[test]
    fn pyramid_k1_is_single_dwt() {
        let x = rand_nchw(7, &[1, 2, 8, 8]);
        let p = build_pyramid(&x, 1, None).unwrap();
        let s = dwt2(&x, None).unwrap();
        assert_eq!(p.levels.len(), 1);
        assert_eq!(p.root_ll.to_vec(), s.ll.to_vec());
        assert_eq!(p.levels[0].hh.to_vec(), s.hh.to_vec());
    }

    #[test]
    fn pyramid_constant_k3() {
        let c = 0.11f32;
        let x = Tensor::full(&[1, 1, 16, 16], c).unwrap();
        let p = build_pyramid(&x, 3, None).unwrap();
        for lvl in &p.levels {
            for t in [&lvl.lh, &lvl.hl, &lvl.hh] {
                assert!(t.to_vec().iter().all(|&v| v.abs() < 1e-6));
            }
        }
        // factor 2 per level
        for v in p.root_ll.to_vec() {
            assert!((v - 8.0 * c).abs() < 1e-5);
        }
        assert_eq!(p.root_ll.shape(), &[1, 1, 2, 2]);
    }

    #[test]
    fn pyramid_roundtrip_k2() {
        let x = rand_nchw(9, &[1, 2, 16, 16]);
        let p = build_pyramid(&x, 2, None).unwrap();
        let back = collapse_pyramid(&p, None).unwrap();
        for (a, b) in back.to_vec().iter().zip(x.to_vec()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn pyramid_rejects_bad_k() {
        let x = Tensor::zeros(&[1, 1, 8, 8]).unwrap();
        assert!(build_pyramid(&x, 0, None).is_err());
        assert!(build_pyramid(&x, 4, None).is_err()); // 8 not divisible by 16
    }

    #[test]
    fn level_shapes_halve() {
        let x = rand_nchw(10, &[1, 3, 32, 16]);
        let p = build_pyramid(&x, 3, None).unwrap();
        assert_eq!(p.levels[0].shape(), &[1, 3, 16, 8]);
        assert_eq!(p.levels[1].shape(), &[1, 3, 8, 4]);
        assert_eq!(p.levels[2].shape(), &[1, 3, 4, 2]);
        assert_eq!(p.root_ll.shape(), &[1, 3, 4, 2]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn energy_preserved_and_reconstruction_exact(seed in 0u64..500, k in 1usize..5) {
            let x = rand_nchw(seed, &[1, 2, 16, 16]);
            let p = build_pyramid(&x, k, None).unwrap();
            let e_in: f64 = x.to_vec().iter().map(|&v| (v as f64) * (v as f64)).sum();
            let mut e_out: f64 = p.root_ll.to_vec().iter().map(|&v| (v as f64) * (v as f64)).sum();
            for lvl in &p.levels {
                for t in [&lvl.lh, &lvl.hl, &lvl.hh] {
                    e_out += t.to_vec().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
                }
            }
            prop_assert!(((e_in - e_out) / e_in.max(1e-12)).abs() < 1e-4);
            let back = collapse_pyramid(&p, None).unwrap();
            for (a, b) in back.to_vec().iter().zip(x.to_vec()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shift_by_two_alignment() {
        // dwt of an image shifted down/right by 2 equals the dwt shifted by 1
        let x = rand_nchw(13, &[1, 1, 8, 8]);
        let xd = x.to_vec();
        let mut shifted = vec![0.0f32; 64];
        for y in 0..6 {
            for xq in 0..6 {
                shifted[(y + 2) * 8 + xq + 2] = xd[y * 8 + xq];
            }
        }
        let xs = Tensor::from_vec(&[1, 1, 8, 8], shifted).unwrap();
        let s0 = dwt2(&x, None).unwrap();
        let s1 = dwt2(&xs, None).unwrap();
        let (a, b) = (s0.ll.to_vec(), s1.ll.to_vec());
        for y in 0..3 {
            for xq in 0..3 {
                assert!((a[y * 4 + xq] - b[(y + 1) * 4 + xq + 1]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dwt_gradients_match_finite_differences() {
        use crate::gradcheck::assert_grads_close;
        use crate::tensor::ops;
        let x = rand_nchw(15, &[1, 2, 4, 4]);
        let x = Tensor::leaf(x.shape(), x.to_vec()).unwrap();
        assert_grads_close(
            &[&x],
            |xs, t| {
                let s = dwt2(xs[0], t)?;
                // weight the bands differently so mixed-up bands fail
                let l = ops::sum_all(&s.ll, t)?;
                let l2 = ops::sum_all(&ops::mul(&s.lh, &s.lh, t)?, t)?;
                let l3 = ops::sum_all(&ops::mul(&s.hl, &s.hl, t)?, t)?;
                let l4 = ops::sum_all(&ops::mul(&s.hh, &s.hh, t)?, t)?;
                let s1 = ops::add(&l, &l2, t)?;
                let s2 = ops::add(&l3, &l4, t)?;
                let merged = SubbandSet {
                    ll: s.ll.clone(),
                    lh: s.lh.clone(),
                    hl: s.hl.clone(),
                    hh: s.hh.clone(),
                };
                let back = idwt2(&merged, t)?;
                let l5 = ops::sum_all(&ops::mul(&back, &back, t)?, t)?;
                ops::add(&ops::add(&s1, &s2, t)?, &l5, t)
            },
            1e-2,
            "dwt2/idwt2",
        );
    }

    #[test]
    fn pcc_self_correlation_unit_diagonal() {
        let x = rand_nchw(21, &[1, 4, 6, 6]);
        let m = pcc_matrix(&x, &x).unwrap();
        for i in 0..4 {
            assert!((m.get(i, i) - 1.0).abs() < 1e-12);
        }
        assert!(!m.degenerate);
    }

    #[test]
    fn pcc_anti_correlation() {
        let x = rand_nchw(22, &[1, 3, 4, 4]);
        let neg = Tensor::from_vec(x.shape(), x.to_vec().iter().map(|v| -v).collect()).unwrap();
        let m = pcc_matrix(&x, &neg).unwrap();
        for i in 0..3 {
            assert!((m.get(i, i) + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pcc_matches_direct_formula() {
        // fixed 2-channel 4x4 pair against a covariance/sigma oracle
        let x = rand_nchw(23, &[1, 2, 4, 4]);
        let y = rand_nchw(24, &[1, 2, 4, 4]);
        let m = pcc_matrix(&x, &y).unwrap();
        let (xd, yd) = (x.to_vec(), y.to_vec());
        for i in 0..2 {
            for j in 0..2 {
                let a = &xd[i * 16..(i + 1) * 16];
                let b = &yd[j * 16..(j + 1) * 16];
                let ma = a.iter().map(|&v| v as f64).sum::<f64>() / 16.0;
                let mb = b.iter().map(|&v| v as f64).sum::<f64>() / 16.0;
                let mut cov = 0.0;
                let mut va = 0.0;
                let mut vb = 0.0;
                for k in 0..16 {
                    let da = a[k] as f64 - ma;
                    let db = b[k] as f64 - mb;
                    cov += da * db;
                    va += da * da;
                    vb += db * db;
                }
                let want = cov / (va.sqrt() * vb.sqrt());
                assert!((m.get(i, j) - want).abs() < 1e-6, "{} vs {}", m.get(i, j), want);
            }
        }
    }

    #[test]
    fn pcc_zero_variance_flagged() {
        let x = Tensor::full(&[1, 2, 4, 4], 1.0).unwrap();
        let y = rand_nchw(25, &[1, 2, 4, 4]);
        let m = pcc_matrix(&x, &y).unwrap();
        assert!(m.degenerate);
        for j in 0..2 {
            assert_eq!(m.get(0, j), 0.0);
            assert_eq!(m.get(1, j), 0.0);
        }
    }
}
