//! Exposure-stack ingestion and the LDR→HDR domain lift.
//!
//! A scene directory holds `input_1.ppm`, `input_2.ppm`, `input_3.ppm`, an
//! `exposure.txt` with one EV stop per line (increasing), and optionally a
//! `gt.pfm` ground truth. Frames are normalized LDR in [0,1]; exposure times
//! derive from the stops as `t = 2^EV`.
//!
//! The domain lift is the power-law expansion `H = I^γ / t` and the network
//! input per frame is the 6-channel concatenation `[I, H]`.

pub mod pfm;
pub mod ppm;

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Planar float image, channel-major (`data[c][y][x]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Image {
        Image {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Image> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "image buffer {} != {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// View as a `[1, C, H, W]` tensor (copies the buffer).
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_vec(&[1, self.channels, self.height, self.width], self.data.clone())
    }

    /// First batch item of a `[1, C, H, W]` tensor back to an image.
    pub fn from_tensor(t: &Tensor) -> Result<Image> {
        let sh = t.shape();
        if sh.len() != 4 || sh[0] != 1 {
            return Err(Error::shape(format!("from_tensor wants [1,C,H,W], got {:?}", sh)));
        }
        Image::from_data(sh[1], sh[2], sh[3], t.to_vec())
    }
}

/// Three LDR frames of one scene with their exposure metadata.
pub struct ExposureStack {
    pub frames: Vec<Image>,
    /// Exposure times in seconds, strictly increasing.
    pub times: Vec<f32>,
    pub gamma: f32,
    /// Middle frame; the output is aligned to it.
    pub reference_index: usize,
}

pub const STACK_SIZE: usize = 3;
pub const DEFAULT_GAMMA: f32 = 2.2;

impl ExposureStack {
    pub fn new(frames: Vec<Image>, times: Vec<f32>, gamma: f32) -> Result<ExposureStack> {
        if frames.len() != STACK_SIZE || times.len() != STACK_SIZE {
            return Err(Error::arg(format!(
                "an exposure stack has exactly {STACK_SIZE} frames, got {} frames / {} times",
                frames.len(),
                times.len()
            )));
        }
        let (h, w) = (frames[0].height, frames[0].width);
        for (i, f) in frames.iter().enumerate() {
            if f.height != h || f.width != w || f.channels != 3 {
                return Err(Error::shape(format!(
                    "frame {i} is {}x{}x{}, expected 3x{h}x{w}",
                    f.channels, f.height, f.width
                )));
            }
        }
        if !times.windows(2).all(|p| p[0] < p[1]) {
            return Err(Error::arg(format!(
                "exposure times must be strictly increasing, got {:?}",
                times
            )));
        }
        if times.iter().any(|&t| t <= 0.0) {
            return Err(Error::arg("exposure times must be positive"));
        }
        if gamma <= 1.0 {
            return Err(Error::arg(format!("gamma must be > 1, got {gamma}")));
        }
        Ok(ExposureStack {
            frames,
            times,
            gamma,
            reference_index: 1,
        })
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }
}

/// Per-frame domain lift plus the 6-channel network inputs.
pub struct HdrStack {
    /// `H_i = I_i^γ / t_i`.
    pub lifted: Vec<Image>,
    /// `X_i = [I_i, H_i]` along channels.
    pub six_channel: Vec<Image>,
}

impl HdrStack {
    /// The three `X_i` as `[1,6,H,W]` tensors.
    pub fn input_tensors(&self) -> Result<Vec<Tensor>> {
        self.six_channel.iter().map(|x| x.to_tensor()).collect()
    }
}

/// Power-law expansion `H = I^γ / t`. Inputs must lie in [0,1].
pub fn gamma_to_hdr(ldr: &Image, t: f32, gamma: f32) -> Result<Image> {
    if t <= 0.0 {
        return Err(Error::arg(format!("exposure time must be positive, got {t}")));
    }
    if gamma <= 1.0 {
        return Err(Error::arg(format!("gamma must be > 1, got {gamma}")));
    }
    if let Some(v) = ldr.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::arg(format!(
            "LDR values must lie in [0,1], found {v}"
        )));
    }
    let inv_t = 1.0 / t;
    let data = ldr.data.iter().map(|&v| v.powf(gamma) * inv_t).collect();
    Image::from_data(ldr.channels, ldr.height, ldr.width, data)
}

/// μ-law tonemap of a linear image; out-of-range inputs are clamped and
/// counted so callers can warn.
pub fn mu_law_image(x: &Image, mu: f32) -> Result<(Image, usize)> {
    if mu <= 0.0 {
        return Err(Error::arg("mu must be positive"));
    }
    let denom = mu.ln_1p();
    let mut clamped = 0usize;
    let data = x
        .data
        .iter()
        .map(|&v| {
            let c = v.clamp(0.0, 1.0);
            if c != v {
                clamped += 1;
            }
            (mu * c).ln_1p() / denom
        })
        .collect();
    Ok((Image::from_data(x.channels, x.height, x.width, data)?, clamped))
}

/// Lift every frame and build the 6-channel inputs.
pub fn make_inputs(stack: &ExposureStack) -> Result<HdrStack> {
    let mut lifted = Vec::with_capacity(STACK_SIZE);
    let mut six = Vec::with_capacity(STACK_SIZE);
    for (frame, &t) in stack.frames.iter().zip(&stack.times) {
        let h = gamma_to_hdr(frame, t, stack.gamma)?;
        let mut x = Image::new(6, frame.height, frame.width);
        let plane = frame.height * frame.width;
        x.data[..3 * plane].copy_from_slice(&frame.data);
        x.data[3 * plane..].copy_from_slice(&h.data);
        lifted.push(h);
        six.push(x);
    }
    Ok(HdrStack {
        lifted,
        six_channel: six,
    })
}

/// Read `scene/{input_1..3.ppm, exposure.txt}` into a stack.
pub fn load_stack(dir: &Path) -> Result<ExposureStack> {
    let mut frames = Vec::with_capacity(STACK_SIZE);
    for i in 1..=STACK_SIZE {
        let p = dir.join(format!("input_{i}.ppm"));
        if !p.exists() {
            return Err(Error::msg(format!("missing frame {}", p.display())));
        }
        frames.push(ppm::read_ppm(&p)?);
    }
    let evs = read_exposures(&dir.join("exposure.txt"))?;
    let times = evs.iter().map(|&ev| 2.0f32.powf(ev)).collect();
    ExposureStack::new(frames, times, DEFAULT_GAMMA)
}

/// Optional ground truth for a scene.
pub fn load_gt(dir: &Path) -> Result<Option<Image>> {
    let p = dir.join("gt.pfm");
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(pfm::read_pfm(&p)?))
}

fn read_exposures(path: &Path) -> Result<Vec<f32>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::msg(format!("read {}: {e}", path.display())))?;
    let evs: Vec<f32> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<f32>()
                .map_err(|_| Error::Parse(format!("{}: bad EV line {l:?}", path.display())))
        })
        .collect::<Result<_>>()?;
    if evs.len() != STACK_SIZE {
        return Err(Error::Parse(format!(
            "{}: expected {STACK_SIZE} EV lines, found {}",
            path.display(),
            evs.len()
        )));
    }
    if !evs.windows(2).all(|p| p[0] < p[1]) {
        return Err(Error::Parse(format!(
            "{}: EV stops must be increasing, got {:?}",
            path.display(),
            evs
        )));
    }
    Ok(evs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn ramp_image(c: usize, h: usize, w: usize, scale: f32) -> Image {
        let mut img = Image::new(c, h, w);
        let n = img.data.len() as f32;
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32 / n) * scale;
        }
        img
    }

    #[test]
    fn gamma_fixed_points() {
        let ones = Image::from_data(3, 1, 1, vec![1.0; 3]).unwrap();
        let h = gamma_to_hdr(&ones, 1.0, 2.2).unwrap();
        assert!(h.data.iter().all(|&v| (v - 1.0).abs() < 1e-7));
        let zeros = Image::new(3, 2, 2);
        let h = gamma_to_hdr(&zeros, 3.7, 2.2).unwrap();
        assert!(h.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gamma_half_value() {
        let half = Image::from_data(3, 1, 1, vec![0.5; 3]).unwrap();
        let h = gamma_to_hdr(&half, 1.0, 2.2).unwrap();
        let want = 0.5f64.powf(2.2) as f32; // ~0.21764
        assert!((h.data[0] - want).abs() < 1e-6, "{} vs {want}", h.data[0]);
    }

    #[test]
    fn gamma_rejects_bad_inputs() {
        let img = Image::from_data(3, 1, 1, vec![0.5; 3]).unwrap();
        assert!(gamma_to_hdr(&img, 0.0, 2.2).is_err());
        assert!(gamma_to_hdr(&img, -1.0, 2.2).is_err());
        let over = Image::from_data(3, 1, 1, vec![1.5; 3]).unwrap();
        assert!(gamma_to_hdr(&over, 1.0, 2.2).is_err());
    }

    #[test]
    fn mu_law_endpoints_and_midpoint() {
        let img = Image::from_data(1, 1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        let (t, clamped) = mu_law_image(&img, 5000.0).unwrap();
        assert_eq!(clamped, 0);
        assert_eq!(t.data[0], 0.0);
        assert_eq!(t.data[2], 1.0);
        let want = (2501.0f64.ln() / 5001.0f64.ln()) as f32;
        assert!((t.data[1] - want).abs() < 1e-6);
    }

    #[test]
    fn mu_law_clamps_with_count() {
        let img = Image::from_data(1, 1, 2, vec![-0.25, 1.5]).unwrap();
        let (t, clamped) = mu_law_image(&img, 5000.0).unwrap();
        assert_eq!(clamped, 2);
        assert_eq!(t.data[0], 0.0);
        assert_eq!(t.data[1], 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn mu_law_strictly_monotone(a in 0.0f32..1.0, b in 0.0f32..1.0) {
            prop_assume!(a != b);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let img = Image::from_data(1, 1, 2, vec![lo, hi]).unwrap();
            let (t, _) = mu_law_image(&img, 5000.0).unwrap();
            prop_assert!(t.data[0] < t.data[1]);
        }

        #[test]
        fn gamma_monotone_in_i_antitone_in_t(
            i1 in 0.01f32..1.0,
            i2 in 0.01f32..1.0,
            t1 in 0.1f32..4.0,
            t2 in 0.1f32..4.0,
        ) {
            prop_assume!(i1 < i2 && t1 < t2);
            let img = |v: f32| Image::from_data(1, 1, 1, vec![v]).unwrap();
            let h1 = gamma_to_hdr(&img(i1), t1, 2.2).unwrap().data[0];
            let h2 = gamma_to_hdr(&img(i2), t1, 2.2).unwrap().data[0];
            prop_assert!(h1 < h2);
            let g1 = gamma_to_hdr(&img(i2), t1, 2.2).unwrap().data[0];
            let g2 = gamma_to_hdr(&img(i2), t2, 2.2).unwrap().data[0];
            prop_assert!(g2 < g1);
        }
    }

    #[test]
    fn make_inputs_layout_and_values() {
        let frames = vec![
            Image::from_data(3, 1, 1, vec![1.0; 3]).unwrap(),
            Image::from_data(3, 1, 1, vec![1.0; 3]).unwrap(),
            Image::from_data(3, 1, 1, vec![1.0; 3]).unwrap(),
        ];
        let stack = ExposureStack::new(frames, vec![0.25, 1.0, 4.0], 2.2).unwrap();
        let hdr = make_inputs(&stack).unwrap();
        // frame values 1 with t = {0.25, 1, 4} lift to H = {4, 1, 0.25}
        assert!((hdr.lifted[0].data[0] - 4.0).abs() < 1e-6);
        assert!((hdr.lifted[1].data[0] - 1.0).abs() < 1e-6);
        assert!((hdr.lifted[2].data[0] - 0.25).abs() < 1e-6);
        // X channel order: first three = I, last three = H
        for x in &hdr.six_channel {
            assert_eq!(x.channels, 6);
        }
        assert_eq!(hdr.six_channel[0].data[..3], [1.0, 1.0, 1.0]);
        assert!((hdr.six_channel[0].data[3] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn make_inputs_zero_frames() {
        let frames = vec![Image::new(3, 2, 2), Image::new(3, 2, 2), Image::new(3, 2, 2)];
        let stack = ExposureStack::new(frames, vec![0.5, 1.0, 2.0], 2.2).unwrap();
        let hdr = make_inputs(&stack).unwrap();
        for x in &hdr.six_channel {
            assert!(x.data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn reference_frame_identity_preserved() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let mut mk = || {
            let data: Vec<f32> = (0..3 * 4 * 4).map(|_| rng.gen_range(0.0..1.0)).collect();
            Image::from_data(3, 4, 4, data).unwrap()
        };
        let frames = vec![mk(), mk(), mk()];
        let middle = frames[1].clone();
        let stack = ExposureStack::new(frames, vec![0.25, 1.0, 4.0], 2.2).unwrap();
        assert_eq!(stack.reference_index, 1);
        let hdr = make_inputs(&stack).unwrap();
        let plane = 4 * 4 * 3;
        assert_eq!(&hdr.six_channel[1].data[..plane], &middle.data[..]);
    }

    #[test]
    fn stack_invariants_enforced() {
        let f = || Image::new(3, 2, 2);
        // wrong count
        assert!(ExposureStack::new(vec![f(), f()], vec![1.0, 2.0], 2.2).is_err());
        // non-increasing times
        assert!(ExposureStack::new(vec![f(), f(), f()], vec![1.0, 1.0, 2.0], 2.2).is_err());
        // mismatched resolution
        let odd = Image::new(3, 4, 2);
        assert!(ExposureStack::new(vec![f(), odd, f()], vec![1.0, 2.0, 4.0], 2.2).is_err());
    }

    #[test]
    fn scene_roundtrip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        for i in 1..=3 {
            let img = ramp_image(3, 6, 5, 1.0);
            ppm::write_ppm16(&img, &p.join(format!("input_{i}.ppm"))).unwrap();
        }
        std::fs::write(p.join("exposure.txt"), "-2\n0\n2\n").unwrap();
        let stack = load_stack(p).unwrap();
        assert_eq!(stack.times, vec![0.25, 1.0, 4.0]);
        assert_eq!(stack.height(), 6);
        assert_eq!(stack.width(), 5);
        assert!(load_gt(p).unwrap().is_none());
    }

    #[test]
    fn exposure_file_line_count_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        for i in 1..=3 {
            ppm::write_ppm8(&ramp_image(3, 2, 2, 1.0), &p.join(format!("input_{i}.ppm"))).unwrap();
        }
        std::fs::write(p.join("exposure.txt"), "-2\n0\n").unwrap();
        assert!(load_stack(p).is_err());
    }

    #[test]
    fn sixteen_bit_max_reads_as_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("max.ppm");
        let img = Image::from_data(3, 1, 1, vec![1.0; 3]).unwrap();
        ppm::write_ppm16(&img, &path).unwrap();
        let back = ppm::read_ppm(&path).unwrap();
        assert_eq!(back.data, vec![1.0; 3]);
    }

    #[test]
    fn ppm8_quantizes_to_256_levels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.ppm");
        let img = Image::from_data(3, 1, 1, vec![0.5; 3]).unwrap();
        ppm::write_ppm8(&img, &path).unwrap();
        let back = ppm::read_ppm(&path).unwrap();
        assert!((back.data[0] - 128.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn pfm_roundtrip_bitwise_with_negatives() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pfm");
        let mut img = ramp_image(3, 4, 3, 7.5);
        img.data[0] = -3.25;
        img.data[10] = 1e-20;
        pfm::write_pfm(&img, &path).unwrap();
        let back = pfm::read_pfm(&path).unwrap();
        assert_eq!(back.data, img.data);
        assert_eq!((back.height, back.width), (4, 3));
    }

    #[test]
    fn pfm_file_size_arithmetic() {
        // 2x2 all-0.5 image: header + 16 payload bytes per channel
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.pfm");
        let img = Image::from_data(3, 2, 2, vec![0.5; 12]).unwrap();
        pfm::write_pfm(&img, &path).unwrap();
        let size = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(size, pfm::pfm_header_len(&img) + 16 * 3);
    }

    #[test]
    fn pfm_rejects_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_data(1, 1, 1, vec![f32::NAN]).unwrap();
        assert!(pfm::write_pfm(&img, &dir.path().join("bad.pfm")).is_err());
    }
}
