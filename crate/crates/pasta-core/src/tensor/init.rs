//! Seeded weight initializers. All draws go through a caller-provided
//! `ChaCha8Rng` in a fixed order, so a seed pins every parameter bit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Normal(0, sigma) truncated to ±2 sigma by rejection.
pub fn trunc_normal(rng: &mut ChaCha8Rng, n: usize, sigma: f32) -> Vec<f32> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        // Box-Muller
        let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
        let u2: f32 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let z0 = r * (2.0 * std::f32::consts::PI * u2).cos();
        let z1 = r * (2.0 * std::f32::consts::PI * u2).sin();
        for z in [z0, z1] {
            if z.abs() <= 2.0 && out.len() < n {
                out.push(z * sigma);
            }
        }
    }
    out
}

/// Uniform(−1/sqrt(fan_in), 1/sqrt(fan_in)), the usual conv default.
pub fn uniform_fan_in(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f32> {
    let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

pub fn zeros(n: usize) -> Vec<f32> {
    vec![0.0; n]
}

pub fn ones(n: usize) -> Vec<f32> {
    vec![1.0; n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn trunc_normal_respects_bounds_and_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        let va = trunc_normal(&mut a, 1000, 0.02);
        let vb = trunc_normal(&mut b, 1000, 0.02);
        assert_eq!(va, vb);
        assert!(va.iter().all(|v| v.abs() <= 0.04 + 1e-9));
    }

    #[test]
    fn fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = uniform_fan_in(&mut rng, 500, 16);
        let bound = 1.0 / 4.0;
        assert!(v.iter().all(|x| x.abs() < bound));
    }
}
