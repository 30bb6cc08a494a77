//! Central-finite-difference gradient checking (test support).
//!
//! Compares tape gradients against `(f(x+h) − f(x−h)) / 2h`, evaluating the
//! forward path only — the oracle never touches the backward rules it
//! checks.

use crate::error::Result;
use crate::tensor::{Tape, Tensor};

/// Worst relative error across all checked elements, where the denominator
/// is floored at 1 so near-zero gradients are compared absolutely.
pub struct GradReport {
    pub max_rel_err: f32,
    pub checked: usize,
}

/// Check `d loss / d inputs[i]` for every listed input.
///
/// `f` must be a pure function of the input tensors that returns a scalar
/// tensor. `h` is the central-difference step.
pub fn gradcheck(
    inputs: &[&Tensor],
    f: impl Fn(&[&Tensor], Option<&Tape>) -> Result<Tensor>,
    h: f32,
) -> Result<GradReport> {
    for t in inputs {
        t.zero_grad();
    }
    let tape = Tape::new();
    let loss = f(inputs, Some(&tape))?;
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f32>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut max_rel = 0.0f32;
    let mut checked = 0usize;
    for (ti, t) in inputs.iter().enumerate() {
        for i in 0..t.numel() {
            let orig = t.data()[i];
            t.data_mut()[i] = orig + h;
            let lp = f(inputs, None)?.item()?;
            t.data_mut()[i] = orig - h;
            let lm = f(inputs, None)?.item()?;
            t.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = analytic[ti][i];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    Ok(GradReport {
        max_rel_err: max_rel,
        checked,
    })
}

/// Convenience wrapper asserting the 1e-3 tolerance used throughout the
/// test suites.
pub fn assert_grads_close(
    inputs: &[&Tensor],
    f: impl Fn(&[&Tensor], Option<&Tape>) -> Result<Tensor>,
    h: f32,
    what: &str,
) {
    let report = gradcheck(inputs, f, h).unwrap_or_else(|e| panic!("{what}: gradcheck failed: {e}"));
    assert!(
        report.max_rel_err <= 1e-3,
        "{what}: max relative gradient error {} over {} elements",
        report.max_rel_err,
        report.checked
    );
}
