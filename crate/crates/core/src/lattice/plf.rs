use serde::{Deserialize, Serialize};

use super::{locate, Segment};
use crate::error::{Error, Result};

/// One-dimensional piecewise-linear function, i.e. a 1-D lattice with
/// arbitrary keypoint positions. Inputs outside the keypoint range are
/// clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearFn {
    input_keypoints: Vec<f64>,
    output_values: Vec<f64>,
}

impl PiecewiseLinearFn {
    pub fn new(input_keypoints: Vec<f64>, output_values: Vec<f64>) -> Result<Self> {
        if input_keypoints.len() < 2 {
            return Err(Error::input("piecewise-linear function needs at least 2 keypoints"));
        }
        if input_keypoints.len() != output_values.len() {
            return Err(Error::input(format!(
                "{} keypoints but {} output values",
                input_keypoints.len(),
                output_values.len()
            )));
        }
        if input_keypoints.iter().chain(&output_values).any(|v| !v.is_finite()) {
            return Err(Error::input("piecewise-linear function values must be finite"));
        }
        if input_keypoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::input("input keypoints must be strictly increasing"));
        }
        Ok(PiecewiseLinearFn {
            input_keypoints,
            output_values,
        })
    }

    /// Identity-like ramp: `n` evenly spaced keypoints on `[lo, hi]` mapped
    /// linearly onto `[out_lo, out_hi]`.
    pub fn ramp(lo: f64, hi: f64, n: usize, out_lo: f64, out_hi: f64) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(Error::input("ramp needs n >= 2 and hi > lo"));
        }
        PiecewiseLinearFn::new(super::linspace(lo, hi, n), super::linspace(out_lo, out_hi, n))
    }

    pub fn input_keypoints(&self) -> &[f64] {
        &self.input_keypoints
    }

    pub fn output_values(&self) -> &[f64] {
        &self.output_values
    }

    pub(crate) fn output_values_mut(&mut self) -> &mut [f64] {
        &mut self.output_values
    }

    pub fn len(&self) -> usize {
        self.input_keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_keypoints.is_empty()
    }

    pub(crate) fn segment(&self, t: f64) -> Segment {
        locate(&self.input_keypoints, t)
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        let seg = self.segment(t);
        let i = seg.left;
        if seg.w_right == 0.0 {
            return self.output_values[i];
        }
        if seg.w_right == 1.0 {
            return self.output_values[i + 1];
        }
        super::lerp_monotone_in_weight(self.output_values[i], self.output_values[i + 1], seg.w_right)
    }

    /// Derivative with respect to `t` (right-sided on keypoints, zero when
    /// `t` is clamped from outside the range).
    pub fn slope(&self, t: f64) -> f64 {
        let seg = self.segment(t);
        (self.output_values[seg.left + 1] - self.output_values[seg.left]) * seg.slope_scale
    }

    /// Gradient with respect to the output values: `(index, weight)` for the
    /// two keypoints bracketing `t`.
    pub fn grad_outputs(&self, t: f64) -> [(usize, f64); 2] {
        let seg = self.segment(t);
        [(seg.left, 1.0 - seg.w_right), (seg.left + 1, seg.w_right)]
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.output_values.windows(2).all(|w| w[1] >= w[0])
    }
}
