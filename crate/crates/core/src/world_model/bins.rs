//! Discrete-bin regression: scalar targets become two-hot distributions over
//! bins that are uniform in a (possibly symlog-) transformed space.

use crate::error::{BoomError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinTransform {
    Linear,
    SymLog,
}

impl BinTransform {
    #[inline]
    pub fn forward(self, v: f64) -> f64 {
        match self {
            BinTransform::Linear => v,
            BinTransform::SymLog => v.signum() * v.abs().ln_1p(),
        }
    }

    #[inline]
    pub fn inverse(self, u: f64) -> f64 {
        match self {
            BinTransform::Linear => u,
            BinTransform::SymLog => u.signum() * u.abs().exp_m1(),
        }
    }

    /// d inverse(u) / du
    #[inline]
    pub fn inverse_derivative(self, u: f64) -> f64 {
        match self {
            BinTransform::Linear => 1.0,
            BinTransform::SymLog => u.abs().exp(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinSpec {
    pub num_bins: usize,
    /// Range bounds, in transformed space.
    pub v_min: f64,
    pub v_max: f64,
    pub transform: BinTransform,
}

impl Default for BinSpec {
    fn default() -> Self {
        Self {
            num_bins: 101,
            v_min: -10.0,
            v_max: 10.0,
            transform: BinTransform::SymLog,
        }
    }
}

impl BinSpec {
    pub fn new(num_bins: usize, v_min: f64, v_max: f64, transform: BinTransform) -> Result<Self> {
        let spec = Self {
            num_bins,
            v_min,
            v_max,
            transform,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_bins < 2 || !(self.v_min < self.v_max) {
            return Err(BoomError::InvalidSpec(format!(
                "bins need num_bins >= 2 and v_min < v_max, got {} in [{}, {}]",
                self.num_bins, self.v_min, self.v_max
            )));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        (self.v_max - self.v_min) / (self.num_bins - 1) as f64
    }

    /// Bin center `k` in transformed space.
    pub fn center(&self, k: usize) -> f64 {
        if k == self.num_bins - 1 {
            self.v_max
        } else {
            self.v_min + k as f64 * self.bin_width()
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.num_bins).map(|k| self.center(k)).collect()
    }

    /// Value represented by bin `k`, in the original space.
    pub fn bin_value(&self, k: usize) -> f64 {
        self.transform.inverse(self.center(k))
    }

    /// Lower bin index and the weight on the upper neighbour.
    fn locate(&self, v: f64) -> (usize, f64) {
        let u = self.transform.forward(v).clamp(self.v_min, self.v_max);
        let pos = (u - self.v_min) / self.bin_width();
        let k = (pos.floor() as usize).min(self.num_bins - 2);
        let frac = (pos - k as f64).clamp(0.0, 1.0);
        (k, frac)
    }

    pub fn two_hot_encode(&self, v: f64) -> Vec<f64> {
        let mut p = vec![0.0; self.num_bins];
        self.two_hot_into(v, &mut p);
        p
    }

    pub fn two_hot_into(&self, v: f64, out: &mut [f64]) {
        out.fill(0.0);
        let (k, frac) = self.locate(v);
        out[k] = 1.0 - frac;
        out[k + 1] += frac;
    }

    /// Expected transformed value under `softmax(logits)`, mapped back.
    pub fn decode(&self, logits: &[f64]) -> f64 {
        debug_assert_eq!(logits.len(), self.num_bins);
        let u = self.expected_transformed(logits, None);
        self.transform.inverse(u)
    }

    /// Writes `d decode / d logits` into `grad` and returns the decoded value.
    pub fn decode_with_grad(&self, logits: &[f64], grad: &mut [f64]) -> f64 {
        let u = self.expected_transformed(logits, Some(&mut *grad));
        let scale = self.transform.inverse_derivative(u);
        for g in grad.iter_mut() {
            *g *= scale;
        }
        self.transform.inverse(u)
    }

    // Expected bin center; optional grad receives p_j (c_j - u).
    fn expected_transformed(&self, logits: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let mut acc = 0.0;
        for (k, &l) in logits.iter().enumerate() {
            let e = (l - max).exp();
            z += e;
            acc += e * self.center(k);
        }
        let u = acc / z;
        if let Some(g) = grad {
            for (k, (gk, &l)) in g.iter_mut().zip(logits).enumerate() {
                let p = (l - max).exp() / z;
                *gk = p * (self.center(k) - u);
            }
        }
        u
    }
}

/// `-sum_j target_j * log_softmax(logits)_j`; writes `softmax - target` into
/// `grad` (the logit gradient) when given.
pub fn soft_cross_entropy(logits: &[f64], target: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    let loss = -target
        .iter()
        .zip(logits)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, l)| t * (l - log_z))
        .sum::<f64>();
    if let Some(g) = grad {
        for ((gk, &l), &t) in g.iter_mut().zip(logits).zip(target) {
            *gk = (l - log_z).exp() - t;
        }
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_spec() -> BinSpec {
        BinSpec::new(11, 0.0, 10.0, BinTransform::Linear).unwrap()
    }

    #[test]
    fn value_on_center_is_one_hot() {
        let p = linear_spec().two_hot_encode(3.0);
        assert_eq!(p[3], 1.0);
        assert_eq!(p.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn midpoint_splits_evenly() {
        let p = linear_spec().two_hot_encode(3.5);
        assert!((p[3] - 0.5).abs() < 1e-15 && (p[4] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn below_range_clips_to_first_bin() {
        let p = linear_spec().two_hot_encode(-4.0);
        assert_eq!(p[0], 1.0);
        let q = linear_spec().two_hot_encode(40.0);
        assert_eq!(q[10], 1.0);
    }

    #[test]
    fn uniform_logits_decode_to_midpoint() {
        let spec = BinSpec::new(101, -3.0, 7.0, BinTransform::Linear).unwrap();
        assert!((spec.decode(&vec![0.25; 101]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn one_hot_logits_decode_to_bin_value() {
        let spec = BinSpec::default();
        let mut logits = vec![-1e9; 101];
        logits[70] = 0.0;
        assert!((spec.decode(&logits) - spec.bin_value(70)).abs() < 1e-9);
    }

    #[test]
    fn log_two_hot_roundtrip() {
        let spec = BinSpec::default();
        for v in [-300.0, -1.5, 0.0, 0.3, 12.0, 2000.0] {
            let logits: Vec<f64> = spec
                .two_hot_encode(v)
                .iter()
                .map(|&p| if p > 0.0 { p.ln() } else { -1e9 })
                .collect();
            assert!((spec.decode(&logits) - v).abs() < 1e-9, "v = {v}");
        }
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_target() {
        let logits = [0.1, -0.4, 1.2];
        let target = [0.0, 0.3, 0.7];
        let mut g = [0.0; 3];
        soft_cross_entropy(&logits, &target, Some(&mut g));
        let h = 1e-6;
        for k in 0..3 {
            let mut lp = logits;
            let mut lm = logits;
            lp[k] += h;
            lm[k] -= h;
            let fd = (soft_cross_entropy(&lp, &target, None)
                - soft_cross_entropy(&lm, &target, None))
                / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn decode_gradient_matches_finite_differences() {
        let spec = BinSpec::new(7, -2.0, 2.0, BinTransform::SymLog).unwrap();
        let logits = [0.3, -0.1, 0.8, 0.0, -1.0, 0.5, 0.2];
        let mut g = [0.0; 7];
        spec.decode_with_grad(&logits, &mut g);
        let h = 1e-6;
        for k in 0..7 {
            let mut lp = logits;
            let mut lm = logits;
            lp[k] += h;
            lm[k] -= h;
            let fd = (spec.decode(&lp) - spec.decode(&lm)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(BinSpec::new(1, 0.0, 1.0, BinTransform::Linear).is_err());
        assert!(BinSpec::new(5, 1.0, 1.0, BinTransform::Linear).is_err());
    }
}
