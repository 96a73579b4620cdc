//! Noise schedule and forward (noising) kernels over concatenated sequences.
//!
//! Noise is always supplied by the caller so every stochastic path can be
//! replayed from a seed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Tensor;

/// Serializable description of a linear β schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 50, beta_min: 1e-4, beta_max: 0.02 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_min, self.beta_max)
    }
}

/// Per-step variances and cumulative signal retention.
///
/// Steps are 1-based: `beta(t)` and `alpha(t)` are defined for `1 ≤ t ≤ T`,
/// `alpha_bar(t)` for `0 ≤ t ≤ T` with `alpha_bar(0) = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear interpolation of β from `beta_min` to `beta_max` over `steps`.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidSchedule("T must be positive".into()));
        }
        if !(beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
            )));
        }
        let beta: Vec<f64> = if steps == 1 {
            vec![beta_min]
        } else {
            (0..steps).map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64).collect()
        };
        Ok(Self::from_betas(beta))
    }

    fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len() + 1);
        alpha_bar.push(1.0);
        for a in &alpha {
            let prev = *alpha_bar.last().expect("non-empty");
            alpha_bar.push(prev * a);
        }
        Self { beta, alpha, alpha_bar }
    }

    /// Total number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    /// `alpha_bar[0..=T]`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    fn check_step(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.steps() {
            return Err(Error::StepOutOfRange { step: t, max: self.steps() });
        }
        Ok(())
    }

    /// `(sqrt(alpha_bar[t]), sqrt(1 - alpha_bar[t]))`.
    pub fn marginal_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        self.check_step(t, 0)?;
        let ab = self.alpha_bar[t];
        Ok((ab.sqrt(), (1.0 - ab).sqrt()))
    }

    /// One noising transition: `sqrt(alpha[t])·prev + sqrt(beta[t])·noise`.
    pub fn forward_step(&self, prev: &Tensor, t: usize, noise: &Tensor) -> Result<Tensor> {
        self.check_step(t, 1)?;
        check_same_shape(prev, noise)?;
        let a = self.alpha(t).sqrt();
        let b = self.beta(t).sqrt();
        Ok(prev * a + noise * b)
    }

    /// Closed-form jump from `S_0` to step `t`; `t = 0` returns `S_0` exactly.
    pub fn forward_marginal(&self, clean: &Tensor, t: usize, noise: &Tensor) -> Result<Tensor> {
        self.check_step(t, 0)?;
        check_same_shape(clean, noise)?;
        if t == 0 {
            return Ok(clean.clone());
        }
        let (a, b) = self.marginal_coefficients(t)?;
        Ok(clean * a + noise * b)
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.02, 0.02).unwrap();
        assert_eq!(s.alpha_bars(), &[1.0, 0.98]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(NoiseSchedule::linear(0, 0.01, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.03, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.01, 1.0).is_err());
    }

    #[test]
    fn alpha_bar_matches_high_precision_product() {
        let s = ScheduleConfig::default().build().unwrap();
        // Running product with compensated (two-product) error tracking.
        let mut hi = 1.0f64;
        let mut lo = 0.0f64;
        for i in 0..50 {
            let beta = 1e-4 + (0.02 - 1e-4) * i as f64 / 49.0;
            let a = 1.0 - beta;
            let p = hi * a;
            let err = hi.mul_add(a, -p);
            lo = lo * a + err;
            hi = p;
        }
        let oracle = hi + lo;
        assert!((s.alpha_bar(50) - oracle).abs() < 1e-15, "{} vs {oracle}", s.alpha_bar(50));
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn forward_step_identities() {
        let s = NoiseSchedule::linear(4, 1e-12, 1e-12).unwrap();
        let prev = array![[1.0, -2.0], [0.5, 3.0]];
        let zero = Tensor::zeros((2, 2));
        let out = s.forward_step(&prev, 1, &zero).unwrap();
        assert!((&out - &prev).iter().all(|d| d.abs() < 1e-11));

        let s = NoiseSchedule::linear(4, 0.01, 0.04).unwrap();
        let noise = array![[0.3, -1.0], [2.0, 0.1]];
        let out = s.forward_step(&zero, 3, &noise).unwrap();
        assert_eq!(out, &noise * s.beta(3).sqrt());
        assert!(s.forward_step(&prev, 1, &Tensor::zeros((1, 2))).is_err());
        assert!(s.forward_step(&prev, 0, &zero).is_err());
    }

    #[test]
    fn forward_marginal_boundaries() {
        let s = ScheduleConfig::default().build().unwrap();
        let clean = array![[1.0, -2.0, 0.25]];
        let noise = array![[0.7, 0.7, -0.7]];
        assert_eq!(s.forward_marginal(&clean, 0, &noise).unwrap(), clean);
        let z = Tensor::zeros((1, 3));
        assert_eq!(s.forward_marginal(&clean, 17, &z).unwrap(), &clean * s.alpha_bar(17).sqrt());
        assert!(matches!(s.forward_marginal(&clean, 51, &noise), Err(Error::StepOutOfRange { step: 51, max: 50 })));
    }

    proptest! {
        #[test]
        fn alpha_bar_recurrence(steps in 1usize..200, lo in 1e-5f64..0.05, span in 0.0f64..0.3) {
            let s = NoiseSchedule::linear(steps, lo, lo + span).unwrap();
            prop_assert_eq!(s.alpha_bar(0), 1.0);
            for t in 1..=steps {
                let expected = s.alpha_bar(t - 1) * s.alpha(t);
                prop_assert!((s.alpha_bar(t) - expected).abs() <= f64::EPSILON * expected);
                prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                prop_assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            }
        }

        #[test]
        fn forward_marginal_is_deterministic(t in 0usize..=50, seed in any::<u64>()) {
            let s = ScheduleConfig::default().build().unwrap();
            let x = Tensor::from_shape_fn((3, 4), |(i, j)| ((seed >> (i * 4 + j)) & 7) as f64 - 3.5);
            let n = Tensor::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
            let a = s.forward_marginal(&x, t, &n).unwrap();
            let b = s.forward_marginal(&x, t, &n).unwrap();
            prop_assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}
