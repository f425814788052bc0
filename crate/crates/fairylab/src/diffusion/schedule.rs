//! Discrete noise schedule and the forward corruption process.

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use ndarray::Array3;

/// Linear beta schedule configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// Per-step schedule tables. `t` is 1-based throughout; tables index `t - 1`.
#[derive(Debug, Clone)]
pub struct NoiseSchedule<T: Scalar> {
    pub betas: Vec<T>,
    pub alphas: Vec<T>,
    pub alpha_bars: Vec<T>,
}

impl<T: Scalar> NoiseSchedule<T> {
    pub fn linear(config: &ScheduleConfig) -> Result<NoiseSchedule<T>> {
        if config.steps < 2 {
            return Err(Error::Validation("schedule needs at least 2 steps".into()));
        }
        let n = config.steps;
        let mut betas = Vec::with_capacity(n);
        for i in 0..n {
            let frac = i as f64 / (n - 1) as f64;
            betas.push(T::from_f64(
                config.beta_start + (config.beta_end - config.beta_start) * frac,
            ));
        }
        let alphas: Vec<T> = betas.iter().map(|b| T::one() - *b).collect();
        let mut alpha_bars = Vec::with_capacity(n);
        let mut prod = T::one();
        for a in &alphas {
            prod = prod * *a;
            alpha_bars.push(prod);
        }
        let schedule = NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.betas.iter().enumerate() {
            if !(*b > T::zero() && *b < T::one()) || !b.is_finite() {
                return Err(Error::Validation(format!(
                    "beta[{i}] = {b} outside (0, 1)"
                )));
            }
        }
        for w in self.alpha_bars.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::Validation(
                    "alpha_bar must be strictly decreasing".into(),
                ));
            }
        }
        if self.alpha_bars.iter().any(|a| !a.is_finite()) {
            return Err(Error::Validation("alpha_bar has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn alpha_bar(&self, t: usize) -> T {
        self.alpha_bars[t - 1]
    }
}

/// `z_t = sqrt(alpha_bar_t) z + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_diffuse<T: Scalar>(
    z: &Array3<T>,
    t: usize,
    eps: &Array3<T>,
    schedule: &NoiseSchedule<T>,
) -> Result<Array3<T>> {
    if t < 1 || t > schedule.steps() {
        return Err(Error::Validation(format!(
            "t = {t} outside 1..={}",
            schedule.steps()
        )));
    }
    if z.dim() != eps.dim() {
        return Err(Error::Shape(format!(
            "noise shape {:?} does not match data {:?}",
            eps.dim(),
            z.dim()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let signal = ab.sqrt();
    let noise = (T::one() - ab).sqrt();
    Ok(z.mapv(|v| v * signal) + &eps.mapv(|v| v * noise))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::stream_rng;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn default_schedule_satisfies_invariants() {
        let s: NoiseSchedule<f64> = NoiseSchedule::linear(&ScheduleConfig::default()).unwrap();
        assert_eq!(s.steps(), 200);
        assert!(s.alpha_bar(1) > 0.99, "alpha_bar_1 = {}", s.alpha_bar(1));
        for w in s.alpha_bars.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn near_one_alpha_bar_keeps_data() {
        // beta_start tiny => alpha_bar_1 ~ 1 => z_t ~ z
        let s: NoiseSchedule<f64> = NoiseSchedule::linear(&ScheduleConfig {
            steps: 10,
            beta_start: 1e-12,
            beta_end: 1e-10,
        })
        .unwrap();
        let z = Array3::from_elem((2, 2, 3), 0.7);
        let eps = Array3::from_elem((2, 2, 3), -1.3);
        let zt = forward_diffuse(&z, 1, &eps, &s).unwrap();
        for v in zt.iter() {
            assert!((v - 0.7).abs() < 1e-5);
        }
    }

    #[test]
    fn near_zero_alpha_bar_keeps_noise() {
        let s: NoiseSchedule<f64> = NoiseSchedule::linear(&ScheduleConfig {
            steps: 50,
            beta_start: 0.3,
            beta_end: 0.9,
        })
        .unwrap();
        let z = Array3::from_elem((2, 2, 3), 0.7);
        let eps = Array3::from_elem((2, 2, 3), -1.3);
        let zt = forward_diffuse(&z, 50, &eps, &s).unwrap();
        for v in zt.iter() {
            assert!((v + 1.3).abs() < 1e-5, "z_t = {v}");
        }
    }

    #[test]
    fn out_of_range_t_and_shape_mismatch_rejected() {
        let s: NoiseSchedule<f64> = NoiseSchedule::linear(&ScheduleConfig::default()).unwrap();
        let z = Array3::zeros((2, 2, 3));
        let eps = Array3::zeros((2, 2, 3));
        assert!(forward_diffuse(&z, 0, &eps, &s).is_err());
        assert!(forward_diffuse(&z, 201, &eps, &s).is_err());
        let bad = Array3::zeros((2, 3, 3));
        assert!(forward_diffuse(&z, 5, &bad, &s).is_err());
    }

    /// z = 0: z_t = sqrt(1 - alpha_bar) eps; empirical variance over 1e4
    /// draws matches 1 - alpha_bar within 3 sigma of the variance estimator.
    #[test]
    fn zero_data_variance_matches_schedule() {
        let s: NoiseSchedule<f64> = NoiseSchedule::linear(&ScheduleConfig::default()).unwrap();
        let mut rng = stream_rng(0, "variance");
        let t = 120;
        let want = 1.0 - s.alpha_bar(t);
        let n = 10_000;
        let z = Array3::zeros((1, 1, 1));
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            let eps = Array3::from_elem((1, 1, 1), e);
            values.push(forward_diffuse(&z, t, &eps, &s).unwrap()[[0, 0, 0]]);
        }
        let mean: f64 = values.iter().sum::<f64>() / n as f64;
        let var: f64 =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let sigma = (2.0 / (n as f64 - 1.0)).sqrt() * want;
        assert!(
            (var - want).abs() < 3.0 * sigma,
            "empirical {var} vs {want} (3 sigma {})",
            3.0 * sigma
        );
        let _ = rng.gen::<u64>();
    }
}
