//! Training-timestep samplers: uniform, or sigmoid-of-Gaussian shifted
//! toward high-noise steps.
//!
//! The shifted sampler draws `z ~ N(mu, sigma^2)`, maps `u = 1/(1+e^-z)` into
//! `(0, 1)`, and discretizes as `t = clamp(ceil(u * T), 1, T)`. Larger `mu`
//! concentrates training on late (noisier) steps.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TimestepSampler {
    Uniform {
        steps: usize,
    },
    Shifted {
        steps: usize,
        mu: f64,
        sigma: f64,
    },
}

impl TimestepSampler {
    pub fn uniform(steps: usize) -> TimestepSampler {
        TimestepSampler::Uniform { steps }
    }

    pub fn shifted(steps: usize, mu: f64, sigma: f64) -> TimestepSampler {
        TimestepSampler::Shifted { steps, mu, sigma }
    }

    pub fn steps(&self) -> usize {
        match self {
            TimestepSampler::Uniform { steps } => *steps,
            TimestepSampler::Shifted { steps, .. } => *steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps() == 0 {
            return Err(Error::Validation("sampler needs steps >= 1".into()));
        }
        if let TimestepSampler::Shifted { sigma, mu, .. } = self {
            if !(*sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
                return Err(Error::Validation(format!(
                    "shifted sampler requires finite mu and sigma > 0, got mu={mu} sigma={sigma}"
                )));
            }
        }
        Ok(())
    }

    /// Continuous draw `u` in `(0, 1)` (uniform, or sigmoid of a Gaussian).
    pub fn draw_u(&self, rng: &mut impl Rng) -> f64 {
        match self {
            TimestepSampler::Uniform { .. } => rng.gen::<f64>(),
            TimestepSampler::Shifted { mu, sigma, .. } => {
                let normal = Normal::new(*mu, *sigma).expect("validated sigma");
                let z: f64 = normal.sample(rng);
                1.0 / (1.0 + (-z).exp())
            }
        }
    }

    /// Discrete training step in `{1..T}`.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let t_max = self.steps();
        match self {
            TimestepSampler::Uniform { .. } => rng.gen_range(1..=t_max),
            TimestepSampler::Shifted { .. } => {
                let u = self.draw_u(rng);
                ((u * t_max as f64).ceil() as usize).clamp(1, t_max)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::stream_rng;
    use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

    #[test]
    fn degenerate_gaussian_lands_mid_schedule() {
        // mu = 0, sigma -> 0+ (underflows to exactly mu): u = 0.5, t = ceil(T/2)
        let s = TimestepSampler::shifted(200, 0.0, 1e-300);
        let mut rng = stream_rng(0, "deg");
        for _ in 0..100 {
            assert_eq!(s.sample(&mut rng), 100);
        }
        let odd = TimestepSampler::shifted(7, 0.0, 1e-300);
        assert_eq!(odd.sample(&mut rng), 4); // ceil(3.5)
    }

    #[test]
    fn shifted_mu6_median_is_t_max() {
        // sigmoid(6) ~ 0.9975 => median t = ceil(0.9975 * 200) = 200
        let s = TimestepSampler::shifted(200, 6.0, 1.0);
        let mut rng = stream_rng(1, "median");
        let mut draws: Vec<usize> = (0..100_000).map(|_| s.sample(&mut rng)).collect();
        draws.sort_unstable();
        assert_eq!(draws[draws.len() / 2], 200);
    }

    #[test]
    fn samples_always_in_range() {
        let mut rng = stream_rng(2, "range");
        for sampler in [
            TimestepSampler::uniform(200),
            TimestepSampler::shifted(200, 6.0, 1.0),
            TimestepSampler::shifted(200, -8.0, 3.0),
            TimestepSampler::shifted(50, 0.0, 0.25),
        ] {
            for _ in 0..250_000 {
                let t = sampler.sample(&mut rng);
                assert!((1..=sampler.steps()).contains(&t));
            }
        }
    }

    #[test]
    fn empirical_u_cdf_matches_analytic_sigmoid_gaussian() {
        // KS statistic between empirical u and Phi((logit(u) - mu) / sigma)
        let (mu, sigma) = (1.5, 0.8);
        let s = TimestepSampler::shifted(200, mu, sigma);
        let mut rng = stream_rng(3, "ks");
        let n = 100_000;
        let mut us: Vec<f64> = (0..n).map(|_| s.draw_u(&mut rng)).collect();
        us.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let normal = NormalDist::new(mu, sigma).unwrap();
        let mut ks = 0.0f64;
        for (i, u) in us.iter().enumerate() {
            let logit = (u / (1.0 - u)).ln();
            let cdf = normal.cdf(logit);
            let emp_hi = (i + 1) as f64 / n as f64;
            let emp_lo = i as f64 / n as f64;
            ks = ks.max((cdf - emp_lo).abs()).max((cdf - emp_hi).abs());
        }
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn mu6_tail_mass_above_ninety_percent_of_steps() {
        // P(t > 0.9 T) analytic ~ Phi(6 - logit(0.9)) ~ 0.99993; threshold
        // 0.97 leaves Monte-Carlo slack
        let s = TimestepSampler::shifted(200, 6.0, 1.0);
        let mut rng = stream_rng(4, "tail");
        let n = 100_000;
        let hits = (0..n).filter(|_| s.sample(&mut rng) > 180).count();
        let frac = hits as f64 / n as f64;
        assert!(frac > 0.97, "tail mass {frac}");
    }

    #[test]
    fn invalid_sigma_rejected() {
        assert!(TimestepSampler::shifted(200, 0.0, 0.0).validate().is_err());
        assert!(TimestepSampler::shifted(200, 0.0, -1.0).validate().is_err());
        assert!(TimestepSampler::uniform(200).validate().is_ok());
    }
}
