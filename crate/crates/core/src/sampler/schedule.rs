//! Variance-preserving noise schedules and forward noising.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// `beta`, `alpha = 1 - beta` and `alpha_bar = prod(alpha)` for steps `1..=T`,
/// stored zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    /// Original time step of each entry; `1..=T` for a full schedule.
    timesteps: Vec<usize>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit betas, each in `(0, 1)`.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidSchedule("T must be >= 1".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidSchedule(format!("beta {b} outside (0, 1)")));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let timesteps = (1..=beta.len()).collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            timesteps,
        })
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.len() {
            return Err(Error::StepOutOfRange { t, max: self.len() });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.index(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Original time step behind entry `t` of a strided schedule.
    pub fn timestep(&self, t: usize) -> Result<usize> {
        Ok(self.timesteps[self.index(t)?])
    }

    /// `steps` entries at uniform stride `T / steps`, keeping time steps
    /// `1, 1 + stride, ...`. Entry `k` keeps the original `alpha_bar` and gets
    /// `beta'_k = 1 - alpha_bar'_k / alpha_bar'_{k-1}` so the strided schedule
    /// is itself a valid schedule. `steps == T` returns an identical copy.
    pub fn strided(&self, steps: usize) -> Result<Self> {
        if steps == 0 || steps > self.len() {
            return Err(Error::InvalidSchedule(format!(
                "{steps} steps on a schedule of length {}",
                self.len()
            )));
        }
        if steps == self.len() {
            return Ok(self.clone());
        }
        let stride = self.len() / steps;
        let timesteps: Vec<usize> = (0..steps).map(|k| 1 + k * stride).collect();
        let alpha_bar: Vec<f64> = timesteps.iter().map(|&t| self.alpha_bar[t - 1]).collect();
        let mut prev = 1.0;
        let mut beta = Vec::with_capacity(steps);
        for &ab in &alpha_bar {
            beta.push(1.0 - ab / prev);
            prev = ab;
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidSchedule(format!("strided beta {b} outside (0, 1)")));
        }
        let alpha = beta.iter().map(|b| 1.0 - b).collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            timesteps,
        })
    }
}

/// Linear betas from `beta_1` to `beta_t` over `t_max` steps.
pub fn make_schedule(t_max: usize, beta_1: f64, beta_t: f64) -> Result<NoiseSchedule> {
    if t_max == 0 {
        return Err(Error::InvalidSchedule("T must be >= 1".into()));
    }
    if !(beta_1 > 0.0 && beta_1 <= beta_t && beta_t < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < beta_1 <= beta_T < 1, got {beta_1}, {beta_t}"
        )));
    }
    let beta = if t_max == 1 {
        vec![beta_1]
    } else {
        (0..t_max)
            .map(|k| beta_1 + (beta_t - beta_1) * k as f64 / (t_max - 1) as f64)
            .collect()
    };
    NoiseSchedule::from_betas(beta)
}

/// `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn q_sample(x0: &Grid, t: usize, eps: &Grid, schedule: &NoiseSchedule) -> Result<Grid> {
    let ab = schedule.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(eps, |x, e| a * x + b * e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_field, RandomStream};

    #[test]
    fn small_schedules() {
        let s = make_schedule(1, 0.1, 0.1).unwrap();
        assert_eq!(s.alpha_bar(1).unwrap(), 0.9);
        let s = make_schedule(2, 0.1, 0.2).unwrap();
        assert_eq!(s.alpha_bar(2).unwrap(), 0.9 * 0.8);
        assert!((s.alpha_bar(2).unwrap() - 0.72).abs() < 1e-15);
    }

    #[test]
    fn long_schedule_matches_direct_product() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        let mut prod = 1.0;
        for t in 1..=1000 {
            let beta = 1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 999.0;
            prod *= 1.0 - beta;
            assert!((s.alpha_bar(t).unwrap() - prod).abs() <= 1e-15 * prod.max(1e-300));
        }
        assert!(s.alpha_bar(1000).unwrap() < 1e-4);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn invalid_ranges() {
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(5, 0.0, 0.2).is_err());
        assert!(make_schedule(5, 0.3, 0.2).is_err());
        assert!(make_schedule(5, 0.1, 1.0).is_err());
        let s = make_schedule(5, 0.1, 0.2).unwrap();
        assert!(s.beta(0).is_err());
        assert!(s.beta(6).is_err());
    }

    #[test]
    fn strided_keeps_alpha_bar() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        let sub = s.strided(20).unwrap();
        assert_eq!(sub.len(), 20);
        assert_eq!(sub.timestep(1).unwrap(), 1);
        assert_eq!(sub.timestep(20).unwrap(), 951);
        assert!((sub.beta(1).unwrap() - s.beta(1).unwrap()).abs() < 1e-15);
        for k in 1..=20 {
            let t = sub.timestep(k).unwrap();
            assert_eq!(sub.alpha_bar(k).unwrap(), s.alpha_bar(t).unwrap());
        }
        assert_eq!(s.strided(1000).unwrap(), s);
        assert!(s.strided(0).is_err());
        assert!(s.strided(1001).is_err());
    }

    #[test]
    fn q_sample_edge_cases() {
        let s = make_schedule(10, 0.01, 0.2).unwrap();
        let x0 = Grid::filled(2, 2, 0.7).unwrap();
        let zero = Grid::zeros(2, 2).unwrap();
        let out = q_sample(&x0, 4, &zero, &s).unwrap();
        let a = s.alpha_bar(4).unwrap().sqrt();
        assert!(out.values().iter().all(|&v| v == a * 0.7));
        let eps = Grid::filled(2, 2, 1.5).unwrap();
        let out = q_sample(&zero, 4, &eps, &s).unwrap();
        let b = (1.0 - s.alpha_bar(4).unwrap()).sqrt();
        assert!(out.values().iter().all(|&v| v == b * 1.5));
        assert!(q_sample(&x0, 11, &eps, &s).is_err());
    }

    #[test]
    fn q_sample_variance() {
        let s = make_schedule(10, 0.01, 0.2).unwrap();
        let t = 6;
        let ab = s.alpha_bar(t).unwrap();
        let mut rng = RandomStream::new(3);
        // x0 ~ N(0, 4): 10^5 draws as a 250 x 400 field.
        let x0 = gaussian_field(&mut rng, 250, 400).unwrap().scale(2.0).unwrap();
        let eps = gaussian_field(&mut rng, 250, 400).unwrap();
        let xt = q_sample(&x0, t, &eps, &s).unwrap();
        let m = xt.mean();
        let var = xt.values().iter().map(|v| (v - m).powi(2)).sum::<f64>() / (xt.len() - 1) as f64;
        let expected = ab * 4.0 + (1.0 - ab);
        assert!((var / expected - 1.0).abs() < 0.03, "{var} vs {expected}");
    }
}
