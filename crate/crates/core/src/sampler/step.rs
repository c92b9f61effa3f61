//! Single-step update rules.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::{gaussian_field, RandomStream};

use super::NoiseSchedule;

/// Classifier-free guidance: `eps_u + s (eps_c - eps_u)`. With `s = 1` the
/// conditional prediction is returned unchanged.
pub fn cfg_mix(eps_uncond: &Grid, eps_cond: &Grid, s: f64) -> Result<Grid> {
    eps_cond.ensure_shape(eps_uncond.shape())?;
    if s == 1.0 {
        return Ok(eps_cond.clone());
    }
    eps_uncond.zip_map(eps_cond, |u, c| u + s * (c - u))
}

/// Score from a noise prediction: `-eps / sqrt(1 - alpha_bar_t)`.
pub fn score_from_eps(eps: &Grid, t: usize, schedule: &NoiseSchedule) -> Result<Grid> {
    let inv = -1.0 / (1.0 - schedule.alpha_bar(t)?).sqrt();
    eps.map(|e| inv * e)
}

/// `m_t = (1 + beta_t / 2) x_t + beta_t score + sqrt(beta_t) eps`, with the
/// noise term dropped (and no draws taken) at `t = 1`.
pub fn ancestral_step(
    x_t: &Grid,
    t: usize,
    score: &Grid,
    schedule: &NoiseSchedule,
    rng: &mut RandomStream,
) -> Result<Grid> {
    score.ensure_shape(x_t.shape())?;
    let beta = schedule.beta(t)?;
    let drift = x_t.zip_map(score, |x, s| (1.0 + 0.5 * beta) * x + beta * s)?;
    if t == 1 {
        return Ok(drift);
    }
    let noise = gaussian_field(rng, x_t.height(), x_t.width())?;
    let sd = beta.sqrt();
    drift.zip_map(&noise, |d, n| d + sd * n)
}

/// `m_t - rho * grad_x`.
pub fn csc_correct(m_t: &Grid, grad_x: &Grid, rho: f64) -> Result<Grid> {
    grad_x.ensure_shape(m_t.shape())?;
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!("rho must be finite and >= 0, got {rho}")));
    }
    let values: Vec<f64> = m_t
        .values()
        .iter()
        .zip(grad_x.values())
        .map(|(m, g)| m - rho * g)
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    Grid::new(m_t.height(), m_t.width(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::make_schedule;

    #[test]
    fn mixing() {
        let u = Grid::from_rows(&[[0.1, -0.7]]).unwrap();
        let c = Grid::from_rows(&[[0.3, 0.2]]).unwrap();
        assert_eq!(cfg_mix(&u, &c, 1.0).unwrap(), c);
        assert_eq!(cfg_mix(&c, &c, 3.7).unwrap(), c);
        let z = Grid::zeros(1, 1).unwrap();
        let one = Grid::filled(1, 1, 1.0).unwrap();
        assert_eq!(cfg_mix(&z, &one, 2.0).unwrap().values(), &[2.0]);
        assert!(cfg_mix(&z, &u, 2.0).is_err());
    }

    #[test]
    fn ancestral_without_score_or_noise() {
        let s = make_schedule(10, 0.01, 0.1).unwrap();
        let x = Grid::from_rows(&[[1.0, -2.0]]).unwrap();
        let zero = Grid::zeros(1, 2).unwrap();
        // t = 1 has no noise term.
        let out = ancestral_step(&x, 1, &zero, &s, &mut RandomStream::new(0)).unwrap();
        let b = s.beta(1).unwrap();
        assert_eq!(out.values(), &[(1.0 + b / 2.0) * 1.0, (1.0 + b / 2.0) * -2.0]);
    }

    #[test]
    fn final_step_is_deterministic() {
        let s = make_schedule(10, 0.01, 0.1).unwrap();
        let x = Grid::from_rows(&[[0.4, 0.9]]).unwrap();
        let sc = Grid::from_rows(&[[-0.1, 0.3]]).unwrap();
        let mut r1 = RandomStream::new(1);
        let a = ancestral_step(&x, 1, &sc, &s, &mut r1).unwrap();
        let b = ancestral_step(&x, 1, &sc, &s, &mut RandomStream::new(99)).unwrap();
        assert_eq!(a, b);
        assert_eq!(r1.counter(), 0);
        let c = ancestral_step(&x, 2, &sc, &s, &mut RandomStream::new(1)).unwrap();
        let d = ancestral_step(&x, 2, &sc, &s, &mut RandomStream::new(99)).unwrap();
        assert_ne!(c, d);
        assert!(ancestral_step(&x, 11, &sc, &s, &mut r1).is_err());
    }

    #[test]
    fn correction() {
        let m = Grid::from_rows(&[[1.0, -3.0]]).unwrap();
        let g = Grid::from_rows(&[[0.5, 2.0]]).unwrap();
        assert_eq!(csc_correct(&m, &g, 0.0).unwrap(), m);
        assert_eq!(csc_correct(&m, &Grid::zeros(1, 2).unwrap(), 0.2).unwrap(), m);
        let out = csc_correct(&m, &g, 0.2).unwrap();
        assert!((out.values()[0] - 0.9).abs() < 1e-15);
        assert!(csc_correct(&m, &g, -1.0).is_err());
        let huge = Grid::filled(1, 2, f64::MAX).unwrap();
        assert!(matches!(
            csc_correct(&m, &huge, 10.0),
            Err(Error::NonFiniteGradient { .. })
        ));
    }
}
