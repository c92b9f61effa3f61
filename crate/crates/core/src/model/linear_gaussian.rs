//! Exact noise predictor for i.i.d. Gaussian data.

use super::{check_grad_layers, Condition, DenoiserModel, Prediction, LAYER_FULL, LAYER_HALF};
use crate::energy::AttentionLayer;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::sampler::NoiseSchedule;

/// For `x0 ~ N(mu0, sigma0^2)` per pixel,
/// `E[eps | x_t] = (x_t - sqrt(ab) mu0) sqrt(1 - ab) / (ab sigma0^2 + 1 - ab)`.
///
/// Attention layers are uniform placeholders (a half layer is present when
/// both dimensions are even) and carry no dependence on `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    pub mu0: f64,
    pub sigma0: f64,
    schedule: NoiseSchedule,
    height: usize,
    width: usize,
}

impl LinearGaussianModel {
    pub fn new(
        mu0: f64,
        sigma0: f64,
        schedule: NoiseSchedule,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma0.is_finite() && mu0.is_finite()) {
            return Err(Error::InvalidArgument("need finite mu0 and sigma0 > 0".into()));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimensions { height, width });
        }
        Ok(Self {
            mu0,
            sigma0,
            schedule,
            height,
            width,
        })
    }

    fn has_half(&self) -> bool {
        self.height.is_multiple_of(2) && self.width.is_multiple_of(2)
    }

    /// Variance of `x_t` under the data model.
    pub fn marginal_variance(&self, t: usize) -> Result<f64> {
        let ab = self.schedule.alpha_bar(t)?;
        Ok(ab * self.sigma0 * self.sigma0 + 1.0 - ab)
    }
}

impl DenoiserModel for LinearGaussianModel {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn layer_shapes(&self) -> Vec<(String, (usize, usize))> {
        let mut v = vec![(LAYER_FULL.to_string(), (self.height, self.width))];
        if self.has_half() {
            v.push((LAYER_HALF.to_string(), (self.height / 2, self.width / 2)));
        }
        v
    }

    fn predict(&self, x: &Grid, t: usize, _cond: Condition) -> Result<Prediction> {
        x.ensure_shape((self.height, self.width))?;
        let ab = self.schedule.alpha_bar(t)?;
        let shift = ab.sqrt() * self.mu0;
        let gain = (1.0 - ab).sqrt() / self.marginal_variance(t)?;
        let eps = x.map(|v| (v - shift) * gain)?;
        let layers = self
            .layer_shapes()
            .into_iter()
            .map(|(id, (h, w))| {
                AttentionLayer::new(id, Grid::filled(h, w, 1.0 / (h * w) as f64)?)
            })
            .collect::<Result<_>>()?;
        Ok(Prediction { eps, layers })
    }

    fn attention_vjp(
        &self,
        x: &Grid,
        _t: usize,
        _cond: Condition,
        grad_layers: &[Grid],
    ) -> Result<Grid> {
        x.ensure_shape((self.height, self.width))?;
        check_grad_layers(&self.layer_shapes(), grad_layers)?;
        Grid::zeros(self.height, self.width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_field, RandomStream};
    use crate::sampler::{make_schedule, q_sample};

    #[test]
    fn eps_is_the_regression_of_noise_on_latent() {
        // 10^5 simulated (x_t, eps) pairs; the least-squares line of eps on
        // x_t must match the closed form.
        let s = make_schedule(50, 1e-3, 0.2).unwrap();
        let m = LinearGaussianModel::new(0.5, 1.0, s.clone(), 250, 400).unwrap();
        let t = 20;
        let mut rng = RandomStream::new(17);
        let x0 = gaussian_field(&mut rng, 250, 400).unwrap().map(|v| 0.5 + v).unwrap();
        let eps = gaussian_field(&mut rng, 250, 400).unwrap();
        let xt = q_sample(&x0, t, &eps, &s).unwrap();
        let n = xt.len() as f64;
        let (mx, me) = (xt.mean(), eps.mean());
        let cov: f64 = xt.values().iter().zip(eps.values()).map(|(x, e)| (x - mx) * (e - me)).sum::<f64>() / n;
        let var: f64 = xt.values().iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
        let slope = cov / var;
        let intercept = me - slope * mx;

        let ab = s.alpha_bar(t).unwrap();
        let exact_slope = (1.0 - ab).sqrt() / (ab + 1.0 - ab);
        let exact_intercept = -ab.sqrt() * 0.5 * exact_slope;
        assert!((slope / exact_slope - 1.0).abs() < 0.01, "{slope} vs {exact_slope}");
        assert!((intercept - exact_intercept).abs() < 0.01 * exact_intercept.abs().max(0.1));

        let pred = m.predict(&xt, t, Condition::Garment).unwrap();
        let direct = (xt.values()[0] - ab.sqrt() * 0.5) * exact_slope;
        assert!((pred.eps.values()[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn placeholder_layers() {
        let s = make_schedule(5, 1e-3, 0.2).unwrap();
        let m = LinearGaussianModel::new(0.0, 1.0, s, 8, 8).unwrap();
        let p = m.predict(&Grid::zeros(8, 8).unwrap(), 3, Condition::Garment).unwrap();
        assert_eq!(p.layers.len(), 2);
        assert!(p.layers[1].map.values().iter().all(|&v| v == 1.0 / 16.0));
        let g = vec![Grid::filled(8, 8, 1.0).unwrap(), Grid::filled(4, 4, 1.0).unwrap()];
        let vjp = m.attention_vjp(&Grid::zeros(8, 8).unwrap(), 3, Condition::Garment, &g).unwrap();
        assert_eq!(vjp.sum(), 0.0);
        assert!(m.predict(&Grid::zeros(8, 8).unwrap(), 6, Condition::Garment).is_err());
    }
}
