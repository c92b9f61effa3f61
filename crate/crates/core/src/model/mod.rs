//! Denoiser contract and the models implementing it.
//!
//! A denoiser predicts the noise in a latent and exposes the attention maps
//! of the garment token, plus the vector-Jacobian product that carries an
//! attention-space gradient back to the latent.

mod linear_gaussian;
mod toy;

pub use linear_gaussian::LinearGaussianModel;
pub use toy::{fit_toy, toy_init, FitConfig, FitOutcome, ToyAttentionDenoiser, ToyParams};

use serde::{Deserialize, Serialize};

use crate::energy::AttentionLayer;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::{gaussian_field, RandomStream};
use crate::sampler::{q_sample, NoiseSchedule};

pub const LAYER_FULL: &str = "full";
pub const LAYER_HALF: &str = "half";

/// Conditioning token. `Null` drives the unconditional branch of
/// classifier-free guidance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Garment,
    Null,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub eps: Grid,
    pub layers: Vec<AttentionLayer>,
}

pub trait DenoiserModel: Send + Sync {
    /// Latent `(height, width)`.
    fn dims(&self) -> (usize, usize);

    /// Ids and resolutions of the attention layers `predict` returns, in order.
    fn layer_shapes(&self) -> Vec<(String, (usize, usize))>;

    fn predict(&self, x: &Grid, t: usize, cond: Condition) -> Result<Prediction>;

    /// `sum_l (dA_l / dx)^T grad_layers[l]` at the same `(x, t, cond)` as
    /// [`DenoiserModel::predict`].
    fn attention_vjp(&self, x: &Grid, t: usize, cond: Condition, grad_layers: &[Grid])
        -> Result<Grid>;
}

pub(crate) fn check_grad_layers(
    shapes: &[(String, (usize, usize))],
    grad_layers: &[Grid],
) -> Result<()> {
    if shapes.len() != grad_layers.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} gradient layers, got {}",
            shapes.len(),
            grad_layers.len()
        )));
    }
    for ((_, shape), g) in shapes.iter().zip(grad_layers) {
        g.ensure_shape(*shape)?;
    }
    Ok(())
}

/// Monte-Carlo estimate of `E ||eps - eps_theta(x_t, t)||^2 / pixels` with
/// `x0` drawn uniformly from `dataset`, `t` uniform on `1..=T` and Gaussian
/// `eps`, using the garment condition.
pub fn ldm_loss<M: DenoiserModel + ?Sized>(
    model: &M,
    dataset: &[Grid],
    schedule: &NoiseSchedule,
    rng: &mut RandomStream,
    n_draws: usize,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if n_draws == 0 {
        return Err(Error::InvalidArgument("n_draws must be >= 1".into()));
    }
    let mut total = 0.0;
    for _ in 0..n_draws {
        let x0 = &dataset[rng.below(dataset.len() as u64) as usize];
        let t = 1 + rng.below(schedule.len() as u64) as usize;
        let eps = gaussian_field(rng, x0.height(), x0.width())?;
        let xt = q_sample(x0, t, &eps, schedule)?;
        let pred = model.predict(&xt, t, Condition::Garment)?;
        let diff = eps.sub(&pred.eps)?;
        total += diff.dot(&diff)? / diff.len() as f64;
    }
    Ok(total / n_draws as f64)
}

fn attention_objective<M: DenoiserModel + ?Sized>(
    model: &M,
    x: &Grid,
    t: usize,
    cond: Condition,
    grad_layers: &[Grid],
) -> Result<f64> {
    let pred = model.predict(x, t, cond)?;
    pred.layers
        .iter()
        .zip(grad_layers)
        .map(|(l, g)| l.map.dot(g))
        .sum()
}

/// Compares the analytic attention VJP against central differences of
/// `x -> sum_l <A_l(x), grad_layers[l]>` along 32 random unit directions.
///
/// Returns the largest relative error `|analytic - numeric| / scale` where
/// `scale = max(|analytic|, |numeric|, 1e-3 * ||vjp||)`; the floor keeps
/// directions nearly orthogonal to the gradient from dominating through
/// round-off. Zero gradient layers give 0.
pub fn fd_vjp_check<M: DenoiserModel + ?Sized>(
    model: &M,
    x: &Grid,
    t: usize,
    cond: Condition,
    grad_layers: &[Grid],
    h: f64,
    rng: &mut RandomStream,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be > 0".into()));
    }
    check_grad_layers(&model.layer_shapes(), grad_layers)?;
    if grad_layers.iter().all(|g| g.values().iter().all(|&v| v == 0.0)) {
        return Ok(0.0);
    }
    let vjp = model.attention_vjp(x, t, cond, grad_layers)?;
    let floor = 1e-3 * vjp.norm();
    let mut worst: f64 = 0.0;
    for _ in 0..32 {
        let d = gaussian_field(rng, x.height(), x.width())?;
        let d = d.scale(1.0 / d.norm())?;
        let analytic = vjp.dot(&d)?;
        let plus = x.zip_map(&d, |a, b| a + h * b)?;
        let minus = x.zip_map(&d, |a, b| a - h * b)?;
        let numeric = (attention_objective(model, &plus, t, cond, grad_layers)?
            - attention_objective(model, &minus, t, cond, grad_layers)?)
            / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs()).max(floor);
        if scale > 0.0 {
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct ZeroModel(usize, usize);

    impl DenoiserModel for ZeroModel {
        fn dims(&self) -> (usize, usize) {
            (self.0, self.1)
        }
        fn layer_shapes(&self) -> Vec<(String, (usize, usize))> {
            vec![]
        }
        fn predict(&self, x: &Grid, _t: usize, _c: Condition) -> Result<Prediction> {
            Ok(Prediction {
                eps: Grid::zeros(x.height(), x.width())?,
                layers: vec![],
            })
        }
        fn attention_vjp(&self, x: &Grid, _: usize, _: Condition, _: &[Grid]) -> Result<Grid> {
            Grid::zeros(x.height(), x.width())
        }
    }

    fn dataset(seed: u64, n: usize) -> Vec<Grid> {
        let mut rng = RandomStream::new(seed);
        (0..n)
            .map(|_| gaussian_field(&mut rng, 8, 8).unwrap().map(|v| 0.5 + v).unwrap())
            .collect()
    }

    #[test]
    fn zero_prediction_loss_is_noise_variance() {
        let s = crate::sampler::make_schedule(50, 1e-3, 0.2).unwrap();
        let data = dataset(1, 8);
        let n = 400;
        let loss = ldm_loss(&ZeroModel(8, 8), &data, &s, &mut RandomStream::new(2), n).unwrap();
        let tol = 3.0 / ((n * 64) as f64).sqrt();
        assert!((loss - 1.0).abs() < tol, "loss {loss}");
    }

    #[test]
    fn loss_errors() {
        let s = crate::sampler::make_schedule(5, 1e-3, 0.2).unwrap();
        let m = ZeroModel(2, 2);
        assert!(ldm_loss(&m, &[], &s, &mut RandomStream::new(0), 3).is_err());
        let d = vec![Grid::zeros(2, 2).unwrap()];
        assert!(ldm_loss(&m, &d, &s, &mut RandomStream::new(0), 0).is_err());
    }

    #[test]
    fn perfect_model_beats_shifted_model() {
        let s = crate::sampler::make_schedule(50, 1e-3, 0.2).unwrap();
        let data = dataset(4, 64);
        let exact = LinearGaussianModel::new(0.5, 1.0, s.clone(), 8, 8).unwrap();
        let shifted = LinearGaussianModel::new(1.5, 1.0, s.clone(), 8, 8).unwrap();
        let a = ldm_loss(&exact, &data, &s, &mut RandomStream::new(9), 2000).unwrap();
        let b = ldm_loss(&shifted, &data, &s, &mut RandomStream::new(9), 2000).unwrap();
        // Posterior variance of eps given x_t is 1 - (1 - ab) / (ab + 1 - ab) = ab.
        let floor = s.alpha_bars().iter().sum::<f64>() / s.len() as f64;
        assert!(a < b, "{a} vs {b}");
        assert!((a - floor).abs() < 0.03, "{a} vs floor {floor}");
    }

    #[test]
    fn loss_is_stable_under_more_draws() {
        let s = crate::sampler::make_schedule(50, 1e-3, 0.2).unwrap();
        let data = dataset(4, 16);
        let m = LinearGaussianModel::new(0.5, 1.0, s.clone(), 8, 8).unwrap();
        let a = ldm_loss(&m, &data, &s, &mut RandomStream::new(5), 500).unwrap();
        let b = ldm_loss(&m, &data, &s, &mut RandomStream::new(5), 1000).unwrap();
        assert!((a - b).abs() < 0.05, "{a} vs {b}");
    }
}
