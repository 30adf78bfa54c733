//! Xavier initialisation, Adam with decoupled weight decay, and a
//! plateau-triggered learning-rate decay.

use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OptimError {
    #[error("cannot derive fan-in/fan-out from shape {0:?}")]
    ZeroFan(Vec<usize>),
    #[error("non-finite gradient in parameter {param} at element {element}")]
    NonFiniteGradient { param: usize, element: usize },
    #[error("expected {expected} gradients, got {actual}")]
    CountMismatch { expected: usize, actual: usize },
    #[error("gradient {param} has shape {grad:?}, parameter has {param_shape:?}")]
    ShapeMismatch {
        param: usize,
        grad: Vec<usize>,
        param_shape: Vec<usize>,
    },
}

/// `(fan_in, fan_out)`: `[out, in]` for matrices, `[out, in, kh, kw]` for
/// kernels (fans scaled by kernel area), and `[n]` counts as `n` both ways.
fn fans(shape: &[usize]) -> Option<(usize, usize)> {
    let f = match shape {
        [n] => (*n, *n),
        [out, inp] => (*inp, *out),
        [out, inp, rest @ ..] => {
            let area: usize = rest.iter().product();
            (inp * area, out * area)
        }
        _ => return None,
    };
    (f.0 > 0 && f.1 > 0).then_some(f)
}

/// Uniform samples in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init<T: Scalar>(shape: &[usize], rng: &mut impl Rng) -> Result<Tensor<T>, OptimError> {
    let (fan_in, fan_out) = fans(shape).ok_or_else(|| OptimError::ZeroFan(shape.to_vec()))?;
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect();
    Ok(Tensor::new(shape.to_vec(), data).expect("length matches shape"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for every parameter, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>, config: AdamConfig) -> Self {
        let m: Vec<Tensor<T>> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        Self {
            config,
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

/// One bias-corrected Adam update. With `weight_decay > 0` each parameter is
/// first shrunk by `lr · weight_decay · p` (decoupled decay).
///
/// The update is all-or-nothing: a non-finite gradient is reported before any
/// parameter or moment changes.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    weight_decay: f64,
) -> Result<(), OptimError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(OptimError::CountMismatch {
            expected: params.len(),
            actual: grads.len(),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(OptimError::ShapeMismatch {
                param: i,
                grad: g.shape().to_vec(),
                param_shape: p.shape().to_vec(),
            });
        }
        if let Some(element) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(OptimError::NonFiniteGradient { param: i, element });
        }
    }

    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    let (b1, b2, e) = (T::of(beta1), T::of(beta2), T::of(eps));
    let (lr_t, decay) = (T::of(lr), T::of(lr * weight_decay));
    let (bc1, bc2) = (T::of(bc1), T::of(bc2));
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let pd = p.data_mut();
        for (k, &gk) in g.data().iter().enumerate() {
            let mk = &mut m.data_mut()[k];
            *mk = b1 * *mk + (T::one() - b1) * gk;
            let vk = &mut v.data_mut()[k];
            *vk = b2 * *vk + (T::one() - b2) * gk * gk;
            let m_hat = m.data()[k] / bc1;
            let v_hat = v.data()[k] / bc2;
            if weight_decay != 0.0 {
                pd[k] -= decay * pd[k];
            }
            pd[k] -= lr_t * m_hat / (v_hat.sqrt() + e);
        }
    }
    Ok(())
}

/// Learning rate that decays by `factor` after `patience` epochs without a
/// new best loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub rate: f64,
    pub factor: f64,
    pub patience: usize,
    pub best: f64,
    pub stale_epochs: usize,
}

impl LrSchedule {
    pub fn new(base: f64, factor: f64, patience: usize) -> Self {
        Self {
            rate: base,
            factor,
            patience,
            best: f64::INFINITY,
            stale_epochs: 0,
        }
    }

    /// Record one epoch's loss and return the rate for the next epoch.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
            if self.stale_epochs >= self.patience {
                self.rate *= self.factor;
                self.stale_epochs = 0;
            }
        }
        self.rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(vec![data.len()], data).unwrap()
    }

    #[test]
    fn xavier_bound_and_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Tensor<f64> = xavier_init(&[10, 10], &mut rng).unwrap();
        let bound = (6.0f64 / 20.0).sqrt();
        assert!((bound - 0.5477).abs() < 1e-4);
        assert!(w.data().iter().all(|v| v.abs() <= bound));

        let big: Tensor<f64> = xavier_init(&[1000, 100], &mut rng).unwrap();
        let n = big.len() as f64;
        let mean = big.sum() / n;
        let var = big.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let b = (6.0f64 / 1100.0).sqrt();
        assert!((var / (b * b / 3.0) - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn xavier_kernel_fans_and_determinism() {
        let a: Tensor<f64> = xavier_init(&[4, 3, 3, 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b: Tensor<f64> = xavier_init(&[4, 3, 3, 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let bound = (6.0f64 / (27.0 + 36.0)).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
        assert!(xavier_init::<f64>(&[0, 3], &mut ChaCha8Rng::seed_from_u64(9)).is_err());
        assert!(xavier_init::<f64>(&[], &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }

    #[test]
    fn zero_gradient_is_a_fixpoint() {
        let mut p = t(&[1.0, -2.0]);
        let mut st = AdamState::new([&p], AdamConfig::default());
        adam_step(&mut [&mut p], &[t(&[0.0, 0.0])], &mut st, 0.1, 0.0).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = t(&[0.0, 0.0, 0.0]);
        let mut st = AdamState::new([&p], AdamConfig::default());
        adam_step(&mut [&mut p], &[t(&[3.0, -0.02, 1e-3])], &mut st, 0.01, 0.0).unwrap();
        for (&v, s) in p.data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - 0.01 * s).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut x = t(&[1.0]);
        let mut st = AdamState::new([&x], AdamConfig::default());
        for _ in 0..500 {
            let g = t(&[2.0 * x.data()[0]]);
            adam_step(&mut [&mut x], &[g], &mut st, 1e-2, 0.0).unwrap();
        }
        assert!(x.data()[0].abs() < 1e-3, "x = {}", x.data()[0]);
    }

    #[test]
    fn non_finite_gradient_rejected_without_side_effects() {
        let mut p = t(&[1.0, 1.0]);
        let mut st = AdamState::new([&p], AdamConfig::default());
        let err = adam_step(&mut [&mut p], &[t(&[0.5, f64::NAN])], &mut st, 0.1, 0.0).unwrap_err();
        assert_eq!(err, OptimError::NonFiniteGradient { param: 0, element: 1 });
        assert_eq!(st.step, 0);
        assert_eq!(p.data(), &[1.0, 1.0]);
    }

    #[test]
    fn decoupled_weight_decay_shrinks_before_update() {
        let mut p = t(&[2.0]);
        let mut st = AdamState::new([&p], AdamConfig::default());
        adam_step(&mut [&mut p], &[t(&[0.0])], &mut st, 0.1, 0.5).unwrap();
        assert!((p.data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn plateau_decay() {
        let mut s = LrSchedule::new(1.0, 0.5, 3);
        for l in [5.0, 4.0, 3.0, 2.0] {
            assert_eq!(s.observe(l), 1.0);
        }
        let mut s = LrSchedule::new(1.0, 0.5, 3);
        let rates: Vec<f64> = [1.0, 1.0, 1.0, 1.0].iter().map(|&l| s.observe(l)).collect();
        assert_eq!(rates, vec![1.0, 1.0, 1.0, 0.5]);
        // second plateau
        for l in [0.5, 0.6, 0.6] {
            s.observe(l);
        }
        assert_eq!(s.observe(0.7), 0.25);
    }
}
