use super::tape::{AutodiffError, Result, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Tensors longer than this are checked on an evenly spaced subset.
    pub max_coords: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-4,
            max_coords: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Coordinate with the worst error.
    pub worst_coord: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub epsilon: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

fn sample_coords(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|i| i * len / max).collect()
    }
}

fn eval<T: Scalar, F>(params: &[Tensor<T>], blocked: &[Tensor<T>], build: &F) -> Result<T>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.replay_blocked_values(blocked.to_vec());
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    tape.value(loss)
        .item()
        .ok_or_else(|| AutodiffError::NonScalarLoss(tape.shape(loss).to_vec()))
}

/// Compare the tape's gradients of `build`'s scalar output against central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε`.
///
/// `build` is called once per perturbed evaluation on a fresh tape and must be
/// a pure function of the parameter values; any gate draws or noise it uses
/// have to be fixed beforehand. A builder that returns different values for
/// identical parameters is rejected.
///
/// Edges behind a blocked gate are held at their unperturbed values during
/// the perturbed evaluations, matching the constant their backward pass
/// assumes.
pub fn grad_check<T: Scalar, F>(
    params: &[Tensor<T>],
    cfg: &GradCheckConfig,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let base = tape.value(loss).item();
    tape.backward(loss)?;
    let blocked = tape.blocked_values().to_vec();
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
        })
        .collect();

    let again = eval(params, &blocked, &build)?;
    if base.map(|b| b.as_f64().to_bits()) != Some(again.as_f64().to_bits()) {
        return Err(AutodiffError::NonDeterministic(format!(
            "two evaluations at the same point gave {base:?} and {again}"
        )));
    }

    let eps = T::of(cfg.epsilon);
    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut checks = Vec::with_capacity(params.len());
    for (pi, grad) in analytic.iter().enumerate() {
        let mut worst = ParamCheck {
            max_rel_error: 0.0,
            coords_checked: 0,
            worst_coord: 0,
        };
        for coord in sample_coords(params[pi].len(), cfg.max_coords) {
            let orig = params[pi].data()[coord];
            work[pi].data_mut()[coord] = orig + eps;
            let plus = eval(&work, &blocked, &build)?;
            work[pi].data_mut()[coord] = orig - eps;
            let minus = eval(&work, &blocked, &build)?;
            work[pi].data_mut()[coord] = orig;
            let numeric = (plus - minus).as_f64() / (2.0 * cfg.epsilon);
            let err = rel_error(grad.data()[coord].as_f64(), numeric);
            worst.coords_checked += 1;
            if err > worst.max_rel_error || err.is_nan() {
                worst.max_rel_error = err;
                worst.worst_coord = coord;
            }
        }
        checks.push(worst);
    }
    let passed = checks.iter().all(|c| c.max_rel_error < cfg.tolerance);
    Ok(GradCheckReport {
        params: checks,
        epsilon: cfg.epsilon,
        tolerance: cfg.tolerance,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::Gate;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn vec_t(data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(vec![data.len()], data).unwrap()
    }

    #[test]
    fn rel_error_floor() {
        assert_eq!(rel_error(0.0, 0.0), 0.0);
        assert!((rel_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
        assert!((rel_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn conv_relu_mse_stack_passes() {
        let x = Tensor::from_f64(vec![2, 5, 5], &(0..50).map(|i| ((i * 37 % 17) as f64 - 8.0) / 7.0).collect::<Vec<_>>()).unwrap();
        let k = Tensor::from_f64(vec![3, 2, 3, 3], &(0..54).map(|i| ((i * 13 % 11) as f64 - 5.0) / 9.0).collect::<Vec<_>>()).unwrap();
        let b = vec_t(&[0.1, -0.2, 0.05]);
        let target = Tensor::full(vec![3, 5, 5], 0.3);
        let report = grad_check(&[x, k, b], &GradCheckConfig::default(), |tape, v| {
            let y = tape.conv2d(v[0], v[1], v[2], 1)?;
            let y = tape.relu(y);
            let t = tape.constant(target.clone());
            tape.mse(y, t)
        })
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn saturated_sigmoid_passes_loose_tolerance() {
        let x = vec_t(&[10.0, -10.0, 9.5, -9.7]);
        let cfg = GradCheckConfig {
            epsilon: 1e-4,
            tolerance: 1e-3,
            ..Default::default()
        };
        let report = grad_check(&[x], &cfg, |tape, v| {
            let s = tape.sigmoid(v[0]);
            Ok(tape.sum(s))
        })
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn corrupted_backward_fails() {
        let x = vec_t(&[0.3, -0.7, 1.1]);
        let report = grad_check(&[x.clone()], &GradCheckConfig::default(), |tape, v| {
            tape.corrupt_sigmoid_backward();
            let s = tape.sigmoid(v[0]);
            Ok(tape.sum(s))
        })
        .unwrap();
        assert!(!report.passed);

        // a custom op with a wrong hand-written derivative is caught too
        let report = grad_check(&[x], &GradCheckConfig::default(), |tape, v| {
            let val = tape.value(v[0]).map(|a| a * a);
            let sq = tape.custom(&[v[0]], val, |ins, _, g| {
                vec![Tensor::new(ins[0].shape().to_vec(), ins[0].data().iter().zip(g.data()).map(|(a, g)| a * g).collect()).unwrap()]
            });
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn gated_builder_with_fixed_gates_passes() {
        let x = vec_t(&[0.4, -1.2]);
        let report = grad_check(&[x], &GradCheckConfig::default(), |tape, v| {
            let blocked = tape.gated_edge(v[0], Gate::Block);
            let y = tape.mul(blocked, v[0])?;
            Ok(tape.sum(y))
        })
        .unwrap();
        // the blocked factor is held at its base value on both sides
        assert!(report.passed, "{report:?}");
        assert!((report.params[0].max_rel_error) < 1e-6);
    }

    #[test]
    fn nondeterministic_builder_is_rejected() {
        let calls = AtomicUsize::new(0);
        let x = vec_t(&[1.0]);
        let err = grad_check(&[x], &GradCheckConfig::default(), |tape, v| {
            let n = calls.fetch_add(1, Ordering::SeqCst) as f64;
            let y = tape.scale(v[0], 1.0 + n);
            Ok(tape.sum(y))
        })
        .unwrap_err();
        assert!(matches!(err, AutodiffError::NonDeterministic(_)));
    }

    #[test]
    fn large_tensors_are_subsampled() {
        let x = Tensor::<f64>::from_f64(vec![500], &(0..500).map(|i| i as f64 / 500.0).collect::<Vec<_>>()).unwrap();
        let report = grad_check(&[x], &GradCheckConfig::default(), |tape, v| {
            let y = tape.mul(v[0], v[0])?;
            Ok(tape.sum(y))
        })
        .unwrap();
        assert_eq!(report.params[0].coords_checked, 64);
        assert!(report.passed);
    }
}
