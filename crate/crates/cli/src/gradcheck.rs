//! Finite-difference checks over every tape primitive and the full cell.

use anyhow::Result;
use cbm_core::autodiff::{grad_check, Gate, GradCheckConfig, Result as AdResult, Tape, Var};
use cbm_core::cbm::{draw_gates, unroll_clip_with_gates, CbmLayerParams, MergeKind, StackConfig};
use cbm_core::Tensor64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    /// Random instances per check.
    pub instances: usize,
    pub seed: u64,
    /// Temporal-dropout rate for the cell checks; gates are drawn once per
    /// instance from `gate_seed` and held fixed across the difference pair.
    pub td_rate: f64,
    pub gate_seed: u64,
    /// Corrupt the sigmoid backward pass (negative control).
    pub inject_fault: bool,
    pub config: GradCheckConfig,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            instances: 100,
            seed: 0,
            td_rate: 0.0,
            gate_seed: 0,
            inject_fault: false,
            config: GradCheckConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor64 {
    let n = shape.iter().product();
    Tensor64::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// Values bounded away from zero, so a ReLU kink never sits inside ±ε and no
/// product gradient is small enough for rounding in the difference to dominate.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor64 {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor64::new(shape.to_vec(), data).expect("shape")
}

/// `Σ x ⊙ w` for a fixed random `w`, turning any output into a scalar with
/// a dense gradient.
fn project(tape: &mut Tape<f64>, x: Var, w: &Tensor64) -> AdResult<Var> {
    let w = tape.constant(w.clone());
    let y = tape.mul(x, w)?;
    Ok(tape.sum(y))
}

type Builder = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> AdResult<Var>>;

struct Instance {
    params: Vec<Tensor64>,
    build: Builder,
}

fn primitive_instance(name: &str, rng: &mut ChaCha8Rng, fault: bool) -> Instance {
    let c = rng.gen_range(1..=3);
    let h = rng.gen_range(2..=5);
    let w = rng.gen_range(2..=5);
    let shape = [c, h, w];
    let proj = off_zero(rng, &shape);
    let unary = |params: Vec<Tensor64>, f: fn(&mut Tape<f64>, Var) -> Var| -> Instance {
        let proj = proj.clone();
        Instance {
            params,
            build: Box::new(move |t, v| {
                if fault {
                    t.corrupt_sigmoid_backward();
                }
                let y = f(t, v[0]);
                project(t, y, &proj)
            }),
        }
    };
    match name {
        "conv2d" => {
            let k = *[1usize, 2, 3].get(rng.gen_range(0..3)).unwrap();
            let pad = if k % 2 == 1 { k / 2 } else { 0 };
            let c_out = rng.gen_range(1..=3);
            let (oh, ow) = (h + 2 * pad + 1 - k, w + 2 * pad + 1 - k);
            let proj = off_zero(rng, &[c_out, oh, ow]);
            Instance {
                params: vec![
                    uniform(rng, &shape, -1.0, 1.0),
                    uniform(rng, &[c_out, c, k, k], -1.0, 1.0),
                    uniform(rng, &[c_out], -0.5, 0.5),
                ],
                build: Box::new(move |t, v| {
                    let y = t.conv2d(v[0], v[1], v[2], pad)?;
                    project(t, y, &proj)
                }),
            }
        }
        "relu" => unary(vec![off_zero(rng, &shape)], |t, x| t.relu(x)),
        "sigmoid" => unary(vec![uniform(rng, &shape, -4.0, 4.0)], |t, x| t.sigmoid(x)),
        "gated_edge" => unary(vec![uniform(rng, &shape, -1.0, 1.0)], |t, x| t.gated_edge(x, Gate::Pass)),
        "scale" => unary(vec![uniform(rng, &shape, -1.0, 1.0)], |t, x| t.scale(x, -1.7)),
        "sum" => Instance {
            params: vec![uniform(rng, &shape, -1.0, 1.0)],
            build: Box::new(|t, v| {
                let s = t.sum(v[0]);
                let s2 = t.mul(s, s)?;
                Ok(t.sum(s2))
            }),
        },
        "mul" | "add" => {
            let is_mul = name == "mul";
            let proj = proj.clone();
            Instance {
                params: vec![off_zero(rng, &shape), off_zero(rng, &shape)],
                build: Box::new(move |t, v| {
                    let y = if is_mul { t.mul(v[0], v[1])? } else { t.add(v[0], v[1])? };
                    let y = t.mul(y, y)?;
                    project(t, y, &proj)
                }),
            }
        }
        "concat_channels" => {
            let c2 = rng.gen_range(1..=3);
            let proj = off_zero(rng, &[c + c2, h, w]);
            Instance {
                params: vec![uniform(rng, &shape, -1.0, 1.0), uniform(rng, &[c2, h, w], -1.0, 1.0)],
                build: Box::new(move |t, v| {
                    let y = t.concat_channels(v[0], v[1])?;
                    project(t, y, &proj)
                }),
            }
        }
        "reshape" => {
            let proj = off_zero(rng, &[c * h * w]);
            Instance {
                params: vec![uniform(rng, &shape, -1.0, 1.0)],
                build: Box::new(move |t, v| {
                    let y = t.reshape(v[0], vec![c * h * w])?;
                    project(t, y, &proj)
                }),
            }
        }
        "affine" => {
            let (d_in, d_out) = (rng.gen_range(1..=8), rng.gen_range(1..=5));
            let proj = off_zero(rng, &[d_out]);
            Instance {
                params: vec![
                    uniform(rng, &[d_in], -1.0, 1.0),
                    uniform(rng, &[d_out, d_in], -1.0, 1.0),
                    uniform(rng, &[d_out], -1.0, 1.0),
                ],
                build: Box::new(move |t, v| {
                    let y = t.affine(v[0], v[1], v[2])?;
                    project(t, y, &proj)
                }),
            }
        }
        "softmax_xent" => {
            let k = rng.gen_range(2..=6);
            let label = rng.gen_range(0..k);
            Instance {
                params: vec![uniform(rng, &[k], -3.0, 3.0)],
                build: Box::new(move |t, v| t.softmax_xent(v[0], label)),
            }
        }
        "mse" => Instance {
            params: vec![uniform(rng, &shape, -1.0, 1.0), uniform(rng, &shape, -1.0, 1.0)],
            build: Box::new(|t, v| t.mse(v[0], v[1])),
        },
        other => unreachable!("no primitive {other}"),
    }
}

fn cell_instance(merge: MergeKind, rng: &mut ChaCha8Rng, opts: &GradcheckOptions, gate_rng: &mut ChaCha8Rng) -> Result<Instance> {
    let layers = rng.gen_range(1..=2);
    let channels = rng.gen_range(1..=2);
    let (h, w) = (rng.gen_range(2..=4), rng.gen_range(2..=4));
    let steps = rng.gen_range(1..=3);
    let mut stack = StackConfig::uniform(1, channels, layers);
    stack.merge = merge;
    let mut params = Vec::new();
    for i in 0..layers {
        let p = CbmLayerParams::<f64>::init(stack.layer_input(i), channels, stack.kernel_size, rng);
        params.extend(p.tensors().into_iter().cloned());
    }
    // non-zero biases so no unit starts exactly at a kink
    for (i, p) in params.iter_mut().enumerate() {
        if i % 2 == 1 {
            *p = uniform(rng, p.shape(), -0.3, 0.3);
        }
    }
    let n_layer_params = params.len();
    for _ in 0..steps {
        params.push(uniform(rng, &[1, h, w], -1.0, 1.0));
    }
    for _ in 0..layers {
        params.push(uniform(rng, &[channels, h, w], 0.0, 1.0));
    }
    let gates = draw_gates(gate_rng, steps, layers, opts.td_rate)?;
    let proj: Vec<Tensor64> = (0..steps).map(|_| uniform(rng, &[channels, h, w], -1.0, 1.0)).collect();
    let fault = opts.inject_fault;
    let build: Builder = Box::new(move |t, v| {
        if fault {
            t.corrupt_sigmoid_backward();
        }
        let layer_vars: Vec<_> = v[..n_layer_params]
            .chunks(4)
            .map(|c| cbm_core::cbm::LayerVars {
                r_kernel: c[0],
                r_bias: c[1],
                t_kernel: c[2],
                t_bias: c[3],
            })
            .collect();
        let frames = &v[n_layer_params..n_layer_params + steps];
        let init = &v[n_layer_params + steps..];
        let unroll = unroll_clip_with_gates(t, frames, init, &layer_vars, &stack, gates.clone())
            .map_err(|e| cbm_core::autodiff::AutodiffError::ShapeMismatch { op: "unroll", detail: e.to_string() })?;
        let mut total: Option<Var> = None;
        for (o, p) in unroll.outputs().into_iter().zip(&proj) {
            let l = project(t, o, p)?;
            total = Some(match total {
                Some(acc) => t.add(acc, l)?,
                None => l,
            });
        }
        Ok(total.expect("at least one step"))
    });
    Ok(Instance { params, build })
}

pub const PRIMITIVES: &[&str] = &[
    "conv2d",
    "relu",
    "sigmoid",
    "mul",
    "add",
    "scale",
    "sum",
    "affine",
    "softmax_xent",
    "mse",
    "gated_edge",
    "concat_channels",
    "reshape",
];

fn check(name: &str, instances: usize, opts: &GradcheckOptions, mut make: impl FnMut() -> Result<Instance>) -> Result<CheckLine> {
    let mut worst = 0.0f64;
    let mut passed = true;
    for _ in 0..instances {
        let inst = make()?;
        let report = grad_check(&inst.params, &opts.config, inst.build)?;
        worst = worst.max(report.max_rel_error());
        passed &= report.passed;
    }
    Ok(CheckLine {
        name: name.to_string(),
        instances,
        max_rel_error: worst,
        passed,
    })
}

/// One line per primitive plus the production and addition cells.
pub fn run_suite(opts: &GradcheckOptions) -> Result<Vec<CheckLine>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut gate_rng = ChaCha8Rng::seed_from_u64(opts.gate_seed);
    let mut lines = Vec::new();
    for &name in PRIMITIVES {
        lines.push(check(name, opts.instances, opts, || Ok(primitive_instance(name, &mut rng, opts.inject_fault)))?);
    }
    for (name, merge) in [("cbm_cell_production", MergeKind::Production), ("cbm_cell_addition", MergeKind::Addition)] {
        lines.push(check(name, opts.instances, opts, || cell_instance(merge, &mut rng, opts, &mut gate_rng))?);
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes_and_fault_is_caught() {
        let opts = GradcheckOptions { instances: 3, ..Default::default() };
        let lines = run_suite(&opts).unwrap();
        assert_eq!(lines.len(), PRIMITIVES.len() + 2);
        assert!(lines.iter().all(|l| l.passed), "{lines:?}");

        let faulty = GradcheckOptions { inject_fault: true, ..opts };
        let lines = run_suite(&faulty).unwrap();
        let sig = lines.iter().find(|l| l.name == "sigmoid").unwrap();
        assert!(!sig.passed);
        assert!(!lines.iter().find(|l| l.name == "cbm_cell_production").unwrap().passed);
    }

    #[test]
    fn fixed_gates_at_half_rate_pass() {
        let opts = GradcheckOptions { instances: 3, td_rate: 0.5, gate_seed: 7, ..Default::default() };
        assert!(run_suite(&opts).unwrap().iter().all(|l| l.passed));
    }
}
