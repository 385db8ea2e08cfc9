//! Small MLPs, the Adam optimizer, and a finite-difference gradient checker.
//!
//! Hidden layers use tanh, the output layer is linear. Weights are
//! Glorot-uniform from a named random stream so full runs reproduce exactly.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{matmul_raw, Grads, Tape, Tensor, Var};

/// One dense layer: weight `[fan_in, fan_out]` plus bias `[fan_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let b = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Tensor::new(
            vec![fan_in, fan_out],
            (0..fan_in * fan_out).map(|_| rng.range(-b, b)).collect(),
        )
        .expect("init shape");
        let bias = Tensor::zeros(vec![fan_out]);
        Linear { weight, bias }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Feed-forward MLP; tanh on hidden layers, identity on the output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Tape handles for one MLP's parameters.
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
}

impl Mlp {
    /// Build from a dimension chain, e.g. `[38, 64, 64, 16]`.
    pub fn init(dims: &[usize], rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least one layer");
        let layers = dims
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    pub fn param_tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Register parameters on a tape.
    pub fn vars(&self, tape: &mut Tape) -> MlpVars {
        let layers = self
            .layers
            .iter()
            .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
            .collect();
        MlpVars { layers }
    }

    /// Rebuild tape handles from a flat leaf list laid out as
    /// `[w0, b0, w1, b1, ...]` (the `param_tensors` order).
    pub fn vars_from_leaves(&self, leaves: &[Var]) -> MlpVars {
        assert_eq!(leaves.len(), self.layers.len() * 2);
        MlpVars {
            layers: leaves.chunks(2).map(|c| (c[0], c[1])).collect(),
        }
    }

    /// Pure forward pass on a `[n, in_dim]` matrix (or `[in_dim]` vector).
    /// Bit-identical to the recorded pass: both run the same kernels in the
    /// same order.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.cols() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                op: "mlp_forward",
                detail: format!(
                    "input last dim {} vs first layer fan_in {}",
                    input.cols(),
                    self.in_dim()
                ),
            });
        }
        let rows = input.rows();
        let mut cur = input.data().to_vec();
        let mut cur_cols = input.cols();
        for (li, layer) in self.layers.iter().enumerate() {
            let out_cols = layer.fan_out();
            let mut next = matmul_raw(&cur, layer.weight.data(), rows, cur_cols, out_cols);
            let b = layer.bias.data();
            for r in 0..rows {
                for j in 0..out_cols {
                    next[r * out_cols + j] += b[j];
                }
            }
            if li + 1 < self.layers.len() {
                for v in next.iter_mut() {
                    *v = v.tanh();
                }
            }
            cur = next;
            cur_cols = out_cols;
        }
        let out = Tensor::new(vec![rows, cur_cols], cur)?;
        out.check_finite("mlp_forward output")?;
        Ok(out)
    }
}

/// Recorded forward pass; gradients flow to both parameters and input.
pub fn mlp_forward(tape: &mut Tape, mlp: &Mlp, vars: &MlpVars, input: Var) -> Result<Var> {
    if tape.value(input).cols() != mlp.in_dim() {
        return Err(Error::ShapeMismatch {
            op: "mlp_forward",
            detail: format!(
                "input last dim {} vs first layer fan_in {}",
                tape.value(input).cols(),
                mlp.in_dim()
            ),
        });
    }
    let mut cur = input;
    for (li, (w, b)) in vars.layers.iter().enumerate() {
        let mm = tape.matmul(cur, *w)?;
        cur = tape.add_bias(mm, *b)?;
        if li + 1 < vars.layers.len() {
            cur = tape.tanh(cur);
        }
    }
    Ok(cur)
}

/// Adam with bias correction. Moment shapes mirror the parameter list the
/// state was created for.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[&Tensor], lr: f64) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update over a parameter group. `grads` must be keyed 1:1 with
    /// `params` (same order, same shapes).
    pub fn apply(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam: {} params / {} grads for state over {} tensors",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), i) in params.iter().zip(grads).zip(0..) {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    detail: format!(
                        "param {i}: param {:?}, grad {:?}, moment {:?}",
                        p.shape(),
                        g.shape(),
                        self.m[i].shape()
                    ),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let pd = p.data_mut();
            for j in 0..pd.len() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                pd[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.check_finite("adam_step parameter")?;
        }
        Ok(())
    }
}

/// Result of a gradient check: the worst per-parameter relative error and
/// where it was.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: usize,
    /// Entry with the largest absolute deviation inside the worst parameter
    /// (diagnostic aid).
    pub worst_entry: usize,
}

/// Compare analytic gradients of `f` against central finite differences.
///
/// `f` builds a scalar loss from leaf vars corresponding to `params` (in
/// order); it must be deterministic. The reported error is the max over
/// parameters of `||analytic - fd|| / max(1e-12, ||analytic|| + ||fd||)`
/// (Euclidean norms per parameter tensor). Norms rather than raw entries:
/// individual entries whose true gradient sits below the fp64
/// finite-difference noise floor (~1e-10 absolute) would otherwise dominate
/// the ratio with pure measurement noise.
pub fn grad_check<F>(f: &F, params: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::contract(format!("grad_check eps must be > 0, got {eps}")));
    }

    let eval = |tensors: &[Tensor], want_grads: bool| -> Result<(f64, Option<Vec<Tensor>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let lt = tape.value(loss);
        if !lt.is_scalar() {
            return Err(Error::contract(format!(
                "grad_check function must return a scalar, got shape {:?}",
                lt.shape()
            )));
        }
        let val = lt.item();
        if !want_grads {
            return Ok((val, None));
        }
        let grads = tape.backward(loss)?;
        let gs = vars.iter().map(|&v| grads.get(&tape, v)).collect();
        Ok((val, Some(gs)))
    };

    let (base, analytic) = eval(params, true)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("grad_check base evaluation".into()));
    }
    let analytic = analytic.unwrap();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: 0,
        worst_entry: 0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for pi in 0..params.len() {
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut fd2 = 0.0;
        let mut worst_abs = (0.0, 0usize);
        for ei in 0..params[pi].numel() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + eps;
            let (fp, _) = eval(&work, false)?;
            work[pi].data_mut()[ei] = orig - eps;
            let (fm, _) = eval(&work, false)?;
            work[pi].data_mut()[ei] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite(format!(
                    "grad_check FD evaluation at param {pi} entry {ei}"
                )));
            }
            let fd = (fp - fm) / (2.0 * eps);
            let a = analytic[pi].data()[ei];
            diff2 += (a - fd) * (a - fd);
            a2 += a * a;
            fd2 += fd * fd;
            if (a - fd).abs() > worst_abs.0 {
                worst_abs = ((a - fd).abs(), ei);
            }
        }
        let rel = diff2.sqrt() / f64::max(1e-12, a2.sqrt() + fd2.sqrt());
        if rel > report.max_rel_err {
            report = GradCheckReport {
                max_rel_err: rel,
                worst_param: pi,
                worst_entry: worst_abs.1,
            };
        }
    }
    Ok(report)
}

/// Convenience: gradients of a scalar tape node for a set of leaf vars, in
/// order, with zeros for unreached leaves.
pub fn backprop(tape: &Tape, loss: Var, leaves: &[Var]) -> Result<Vec<Tensor>> {
    let grads: Grads = tape.backward(loss)?;
    Ok(leaves.iter().map(|&v| grads.get(tape, v)).collect())
}
