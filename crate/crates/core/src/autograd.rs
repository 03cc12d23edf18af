//! Reverse-mode differentiation over tensor ops.
//!
//! A [`Tape`] owns every value produced during a forward pass. Each op appends
//! one node holding its output and the information its backward rule needs;
//! a [`Var`] is the index of that node. Because a node can only reference
//! earlier nodes, the recording order is a topological order and
//! [`Tape::backward`] simply walks it in reverse.
//!
//! Gradients accumulate additively across fan-out. A tape is meant to be used
//! for a single step and then dropped.

use crate::error::{Error, Result};
use crate::layers::kernels::{self, BatchNormCache, ConvGeometry};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Dense {
        x: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BatchNormCache<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    SpatialMean(Var),
    ChannelScale {
        u: Var,
        s: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Tensor<T>,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Batch statistics observed by a train-mode batch norm, for the caller to
/// fold into its running estimates.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var_unbiased: Vec<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Result of [`Tape::backward`]: one accumulated gradient per reachable node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when no gradient reached `var` (unreachable or not requiring grad).
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    /// The gradient of `var`, or zeros shaped like its value.
    pub fn get_or_zeros(&self, tape: &Tape<T>, var: Var) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros_like(tape.value(var)))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Fingerprint of every piecewise choice made on this tape: which ReLU
    /// inputs were positive and which max-pool elements won. Two evaluations
    /// with equal signatures ran through the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.nodes[x.0].value.data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a).scale(k);
        self.push(v, Op::Scale(a, k), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    /// `sum(a * weights)` with constant weights; a convenient scalar probe
    /// for gradient checks.
    pub fn weighted_sum(&mut self, a: Var, weights: Tensor<T>) -> Result<Var> {
        let w = self.constant(weights);
        let prod = self.mul(a, w)?;
        Ok(self.sum(prod))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    /// Collapse everything after the batch axis: `[N, ...] -> [N, rest]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape();
        let n = shape[0];
        let rest = shape[1..].iter().product::<usize>().max(1);
        self.reshape(a, &[n, rest])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = kernels::relu(self.value(a));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = kernels::sigmoid(self.value(a));
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn dense(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let v = kernels::dense(self.value(x), self.value(weight), bias.map(|b| self.value(b)))?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(v, Op::Dense { x, weight, bias }, &inputs))
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, geom: ConvGeometry) -> Result<Var> {
        let v = kernels::conv2d(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            geom,
        )?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(
            v,
            Op::Conv2d {
                x,
                weight,
                bias,
                geom,
            },
            &inputs,
        ))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (v, argmax) = kernels::maxpool2(self.value(x))?;
        Ok(self.push(v, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn maxpool2d(&mut self, x: Var, kernel: usize, geom: ConvGeometry) -> Result<Var> {
        let (v, argmax) = kernels::maxpool2d(self.value(x), kernel, geom)?;
        Ok(self.push(v, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn batchnorm2d_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let (v, cache) = kernels::batchnorm2d_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let stats = BatchStats {
            mean: cache.batch_mean.clone(),
            var_unbiased: cache.batch_var_unbiased.clone(),
        };
        let out = self.push(
            v,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                cache,
            },
            &[x, gamma, beta],
        );
        Ok((out, stats))
    }

    /// Batch norm against fixed statistics.
    pub fn batchnorm2d_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        eps: T,
    ) -> Result<Var> {
        let (_, c, _, _) = self.value(x).dims4()?;
        if running_mean.shape() != [c] || running_var.shape() != [c] {
            return Err(Error::mismatch(
                "batchnorm2d",
                format!("{c} channels, running stats {:?}", running_mean.shape()),
            ));
        }
        let (scale, shift) =
            kernels::batchnorm_eval_affine(self.value(gamma), self.value(beta), running_mean, running_var, eps);
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::mismatch("batchnorm2d", format!("affine params for {c} channels")));
        }
        let v = kernels::channel_affine(self.value(x), &scale, &shift)?;
        let inv_std = running_var
            .data()
            .iter()
            .map(|&rv| T::one() / (rv + eps).sqrt())
            .collect();
        Ok(self.push(
            v,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean: running_mean.data().to_vec(),
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn spatial_mean(&mut self, u: Var) -> Result<Var> {
        let v = self.value(u).spatial_mean()?;
        Ok(self.push(v, Op::SpatialMean(u), &[u]))
    }

    pub fn channel_scale(&mut self, u: Var, s: Var) -> Result<Var> {
        let v = self.value(u).channel_scale(self.value(s))?;
        Ok(self.push(v, Op::ChannelScale { u, s }, &[u, s]))
    }

    /// Batch-mean cross entropy of `logits: [N, K]` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let per_sample = kernels::cross_entropy_per_sample(self.value(logits), labels)?;
        let n = T::from_f64(per_sample.len() as f64);
        let loss = per_sample.iter().copied().fold(T::zero(), |a, v| a + v) / n;
        let probs = kernels::softmax(self.value(logits))?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }

    /// Propagate `d loss / d node` to every node that requires grad.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::ones(loss_value.shape())?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for (var, contribution) in self.node_backward(node, &g)? {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&contribution)?,
                    slot @ None => *slot = Some(contribution),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if wants(*a) {
                    out.push((*a, g.mul(val(*b))?));
                }
                if wants(*b) {
                    out.push((*b, g.mul(val(*a))?));
                }
                out
            }
            Op::Scale(a, k) => vec![(*a, g.scale(*k))],
            Op::Sum(a) => {
                let gv = g.item();
                vec![(*a, Tensor::full(val(*a).shape(), gv)?)]
            }
            Op::Reshape(a) => vec![(*a, g.clone().reshape(val(*a).shape())?)],
            Op::Relu(a) => vec![(*a, kernels::relu_backward(val(*a), g)?)],
            Op::Sigmoid(a) => vec![(*a, kernels::sigmoid_backward(&node.value, g)?)],
            Op::Dense { x, weight, bias } => {
                let d = kernels::dense_backward(val(*x), val(*weight), g)?;
                let mut out = vec![(*x, d.input), (*weight, d.weight)];
                if let Some(b) = bias {
                    out.push((*b, d.bias));
                }
                out
            }
            Op::Conv2d {
                x,
                weight,
                bias,
                geom,
            } => {
                let d = kernels::conv2d_backward(val(*x), val(*weight), g, *geom)?;
                let mut out = vec![(*x, d.input), (*weight, d.weight)];
                if let Some(b) = bias {
                    out.push((*b, d.bias));
                }
                out
            }
            Op::MaxPool { x, argmax } => {
                vec![(*x, kernels::maxpool2_backward(val(*x).shape(), argmax, g)?)]
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                cache,
            } => {
                let d = kernels::batchnorm2d_train_backward(val(*gamma), cache, g)?;
                vec![(*x, d.input), (*gamma, d.gamma), (*beta, d.beta)]
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let (_, c, h, w) = g.dims4()?;
                let plane = h * w;
                let scale: Vec<T> = val(*gamma)
                    .data()
                    .iter()
                    .zip(inv_std)
                    .map(|(&ga, &is)| ga * is)
                    .collect();
                let dx = kernels::channel_affine(g, &scale, &vec![T::zero(); c])?;
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for (k, (gp, xp)) in g
                    .data()
                    .chunks_exact(plane)
                    .zip(val(*x).data().chunks_exact(plane))
                    .enumerate()
                {
                    let ch = k % c;
                    for (&gv, &xv) in gp.iter().zip(xp) {
                        dbeta[ch] += gv;
                        dgamma[ch] += gv * (xv - mean[ch]) * inv_std[ch];
                    }
                }
                vec![
                    (*x, dx),
                    (*gamma, Tensor::from_vec(&[c], dgamma)?),
                    (*beta, Tensor::from_vec(&[c], dbeta)?),
                ]
            }
            Op::SpatialMean(u) => vec![(*u, kernels::spatial_mean_backward(val(*u).shape(), g)?)],
            Op::ChannelScale { u, s } => {
                let (du, ds) = kernels::channel_scale_backward(val(*u), val(*s), g)?;
                vec![(*u, du), (*s, ds)]
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
            } => vec![(*logits, kernels::cross_entropy_backward(probs, labels, g.item())?)],
        })
    }
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index, analytic, numeric)` at the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub elements_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare tape gradients against central differences.
///
/// `f` builds a scalar from leaves holding `inputs` (in order). Every element
/// of every input is perturbed by `±eps`; the report carries the worst
/// relative error.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if !v.is_scalar() {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        Ok(v.item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        elements_checked: 0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(&tape, *var);
        for i in 0..inputs[which].len() {
            let orig = inputs[which].data()[i];
            probe[which].data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe[which].data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe[which].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            let err = relative_error(a, numeric);
            report.elements_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((which, i, a, numeric));
            }
        }
    }
    Ok(report)
}
