//! Trainable layers built on the tape.
//!
//! Parameters live in a [`ParamStore`] owned by the model; layers only hold
//! ids into it. A forward pass runs inside a [`Graph`], which binds each
//! parameter to a tape leaf on first use and collects running-statistic
//! updates so the store can stay borrowed immutably during the pass.

pub mod kernels;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use kernels::ConvGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Non-trainable state such as batch norm running statistics.
#[derive(Clone, Debug)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    buffers: Vec<Buffer<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let grad = Tensor::zeros_like(&value);
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> BufferId {
        self.buffers.push(Buffer {
            name: name.into(),
            value,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer<T> {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Buffer<T> {
        &mut self.buffers[id.0]
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Buffer<T>] {
        &mut self.buffers
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Add the gradients and running-stat updates of a finished step.
    pub fn apply(&mut self, step: StepResult<T>) -> Result<()> {
        for (id, g) in step.param_grads {
            self.params[id.0].grad.add_assign(&g)?;
        }
        for (id, v) in step.buffer_updates {
            self.buffers[id.0].value = v;
        }
        Ok(())
    }
}

/// Everything a training step hands back to the store.
#[derive(Debug)]
pub struct StepResult<T> {
    pub loss: T,
    pub param_grads: Vec<(ParamId, Tensor<T>)>,
    pub buffer_updates: Vec<(BufferId, Tensor<T>)>,
}

/// Forward-pass context: a tape plus parameter bindings.
pub struct Graph<'a, T> {
    pub tape: Tape<T>,
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    trainable: bool,
    updates: Vec<(BufferId, Tensor<T>)>,
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: Mode) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            bound: vec![None; store.params.len()],
            mode,
            trainable: true,
            updates: Vec::new(),
        }
    }

    /// A graph whose parameters are constants (no gradient bookkeeping).
    pub fn inference(store: &'a ParamStore<T>, mode: Mode) -> Self {
        let mut g = Self::new(store, mode);
        g.trainable = false;
        g
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn input(&mut self, x: Tensor<T>) -> Var {
        self.tape.constant(x)
    }

    /// Tape leaf for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self
            .tape
            .leaf(self.store.params[id.0].value.clone(), self.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.store.buffers[id.0].value
    }

    pub fn queue_update(&mut self, id: BufferId, value: Tensor<T>) {
        self.updates.push((id, value));
    }

    /// Backpropagate from `loss` and package the parameter gradients.
    pub fn finish(self, loss: Var) -> Result<StepResult<T>> {
        let loss_value = self.tape.value(loss).item();
        let mut grads = self.tape.backward(loss)?;
        let param_grads = self
            .bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .map(|(id, v)| {
                let g = grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros_like(self.tape.value(v)));
                (id, g)
            })
            .collect();
        Ok(StepResult {
            loss: loss_value,
            param_grads,
            buffer_updates: self.updates,
        })
    }

    /// Running-stat updates produced so far, without backpropagating.
    pub fn into_updates(self) -> Vec<(BufferId, Tensor<T>)> {
        self.updates
    }
}

/// What an initializer is sizing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

impl LayerKind {
    pub fn fan_in(self) -> usize {
        match self {
            LayerKind::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            LayerKind::Dense { inputs, .. } => inputs,
        }
    }

    pub fn fan_out(self) -> usize {
        match self {
            LayerKind::Conv2d {
                out_channels, kernel, ..
            } => out_channels * kernel * kernel,
            LayerKind::Dense { outputs, .. } => outputs,
        }
    }

    fn weight_shape(self) -> Vec<usize> {
        match self {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => vec![out_channels, in_channels, kernel, kernel],
            LayerKind::Dense { inputs, outputs } => vec![outputs, inputs],
        }
    }

    fn bias_len(self) -> usize {
        match self {
            LayerKind::Conv2d { out_channels, .. } => out_channels,
            LayerKind::Dense { outputs, .. } => outputs,
        }
    }
}

/// Half-width of the Kaiming-uniform interval, `sqrt(6 / fan_in)`.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Kaiming-uniform weights and zero biases.
pub fn init_params<T: Scalar>(rng: &mut Rng, kind: LayerKind) -> Result<(Tensor<T>, Tensor<T>)> {
    if kind.fan_in() == 0 || kind.fan_out() == 0 {
        return Err(Error::InvalidConfig(format!("layer {kind:?} has an empty fan")));
    }
    let bound = kaiming_bound(kind.fan_in());
    let weight = Tensor::rand_uniform(rng, &kind.weight_shape(), -bound, bound)?;
    let bias = Tensor::zeros(&[kind.bias_len()])?;
    Ok((weight, bias))
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeometry,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: ConvGeometry,
        with_bias: bool,
    ) -> Result<Self> {
        let kind = LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel,
        };
        let (w, b) = init_params::<T>(&mut rng.derive(&format!("{name}.weight")), kind)?;
        let weight = store.add_param(format!("{name}.weight"), w);
        let bias = with_bias.then(|| store.add_param(format!("{name}.bias"), b));
        Ok(Conv2d {
            weight,
            bias,
            geom,
            in_channels,
            out_channels,
            kernel,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|id| g.param(id));
        g.tape.conv2d(x, w, b, self.geom)
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Result<Self> {
        let (w, b) = init_params::<T>(
            &mut rng.derive(&format!("{name}.weight")),
            LayerKind::Dense { inputs, outputs },
        )?;
        Ok(Dense {
            weight: store.add_param(format!("{name}.weight"), w),
            bias: store.add_param(format!("{name}.bias"), b),
            inputs,
            outputs,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.tape.dense(x, w, Some(b))
    }
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub momentum: f64,
    pub eps: f64,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::ones(&[channels])?),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(&[channels])?),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])?),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[channels])?),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            channels,
        })
    }

    /// Train mode normalizes with batch statistics and queues a running-stat
    /// update; eval mode uses the running statistics only.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        let eps = T::from_f64(self.eps);
        match g.mode() {
            Mode::Train => {
                let (y, stats) = g.tape.batchnorm2d_train(x, gamma, beta, eps)?;
                let m = T::from_f64(self.momentum);
                let keep = T::one() - m;
                let blend = |old: &Tensor<T>, fresh: &[T]| -> Result<Tensor<T>> {
                    let data = old.data().iter().zip(fresh).map(|(&o, &f)| keep * o + m * f).collect();
                    Tensor::from_vec(old.shape(), data)
                };
                let mean = blend(g.buffer(self.running_mean), &stats.mean)?;
                let var = blend(g.buffer(self.running_var), &stats.var_unbiased)?;
                g.queue_update(self.running_mean, mean);
                g.queue_update(self.running_var, var);
                Ok(y)
            }
            Mode::Eval => {
                let rm = g.buffer(self.running_mean).clone();
                let rv = g.buffer(self.running_var).clone();
                g.tape.batchnorm2d_eval(x, gamma, beta, &rm, &rv, eps)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::finite_diff_check;

    #[test]
    fn kaiming_conv_bound() {
        let kind = LayerKind::Conv2d {
            in_channels: 3,
            out_channels: 16,
            kernel: 3,
        };
        let bound = kaiming_bound(kind.fan_in());
        assert!((bound - (6.0f64 / 27.0).sqrt()).abs() < 1e-15);
        assert!((bound - 0.4714).abs() < 1e-4);
        let (w, b) = init_params::<f64>(&mut Rng::new(1), kind).unwrap();
        assert_eq!(w.shape(), &[16, 3, 3, 3]);
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(b.data().iter().all(|&v| v == 0.0));
        let (w2, _) = init_params::<f64>(&mut Rng::new(1), kind).unwrap();
        assert_eq!(w, w2);
    }

    #[test]
    fn graph_binds_each_param_once() {
        let mut store = ParamStore::<f64>::new();
        let rng = Rng::new(0);
        let dense = Dense::new(&mut store, &rng, "fc", 3, 2).unwrap();
        let mut g = Graph::new(&store, Mode::Train);
        let a = g.param(dense.weight);
        let b = g.param(dense.weight);
        assert_eq!(a, b);
    }

    #[test]
    fn step_result_accumulates_into_store() {
        let mut store = ParamStore::<f64>::new();
        let dense = Dense::new(&mut store, &Rng::new(0), "fc", 2, 1).unwrap();
        for _ in 0..2 {
            let mut g = Graph::new(&store, Mode::Train);
            let x = g.input(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap());
            let y = dense.forward(&mut g, x).unwrap();
            let loss = g.tape.sum(y);
            let step = g.finish(loss).unwrap();
            store.apply(step).unwrap();
        }
        assert_eq!(store.param(dense.weight).grad.data(), &[2.0, 4.0]);
        assert_eq!(store.param(dense.bias).grad.data(), &[2.0]);
        store.zero_grad();
        assert!(store.param(dense.weight).grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn running_stats_converge_to_batch_stats() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 3).unwrap();
        let x = Tensor::rand_uniform(&mut Rng::new(5), &[8, 3, 16, 16], -1.0, 2.0).unwrap();
        let mut train_out = None;
        for _ in 0..300 {
            let mut g = Graph::inference(&store, Mode::Train);
            let xv = g.input(x.clone());
            let y = bn.forward(&mut g, xv).unwrap();
            train_out = Some(g.tape.value(y).clone());
            let updates = g.into_updates();
            store
                .apply(StepResult {
                    loss: 0.0,
                    param_grads: vec![],
                    buffer_updates: updates,
                })
                .unwrap();
        }
        let mut g = Graph::inference(&store, Mode::Eval);
        let xv = g.input(x.clone());
        let y = bn.forward(&mut g, xv).unwrap();
        let eval_out = g.tape.value(y);
        // The running variance is the unbiased estimate, so eval output is
        // scaled by sqrt((n-1)/n) = sqrt(2047/2048) relative to train output.
        for (a, b) in eval_out.data().iter().zip(train_out.unwrap().data()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    fn check_layer(build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>, inputs: Vec<Tensor<f64>>) {
        let r = finite_diff_check(build, &inputs, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn conv_gradients() {
        let mut rng = Rng::new(12);
        let x = Tensor::rand_uniform(&mut rng, &[2, 3, 5, 5], -1.0, 1.0).unwrap();
        let w = Tensor::rand_uniform(&mut rng, &[4, 3, 3, 3], -1.0, 1.0).unwrap();
        let b = Tensor::rand_uniform(&mut rng, &[4], -1.0, 1.0).unwrap();
        for geom in [
            ConvGeometry { stride: 1, padding: 1 },
            ConvGeometry { stride: 2, padding: 1 },
        ] {
            let oh = kernels::conv_out_size(5, 3, geom).unwrap();
            let probe = Tensor::rand_uniform(&mut rng, &[2, 4, oh, oh], -1.0, 1.0).unwrap();
            check_layer(
                |t, v| {
                    let y = t.conv2d(v[0], v[1], Some(v[2]), geom)?;
                    t.weighted_sum(y, probe.clone())
                },
                vec![x.clone(), w.clone(), b.clone()],
            );
        }
    }

    #[test]
    fn dense_gradients() {
        let mut rng = Rng::new(13);
        let x = Tensor::rand_uniform(&mut rng, &[3, 5], -1.0, 1.0).unwrap();
        let w = Tensor::rand_uniform(&mut rng, &[4, 5], -1.0, 1.0).unwrap();
        let b = Tensor::rand_uniform(&mut rng, &[4], -1.0, 1.0).unwrap();
        let probe = Tensor::rand_uniform(&mut rng, &[3, 4], -1.0, 1.0).unwrap();
        check_layer(
            |t, v| {
                let y = t.dense(v[0], v[1], Some(v[2]))?;
                t.weighted_sum(y, probe.clone())
            },
            vec![x, w, b],
        );
    }

    #[test]
    fn relu_and_maxpool_gradients() {
        let mut rng = Rng::new(14);
        let x = Tensor::rand_uniform(&mut rng, &[2, 2, 4, 4], -1.0, 1.0).unwrap();
        let probe = Tensor::rand_uniform(&mut rng, &[2, 2, 2, 2], -1.0, 1.0).unwrap();
        check_layer(
            |t, v| {
                let r = t.relu(v[0]);
                let p = t.maxpool2(r)?;
                t.weighted_sum(p, probe.clone())
            },
            vec![x.clone()],
        );

        // Only the argmax of each window receives gradient.
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), true);
        let p = tape.maxpool2(xv).unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        let grad = g.get(xv).unwrap();
        assert_eq!(grad.data().iter().filter(|&&v| v == 1.0).count(), 16);
        assert_eq!(grad.data().iter().filter(|&&v| v == 0.0).count(), 48);
    }

    #[test]
    fn batchnorm_gradients() {
        let mut rng = Rng::new(15);
        let x = Tensor::rand_uniform(&mut rng, &[2, 3, 3, 3], -1.0, 1.0).unwrap();
        let gamma = Tensor::rand_uniform(&mut rng, &[3], 0.5, 1.5).unwrap();
        let beta = Tensor::rand_uniform(&mut rng, &[3], -0.5, 0.5).unwrap();
        let probe = Tensor::rand_uniform(&mut rng, &[2, 3, 3, 3], -1.0, 1.0).unwrap();
        check_layer(
            |t, v| {
                let (y, _) = t.batchnorm2d_train(v[0], v[1], v[2], 1e-5)?;
                t.weighted_sum(y, probe.clone())
            },
            vec![x.clone(), gamma.clone(), beta.clone()],
        );
        let rm = Tensor::rand_uniform(&mut rng, &[3], -0.5, 0.5).unwrap();
        let rv = Tensor::rand_uniform(&mut rng, &[3], 0.5, 2.0).unwrap();
        check_layer(
            |t, v| {
                let y = t.batchnorm2d_eval(v[0], v[1], v[2], &rm, &rv, 1e-5)?;
                t.weighted_sum(y, probe.clone())
            },
            vec![x, gamma, beta],
        );
    }

    #[test]
    fn squeeze_and_scale_gradients() {
        let mut rng = Rng::new(16);
        let u = Tensor::rand_uniform(&mut rng, &[2, 3, 4, 4], -1.0, 1.0).unwrap();
        let s = Tensor::rand_uniform(&mut rng, &[2, 3], 0.1, 0.9).unwrap();
        let probe = Tensor::rand_uniform(&mut rng, &[2, 3, 4, 4], -1.0, 1.0).unwrap();
        check_layer(
            |t, v| {
                let y = t.channel_scale(v[0], v[1])?;
                let z = t.spatial_mean(y)?;
                let z2 = t.sigmoid(z);
                let a = t.weighted_sum(y, probe.clone())?;
                let b = t.sum(z2);
                t.add(a, b)
            },
            vec![u, s],
        );
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut rng = Rng::new(17);
        let logits = Tensor::rand_uniform(&mut rng, &[3, 5], -2.0, 2.0).unwrap();
        let labels = [0usize, 3, 4];
        check_layer(
            |t, v| t.softmax_cross_entropy(v[0], &labels),
            vec![logits.clone()],
        );
        let mut tape = Tape::new();
        let l = tape.leaf(logits.clone(), true);
        let loss = tape.softmax_cross_entropy(l, &labels).unwrap();
        let g = tape.backward(loss).unwrap();
        let p = kernels::softmax(&logits).unwrap();
        for (r, &label) in labels.iter().enumerate() {
            for k in 0..5 {
                let onehot = if k == label { 1.0 } else { 0.0 };
                let want = (p.data()[r * 5 + k] - onehot) / 3.0;
                assert!((g.get(l).unwrap().data()[r * 5 + k] - want).abs() < 1e-15);
            }
        }
    }
}
