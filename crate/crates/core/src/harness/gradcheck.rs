//! Gradient checks for attention modules, host blocks and whole models.

use crate::attention::{attention_on_tape, AttentionParams, AttentionSpec, VariantKind};
use crate::autograd::{finite_diff_check, relative_error, GradCheckReport, Var};
use crate::error::Result;
use crate::layers::{Graph, Mode, ParamStore};
use crate::models::{BasicBlock, InputSize, ResNet, ResNetLayout};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const GRADCHECK_EPS: f64 = 1e-4;
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Full-model checks go through many ReLU kinks and batch statistics.
pub const MODEL_TOL: f64 = 1e-3;
/// Elements probed per parameter tensor in the host block check.
pub const BLOCK_PROBES: usize = 64;

/// Worst element of a store-level check.
#[derive(Clone, Debug, PartialEq)]
pub struct StoreCheck {
    pub max_rel_error: f64,
    /// `(param name, element, analytic, numeric)`.
    pub worst: Option<(String, usize, f64, f64)>,
    pub elements_checked: usize,
    /// Probes whose `±eps` window crossed a ReLU or max-pool switch point.
    /// The central difference is meaningless there, so they are not scored.
    pub kinks_skipped: usize,
}

impl StoreCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compare backpropagated gradients of every parameter in `store` with
/// central differences. `per_tensor` caps how many randomly chosen elements
/// of each parameter are probed; `None` probes them all.
///
/// A probe is skipped when either shifted evaluation takes a different
/// ReLU or max-pool branch than the unshifted one.
pub fn check_store_gradients<F>(
    store: &mut ParamStore<f64>,
    mode: Mode,
    eps: f64,
    per_tensor: Option<usize>,
    rng: &mut Rng,
    loss: F,
) -> Result<StoreCheck>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let (step, base) = {
        let mut g = Graph::new(store, mode);
        let l = loss(&mut g)?;
        let sig = g.tape.branch_signature();
        (g.finish(l)?, sig)
    };
    let mut analytic: Vec<Option<Tensor<f64>>> = vec![None; store.params().len()];
    for (id, grad) in step.param_grads {
        analytic[id.index()] = Some(grad);
    }
    let eval = |store: &ParamStore<f64>| -> Result<(f64, u64)> {
        let mut g = Graph::inference(store, mode);
        let l = loss(&mut g)?;
        Ok((g.tape.value(l).item(), g.tape.branch_signature()))
    };

    let mut report = StoreCheck {
        max_rel_error: 0.0,
        worst: None,
        elements_checked: 0,
        kinks_skipped: 0,
    };
    for p in 0..store.params().len() {
        let len = store.params()[p].value.len();
        let mut elems: Vec<usize> = (0..len).collect();
        if let Some(k) = per_tensor.filter(|&k| k < len) {
            rng.shuffle(&mut elems);
            elems.truncate(k);
            elems.sort_unstable();
        }
        for i in elems {
            let orig = store.params()[p].value.data()[i];
            store.params_mut()[p].value.data_mut()[i] = orig + eps;
            let (plus, sig_plus) = eval(store)?;
            store.params_mut()[p].value.data_mut()[i] = orig - eps;
            let (minus, sig_minus) = eval(store)?;
            store.params_mut()[p].value.data_mut()[i] = orig;
            if sig_plus != base || sig_minus != base {
                report.kinks_skipped += 1;
                continue;
            }

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p].as_ref().map_or(0.0, |t| t.data()[i]);
            let err = relative_error(a, numeric);
            report.elements_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.params()[p].name.clone(), i, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Standalone attention module on a random `[2, C, 4, 4]` input, checked
/// with respect to the input and every FC weight and bias. The scalar probe
/// is a random weighting of the output.
pub fn check_attention(spec: &AttentionSpec, seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed).derive("gradcheck.attention");
    let shape = [2, spec.channels, 4, 4];
    let u = Tensor::<f64>::rand_uniform(&mut rng, &shape, -1.0, 1.0)?;
    let probe = Tensor::<f64>::rand_uniform(&mut rng, &shape, -1.0, 1.0)?;
    let params = AttentionParams::<f64>::random(spec, &mut rng, 1.0)?;
    let mut inputs = vec![u];
    inputs.extend(params.into_tensors());
    finite_diff_check(
        |tape, vars| {
            let layers: Vec<(Var, Var)> = vars[1..].chunks_exact(2).map(|c| (c[0], c[1])).collect();
            let out = attention_on_tape(tape, vars[0], spec, &layers)?;
            tape.weighted_sum(out, probe.clone())
        },
        &inputs,
        GRADCHECK_EPS,
    )
}

/// A residual block with `C -> C` channels and the attention variant on its
/// branch, in train mode, checked with respect to its input and all
/// parameters (up to [`BLOCK_PROBES`] random elements of each).
pub fn check_host_block(kind: VariantKind, channels: usize, reduction: usize, seed: u64) -> Result<StoreCheck> {
    let root = Rng::new(seed).derive("gradcheck.block");
    let mut store = ParamStore::<f64>::new();
    let block = BasicBlock::new(&mut store, &root, "block", channels, channels, 1, kind, reduction, true)?;
    let mut rng = root.derive("data");
    let shape = [2, channels, 4, 4];
    let x = store.add_param("input", Tensor::rand_uniform(&mut rng, &shape, -1.0, 1.0)?);
    // Non-trivial attention weights and batch norm affine parameters.
    for p in store.params_mut() {
        if p.name.contains(".attn.") || p.name.contains(".bn") {
            let lo_hi = if p.name.ends_with("gamma") { (0.5, 1.5) } else { (-0.5, 0.5) };
            p.value = Tensor::rand_uniform(&mut rng, p.value.shape(), lo_hi.0, lo_hi.1)?;
        }
    }
    let probe = Tensor::<f64>::rand_uniform(&mut rng, &shape, -1.0, 1.0)?;
    check_store_gradients(&mut store, Mode::Train, GRADCHECK_EPS, Some(BLOCK_PROBES), &mut rng, |g| {
        let xv = g.param(x);
        let y = block.forward(g, xv)?;
        g.tape.weighted_sum(y, probe.clone())
    })
}

/// Whole tiny ResNet (one block per stage, reduction 4, 10 classes) on a
/// `[2, 3, 16, 16]` input in train mode, cross-entropy loss, up to 24 random
/// elements of every parameter and of the input.
pub fn check_tiny_resnet(kind: VariantKind, seed: u64) -> Result<StoreCheck> {
    let root = Rng::new(seed);
    let mut store = ParamStore::<f64>::new();
    let net = ResNet::new(&mut store, &root, ResNetLayout::tiny(), kind, 4, 10, InputSize::S32)?;
    let mut rng = root.derive("data");
    let x = store.add_param("input", Tensor::rand_uniform(&mut rng, &[2, 3, 16, 16], 0.0, 1.0)?);
    let labels = [3, 7];
    // Smaller step than the module checks: more layers means more curvature.
    check_store_gradients(&mut store, Mode::Train, 1e-5, Some(24), &mut rng, |g| {
        let xv = g.param(x);
        let logits = net.forward(g, xv)?;
        g.tape.softmax_cross_entropy(logits, &labels)
    })
}

#[derive(Clone, Debug)]
pub struct GradcheckOutcome {
    pub attention: GradCheckReport,
    pub block: StoreCheck,
}

impl GradcheckOutcome {
    pub fn max_rel_error(&self) -> f64 {
        self.attention.max_rel_error.max(self.block.max_rel_error)
    }

    pub fn passes(&self) -> bool {
        self.attention.passes(GRADCHECK_TOL) && self.block.passes(GRADCHECK_TOL)
    }
}

/// Both checks for one variant configuration.
pub fn run_gradcheck(kind: VariantKind, channels: usize, reduction: usize, seed: u64) -> Result<GradcheckOutcome> {
    let spec = AttentionSpec::new(kind, channels, reduction)?;
    Ok(GradcheckOutcome {
        attention: check_attention(&spec, seed)?,
        block: check_host_block(kind, channels, reduction, seed)?,
    })
}
