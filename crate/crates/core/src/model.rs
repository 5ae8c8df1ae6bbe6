//! Toy host networks with a pluggable normalization slot: an MLP and a small
//! CNN, each with two slot positions that hold BatchNorm or a CW layer, plus
//! momentum SGD, the concept-distinction auxiliary loss, and the warm-start
//! swap that replaces a trained BN slot with a calibrated CW layer.

use rand_chacha::ChaCha8Rng;

use crate::check;
use crate::error::{CwError, Result};
use crate::layer::{ActivationReducer, CwLayer};
use crate::numerics::{backward, Gradients, Tensor};
use crate::stiefel::RotationState;
use crate::whitening::{batch_moments, zca_newton, Mode, WhiteningState};

/// What fills the normalization slot selected by `cw_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotVariant {
    /// BatchNorm everywhere (the baseline).
    Bn,
    /// CW at the selected slot, BatchNorm at the rest.
    Cw,
    /// BatchNorm everywhere plus the concept-distinction auxiliary loss on
    /// the selected slot's output.
    BnAux,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Mlp {
        input_dim: usize,
        hidden: usize,
        classes: usize,
    },
    Cnn {
        in_channels: usize,
        side: usize,
        classes: usize,
    },
}

impl Arch {
    pub fn classes(&self) -> usize {
        match self {
            Arch::Mlp { classes, .. } => *classes,
            Arch::Cnn { classes, .. } => *classes,
        }
    }

    /// Width of each normalization slot, in order.
    pub fn slot_dims(&self) -> Vec<usize> {
        match self {
            Arch::Mlp { hidden, .. } => vec![*hidden, *hidden],
            Arch::Cnn { .. } => vec![CNN_CHANNELS_1, CNN_CHANNELS_2],
        }
    }
}

pub const CNN_CHANNELS_1: usize = 8;
pub const CNN_CHANNELS_2: usize = 16;

/// Per-feature standardization with trainable scale and shift.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub dim: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNormState {
    pub fn new(dim: usize) -> BatchNormState {
        BatchNormState {
            dim,
            eps: 1e-5,
            momentum: 0.9,
            gamma: Tensor::parameter(&[dim, 1], vec![1.0; dim]).expect("shape"),
            beta: Tensor::parameter(&[dim, 1], vec![0.0; dim]).expect("shape"),
            running_mean: Tensor::zeros(&[dim, 1]),
            running_var: Tensor::filled(&[dim, 1], 1.0),
        }
    }

    /// Train-mode BN on a `d×m` matrix; updates running statistics.
    pub fn forward_train(&mut self, z: &Tensor) -> Result<Tensor> {
        let mean = z.mean_cols()?;
        let centered = z.sub_col(&mean)?;
        let var = centered.mul(&centered)?.mean_cols()?;
        let inv_std = var.add_scalar(self.eps).sqrt_elem().recip();
        let normalized = centered.mul_col(&inv_std)?;
        let out = normalized.mul_col(&self.gamma)?.add_col(&self.beta)?;

        let m = self.momentum;
        self.running_mean = self
            .running_mean
            .scale(m)
            .add(&mean.detach().scale(1.0 - m))?;
        self.running_var = self
            .running_var
            .scale(m)
            .add(&var.detach().scale(1.0 - m))?;
        Ok(out)
    }

    pub fn forward_eval(&self, z: &Tensor) -> Result<Tensor> {
        let inv_std = self.running_var.add_scalar(self.eps).sqrt_elem().recip();
        let normalized = z.sub_col(&self.running_mean)?.mul_col(&inv_std)?;
        normalized.mul_col(&self.gamma)?.add_col(&self.beta)
    }
}

/// One normalization site.
#[derive(Debug, Clone)]
pub enum NormSlot {
    Bn(BatchNormState),
    Cw(CwLayer),
}

impl NormSlot {
    pub fn dim(&self) -> usize {
        match self {
            NormSlot::Bn(bn) => bn.dim,
            NormSlot::Cw(cw) => cw.dim(),
        }
    }

    pub fn is_bn(&self) -> bool {
        matches!(self, NormSlot::Bn(_))
    }

    fn forward_vector(&mut self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        match (self, mode) {
            (NormSlot::Bn(bn), Mode::Train) => bn.forward_train(z),
            (NormSlot::Bn(bn), Mode::Eval) => bn.forward_eval(z),
            (NormSlot::Cw(cw), mode) => cw.forward_vector(z, mode),
        }
    }

    fn forward_vector_eval(&self, z: &Tensor) -> Result<Tensor> {
        match self {
            NormSlot::Bn(bn) => bn.forward_eval(z),
            NormSlot::Cw(cw) => cw.forward_vector_eval(z),
        }
    }

    fn forward_conv(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, _, h, w) = x.dims4()?;
        let out = self.forward_vector(&x.conv_to_matrix()?, mode)?;
        out.matrix_to_conv(n, h, w)
    }

    fn forward_conv_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (n, _, h, w) = x.dims4()?;
        let out = self.forward_vector_eval(&x.conv_to_matrix()?)?;
        out.matrix_to_conv(n, h, w)
    }
}

#[derive(Debug, Clone)]
pub enum Weights {
    Mlp {
        w1: Tensor,
        b1: Tensor,
        w2: Tensor,
        b2: Tensor,
        w3: Tensor,
        b3: Tensor,
    },
    Cnn {
        k1: Tensor,
        cb1: Tensor,
        k2: Tensor,
        cb2: Tensor,
        w: Tensor,
        b: Tensor,
    },
}

impl Weights {
    /// Trainable weight tensors in fixed order, with stable names used by
    /// checkpoints.
    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Weights::Mlp {
                w1,
                b1,
                w2,
                b2,
                w3,
                b3,
            } => vec![
                ("w1", w1),
                ("b1", b1),
                ("w2", w2),
                ("b2", b2),
                ("w3", w3),
                ("b3", b3),
            ],
            Weights::Cnn {
                k1,
                cb1,
                k2,
                cb2,
                w,
                b,
            } => vec![
                ("k1", k1),
                ("cb1", cb1),
                ("k2", k2),
                ("cb2", cb2),
                ("w", w),
                ("b", b),
            ],
        }
    }

    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Weights::Mlp {
                w1,
                b1,
                w2,
                b2,
                w3,
                b3,
            } => vec![
                ("w1", w1),
                ("b1", b1),
                ("w2", w2),
                ("b2", b2),
                ("w3", w3),
                ("b3", b3),
            ],
            Weights::Cnn {
                k1,
                cb1,
                k2,
                cb2,
                w,
                b,
            } => vec![
                ("k1", k1),
                ("cb1", cb1),
                ("k2", k2),
                ("cb2", cb2),
                ("w", w),
                ("b", b),
            ],
        }
    }
}

/// Feature extractor + normalization slots + classifier head.
#[derive(Debug, Clone)]
pub struct Model {
    pub arch: Arch,
    pub variant: SlotVariant,
    pub cw_index: usize,
    pub weights: Weights,
    pub slots: Vec<NormSlot>,
}

/// Forward pass with the selected slot's output captured for concept work.
pub struct ForwardTrace {
    pub logits: Tensor,
    /// Output of the slot at `cw_index`: `d×m` for the MLP, `n×d×h×w` for the
    /// CNN, pre-activation.
    pub slot_latent: Tensor,
}

fn he_matrix(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| check::normal(rng) * std).collect();
    Tensor::parameter(&[rows, cols], data).expect("shape")
}

fn he_kernel(oc: usize, ic: usize, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let fan_in = ic * k * k;
    let std = (2.0 / fan_in as f64).sqrt();
    let data: Vec<f64> = (0..oc * ic * k * k)
        .map(|_| check::normal(rng) * std)
        .collect();
    Tensor::parameter(&[oc, ic, k, k], data).expect("shape")
}

impl Model {
    /// Seeded construction. `concepts` sizes the CW rotation when the variant
    /// uses one and bounds auxiliary-loss labels otherwise.
    pub fn new(
        arch: Arch,
        variant: SlotVariant,
        cw_index: usize,
        concepts: usize,
        reducer: ActivationReducer,
        seed: u64,
    ) -> Result<Model> {
        let slot_dims = arch.slot_dims();
        if cw_index >= slot_dims.len() {
            return Err(CwError::Structure(format!(
                "slot index {} out of range ({} slots)",
                cw_index,
                slot_dims.len()
            )));
        }
        reducer.validate()?;
        let mut rng = check::rng(seed);
        let weights = match arch {
            Arch::Mlp {
                input_dim,
                hidden,
                classes,
            } => Weights::Mlp {
                w1: he_matrix(hidden, input_dim, input_dim, &mut rng),
                b1: Tensor::parameter(&[hidden, 1], vec![0.0; hidden])?,
                w2: he_matrix(hidden, hidden, hidden, &mut rng),
                b2: Tensor::parameter(&[hidden, 1], vec![0.0; hidden])?,
                w3: he_matrix(classes, hidden, hidden, &mut rng),
                b3: Tensor::parameter(&[classes, 1], vec![0.0; classes])?,
            },
            Arch::Cnn {
                in_channels,
                side,
                classes,
            } => {
                let feat = CNN_CHANNELS_2 * (side / 4) * (side / 4);
                Weights::Cnn {
                    k1: he_kernel(CNN_CHANNELS_1, in_channels, 3, &mut rng),
                    cb1: Tensor::parameter(&[CNN_CHANNELS_1, 1], vec![0.0; CNN_CHANNELS_1])?,
                    k2: he_kernel(CNN_CHANNELS_2, CNN_CHANNELS_1, 3, &mut rng),
                    cb2: Tensor::parameter(&[CNN_CHANNELS_2, 1], vec![0.0; CNN_CHANNELS_2])?,
                    w: he_matrix(classes, feat, feat, &mut rng),
                    b: Tensor::parameter(&[classes, 1], vec![0.0; classes])?,
                }
            }
        };
        let mut slots = Vec::new();
        for (idx, dim) in slot_dims.iter().enumerate() {
            let slot = if variant == SlotVariant::Cw && idx == cw_index {
                let mut layer = CwLayer::new(*dim, concepts)?;
                layer.reducer = reducer;
                NormSlot::Cw(layer)
            } else {
                NormSlot::Bn(BatchNormState::new(*dim))
            };
            slots.push(slot);
        }
        Ok(Model {
            arch,
            variant,
            cw_index,
            weights,
            slots,
        })
    }

    pub fn classes(&self) -> usize {
        self.arch.classes()
    }

    /// The CW layer when this model carries one.
    pub fn cw_layer(&self) -> Option<&CwLayer> {
        match &self.slots[self.cw_index] {
            NormSlot::Cw(cw) => Some(cw),
            NormSlot::Bn(_) => None,
        }
    }

    pub fn cw_layer_mut(&mut self) -> Option<&mut CwLayer> {
        match &mut self.slots[self.cw_index] {
            NormSlot::Cw(cw) => Some(cw),
            NormSlot::Bn(_) => None,
        }
    }

    /// Every SGD-trainable tensor (feature extractor, head, BN affine
    /// parameters) in fixed order. Rotation and whitening state are excluded:
    /// they are trained by the alignment step and the EMA, respectively.
    pub fn trainable(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .weights
            .named()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t))
            .collect();
        for (idx, slot) in self.slots.iter().enumerate() {
            if let NormSlot::Bn(bn) = slot {
                out.push((format!("slot{}.gamma", idx), &bn.gamma));
                out.push((format!("slot{}.beta", idx), &bn.beta));
            }
        }
        out
    }

    fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self
            .weights
            .named_mut()
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        for slot in self.slots.iter_mut() {
            if let NormSlot::Bn(bn) = slot {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.forward_traced(x, mode)?.logits)
    }

    /// Forward pass capturing the `cw_index` slot output.
    pub fn forward_traced(&mut self, x: &Tensor, mode: Mode) -> Result<ForwardTrace> {
        match self.arch {
            Arch::Mlp { .. } => self.forward_mlp(x, mode),
            Arch::Cnn { .. } => self.forward_cnn(x, mode),
        }
    }

    /// Eval forward on a shared reference (no statistics move).
    pub fn forward_eval(&self, x: &Tensor) -> Result<ForwardTrace> {
        // Eval-mode slots are pure; a scratch clone reuses the single
        // implementation of the layer order.
        let mut scratch = self.clone();
        scratch.forward_traced(x, Mode::Eval)
    }

    fn forward_mlp(&mut self, x: &Tensor, mode: Mode) -> Result<ForwardTrace> {
        let (w1, b1, w2, b2, w3, b3) = match &self.weights {
            Weights::Mlp {
                w1,
                b1,
                w2,
                b2,
                w3,
                b3,
            } => (
                w1.clone(),
                b1.clone(),
                w2.clone(),
                b2.clone(),
                w3.clone(),
                b3.clone(),
            ),
            Weights::Cnn { .. } => {
                return Err(CwError::Structure("CNN weights in MLP forward".into()))
            }
        };
        let h1 = w1.matmul(x)?.add_col(&b1)?;
        let s1 = self.slots[0].forward_vector(&h1, mode)?;
        let a1 = s1.relu();
        let h2 = w2.matmul(&a1)?.add_col(&b2)?;
        let s2 = self.slots[1].forward_vector(&h2, mode)?;
        let a2 = s2.relu();
        let logits = w3.matmul(&a2)?.add_col(&b3)?;
        let slot_latent = if self.cw_index == 0 { s1 } else { s2 };
        Ok(ForwardTrace {
            logits,
            slot_latent,
        })
    }

    fn forward_cnn(&mut self, x: &Tensor, mode: Mode) -> Result<ForwardTrace> {
        let (k1, cb1, k2, cb2, w, b) = match &self.weights {
            Weights::Cnn {
                k1,
                cb1,
                k2,
                cb2,
                w,
                b,
            } => (
                k1.clone(),
                cb1.clone(),
                k2.clone(),
                cb2.clone(),
                w.clone(),
                b.clone(),
            ),
            Weights::Mlp { .. } => {
                return Err(CwError::Structure("MLP weights in CNN forward".into()))
            }
        };
        let c1 = x.conv2d(&k1, 1, 1)?.add_chan_bias(&cb1)?;
        let s1 = self.slots[0].forward_conv(&c1, mode)?;
        let p1 = s1.relu().maxpool2d(2)?;
        let c2 = p1.conv2d(&k2, 1, 1)?.add_chan_bias(&cb2)?;
        let s2 = self.slots[1].forward_conv(&c2, mode)?;
        let p2 = s2.relu().maxpool2d(2)?;
        let flat = p2.flatten_to_columns()?;
        let logits = w.matmul(&flat)?.add_col(&b)?;
        let slot_latent = if self.cw_index == 0 { s1 } else { s2 };
        Ok(ForwardTrace {
            logits,
            slot_latent,
        })
    }

    /// Input to the `cw_index` slot (eval mode); the calibration pass of the
    /// warm-start swap uses this.
    pub fn forward_to_slot(&self, x: &Tensor) -> Result<Tensor> {
        match (&self.arch, &self.weights) {
            (
                Arch::Mlp { .. },
                Weights::Mlp {
                    w1, b1, w2, b2, ..
                },
            ) => {
                let h1 = w1.matmul(x)?.add_col(b1)?;
                if self.cw_index == 0 {
                    return Ok(h1);
                }
                let a1 = self.slots[0].forward_vector_eval(&h1)?.relu();
                w2.matmul(&a1)?.add_col(b2)
            }
            (
                Arch::Cnn { .. },
                Weights::Cnn {
                    k1, cb1, k2, cb2, ..
                },
            ) => {
                let c1 = x.conv2d(k1, 1, 1)?.add_chan_bias(cb1)?;
                if self.cw_index == 0 {
                    return Ok(c1);
                }
                let p1 = self.slots[0].forward_conv_eval(&c1)?.relu().maxpool2d(2)?;
                p1.conv2d(k2, 1, 1)?.add_chan_bias(cb2)
            }
            _ => Err(CwError::Structure(
                "weights do not match architecture".into(),
            )),
        }
    }

    /// Downstream computation from a value injected at the `cw_index` slot
    /// output (eval mode). Permutation importance intervenes here.
    pub fn forward_from_slot(&self, slot_latent: &Tensor) -> Result<Tensor> {
        match (&self.arch, &self.weights) {
            (
                Arch::Mlp { .. },
                Weights::Mlp {
                    w2, b2, w3, b3, ..
                },
            ) => {
                let a = slot_latent.relu();
                if self.cw_index == 0 {
                    let h2 = w2.matmul(&a)?.add_col(b2)?;
                    let s2 = self.slots[1].forward_vector_eval(&h2)?;
                    let a2 = s2.relu();
                    w3.matmul(&a2)?.add_col(b3)
                } else {
                    w3.matmul(&a)?.add_col(b3)
                }
            }
            (
                Arch::Cnn { .. },
                Weights::Cnn {
                    k2, cb2, w, b, ..
                },
            ) => {
                let a = slot_latent.relu().maxpool2d(2)?;
                let p2 = if self.cw_index == 0 {
                    let c2 = a.conv2d(k2, 1, 1)?.add_chan_bias(cb2)?;
                    let s2 = self.slots[1].forward_conv_eval(&c2)?;
                    s2.relu().maxpool2d(2)?
                } else {
                    a
                };
                let flat = p2.flatten_to_columns()?;
                w.matmul(&flat)?.add_col(b)
            }
            _ => Err(CwError::Structure(
                "weights do not match architecture".into(),
            )),
        }
    }

    /// Fraction of samples whose argmax logit matches the label.
    pub fn accuracy(&self, inputs: &Tensor, labels: &[usize]) -> Result<f64> {
        let logits = self.forward_eval(inputs)?.logits;
        let (classes, m) = logits.dims2()?;
        if labels.len() != m {
            return Err(CwError::Dimension(format!(
                "{} labels for {} samples",
                labels.len(),
                m
            )));
        }
        let mut correct = 0usize;
        for (j, &label) in labels.iter().enumerate() {
            let mut best = 0usize;
            for c in 1..classes {
                if logits.data()[c * m + j] > logits.data()[best * m + j] {
                    best = c;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / m as f64)
    }
}

/// Momentum buffers for [`sgd_step`], one per trainable tensor.
#[derive(Debug, Clone, Default)]
pub struct SgdState {
    velocities: Vec<Vec<f64>>,
}

/// Classical momentum SGD over the model's trainable tensors:
/// `v ← momentum·v + g`, `p ← p − lr·v`.
pub fn sgd_step(
    model: &mut Model,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
    state: &mut SgdState,
) -> Result<()> {
    if lr <= 0.0 {
        return Err(CwError::Config(format!(
            "learning rate {} must be positive",
            lr
        )));
    }
    let mut params = model.trainable_mut();
    if state.velocities.is_empty() {
        state.velocities = params.iter().map(|p| vec![0.0; p.numel()]).collect();
    }
    if state.velocities.len() != params.len() {
        return Err(CwError::Contract(
            "optimizer state does not match parameter list".into(),
        ));
    }
    for (param, velocity) in params.iter_mut().zip(state.velocities.iter_mut()) {
        let grad = grads.get_or_zero(param);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(CwError::Divergence("non-finite gradient".into()));
        }
        let mut next = param.data().to_vec();
        for ((p, v), g) in next.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
            *v = momentum * *v + g;
            *p -= lr * *v;
        }
        if next.iter().any(|p| !p.is_finite()) {
            return Err(CwError::Divergence("non-finite parameter".into()));
        }
        **param = Tensor::parameter(param.shape(), next)?;
    }
    Ok(())
}

/// Cross entropy over the first `k` latent dimensions treated as concept
/// logits (the auxiliary objective of the BN-plus-aux baseline).
pub fn auxiliary_concept_loss(
    latent: &Tensor,
    concept_labels: &[usize],
    k: usize,
) -> Result<Tensor> {
    let (d, _) = latent.dims2()?;
    if k == 0 || k > d {
        return Err(CwError::Config(format!(
            "auxiliary loss needs 1..={} concept dims, got {}",
            d, k
        )));
    }
    if let Some(&bad) = concept_labels.iter().find(|&&l| l >= k) {
        return Err(CwError::Label(format!(
            "concept label {} out of range for {} concepts",
            bad, k
        )));
    }
    latent.take_rows(k)?.softmax_cross_entropy(concept_labels)
}

/// Replace the BN slot at `layer_index` with a CW layer: identity rotation,
/// whitening statistics calibrated from one eval pass over `calibration`
/// inputs, every other tensor carried over unchanged.
#[allow(clippy::too_many_arguments)]
pub fn swap_bn_for_cw(
    model: &Model,
    layer_index: usize,
    calibration: &Tensor,
    concepts: usize,
    reducer: ActivationReducer,
    eps: f64,
    ema_momentum: f64,
    newton_iters: usize,
) -> Result<Model> {
    if layer_index >= model.slots.len() {
        return Err(CwError::Structure(format!(
            "no slot at index {} ({} slots)",
            layer_index,
            model.slots.len()
        )));
    }
    if !model.slots[layer_index].is_bn() {
        return Err(CwError::Structure(format!(
            "slot {} does not hold a BN layer",
            layer_index
        )));
    }

    let mut swapped = model.clone();
    swapped.variant = SlotVariant::Cw;
    swapped.cw_index = layer_index;

    let pre_slot = swapped.forward_to_slot(calibration)?;
    let as_matrix = match pre_slot.shape().len() {
        2 => pre_slot,
        4 => pre_slot.conv_to_matrix()?,
        _ => {
            return Err(CwError::Structure(format!(
                "unexpected pre-slot rank {:?}",
                pre_slot.shape()
            )))
        }
    };
    let dim = model.slots[layer_index].dim();
    let (mean, sigma) = batch_moments(&as_matrix.detach(), eps)?;
    let whitener = zca_newton(&sigma, newton_iters)?;

    let mut whitening = WhiteningState::new(dim)
        .with_eps(eps)
        .with_momentum(ema_momentum)
        .with_newton_iters(newton_iters);
    whitening.running_mean = mean.detach();
    whitening.running_whitener = whitener.detach();
    whitening.batch_mean = mean.detach();
    whitening.batch_whitener = whitener.detach();

    let mut layer = CwLayer::new(dim, concepts)?;
    layer.whitening = whitening;
    layer.rotation = RotationState::identity(dim, concepts)?;
    layer.reducer = reducer;
    swapped.slots[layer_index] = NormSlot::Cw(layer);
    Ok(swapped)
}

/// Convenience wrapper: loss of a train-mode forward pass plus its gradients.
pub fn loss_and_grads(model: &mut Model, x: &Tensor, labels: &[usize]) -> Result<(f64, Gradients)> {
    let logits = model.forward(x, Mode::Train)?;
    let loss = logits.softmax_cross_entropy(labels)?;
    let value = loss.item()?;
    if !value.is_finite() {
        return Err(CwError::Divergence(format!("loss is {}", value)));
    }
    let grads = backward(&loss)?;
    Ok((value, grads))
}
