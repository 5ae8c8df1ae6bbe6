//! Two-step alternating optimization: SGD on the main objective with the
//! rotation frozen, interleaved with Cayley alignment steps on the rotation
//! with everything else frozen, plus the training history that makes the
//! alternation auditable.

use rand::seq::index::sample as sample_without_replacement;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::check;
use crate::error::{CwError, Result};
use crate::layer::ActivationReducer;
use crate::model::{
    auxiliary_concept_loss, sgd_step, Model, SgdState, SlotVariant,
};
use crate::numerics::{backward, Tensor};
use crate::stiefel::{
    alignment_gradient, alignment_objective, curvilinear_search, ConceptBatch, SearchParams,
};
use crate::synth::{ConceptBank, Dataset};
use crate::whitening::{batch_moments, zca_newton, Mode};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub sgd_momentum: f64,
    /// Main-objective batches between alignment steps.
    pub align_frequency: usize,
    /// Momentum on the alignment gradient.
    pub beta: f64,
    pub newton_iters: usize,
    pub eps: f64,
    pub ema_momentum: f64,
    pub reducer: ActivationReducer,
    pub seed: u64,
    pub variant: SlotVariant,
    pub cw_index: usize,
    /// Alignment whitening from the concept mini-batch itself (true) or
    /// from the running estimates (false, the default). Batch statistics
    /// center the concept batch by its own mean, which zeroes the alignment
    /// gradient; the switch exists for ablation.
    pub align_batch_stats: bool,
    /// Treat batch statistics as constants in the main-objective backward.
    pub stop_gradient: bool,
    /// Weight of the concept-distinction auxiliary loss (BnAux variant).
    pub aux_weight: f64,
    /// Fraction of auxiliary concept labels randomly reassigned per batch.
    /// Keeps the toy aux head's logits bounded the way intrinsically noisy
    /// real concept annotations would.
    pub aux_label_noise: f64,
    pub search: SearchParams,
    /// Fixed probe-set size for the per-epoch activation records.
    pub probe_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            lr: 0.05,
            sgd_momentum: 0.9,
            align_frequency: 20,
            beta: 0.9,
            newton_iters: 5,
            eps: 1e-5,
            ema_momentum: 0.9,
            reducer: ActivationReducer::MaxpoolMean { pool: 2 },
            seed: 0,
            variant: SlotVariant::Cw,
            cw_index: 0,
            align_batch_stats: false,
            stop_gradient: false,
            aux_weight: 0.5,
            aux_label_noise: 0.0,
            search: SearchParams::default(),
            probe_samples: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.align_frequency < 1 {
            return Err(CwError::Config("align_frequency must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(CwError::Config("batch_size must be >= 2".into()));
        }
        if self.lr <= 0.0 || self.eps < 0.0 {
            return Err(CwError::Config("rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(CwError::Config(format!(
                "beta {} outside [0, 1)",
                self.beta
            )));
        }
        self.reducer.validate()?;
        self.search.validate()
    }
}

impl TrainConfig {
    /// Training configuration of the reference benchmark
    /// (`SyntheticSpec::benchmark_classification`).
    pub fn benchmark(variant: SlotVariant) -> TrainConfig {
        TrainConfig {
            epochs: 14,
            batch_size: 128,
            lr: 0.05,
            sgd_momentum: 0.9,
            align_frequency: 20,
            newton_iters: 6,
            eps: 1e-5,
            ema_momentum: 0.97,
            aux_label_noise: 0.35,
            seed: crate::synth::BENCHMARK_SEED,
            variant,
            cw_index: 0,
            ..TrainConfig::default()
        }
    }
}

/// One recorded training step.
#[derive(Debug, Clone)]
pub struct HistoryRow {
    pub step: usize,
    pub main_loss: f64,
    /// Alignment objective after the update, present only on align steps.
    pub align_objective: Option<f64>,
    pub orthogonality_error: f64,
    /// Fingerprints of θ/ω and Q after the step; equality across rows means
    /// bit-identical values.
    pub theta_fingerprint: u64,
    pub q_fingerprint: u64,
}

/// Per-axis activation of one probe sample at one epoch boundary.
#[derive(Debug, Clone)]
pub struct ProbeRecord {
    pub epoch: usize,
    pub sample: usize,
    pub axis: usize,
    pub activation: f64,
}

#[derive(Debug, Clone, Default)]
pub struct History {
    pub rows: Vec<HistoryRow>,
    pub probes: Vec<ProbeRecord>,
}

fn theta_fingerprint(model: &Model) -> u64 {
    let named = model.trainable();
    check::params_fingerprint(named.iter().map(|(_, t)| *t))
}

fn q_fingerprint(model: &Model) -> u64 {
    match model.cw_layer() {
        Some(cw) => check::params_fingerprint([&cw.rotation.q]),
        None => 0,
    }
}

/// Per-sample channel means of a conv latent as a differentiable `d×n`
/// matrix (a constant block-averaging matmul), or the latent itself when it
/// is already a matrix.
fn latent_as_matrix(latent: &Tensor) -> Result<Tensor> {
    match latent.shape() {
        [_, _] => Ok(latent.clone()),
        [n, _, h, w] => {
            let (n, hw) = (*n, h * w);
            let cols = hw * n;
            let mut averaging = vec![0.0; cols * n];
            for s in 0..n {
                for p in 0..hw {
                    averaging[(s * hw + p) * n + s] = 1.0 / hw as f64;
                }
            }
            let averaging = Tensor::from_vec(&[cols, n], averaging)?;
            latent.conv_to_matrix()?.matmul(&averaging)
        }
        s => Err(CwError::Dimension(format!(
            "latent must be rank 2 or 4, got {:?}",
            s
        ))),
    }
}

/// One SGD step on the main objective (plus the auxiliary concept loss for
/// the BnAux variant). The rotation is never on the gradient path, so Q is
/// bit-unchanged; CW running statistics are folded in by EMA afterwards.
pub fn main_step(
    model: &mut Model,
    inputs: &Tensor,
    labels: &[usize],
    aux_batch: Option<(&Tensor, &[usize], usize)>,
    optimizer: &mut SgdState,
    cfg: &TrainConfig,
) -> Result<f64> {
    let trace = model.forward_traced(inputs, Mode::Train)?;
    let mut loss = trace.logits.softmax_cross_entropy(labels)?;
    if let Some((aux_inputs, aux_labels, k)) = aux_batch {
        let aux_trace = model.forward_traced(aux_inputs, Mode::Train)?;
        let aux_latent = latent_as_matrix(&aux_trace.slot_latent)?;
        let aux = auxiliary_concept_loss(&aux_latent, aux_labels, k)?;
        loss = loss.add(&aux.scale(cfg.aux_weight))?;
    }
    let value = loss.item()?;
    if !value.is_finite() {
        return Err(CwError::Divergence(format!("loss is {}", value)));
    }
    let grads = backward(&loss)?;
    sgd_step(model, &grads, cfg.lr, cfg.sgd_momentum, optimizer)?;
    if let Some(cw) = model.cw_layer_mut() {
        let mean = cw.whitening.batch_mean.clone();
        let whitener = cw.whitening.batch_whitener.clone();
        cw.whitening.ema_update(&mean, &whitener)?;
    }
    Ok(value)
}

/// Draw `m` per-concept sample indices: without replacement when the set is
/// large enough, with replacement otherwise.
fn draw_indices(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n >= m {
        sample_without_replacement(rng, n, m).into_vec()
    } else {
        (0..m).map(|_| rng.random_range(0..n)).collect()
    }
}

/// Whitened concept mini-batches at the CW site, with frozen parameters.
fn whitened_concept_batches(
    model: &Model,
    bank: &ConceptBank,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    cfg: &TrainConfig,
) -> Result<Vec<ConceptBatch>> {
    let cw = model
        .cw_layer()
        .ok_or_else(|| CwError::Structure("alignment step without a CW slot".into()))?;
    let mut batches = Vec::with_capacity(bank.len());
    for set in &bank.concepts {
        let indices = draw_indices(set.len(), batch_size.min(set.len().max(2)), rng);
        let picked = crate::synth::select_samples(&set.samples, &indices)?;
        let pre_slot = model.forward_to_slot(&picked)?;
        let (as_matrix, conv_dims) = match pre_slot.shape() {
            [_, _] => (pre_slot.clone(), None),
            [n, _, h, w] => (pre_slot.conv_to_matrix()?, Some((*n, *h, *w))),
            s => {
                return Err(CwError::Dimension(format!(
                    "unexpected pre-slot shape {:?}",
                    s
                )))
            }
        };
        let whitened = if cfg.align_batch_stats {
            let (mean, sigma) = batch_moments(&as_matrix.detach(), cw.whitening.eps)?;
            let whitener = zca_newton(&sigma, cw.whitening.newton_iters)?;
            whitener.matmul(&as_matrix.detach().sub_col(&mean)?)?
        } else {
            cw.whitening.apply_eval(&as_matrix)?
        };
        let batch = match conv_dims {
            None => ConceptBatch::Vector {
                axis: set.axis,
                whitened,
            },
            Some((n, h, w)) => ConceptBatch::Conv {
                axis: set.axis,
                whitened,
                samples: n,
                height: h,
                width: w,
                reducer: cw.reducer,
            },
        };
        batches.push(batch);
    }
    Ok(batches)
}

/// One alignment update of the rotation: stochastic gradient, momentum,
/// curvilinear search, Cayley step. Everything except Q is frozen. Returns
/// the post-update alignment objective, or `None` when the bank is empty.
pub fn align_step(
    model: &mut Model,
    bank: &ConceptBank,
    rng: &mut ChaCha8Rng,
    cfg: &TrainConfig,
) -> Result<Option<f64>> {
    if bank.is_empty() {
        return Ok(None);
    }
    bank.validate()?;
    let batches = whitened_concept_batches(model, bank, cfg.batch_size, rng, cfg)?;
    let cw = model
        .cw_layer_mut()
        .ok_or_else(|| CwError::Structure("alignment step without a CW slot".into()))?;
    cw.rotation.beta = cfg.beta;
    let gradient = alignment_gradient(&cw.rotation.q, &batches)?;
    cw.rotation.momentum_update(&gradient)?;
    let outcome = curvilinear_search(
        &cw.rotation.q,
        &cw.rotation.grad_momentum,
        &cfg.search,
        |candidate| Ok(-alignment_objective(candidate, &batches)?),
    )?;
    cw.rotation.q = outcome.q_next;
    cw.rotation.reorthonormalize_if_needed()?;
    Ok(Some(-outcome.objective))
}

/// Alternating optimization over the main dataset and the concept bank: an
/// alignment step replaces nothing, it runs after every `align_frequency`-th
/// main batch. The history carries one row per main step with the alignment
/// objective attached to the rows where an alignment step ran.
pub fn fit(
    model: &mut Model,
    train: &Dataset,
    bank: &ConceptBank,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(CwError::Data("empty training dataset".into()));
    }
    if model.variant == SlotVariant::BnAux || model.variant == SlotVariant::Cw {
        bank.validate()?;
    }
    if let Some(cw) = model.cw_layer_mut() {
        cw.whitening.newton_iters = cfg.newton_iters;
        cw.whitening.eps = cfg.eps;
        cw.whitening.ema_momentum = cfg.ema_momentum;
        cw.whitening.stop_gradient = cfg.stop_gradient;
        cw.rotation.beta = cfg.beta;
        cw.reducer = cfg.reducer;
    }

    let mut shuffle_rng = check::rng(cfg.seed.wrapping_add(0x5u64));
    let mut concept_rng = check::rng(cfg.seed.wrapping_add(0xc0u64));
    let mut optimizer = SgdState::default();
    let mut history = History::default();
    let k = bank.len();

    let n = train.len();
    let batches_per_epoch = n / cfg.batch_size;
    if batches_per_epoch == 0 {
        return Err(CwError::Config(format!(
            "batch size {} exceeds dataset size {}",
            cfg.batch_size, n
        )));
    }

    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        // Fisher-Yates driven by the seeded generator.
        for i in (1..n).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        for b in 0..batches_per_epoch {
            step += 1;
            let idx = &order[b * cfg.batch_size..(b + 1) * cfg.batch_size];
            let inputs = train.batch(idx).map_err(|e| e.at_step(step))?;
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();

            let aux_data = if model.variant == SlotVariant::BnAux && k > 0 {
                let per_concept = (cfg.batch_size / k).max(2);
                let mut parts = Vec::new();
                let mut aux_labels = Vec::new();
                for set in &bank.concepts {
                    let indices = draw_indices(set.len(), per_concept, &mut concept_rng);
                    parts.push(crate::synth::select_samples(&set.samples, &indices)?);
                    for _ in 0..per_concept {
                        let label = if cfg.aux_label_noise > 0.0
                            && concept_rng.random::<f64>() < cfg.aux_label_noise
                        {
                            concept_rng.random_range(0..k)
                        } else {
                            set.axis
                        };
                        aux_labels.push(label);
                    }
                }
                Some((concat_samples(&parts)?, aux_labels))
            } else {
                None
            };

            let main_loss = main_step(
                model,
                &inputs,
                &labels,
                aux_data.as_ref().map(|(t, l)| (t, l.as_slice(), k)),
                &mut optimizer,
                cfg,
            )
            .map_err(|e| e.at_step(step))?;

            let align_objective = if model.variant == SlotVariant::Cw
                && !bank.is_empty()
                && step % cfg.align_frequency == 0
            {
                align_step(model, bank, &mut concept_rng, cfg).map_err(|e| e.at_step(step))?
            } else {
                None
            };

            let orthogonality_error = match model.cw_layer() {
                Some(cw) => cw.rotation.orthogonality_error()?,
                None => 0.0,
            };
            history.rows.push(HistoryRow {
                step,
                main_loss,
                align_objective,
                orthogonality_error,
                theta_fingerprint: theta_fingerprint(model),
                q_fingerprint: q_fingerprint(model),
            });
        }

        if let Some(cw) = model.cw_layer() {
            let probe_n = cfg.probe_samples.min(n);
            for sample_idx in 0..probe_n {
                let sample = train.sample(sample_idx)?;
                for axis in 0..cw.rotation.concept_axes {
                    let activation = match sample.shape().len() {
                        2 => {
                            let pre = model.forward_to_slot(&sample)?;
                            cw.concept_activation_vector(&pre, axis)?
                        }
                        _ => {
                            let pre = model.forward_to_slot(&sample)?;
                            cw.concept_activation_conv(&pre, axis)?
                        }
                    };
                    history.probes.push(ProbeRecord {
                        epoch,
                        sample: sample_idx,
                        axis,
                        activation,
                    });
                }
            }
        }
    }
    Ok(history)
}

/// Concatenate sample batches (columns of `d×n` matrices or samples of
/// `n×c×h×w` stacks).
pub fn concat_samples(parts: &[Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(CwError::Data("nothing to concatenate".into()));
    }
    match parts[0].shape() {
        [d, _] => {
            let d = *d;
            let total: usize = parts.iter().map(|p| p.shape()[1]).sum();
            let mut data = vec![0.0; d * total];
            let mut col = 0usize;
            for part in parts {
                let (pd, pn) = part.dims2()?;
                if pd != d {
                    return Err(CwError::Dimension("row counts differ".into()));
                }
                for i in 0..d {
                    for j in 0..pn {
                        data[i * total + col + j] = part.data()[i * pn + j];
                    }
                }
                col += pn;
            }
            Tensor::from_vec(&[d, total], data)
        }
        [_, c, h, w] => {
            let (c, h, w) = (*c, *h, *w);
            let total: usize = parts.iter().map(|p| p.shape()[0]).sum();
            let mut data = Vec::with_capacity(total * c * h * w);
            for part in parts {
                let (_, pc, ph, pw) = part.dims4()?;
                if (pc, ph, pw) != (c, h, w) {
                    return Err(CwError::Dimension("sample shapes differ".into()));
                }
                data.extend_from_slice(part.data());
            }
            Tensor::from_vec(&[total, c, h, w], data)
        }
        s => Err(CwError::Dimension(format!(
            "cannot concatenate rank {:?}",
            s
        ))),
    }
}
