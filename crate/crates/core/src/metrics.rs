//! Quantitative interpretability measurements: concept purity AUC, intra- and
//! inter-concept similarity matrices, axis correlation, permutation concept
//! importance, top-k activation rankings, joint activation histograms,
//! percentile trajectories, and occlusion receptive fields.

use rand::Rng;

use crate::check;
use crate::error::{CwError, Result};
use crate::layer::ActivationReducer;
use crate::model::Model;
use crate::numerics::Tensor;

// ── Activation extraction ────────────────────────────────────────────

/// Per-sample activation vectors at the slot output in eval mode, one row
/// per sample: matrix latents give their columns directly, conv latents give
/// the per-channel reduced activations.
pub fn slot_activations(
    model: &Model,
    inputs: &Tensor,
    reducer: ActivationReducer,
) -> Result<Vec<Vec<f64>>> {
    let latent = model.forward_eval(inputs)?.slot_latent;
    match latent.shape() {
        [d, n] => {
            let (d, n) = (*d, *n);
            Ok((0..n)
                .map(|j| (0..d).map(|i| latent.data()[i * n + j]).collect())
                .collect())
        }
        [n, d, h, w] => {
            let (n, d, h, w) = (*n, *d, *h, *w);
            let hw = h * w;
            Ok((0..n)
                .map(|s| {
                    (0..d)
                        .map(|ch| {
                            let map = &latent.data()[(s * d + ch) * hw..(s * d + ch + 1) * hw];
                            reducer.reduce(map, h, w)
                        })
                        .collect()
                })
                .collect())
        }
        s => Err(CwError::Dimension(format!(
            "unexpected latent shape {:?}",
            s
        ))),
    }
}

// ── Concept purity AUC ───────────────────────────────────────────────

/// One-vs-all ranking AUC by rank sum: the probability that a random
/// positive outranks a random negative, ties counted one half.
pub fn purity_auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(CwError::UndefinedMetric(
            "AUC needs both positive and negative samples".into(),
        ));
    }
    let n_pos = positives.len();
    let n_neg = negatives.len();
    let mut scored: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Average ranks over tie groups (1-indexed), then the Mann-Whitney U.
    let total = scored.len();
    let mut rank_sum_pos = 0.0;
    let mut i = 0usize;
    while i < total {
        let mut j = i;
        while j < total && scored[j].0 == scored[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for entry in &scored[i..j] {
            if entry.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

// ── Similarity matrices ──────────────────────────────────────────────

/// Mean pairwise cosine similarities per concept pair (`d`) and the
/// normalized matrix `Q̂_ij = d_ij / sqrt(d_ii d_jj)` with an exactly unit
/// diagonal. Intra-concept entries include self-pairs, matching the 1/n²
/// normalization.
#[derive(Debug, Clone)]
pub struct SimilarityMatrices {
    pub concepts: usize,
    /// Row-major `k×k` of d values.
    pub d: Vec<f64>,
    /// Row-major `k×k` of normalized values.
    pub normalized: Vec<f64>,
}

impl SimilarityMatrices {
    pub fn d_at(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.concepts + j]
    }

    pub fn normalized_at(&self, i: usize, j: usize) -> f64 {
        self.normalized[i * self.concepts + j]
    }

    /// Mean absolute off-diagonal normalized similarity.
    pub fn mean_off_diagonal(&self) -> f64 {
        let k = self.concepts;
        if k < 2 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    acc += self.normalized_at(i, j).abs();
                }
            }
        }
        acc / (k * (k - 1)) as f64
    }
}

pub fn similarity_matrices(groups: &[Vec<Vec<f64>>]) -> Result<SimilarityMatrices> {
    let k = groups.len();
    if k < 2 {
        return Err(CwError::Config(format!(
            "similarity needs at least 2 concepts, got {}",
            k
        )));
    }
    let mut units: Vec<Vec<Vec<f64>>> = Vec::with_capacity(k);
    for (idx, group) in groups.iter().enumerate() {
        if group.len() < 2 {
            return Err(CwError::Data(format!(
                "concept {} needs at least 2 samples",
                idx
            )));
        }
        let mut normed = Vec::with_capacity(group.len());
        for vector in group {
            let norm: f64 = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(CwError::Data(format!(
                    "zero-norm latent in concept {}",
                    idx
                )));
            }
            normed.push(vector.iter().map(|v| v / norm).collect());
        }
        units.push(normed);
    }

    let mut d = vec![0.0; k * k];
    for p in 0..k {
        for q in 0..k {
            let mut acc = 0.0;
            for a in &units[p] {
                for b in &units[q] {
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    acc += dot;
                }
            }
            d[p * k + q] = acc / (units[p].len() * units[q].len()) as f64;
        }
    }

    let mut normalized = vec![0.0; k * k];
    for p in 0..k {
        for q in 0..k {
            normalized[p * k + q] = if p == q {
                1.0
            } else {
                let denom = (d[p * k + p] * d[q * k + q]).sqrt();
                if denom <= 0.0 {
                    return Err(CwError::UndefinedMetric(format!(
                        "intra-concept similarity vanished for pair ({}, {})",
                        p, q
                    )));
                }
                d[p * k + q] / denom
            };
        }
    }
    Ok(SimilarityMatrices {
        concepts: k,
        d,
        normalized,
    })
}

// ── Axis correlation ─────────────────────────────────────────────────

/// Absolute Pearson correlation per axis pair, diagonal exactly 1.
/// Zero-variance axes produce NaN entries and are listed as undefined.
#[derive(Debug, Clone)]
pub struct Correlation {
    pub dim: usize,
    pub abs: Vec<f64>,
    pub undefined_axes: Vec<usize>,
}

impl Correlation {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.abs[i * self.dim + j]
    }

    /// Mean absolute off-diagonal correlation over defined entries.
    pub fn mean_off_diagonal(&self) -> f64 {
        let mut acc = 0.0;
        let mut count = 0usize;
        for i in 0..self.dim {
            for j in 0..self.dim {
                if i != j && self.at(i, j).is_finite() {
                    acc += self.at(i, j);
                    count += 1;
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            acc / count as f64
        }
    }
}

/// `latents` is `d×n`, columns are samples.
pub fn axis_correlation(latents: &Tensor) -> Result<Correlation> {
    let (d, n) = latents.dims2()?;
    if n < 2 {
        return Err(CwError::DegenerateBatch(format!(
            "correlation needs n >= 2, got {}",
            n
        )));
    }
    let cov = check::covariance(latents)?;
    let mut undefined_axes = Vec::new();
    let mut std = vec![0.0; d];
    for i in 0..d {
        let var = cov.data()[i * d + i];
        if var <= 0.0 {
            undefined_axes.push(i);
        }
        std[i] = var.max(0.0).sqrt();
    }
    let mut abs = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            abs[i * d + j] = if i == j {
                1.0
            } else if std[i] == 0.0 || std[j] == 0.0 {
                f64::NAN
            } else {
                (cov.data()[i * d + j] / (std[i] * std[j])).abs()
            };
        }
    }
    Ok(Correlation {
        dim: d,
        abs,
        undefined_axes,
    })
}

// ── Permutation concept importance ───────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Multi-class cross entropy of the classifier output.
    Multiclass,
    /// Balanced binary cross entropy of the softmax probability of one
    /// target class (positives: samples of that class; negatives: the rest).
    BalancedBinary { target: usize },
}

#[derive(Debug, Clone)]
pub struct ImportanceOptions {
    pub loss: LossKind,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for ImportanceOptions {
    fn default() -> ImportanceOptions {
        ImportanceOptions {
            loss: LossKind::Multiclass,
            repetitions: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImportanceResult {
    pub axis: usize,
    pub mean: f64,
    pub std: f64,
    pub ratios: Vec<f64>,
}

fn softmax_column(logits: &[f64], classes: usize, n: usize, j: usize) -> Vec<f64> {
    let mut maxv = f64::NEG_INFINITY;
    for c in 0..classes {
        maxv = maxv.max(logits[c * n + j]);
    }
    let mut denom = 0.0;
    let mut out = vec![0.0; classes];
    for c in 0..classes {
        out[c] = (logits[c * n + j] - maxv).exp();
        denom += out[c];
    }
    for v in out.iter_mut() {
        *v /= denom;
    }
    out
}

fn downstream_loss(logits: &Tensor, labels: &[usize], loss: LossKind) -> Result<f64> {
    let (classes, n) = logits.dims2()?;
    match loss {
        LossKind::Multiclass => {
            let value = logits.softmax_cross_entropy(labels)?;
            value.item()
        }
        LossKind::BalancedBinary { target } => {
            if target >= classes {
                return Err(CwError::Label(format!(
                    "target class {} out of range for {} classes",
                    target, classes
                )));
            }
            let mut pos_acc = 0.0;
            let mut pos_n = 0usize;
            let mut neg_acc = 0.0;
            let mut neg_n = 0usize;
            for j in 0..n {
                let probs = softmax_column(logits.data(), classes, n, j);
                let p = probs[target].clamp(1e-12, 1.0 - 1e-12);
                if labels[j] == target {
                    pos_acc -= p.ln();
                    pos_n += 1;
                } else {
                    neg_acc -= (1.0 - p).ln();
                    neg_n += 1;
                }
            }
            if pos_n == 0 || neg_n == 0 {
                return Err(CwError::UndefinedMetric(
                    "balanced binary loss needs both classes in the test set".into(),
                ));
            }
            Ok(0.5 * (pos_acc / pos_n as f64 + neg_acc / neg_n as f64))
        }
    }
}

/// Permute axis `axis` of a slot latent across samples. For matrix latents
/// this shuffles one row; for conv latents it swaps whole channel maps.
fn permute_axis(latent: &Tensor, axis: usize, perm: &[usize]) -> Result<Tensor> {
    match latent.shape() {
        [d, n] => {
            let (d, n) = (*d, *n);
            if axis >= d {
                return Err(CwError::Index(format!("axis {} out of range", axis)));
            }
            let mut data = latent.data().to_vec();
            for j in 0..n {
                data[axis * n + j] = latent.data()[axis * n + perm[j]];
            }
            Tensor::from_vec(&[d, n], data)
        }
        [n, d, h, w] => {
            let (n, d, h, w) = (*n, *d, *h, *w);
            if axis >= d {
                return Err(CwError::Index(format!("axis {} out of range", axis)));
            }
            let hw = h * w;
            let mut data = latent.data().to_vec();
            for s in 0..n {
                let src = (perm[s] * d + axis) * hw;
                let dst = (s * d + axis) * hw;
                data[dst..dst + hw].copy_from_slice(&latent.data()[src..src + hw]);
            }
            Tensor::from_vec(&[n, d, h, w], data)
        }
        s => Err(CwError::Dimension(format!(
            "unexpected latent shape {:?}",
            s
        ))),
    }
}

/// Concept importance with explicit permutations (the seeded public entry
/// point generates them): mean over permutations of switched/original loss.
pub fn concept_importance_with_perms(
    model: &Model,
    inputs: &Tensor,
    labels: &[usize],
    axis: usize,
    loss: LossKind,
    perms: &[Vec<usize>],
) -> Result<ImportanceResult> {
    if labels.len() < 2 {
        return Err(CwError::DegenerateBatch(
            "concept importance needs at least 2 test samples".into(),
        ));
    }
    let latent = model.forward_eval(inputs)?.slot_latent.detach();
    let logits_orig = model.forward_from_slot(&latent)?;
    let e_orig = downstream_loss(&logits_orig, labels, loss)?;
    if e_orig <= 0.0 || !e_orig.is_finite() {
        return Err(CwError::UndefinedMetric(format!(
            "original loss {} unusable as a denominator",
            e_orig
        )));
    }
    let mut ratios = Vec::with_capacity(perms.len());
    for perm in perms {
        let switched = permute_axis(&latent, axis, perm)?;
        let logits = model.forward_from_slot(&switched)?;
        let e_switch = downstream_loss(&logits, labels, loss)?;
        ratios.push(e_switch / e_orig);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let var = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / ratios.len() as f64;
    Ok(ImportanceResult {
        axis,
        mean,
        std: var.sqrt(),
        ratios,
    })
}

/// `CI_axis`: mean over seeded repetitions of switched loss over original
/// loss, where "switched" permutes that axis's activations across the test
/// set at the slot output and re-runs the downstream network.
pub fn concept_importance(
    model: &Model,
    inputs: &Tensor,
    labels: &[usize],
    axis: usize,
    opts: &ImportanceOptions,
) -> Result<ImportanceResult> {
    if opts.repetitions == 0 {
        return Err(CwError::Config("repetitions must be >= 1".into()));
    }
    let n = labels.len();
    let mut rng = check::rng(opts.seed);
    let perms: Vec<Vec<usize>> = (0..opts.repetitions)
        .map(|_| {
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            perm
        })
        .collect();
    concept_importance_with_perms(model, inputs, labels, axis, opts.loss, &perms)
}

// ── Top-k activated samples ──────────────────────────────────────────

/// Indices of the `k` highest activations, descending, ties broken by sample
/// id ascending.
pub fn topk_activated(activations: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
    if k > activations.len() {
        return Err(CwError::Index(format!(
            "top-{} requested from {} samples",
            k,
            activations.len()
        )));
    }
    let mut ranked: Vec<(usize, f64)> = activations.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

// ── Joint 2-D histogram ──────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Histogram {
    pub grid: usize,
    pub counts: Vec<u32>,
    /// Seeded representative sample id per nonempty cell.
    pub representatives: Vec<Option<usize>>,
    pub bounds_x: (f64, f64),
    pub bounds_y: (f64, f64),
}

impl Histogram {
    pub fn count_at(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.grid + j]
    }
}

/// Bounding box from min/max activations split into `grid×grid` cells;
/// counts sum to the number of points; a seeded draw picks each cell's
/// representative.
pub fn joint_histogram(points: &[(f64, f64)], grid: usize, seed: u64) -> Result<Histogram> {
    if grid < 2 {
        return Err(CwError::Config(format!("grid {} must be >= 2", grid)));
    }
    if points.is_empty() {
        return Err(CwError::Data("histogram of an empty set".into()));
    }
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    if points.len() > 1 && (max_x <= min_x || max_y <= min_y) {
        return Err(CwError::Data(format!(
            "degenerate activation range: x [{}, {}], y [{}, {}]",
            min_x, max_x, min_y, max_y
        )));
    }

    let cell_of = |v: f64, lo: f64, hi: f64| -> usize {
        if hi <= lo {
            return 0;
        }
        (((v - lo) / (hi - lo) * grid as f64) as usize).min(grid - 1)
    };
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); grid * grid];
    let mut counts = vec![0u32; grid * grid];
    for (id, &(x, y)) in points.iter().enumerate() {
        let ci = cell_of(x, min_x, max_x);
        let cj = cell_of(y, min_y, max_y);
        counts[ci * grid + cj] += 1;
        members[ci * grid + cj].push(id);
    }
    let mut rng = check::rng(seed);
    let representatives = members
        .iter()
        .map(|ids| {
            if ids.is_empty() {
                None
            } else {
                Some(ids[rng.random_range(0..ids.len())])
            }
        })
        .collect();
    Ok(Histogram {
        grid,
        counts,
        representatives,
        bounds_x: (min_x, max_x),
        bounds_y: (min_y, max_y),
    })
}

// ── Percentile trajectories ──────────────────────────────────────────

/// Activations of a reference population at one layer placement, on a fixed
/// axis pair. Entries are (sample id, activation on axis i, on axis j).
#[derive(Debug, Clone)]
pub struct LayerActivations {
    pub layer: String,
    pub entries: Vec<(usize, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryPoint {
    pub layer: String,
    pub rank_i: f64,
    pub rank_j: f64,
}

/// Percentile rank of one sample per layer: the fraction of the reference
/// population strictly below its activation, in [0, 1).
pub fn percentile_trajectory(
    layers: &[LayerActivations],
    sample: usize,
) -> Result<Vec<TrajectoryPoint>> {
    let mut out = Vec::with_capacity(layers.len());
    for layer in layers {
        if layer.entries.is_empty() {
            return Err(CwError::Data(format!(
                "layer {} has no reference population",
                layer.layer
            )));
        }
        let own = layer
            .entries
            .iter()
            .find(|(id, _, _)| *id == sample)
            .ok_or_else(|| {
                CwError::Data(format!(
                    "sample {} absent from layer {} records",
                    sample, layer.layer
                ))
            })?;
        let n = layer.entries.len() as f64;
        let below_i = layer.entries.iter().filter(|(_, a, _)| *a < own.1).count();
        let below_j = layer.entries.iter().filter(|(_, _, a)| *a < own.2).count();
        out.push(TrajectoryPoint {
            layer: layer.layer.clone(),
            rank_i: below_i as f64 / n,
            rank_j: below_j as f64 / n,
        });
    }
    Ok(out)
}

// ── Occlusion receptive fields ───────────────────────────────────────

#[derive(Debug, Clone)]
pub struct OcclusionGrid {
    pub rows: usize,
    pub cols: usize,
    pub patch: usize,
    pub stride: usize,
    pub baseline: f64,
    /// Row-major activation drops (baseline − occluded).
    pub drops: Vec<f64>,
}

impl OcclusionGrid {
    pub fn drop_at(&self, row: usize, col: usize) -> f64 {
        self.drops[row * self.cols + col]
    }

    /// Cells whose drop reaches the given quantile of all drops.
    pub fn receptive_field(&self, quantile: f64) -> Vec<(usize, usize)> {
        let mut sorted = self.drops.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let idx = ((sorted.len() as f64 - 1.0) * quantile.clamp(0.0, 1.0)).round() as usize;
        let threshold = sorted[idx];
        let mut cells = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.drop_at(r, c) >= threshold {
                    cells.push((r, c));
                }
            }
        }
        cells
    }
}

/// Slide a `patch×patch` zero patch over the image at the given stride and
/// measure the concept-activation drop per position.
pub fn occlusion_map(
    model: &Model,
    image: &Tensor,
    axis: usize,
    patch: usize,
    stride: usize,
    reducer: ActivationReducer,
) -> Result<OcclusionGrid> {
    let (n, c, h, w) = image.dims4()?;
    if n != 1 {
        return Err(CwError::Contract(format!(
            "occlusion expects a single image, got {}",
            n
        )));
    }
    if patch == 0 || patch > h || patch > w {
        return Err(CwError::Config(format!(
            "patch {} invalid for {}x{} image",
            patch, h, w
        )));
    }
    if stride == 0 {
        return Err(CwError::Config("stride must be positive".into()));
    }
    let activation = |img: &Tensor| -> Result<f64> {
        let acts = slot_activations(model, img, reducer)?;
        acts[0]
            .get(axis)
            .copied()
            .ok_or_else(|| CwError::Index(format!("axis {} out of range", axis)))
    };
    let baseline = activation(image)?;
    let rows = (h - patch) / stride + 1;
    let cols = (w - patch) / stride + 1;
    let mut drops = vec![0.0; rows * cols];
    for r in 0..rows {
        for cc in 0..cols {
            let y0 = r * stride;
            let x0 = cc * stride;
            let mut data = image.data().to_vec();
            for ch in 0..c {
                for y in y0..y0 + patch {
                    let base = (ch * h + y) * w;
                    for x in x0..x0 + patch {
                        data[base + x] = 0.0;
                    }
                }
            }
            let occluded = Tensor::from_vec(&[1, c, h, w], data)?;
            drops[r * cols + cc] = baseline - activation(&occluded)?;
        }
    }
    Ok(OcclusionGrid {
        rows,
        cols,
        patch,
        stride,
        baseline,
        drops,
    })
}
