//! Seeded synthetic tasks for desk-scale verification: Gaussian-cluster
//! vector data and procedural image data (bright squares, stripes) where the
//! class labels are combinations of planted concept factors, plus the
//! matching concept exemplar sets.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::check;
use crate::error::{CwError, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Vector,
    Image,
}

/// Shape of a synthetic task.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub kind: DataKind,
    pub classes: usize,
    pub concepts: usize,
    /// Vector data: ambient dimension.
    pub input_dim: usize,
    /// Image data: channel count and square side.
    pub channels: usize,
    pub side: usize,
    pub train_n: usize,
    pub eval_n: usize,
    /// Exemplars per concept set.
    pub concept_n: usize,
    pub noise: f64,
    /// How many leading concepts determine the class label. The remaining
    /// concepts are planted in the data with random independent signs, so
    /// they exist as directions but carry no label information (the
    /// "irrelevant concept" case of the importance measurements). Defaults
    /// to all of them.
    pub decisive_concepts: Option<usize>,
    /// Give every class its own identity direction orthogonal to the factor
    /// directions. Classes then merely correlate with the concept factors
    /// instead of being determined by them, which mirrors concepts that are
    /// labeled independently of the main task.
    pub class_directions: bool,
    /// Amplitude of the planted factor and class directions relative to the
    /// unit noise scale.
    pub amp: f64,
    /// Probability that a decisive factor's sign flips away from its class
    /// pattern, weakening the factor-label correlation from deterministic to
    /// statistical.
    pub factor_flip_prob: f64,
    /// Amplitude of the class identity directions; defaults to `amp`.
    pub class_amp: Option<f64>,
}

impl SyntheticSpec {
    pub fn vector(classes: usize, concepts: usize, input_dim: usize) -> SyntheticSpec {
        SyntheticSpec {
            kind: DataKind::Vector,
            classes,
            concepts,
            input_dim,
            channels: 0,
            side: 0,
            train_n: 2048,
            eval_n: 512,
            concept_n: 256,
            noise: 0.3,
            decisive_concepts: None,
            class_directions: false,
            amp: 1.0,
            factor_flip_prob: 0.0,
            class_amp: None,
        }
    }

    pub fn image(classes: usize, concepts: usize, channels: usize, side: usize) -> SyntheticSpec {
        SyntheticSpec {
            kind: DataKind::Image,
            classes,
            concepts,
            input_dim: 0,
            channels,
            side,
            train_n: 512,
            eval_n: 128,
            concept_n: 64,
            noise: 0.3,
            decisive_concepts: None,
            class_directions: false,
            amp: 1.0,
            factor_flip_prob: 0.0,
            class_amp: None,
        }
    }
}

/// Inputs plus integer labels. Vector inputs are `d×n` (columns are
/// samples); image inputs are `n×c×h×w`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Sub-batch by sample indices, in the given order.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        select_samples(&self.inputs, indices)
    }

    /// Single sample, keeping the batch axis (`d×1` or `1×c×h×w`).
    pub fn sample(&self, index: usize) -> Result<Tensor> {
        if index >= self.len() {
            return Err(CwError::Index(format!(
                "sample {} out of range ({})",
                index,
                self.len()
            )));
        }
        select_samples(&self.inputs, &[index])
    }
}

/// Select samples from a `d×n` matrix (columns) or an `n×c×h×w` stack.
pub fn select_samples(inputs: &Tensor, indices: &[usize]) -> Result<Tensor> {
    match inputs.shape() {
        [d, n] => {
            let (d, n) = (*d, *n);
            let mut data = vec![0.0; d * indices.len()];
            for (jj, &j) in indices.iter().enumerate() {
                if j >= n {
                    return Err(CwError::Index(format!("column {} out of range", j)));
                }
                for i in 0..d {
                    data[i * indices.len() + jj] = inputs.data()[i * n + j];
                }
            }
            Tensor::from_vec(&[d, indices.len()], data)
        }
        [n, c, h, w] => {
            let (n, c, h, w) = (*n, *c, *h, *w);
            let stride = c * h * w;
            let mut data = vec![0.0; indices.len() * stride];
            for (jj, &j) in indices.iter().enumerate() {
                if j >= n {
                    return Err(CwError::Index(format!("sample {} out of range", j)));
                }
                data[jj * stride..(jj + 1) * stride]
                    .copy_from_slice(&inputs.data()[j * stride..(j + 1) * stride]);
            }
            Tensor::from_vec(&[indices.len(), c, h, w], data)
        }
        s => Err(CwError::Dimension(format!(
            "dataset inputs must be rank 2 or 4, got {:?}",
            s
        ))),
    }
}

/// One named concept with its exemplar set and assigned axis.
#[derive(Debug, Clone)]
pub struct ConceptSet {
    pub name: String,
    pub axis: usize,
    pub samples: Tensor,
}

impl ConceptSet {
    pub fn len(&self) -> usize {
        match self.samples.shape() {
            [_, n] => *n,
            [n, ..] => *n,
            [] => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The auxiliary concept datasets, ordered by axis.
#[derive(Debug, Clone, Default)]
pub struct ConceptBank {
    pub concepts: Vec<ConceptSet>,
}

impl ConceptBank {
    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for set in &self.concepts {
            if !seen.insert(set.axis) {
                return Err(CwError::Config(format!(
                    "axis {} assigned to more than one concept",
                    set.axis
                )));
            }
            if set.is_empty() {
                return Err(CwError::Data(format!("concept '{}' has no samples", set.name)));
            }
        }
        Ok(())
    }
}

impl SyntheticSpec {
    /// The reference 4-class/2-concept classification benchmark: classes own
    /// identity directions and correlate with (but are not determined by)
    /// the planted factors, and exemplars share class structure with the
    /// classes that exhibit their factor. Pair with [`BENCHMARK_SEED`] and
    /// `TrainConfig::benchmark`.
    pub fn benchmark_classification() -> SyntheticSpec {
        let mut spec = SyntheticSpec::vector(4, 2, 512);
        spec.noise = 0.3;
        spec.amp = 1.2;
        spec.class_amp = Some(1.2);
        spec.class_directions = true;
        spec.factor_flip_prob = 0.2;
        spec.train_n = 16384;
        spec.eval_n = 4096;
        spec.concept_n = 1024;
        spec
    }

    /// The reference importance task: two classes decided by factor 0 alone,
    /// with factor 1 planted but label-independent. Pair with
    /// [`IMPORTANCE_SEED`].
    pub fn benchmark_importance() -> SyntheticSpec {
        let mut spec = SyntheticSpec::vector(2, 2, 512);
        spec.noise = 0.3;
        spec.amp = 1.2;
        spec.train_n = 8192;
        spec.eval_n = 2048;
        spec.concept_n = 1024;
        spec.decisive_concepts = Some(1);
        spec
    }
}

/// Seed of the reference classification benchmark.
pub const BENCHMARK_SEED: u64 = 44;

/// Seed of the reference importance task.
pub const IMPORTANCE_SEED: u64 = 46;

/// A generated task: train/eval splits, the concept bank, and (for vector
/// data) the planted factor directions so tests can verify recovery.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub train: Dataset,
    pub eval: Dataset,
    pub bank: ConceptBank,
    pub factor_directions: Vec<Vec<f64>>,
}

fn sign_pattern(class: usize, concept: usize) -> f64 {
    if (class >> concept) & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Synthetic> {
    if spec.classes < 2 {
        return Err(CwError::Config(format!(
            "need at least 2 classes, got {}",
            spec.classes
        )));
    }
    if spec.concepts < 1 {
        return Err(CwError::Config("need at least 1 concept".into()));
    }
    match spec.kind {
        DataKind::Vector => make_vector(spec, seed),
        DataKind::Image => make_image(spec, seed),
    }
}

fn make_vector(spec: &SyntheticSpec, seed: u64) -> Result<Synthetic> {
    let dim = spec.input_dim;
    if spec.concepts > dim {
        return Err(CwError::Config(format!(
            "{} concepts cannot be planted in {} dimensions",
            spec.concepts, dim
        )));
    }
    let decisive = spec.decisive_concepts.unwrap_or(spec.concepts);
    if decisive == 0 || decisive > spec.concepts {
        return Err(CwError::Config(format!(
            "decisive concepts {} must lie in 1..={}",
            decisive, spec.concepts
        )));
    }
    let capacity = 1usize << decisive.min(20);
    let extra_dirs = if spec.class_directions || spec.classes > capacity {
        spec.classes
    } else {
        0
    };
    if spec.concepts + extra_dirs > dim {
        return Err(CwError::Config(format!(
            "{} classes over {} concepts need {} directions, input has {}",
            spec.classes,
            spec.concepts,
            spec.concepts + extra_dirs,
            dim
        )));
    }

    let mut rng = check::rng(seed);
    // Orthonormal factor directions (and per-class extras when the sign
    // patterns alone cannot distinguish all classes).
    let basis = check::random_orthogonal(dim, &mut rng);
    let direction = |col: usize| -> Vec<f64> {
        (0..dim).map(|i| basis.data()[i * dim + col]).collect()
    };
    let factors: Vec<Vec<f64>> = (0..spec.concepts).map(direction).collect();
    let extras: Vec<Vec<f64>> = (0..extra_dirs)
        .map(|c| direction(spec.concepts + c))
        .collect();

    let amp = spec.amp;
    let class_amp = spec.class_amp.unwrap_or(spec.amp);
    let gen_split = |n: usize, rng: &mut ChaCha8Rng| -> Result<Dataset> {
        let mut data = vec![0.0; dim * n];
        let mut labels = Vec::with_capacity(n);
        for j in 0..n {
            let class = j % spec.classes;
            labels.push(class);
            // Decisive factors follow the class sign pattern; the remaining
            // planted factors flip a fair coin per sample.
            let mut signs = vec![0.0; spec.concepts];
            for (cpt, sign) in signs.iter_mut().enumerate() {
                *sign = if cpt < decisive {
                    let planted = sign_pattern(class % capacity, cpt);
                    if spec.factor_flip_prob > 0.0
                        && rng.random::<f64>() < spec.factor_flip_prob
                    {
                        -planted
                    } else {
                        planted
                    }
                } else if rng.random_range(0..2) == 1 {
                    1.0
                } else {
                    -1.0
                };
            }
            for i in 0..dim {
                let mut v = 0.0;
                for (cpt, u) in factors.iter().enumerate() {
                    v += signs[cpt] * amp * u[i];
                }
                if !extras.is_empty() {
                    v += class_amp * extras[class][i];
                }
                data[i * n + j] = v + spec.noise * check::normal(rng);
            }
        }
        Ok(Dataset {
            inputs: Tensor::from_vec(&[dim, n], data)?,
            labels,
        })
    };

    let train = gen_split(spec.train_n, &mut rng)?;
    let eval = gen_split(spec.eval_n, &mut rng)?;

    let mut concepts = Vec::new();
    for (cpt, u) in factors.iter().enumerate() {
        let n = spec.concept_n;
        let mut data = vec![0.0; dim * n];
        for j in 0..n {
            let strength: f64 = rng.random_range(1.0..1.8) * amp;
            // With class directions on, exemplars look like main-task
            // samples that exhibit the factor: they carry a (weaker) class
            // identity component shared across all concept sets.
            // Exemplars carry the identity of a class that actually
            // exhibits this factor (bit `cpt` set), so different concepts
            // share class structure exactly where their classes overlap.
            let class_component = if extras.is_empty() {
                None
            } else {
                let consistent: Vec<usize> = (0..spec.classes)
                    .filter(|c| (c >> cpt) & 1 == 1)
                    .collect();
                let pick = consistent[rng.random_range(0..consistent.len())];
                Some(&extras[pick])
            };
            for i in 0..dim {
                let mut v = strength * u[i] + spec.noise * check::normal(&mut rng);
                if let Some(extra) = class_component {
                    v += 0.4 * class_amp * extra[i];
                }
                data[i * n + j] = v;
            }
        }
        concepts.push(ConceptSet {
            name: format!("factor{}", cpt),
            axis: cpt,
            samples: Tensor::from_vec(&[dim, n], data)?,
        });
    }

    let bank = ConceptBank { concepts };
    bank.validate()?;
    Ok(Synthetic {
        train,
        eval,
        bank,
        factor_directions: factors,
    })
}

/// Image factors: 0 = bright square patch, 1 = horizontal stripes,
/// 2 = vertical stripes. Each lives mainly in channel `factor % channels`.
fn paint_factor(
    img: &mut [f64],
    factor: usize,
    channels: usize,
    side: usize,
    rng: &mut ChaCha8Rng,
) {
    let ch = factor % channels;
    let base = ch * side * side;
    match factor {
        0 => {
            let patch = (side / 3).max(2);
            let y0 = rng.random_range(0..=(side - patch));
            let x0 = rng.random_range(0..=(side - patch));
            for y in y0..y0 + patch {
                for x in x0..x0 + patch {
                    img[base + y * side + x] += 2.0;
                }
            }
        }
        1 => {
            for y in (0..side).step_by(4) {
                for x in 0..side {
                    img[base + y * side + x] += 1.5;
                }
            }
        }
        _ => {
            for x in (0..side).step_by(4) {
                for y in 0..side {
                    img[base + y * side + x] += 1.5;
                }
            }
        }
    }
}

fn make_image(spec: &SyntheticSpec, seed: u64) -> Result<Synthetic> {
    if spec.concepts > 3 {
        return Err(CwError::Config(format!(
            "image data supports up to 3 planted factors, got {}",
            spec.concepts
        )));
    }
    if spec.classes > (1 << spec.concepts) {
        return Err(CwError::Config(format!(
            "{} classes need more than {} factor patterns",
            spec.classes,
            1 << spec.concepts
        )));
    }
    if spec.channels == 0 || spec.side < 8 || spec.side % 4 != 0 {
        return Err(CwError::Config(format!(
            "image spec needs channels >= 1 and side >= 8 divisible by 4, got {}x{}",
            spec.channels, spec.side
        )));
    }

    let mut rng = check::rng(seed);
    let stride = spec.channels * spec.side * spec.side;

    let gen_split = |n: usize, rng: &mut ChaCha8Rng| -> Result<Dataset> {
        let mut data = vec![0.0; n * stride];
        let mut labels = Vec::with_capacity(n);
        for j in 0..n {
            let class = j % spec.classes;
            labels.push(class);
            let img = &mut data[j * stride..(j + 1) * stride];
            for v in img.iter_mut() {
                *v = spec.noise * check::normal(rng);
            }
            for cpt in 0..spec.concepts {
                if (class >> cpt) & 1 == 1 {
                    paint_factor(img, cpt, spec.channels, spec.side, rng);
                }
            }
        }
        Ok(Dataset {
            inputs: Tensor::from_vec(&[n, spec.channels, spec.side, spec.side], data)?,
            labels,
        })
    };

    let train = gen_split(spec.train_n, &mut rng)?;
    let eval = gen_split(spec.eval_n, &mut rng)?;

    let names = ["square", "hstripes", "vstripes"];
    let mut concepts = Vec::new();
    for cpt in 0..spec.concepts {
        let n = spec.concept_n;
        let mut data = vec![0.0; n * stride];
        for j in 0..n {
            let img = &mut data[j * stride..(j + 1) * stride];
            for v in img.iter_mut() {
                *v = spec.noise * check::normal(&mut rng);
            }
            paint_factor(img, cpt, spec.channels, spec.side, &mut rng);
        }
        concepts.push(ConceptSet {
            name: names[cpt].to_string(),
            axis: cpt,
            samples: Tensor::from_vec(&[n, spec.channels, spec.side, spec.side], data)?,
        });
    }

    let bank = ConceptBank { concepts };
    bank.validate()?;
    Ok(Synthetic {
        train,
        eval,
        bank,
        factor_directions: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_vector_classes_are_separable() {
        let mut spec = SyntheticSpec::vector(4, 2, 8);
        spec.noise = 0.0;
        spec.train_n = 64;
        let synth = make_synthetic(&spec, 3).unwrap();
        // Nearest-class-mean oracle classifies perfectly at zero noise.
        let (d, n) = synth.train.inputs.dims2().unwrap();
        let mut means = vec![vec![0.0; d]; 4];
        let mut counts = vec![0usize; 4];
        for j in 0..n {
            let y = synth.train.labels[j];
            counts[y] += 1;
            for i in 0..d {
                means[y][i] += synth.train.inputs.data()[i * n + j];
            }
        }
        for (mean, count) in means.iter_mut().zip(&counts) {
            for v in mean.iter_mut() {
                *v /= *count as f64;
            }
        }
        for j in 0..n {
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (c, mean) in means.iter().enumerate() {
                let mut dist = 0.0;
                for i in 0..d {
                    let diff = synth.train.inputs.data()[i * n + j] - mean[i];
                    dist += diff * diff;
                }
                if dist < best_dist {
                    best_dist = dist;
                    best = c;
                }
            }
            assert_eq!(best, synth.train.labels[j]);
        }
    }

    #[test]
    fn pca_recovers_planted_direction_at_zero_noise() {
        let mut spec = SyntheticSpec::vector(4, 2, 8);
        spec.noise = 0.0;
        spec.concept_n = 64;
        let synth = make_synthetic(&spec, 9).unwrap();
        for (set, planted) in synth.bank.concepts.iter().zip(&synth.factor_directions) {
            let cov = crate::check::covariance(&set.samples).unwrap();
            // Power iteration for the top principal component.
            let d = planted.len();
            let mut v = vec![1.0; d];
            for _ in 0..200 {
                let mut next = vec![0.0; d];
                for i in 0..d {
                    for k in 0..d {
                        next[i] += cov.data()[i * d + k] * v[k];
                    }
                }
                let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in next.iter_mut() {
                    *x /= norm;
                }
                v = next;
            }
            let dot: f64 = v.iter().zip(planted).map(|(a, b)| a * b).sum();
            let angle = dot.abs().min(1.0).acos();
            assert!(
                angle < 5.0_f64.to_radians(),
                "concept {} recovered at {:.2} degrees",
                set.name,
                angle.to_degrees()
            );
        }
    }

    #[test]
    fn same_seed_reproduces_identical_bytes() {
        let spec = SyntheticSpec::vector(4, 2, 8);
        let a = make_synthetic(&spec, 42).unwrap();
        let b = make_synthetic(&spec, 42).unwrap();
        assert_eq!(a.train.inputs.data(), b.train.inputs.data());
        assert_eq!(a.train.labels, b.train.labels);
        assert_eq!(
            a.bank.concepts[0].samples.data(),
            b.bank.concepts[0].samples.data()
        );
    }

    #[test]
    fn infeasible_spec_is_config_error() {
        let spec = SyntheticSpec::vector(4, 9, 8);
        assert!(matches!(
            make_synthetic(&spec, 1),
            Err(CwError::Config(_))
        ));
    }

    #[test]
    fn image_task_has_expected_shapes() {
        let mut spec = SyntheticSpec::image(4, 2, 3, 16);
        spec.train_n = 8;
        spec.eval_n = 4;
        spec.concept_n = 4;
        let synth = make_synthetic(&spec, 5).unwrap();
        assert_eq!(synth.train.inputs.shape(), &[8, 3, 16, 16]);
        assert_eq!(synth.bank.concepts.len(), 2);
        assert_eq!(synth.bank.concepts[0].samples.shape(), &[4, 3, 16, 16]);
    }

    #[test]
    fn batch_selection_round_trips() {
        let spec = SyntheticSpec::vector(2, 1, 4);
        let synth = make_synthetic(&spec, 7).unwrap();
        let batch = synth.train.batch(&[5, 2, 9]).unwrap();
        assert_eq!(batch.shape(), &[4, 3]);
        let single = synth.train.sample(2).unwrap();
        for i in 0..4 {
            assert_eq!(single.data()[i], batch.data()[i * 3 + 1]);
        }
    }
}
