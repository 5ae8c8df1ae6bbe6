//! The concept-whitening layer: whitening composed with a learned orthogonal
//! rotation, the convolution-output reshape, and the reducers that collapse a
//! feature map to one concept-activation scalar.

use crate::error::{CwError, Result};
use crate::numerics::Tensor;
use crate::stiefel::RotationState;
use crate::whitening::{Mode, WhiteningState};

/// Rule turning an `h×w` feature map into a scalar concept activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationReducer {
    /// Mean of all map values.
    Mean,
    /// Max of all map values.
    Max,
    /// Mean of the strictly positive values; 0 when there are none.
    PositiveMean,
    /// Mean of the max-pooled map (pool × pool windows, stride = pool,
    /// ragged border blocks keep only their in-bounds cells).
    MaxpoolMean { pool: usize },
}

impl ActivationReducer {
    pub fn validate(&self) -> Result<()> {
        if let ActivationReducer::MaxpoolMean { pool } = self {
            if *pool < 2 {
                return Err(CwError::Config(format!(
                    "maxpool-mean reducer needs pool >= 2, got {}",
                    pool
                )));
            }
        }
        Ok(())
    }

    /// Collapse a row-major `h×w` map to its activation scalar.
    pub fn reduce(&self, map: &[f64], h: usize, w: usize) -> f64 {
        debug_assert_eq!(map.len(), h * w);
        match *self {
            ActivationReducer::Mean => map.iter().sum::<f64>() / (h * w) as f64,
            ActivationReducer::Max => map.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)),
            ActivationReducer::PositiveMean => {
                let mut acc = 0.0;
                let mut count = 0usize;
                for &v in map {
                    if v > 0.0 {
                        acc += v;
                        count += 1;
                    }
                }
                if count == 0 {
                    0.0
                } else {
                    acc / count as f64
                }
            }
            ActivationReducer::MaxpoolMean { pool } => {
                let by = h.div_ceil(pool);
                let bx = w.div_ceil(pool);
                let mut acc = 0.0;
                for blk_y in 0..by {
                    for blk_x in 0..bx {
                        let mut best = f64::NEG_INFINITY;
                        for y in blk_y * pool..((blk_y + 1) * pool).min(h) {
                            for x in blk_x * pool..((blk_x + 1) * pool).min(w) {
                                best = best.max(map[y * w + x]);
                            }
                        }
                        acc += best;
                    }
                }
                acc / (by * bx) as f64
            }
        }
    }

    /// Subgradient weights of [`ActivationReducer::reduce`] with respect to
    /// the map entries: `reduce(map) = Σ weights·map` for every reducer, with
    /// max-style reducers routing to the first argmax in raster order.
    pub fn weights(&self, map: &[f64], h: usize, w: usize) -> Vec<f64> {
        debug_assert_eq!(map.len(), h * w);
        let mut weights = vec![0.0; h * w];
        match *self {
            ActivationReducer::Mean => {
                let inv = 1.0 / (h * w) as f64;
                weights.iter_mut().for_each(|v| *v = inv);
            }
            ActivationReducer::Max => {
                let mut best = 0usize;
                for (idx, &v) in map.iter().enumerate() {
                    if v > map[best] {
                        best = idx;
                    }
                }
                weights[best] = 1.0;
            }
            ActivationReducer::PositiveMean => {
                let count = map.iter().filter(|&&v| v > 0.0).count();
                if count > 0 {
                    let inv = 1.0 / count as f64;
                    for (wgt, &v) in weights.iter_mut().zip(map) {
                        if v > 0.0 {
                            *wgt = inv;
                        }
                    }
                }
            }
            ActivationReducer::MaxpoolMean { pool } => {
                let by = h.div_ceil(pool);
                let bx = w.div_ceil(pool);
                let inv = 1.0 / (by * bx) as f64;
                for blk_y in 0..by {
                    for blk_x in 0..bx {
                        let mut best_idx = blk_y * pool * w + blk_x * pool;
                        for y in blk_y * pool..((blk_y + 1) * pool).min(h) {
                            for x in blk_x * pool..((blk_x + 1) * pool).min(w) {
                                if map[y * w + x] > map[best_idx] {
                                    best_idx = y * w + x;
                                }
                            }
                        }
                        weights[best_idx] += inv;
                    }
                }
            }
        }
        weights
    }
}

/// Whitening plus rotation at one normalization site.
#[derive(Debug, Clone)]
pub struct CwLayer {
    pub whitening: WhiteningState,
    pub rotation: RotationState,
    pub reducer: ActivationReducer,
}

impl CwLayer {
    /// Fresh layer of width `dim` with `concepts` assigned axes, identity
    /// rotation, and the default maxpool-mean reducer.
    pub fn new(dim: usize, concepts: usize) -> Result<CwLayer> {
        Ok(CwLayer {
            whitening: WhiteningState::new(dim),
            rotation: RotationState::identity(dim, concepts)?,
            reducer: ActivationReducer::MaxpoolMean { pool: 2 },
        })
    }

    pub fn dim(&self) -> usize {
        self.whitening.dim
    }

    /// `Qᵀ·W·(Z − μ1ᵀ)` on a `d×m` batch. Train mode fits and records batch
    /// statistics; eval mode uses running estimates.
    pub fn forward_vector(&mut self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        let whitened = self.whitening.apply(z, mode)?;
        self.rotation.q.transpose()?.matmul(&whitened)
    }

    /// Eval-only forward on a shared reference.
    pub fn forward_vector_eval(&self, z: &Tensor) -> Result<Tensor> {
        let whitened = self.whitening.apply_eval(z)?;
        self.rotation.q.transpose()?.matmul(&whitened)
    }

    /// CW on a convolution output: reshape `n×d×h×w` so channels become
    /// rows, whiten-and-rotate, reshape back.
    pub fn forward_conv(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, _, h, w) = x.dims4()?;
        let as_matrix = x.conv_to_matrix()?;
        let out = self.forward_vector(&as_matrix, mode)?;
        out.matrix_to_conv(n, h, w)
    }

    pub fn forward_conv_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (n, _, h, w) = x.dims4()?;
        let as_matrix = x.conv_to_matrix()?;
        let out = self.forward_vector_eval(&as_matrix)?;
        out.matrix_to_conv(n, h, w)
    }

    /// Concept activation of one vector sample (`d×1`) on `axis`, using
    /// running statistics.
    pub fn concept_activation_vector(&self, sample: &Tensor, axis: usize) -> Result<f64> {
        self.check_axis(axis)?;
        let out = self.forward_vector_eval(sample)?;
        let (_, cols) = out.dims2()?;
        Ok(out.data()[axis * cols])
    }

    /// Concept activation of one conv sample (`1×d×h×w`) on `axis`: the
    /// configured reducer applied to that channel's post-CW feature map.
    pub fn concept_activation_conv(&self, sample: &Tensor, axis: usize) -> Result<f64> {
        self.check_axis(axis)?;
        let (n, _, h, w) = sample.dims4()?;
        if n != 1 {
            return Err(CwError::Contract(format!(
                "concept activation expects a single sample, got {}",
                n
            )));
        }
        let out = self.forward_conv_eval(sample)?;
        let map = &out.data()[axis * h * w..(axis + 1) * h * w];
        Ok(self.reducer.reduce(map, h, w))
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.dim() {
            return Err(CwError::Index(format!(
                "axis {} out of range for dim {}",
                axis,
                self.dim()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check;

    #[test]
    fn reducers_hand_case() {
        let map = [1.0, -2.0, 3.0, 0.0];
        assert_eq!(ActivationReducer::Mean.reduce(&map, 2, 2), 0.5);
        assert_eq!(ActivationReducer::Max.reduce(&map, 2, 2), 3.0);
        assert_eq!(ActivationReducer::PositiveMean.reduce(&map, 2, 2), 2.0);
        assert_eq!(
            ActivationReducer::MaxpoolMean { pool: 2 }.reduce(&map, 2, 2),
            3.0
        );
    }

    #[test]
    fn positive_mean_of_all_negative_map_is_zero() {
        let map = [-1.0, -0.5, -2.0, -0.1];
        assert_eq!(ActivationReducer::PositiveMean.reduce(&map, 2, 2), 0.0);
    }

    #[test]
    fn maxpool_mean_matches_block_enumeration() {
        // 4x4 ramp: 2x2 blocks with maxima 5, 7, 13, 15.
        let map: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let reducer = ActivationReducer::MaxpoolMean { pool: 2 };
        let expect = (5.0 + 7.0 + 13.0 + 15.0) / 4.0;
        assert_eq!(reducer.reduce(&map, 4, 4), expect);
    }

    #[test]
    fn reducer_weights_reproduce_reduce() {
        let mut rng = check::rng(17);
        for reducer in [
            ActivationReducer::Mean,
            ActivationReducer::Max,
            ActivationReducer::PositiveMean,
            ActivationReducer::MaxpoolMean { pool: 2 },
        ] {
            for _ in 0..20 {
                let map: Vec<f64> = (0..24).map(|_| check::normal(&mut rng)).collect();
                let reduced = reducer.reduce(&map, 4, 6);
                let weights = reducer.weights(&map, 4, 6);
                let via_weights: f64 = weights.iter().zip(&map).map(|(w, m)| w * m).sum();
                assert!(
                    (reduced - via_weights).abs() < 1e-12,
                    "{:?}: {} vs {}",
                    reducer,
                    reduced,
                    via_weights
                );
            }
        }
    }

    #[test]
    fn reducer_dominance_on_divisible_maps() {
        // max >= maxpool-mean >= mean, and positive-mean >= mean, on maps
        // whose extent the pool divides evenly.
        let mut rng = check::rng(4);
        for _ in 0..50 {
            let map: Vec<f64> = (0..36).map(|_| check::normal(&mut rng)).collect();
            let mean = ActivationReducer::Mean.reduce(&map, 6, 6);
            let max = ActivationReducer::Max.reduce(&map, 6, 6);
            let posmean = ActivationReducer::PositiveMean.reduce(&map, 6, 6);
            let mp = ActivationReducer::MaxpoolMean { pool: 2 }.reduce(&map, 6, 6);
            assert!(max >= mp - 1e-12);
            assert!(mp >= mean - 1e-12);
            assert!(posmean >= mean - 1e-12);
        }
    }

    #[test]
    fn identity_rotation_reduces_to_whitening() {
        let mut rng = check::rng(8);
        let z = check::random_matrix(3, 32, &mut rng);
        let mut layer = CwLayer::new(3, 1).unwrap();
        let mut plain = layer.whitening.clone();
        let out = layer.forward_vector(&z, Mode::Train).unwrap();
        let reference = plain.apply(&z, Mode::Train).unwrap();
        for (a, b) in out.data().iter().zip(reference.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_rotation_permutes_rows() {
        let mut rng = check::rng(12);
        let z = check::random_matrix(3, 16, &mut rng);
        let mut layer = CwLayer::new(3, 1).unwrap();
        // Columns of Q: q_0 = e1, q_1 = e2, q_2 = e0, so row i of the output
        // is row q_i of the whitened batch.
        let perm = Tensor::from_vec(
            &[3, 3],
            vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        )
        .unwrap();
        layer.rotation.q = perm;
        let mut plain = layer.whitening.clone();
        let rotated = layer.forward_vector(&z, Mode::Train).unwrap();
        let whitened = plain.apply(&z, Mode::Train).unwrap();
        let (_, cols) = whitened.dims2().unwrap();
        for j in 0..cols {
            assert_eq!(rotated.data()[j], whitened.data()[cols + j]);
            assert_eq!(rotated.data()[cols + j], whitened.data()[2 * cols + j]);
            assert_eq!(rotated.data()[2 * cols + j], whitened.data()[j]);
        }
    }

    #[test]
    fn train_output_covariance_near_identity() {
        let mut rng = check::rng(23);
        let z = check::random_matrix(4, 64, &mut rng);
        let mut layer = CwLayer::new(4, 2).unwrap();
        layer.rotation.q = check::random_orthogonal(4, &mut rng);
        let out = layer.forward_vector(&z, Mode::Train).unwrap();
        let err = check::covariance_identity_error(&out).unwrap();
        assert!(err < 5e-2, "covariance error {}", err);
    }

    #[test]
    fn conv_activation_of_constant_channel_is_that_constant() {
        // Whitening left at its identity initialization, Q = I, mean reducer:
        // a constant channel map passes through unchanged.
        let mut layer = CwLayer::new(2, 1).unwrap();
        layer.reducer = ActivationReducer::Mean;
        let mut data = vec![0.0; 2 * 9];
        for v in data.iter_mut().take(9) {
            *v = 2.5;
        }
        let sample = Tensor::from_vec(&[1, 2, 3, 3], data).unwrap();
        let act = layer.concept_activation_conv(&sample, 0).unwrap();
        assert!((act - 2.5).abs() < 1e-12);
    }

    #[test]
    fn axis_out_of_range_is_index_error() {
        let layer = CwLayer::new(2, 1).unwrap();
        let sample = Tensor::zeros(&[2, 1]);
        assert!(matches!(
            layer.concept_activation_vector(&sample, 5),
            Err(CwError::Index(_))
        ));
    }
}
