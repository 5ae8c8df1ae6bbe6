//! Orthogonal-matrix optimization for concept alignment: the alignment
//! objective and its closed-form gradient, gradient momentum, Cayley-transform
//! updates, and a backtracking curvilinear search along the Cayley curve.

use crate::error::{CwError, Result};
use crate::layer::ActivationReducer;
use crate::linalg;
use crate::numerics::Tensor;

/// Orthogonality drift beyond which a state re-orthonormalizes itself.
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-5;

/// The rotation matrix under optimization plus its gradient-momentum buffer.
/// Concepts occupy the first `concept_axes` columns of `q`.
#[derive(Debug, Clone)]
pub struct RotationState {
    pub q: Tensor,
    pub grad_momentum: Tensor,
    pub beta: f64,
    pub concept_axes: usize,
}

impl RotationState {
    /// Identity rotation of size `dim` with `concepts` assigned axes.
    pub fn identity(dim: usize, concepts: usize) -> Result<RotationState> {
        if concepts > dim {
            return Err(CwError::Config(format!(
                "{} concepts cannot fit in {} axes",
                concepts, dim
            )));
        }
        Ok(RotationState {
            q: Tensor::eye(dim),
            grad_momentum: Tensor::zeros(&[dim, dim]),
            beta: 0.9,
            concept_axes: concepts,
        })
    }

    pub fn dim(&self) -> usize {
        self.q.shape()[0]
    }

    /// `G′ ← βG′ + (1−β)G`.
    pub fn momentum_update(&mut self, gradient: &Tensor) -> Result<()> {
        if gradient.shape() != self.grad_momentum.shape() {
            return Err(CwError::Dimension(format!(
                "gradient shape {:?} does not match momentum buffer {:?}",
                gradient.shape(),
                self.grad_momentum.shape()
            )));
        }
        self.grad_momentum = self
            .grad_momentum
            .scale(self.beta)
            .add(&gradient.scale(1.0 - self.beta))?;
        Ok(())
    }

    pub fn orthogonality_error(&self) -> Result<f64> {
        linalg::orthogonality_error(&self.q)
    }

    /// Project back onto the orthogonal group if drift exceeds the tolerance.
    /// Returns whether a repair happened.
    pub fn reorthonormalize_if_needed(&mut self) -> Result<bool> {
        if self.orthogonality_error()? <= ORTHOGONALITY_TOLERANCE {
            return Ok(false);
        }
        self.q = linalg::polar_orthogonalize(&self.q)?;
        Ok(true)
    }
}

/// Backtracking parameters for the curvilinear search.
#[derive(Debug, Clone, Copy)]
pub struct SearchParams {
    pub initial_step: f64,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
}

impl Default for SearchParams {
    fn default() -> SearchParams {
        SearchParams {
            initial_step: 1.0,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 20,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.initial_step <= 0.0 {
            return Err(CwError::Config(format!(
                "initial step {} must be positive",
                self.initial_step
            )));
        }
        if !(0.0..1.0).contains(&self.armijo_c1) || self.armijo_c1 == 0.0 {
            return Err(CwError::Config(format!(
                "armijo c1 {} must lie in (0, 1)",
                self.armijo_c1
            )));
        }
        if !(0.0..1.0).contains(&self.backtrack_factor) || self.backtrack_factor == 0.0 {
            return Err(CwError::Config(format!(
                "backtrack factor {} must lie in (0, 1)",
                self.backtrack_factor
            )));
        }
        Ok(())
    }
}

/// One whitened concept mini-batch bound to its assigned axis.
///
/// `Vector` carries ψ(Z) directly as `d×m`. `Conv` carries the reshaped
/// `d×(h·w·m)` matrix: the per-sample activation is the reducer applied to
/// the rotated channel map, and alignment gradients weight the ψ columns by
/// the reducer's subgradient.
#[derive(Debug, Clone)]
pub enum ConceptBatch {
    Vector {
        axis: usize,
        whitened: Tensor,
    },
    Conv {
        axis: usize,
        whitened: Tensor,
        samples: usize,
        height: usize,
        width: usize,
        reducer: ActivationReducer,
    },
}

impl ConceptBatch {
    fn axis(&self) -> usize {
        match self {
            ConceptBatch::Vector { axis, .. } => *axis,
            ConceptBatch::Conv { axis, .. } => *axis,
        }
    }
}

fn validate_batches(dim: usize, batches: &[ConceptBatch]) -> Result<()> {
    let mut seen = vec![false; dim];
    for batch in batches {
        let axis = batch.axis();
        if axis >= dim {
            return Err(CwError::Config(format!(
                "axis {} out of range for dim {}",
                axis, dim
            )));
        }
        if seen[axis] {
            return Err(CwError::Config(format!(
                "axis {} assigned to more than one concept",
                axis
            )));
        }
        seen[axis] = true;
        match batch {
            ConceptBatch::Vector { whitened, .. } => {
                let (d, m) = whitened.dims2()?;
                if d != dim {
                    return Err(CwError::Dimension(format!(
                        "concept batch dim {} does not match rotation dim {}",
                        d, dim
                    )));
                }
                if m == 0 {
                    return Err(CwError::Data("empty concept batch".into()));
                }
            }
            ConceptBatch::Conv {
                whitened,
                samples,
                height,
                width,
                ..
            } => {
                let (d, cols) = whitened.dims2()?;
                if d != dim {
                    return Err(CwError::Dimension(format!(
                        "concept batch dim {} does not match rotation dim {}",
                        d, dim
                    )));
                }
                if *samples == 0 {
                    return Err(CwError::Data("empty concept batch".into()));
                }
                if cols != samples * height * width {
                    return Err(CwError::Dimension(format!(
                        "conv batch has {} columns, expected {}x{}x{}",
                        cols, samples, height, width
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Rotated channel map of one sample: `q_axisᵀ · ψ[:, sample block]`.
fn rotated_map(q: &Tensor, axis: usize, whitened: &Tensor, col0: usize, len: usize) -> Vec<f64> {
    let (d, cols) = (whitened.shape()[0], whitened.shape()[1]);
    let qd = q.shape()[0];
    let qcol: Vec<f64> = (0..qd).map(|i| q.data()[i * qd + axis]).collect();
    let mut out = vec![0.0; len];
    let psi = whitened.data();
    for (p, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..d {
            acc += qcol[i] * psi[i * cols + col0 + p];
        }
        *o = acc;
    }
    out
}

/// Concept-alignment objective `Σ_j (1/n_j) Σ_i activation_j(sample_i)` to be
/// maximized. For vector batches the activation is `q_jᵀψ(z_i)`; for conv
/// batches it is the reducer applied to the rotated channel map.
pub fn alignment_objective(q: &Tensor, batches: &[ConceptBatch]) -> Result<f64> {
    let (dim, dc) = q.dims2()?;
    if dim != dc {
        return Err(CwError::Dimension(format!(
            "rotation must be square, got {:?}",
            q.shape()
        )));
    }
    validate_batches(dim, batches)?;
    let mut total = 0.0;
    for batch in batches {
        match batch {
            ConceptBatch::Vector { axis, whitened } => {
                let (d, m) = whitened.dims2()?;
                let psi = whitened.data();
                let mut acc = 0.0;
                for j in 0..m {
                    let mut dot = 0.0;
                    for i in 0..d {
                        dot += q.data()[i * dim + axis] * psi[i * m + j];
                    }
                    acc += dot;
                }
                total += acc / m as f64;
            }
            ConceptBatch::Conv {
                axis,
                whitened,
                samples,
                height,
                width,
                reducer,
            } => {
                let hw = height * width;
                let mut acc = 0.0;
                for s in 0..*samples {
                    let map = rotated_map(q, *axis, whitened, s * hw, hw);
                    acc += reducer.reduce(&map, *height, *width);
                }
                total += acc / *samples as f64;
            }
        }
    }
    Ok(total)
}

/// Gradient of the *negated* alignment objective with respect to `Q`
/// (maximization implemented as descent): column `j` is minus the mean
/// (reducer-weighted, for conv inputs) whitened representation of concept
/// `j`'s mini-batch; all other columns are zero.
pub fn alignment_gradient(q: &Tensor, batches: &[ConceptBatch]) -> Result<Tensor> {
    let (dim, dc) = q.dims2()?;
    if dim != dc {
        return Err(CwError::Dimension(format!(
            "rotation must be square, got {:?}",
            q.shape()
        )));
    }
    validate_batches(dim, batches)?;
    let mut grad = vec![0.0; dim * dim];
    for batch in batches {
        match batch {
            ConceptBatch::Vector { axis, whitened } => {
                let (d, m) = whitened.dims2()?;
                let psi = whitened.data();
                for i in 0..d {
                    let mut acc = 0.0;
                    for j in 0..m {
                        acc += psi[i * m + j];
                    }
                    grad[i * dim + axis] = -acc / m as f64;
                }
            }
            ConceptBatch::Conv {
                axis,
                whitened,
                samples,
                height,
                width,
                reducer,
            } => {
                let hw = height * width;
                let (d, cols) = whitened.dims2()?;
                let psi = whitened.data();
                let mut column = vec![0.0; d];
                for s in 0..*samples {
                    let map = rotated_map(q, *axis, whitened, s * hw, hw);
                    let weights = reducer.weights(&map, *height, *width);
                    for (p, wgt) in weights.iter().enumerate() {
                        if *wgt == 0.0 {
                            continue;
                        }
                        for i in 0..d {
                            column[i] += wgt * psi[i * cols + s * hw + p];
                        }
                    }
                }
                for i in 0..d {
                    grad[i * dim + axis] = -column[i] / *samples as f64;
                }
            }
        }
    }
    Tensor::from_vec(&[dim, dim], grad)
}

/// Skew-symmetric generator `A = G′Qᵀ − QG′ᵀ` of the Cayley curve.
pub fn cayley_generator(q: &Tensor, grad: &Tensor) -> Result<Tensor> {
    let gqt = grad.matmul(&q.transpose()?)?;
    let qgt = q.matmul(&grad.transpose()?)?;
    gqt.sub(&qgt)
}

/// One Cayley-transform step:
/// `Q⁺ = (I + η/2·A)^{-1} (I − η/2·A) Q` with `A = G′Qᵀ − QG′ᵀ`.
/// Orthogonality is preserved up to rounding. A singular left factor is a
/// step-size error; callers shrink η and retry.
pub fn cayley_step(q: &Tensor, grad_momentum: &Tensor, eta: f64) -> Result<Tensor> {
    let (dim, _) = q.dims2()?;
    let a = cayley_generator(q, grad_momentum)?;
    let skew_defect = a.add(&a.transpose()?)?.max_abs();
    if skew_defect > 1e-10 {
        return Err(CwError::Numerical(format!(
            "Cayley generator lost skew-symmetry, defect {:.3e}",
            skew_defect
        )));
    }
    let half = a.scale(eta / 2.0);
    let left = Tensor::eye(dim).add(&half)?;
    let right = Tensor::eye(dim).sub(&half)?.matmul(q)?;
    linalg::solve(&left, &right)
}

/// Outcome of [`curvilinear_search`].
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub eta: f64,
    pub q_next: Tensor,
    pub objective: f64,
    /// Set when backtracking ran out before the Armijo test passed; the
    /// smallest tried step is returned anyway.
    pub exhausted: bool,
}

/// Backtracking search along the Cayley curve: find η with
/// `f(Q(η)) ≤ f(Q) − c1·η·‖A‖_F²/2`, where `f` is the to-be-minimized
/// (negated alignment) objective. `G′ = 0` short-circuits to the initial
/// step with `Q` unchanged.
pub fn curvilinear_search<F>(
    q: &Tensor,
    grad_momentum: &Tensor,
    params: &SearchParams,
    mut objective: F,
) -> Result<SearchOutcome>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    params.validate()?;
    let a = cayley_generator(q, grad_momentum)?;
    let a_norm_sq = a.data().iter().map(|v| v * v).sum::<f64>();
    if a_norm_sq == 0.0 {
        let objective = objective(q)?;
        return Ok(SearchOutcome {
            eta: params.initial_step,
            q_next: q.clone(),
            objective,
            exhausted: false,
        });
    }

    let f0 = objective(q)?;
    if !f0.is_finite() {
        return Err(CwError::Numerical(
            "objective not finite at the current rotation".into(),
        ));
    }

    let mut eta = params.initial_step;
    let mut last: Option<(f64, Tensor, f64)> = None;
    let mut any_finite = false;
    for _ in 0..=params.max_backtracks {
        match cayley_step(q, grad_momentum, eta) {
            Ok(candidate) => {
                let f_c = objective(&candidate)?;
                if f_c.is_finite() {
                    any_finite = true;
                    if f_c <= f0 - params.armijo_c1 * eta * a_norm_sq / 2.0 {
                        return Ok(SearchOutcome {
                            eta,
                            q_next: candidate,
                            objective: f_c,
                            exhausted: false,
                        });
                    }
                    last = Some((eta, candidate, f_c));
                }
            }
            Err(CwError::StepSize(_)) => {}
            Err(other) => return Err(other),
        }
        eta *= params.backtrack_factor;
    }

    if !any_finite {
        return Err(CwError::Numerical(
            "objective not finite at any tried step size".into(),
        ));
    }
    let (eta, q_next, objective) = last.expect("finite candidate recorded");
    Ok(SearchOutcome {
        eta,
        q_next,
        objective,
        exhausted: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check;

    fn vector_batch(axis: usize, cols: &[&[f64]]) -> ConceptBatch {
        let d = cols[0].len();
        let m = cols.len();
        let mut data = vec![0.0; d * m];
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                data[i * m + j] = *v;
            }
        }
        ConceptBatch::Vector {
            axis,
            whitened: Tensor::from_vec(&[d, m], data).unwrap(),
        }
    }

    #[test]
    fn objective_of_aligned_unit_columns_is_one() {
        let q = Tensor::eye(3);
        let batch = vector_batch(0, &[&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]]);
        let obj = alignment_objective(&q, &[batch]).unwrap();
        assert!((obj - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_concept_contributes_zero() {
        let q = Tensor::eye(3);
        let batch = vector_batch(0, &[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let obj = alignment_objective(&q, &[batch]).unwrap();
        assert_eq!(obj, 0.0);
    }

    #[test]
    fn duplicate_axis_is_config_error() {
        let q = Tensor::eye(2);
        let a = vector_batch(0, &[&[1.0, 0.0]]);
        let b = vector_batch(0, &[&[0.0, 1.0]]);
        assert!(matches!(
            alignment_objective(&q, &[a, b]),
            Err(CwError::Config(_))
        ));
    }

    #[test]
    fn gradient_of_identical_columns_is_minus_that_column() {
        let q = Tensor::eye(3);
        let v = [0.3, -1.2, 0.8];
        let batch = vector_batch(1, &[&v, &v, &v]);
        let g = alignment_gradient(&q, &[batch]).unwrap();
        for i in 0..3 {
            assert!((g.at2(i, 1) + v[i]).abs() < 1e-15);
            assert_eq!(g.at2(i, 0), 0.0);
            assert_eq!(g.at2(i, 2), 0.0);
        }
    }

    #[test]
    fn unassigned_columns_stay_zero() {
        let q = Tensor::eye(4);
        let batch = vector_batch(0, &[&[1.0, 2.0, 3.0, 4.0]]);
        let g = alignment_gradient(&q, &[batch]).unwrap();
        for i in 0..4 {
            for j in 1..4 {
                assert_eq!(g.at2(i, j), 0.0);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences_on_q() {
        // d/dQ of the (negated) objective, compared entrywise against central
        // differences of the objective itself.
        let mut rng = check::rng(31);
        let q = check::random_orthogonal(4, &mut rng);
        let whitened = check::random_matrix(4, 12, &mut rng);
        let batches = vec![
            ConceptBatch::Vector {
                axis: 0,
                whitened: whitened.clone(),
            },
            ConceptBatch::Vector {
                axis: 2,
                whitened: check::random_matrix(4, 9, &mut rng),
            },
        ];
        let analytic = alignment_gradient(&q, &batches).unwrap();
        let numeric = check::finite_difference_grad(&q, 1e-6, |qc| {
            Ok(-alignment_objective(qc, &batches)?)
        })
        .unwrap();
        let err = check::max_relative_error(analytic.data(), &numeric);
        assert!(err < 1e-5, "relative error {}", err);
    }

    #[test]
    fn conv_gradient_matches_finite_differences_for_every_reducer() {
        let mut rng = check::rng(77);
        for reducer in [
            ActivationReducer::Mean,
            ActivationReducer::Max,
            ActivationReducer::PositiveMean,
            ActivationReducer::MaxpoolMean { pool: 2 },
        ] {
            let q = check::random_orthogonal(3, &mut rng);
            let whitened = check::random_matrix(3, 2 * 4 * 4, &mut rng);
            let batches = vec![ConceptBatch::Conv {
                axis: 1,
                whitened,
                samples: 2,
                height: 4,
                width: 4,
                reducer,
            }];
            let analytic = alignment_gradient(&q, &batches).unwrap();
            // Tiny h keeps argmax selections stable across the probe.
            let numeric = check::finite_difference_grad(&q, 1e-7, |qc| {
                Ok(-alignment_objective(qc, &batches)?)
            })
            .unwrap();
            let err = check::max_relative_error(analytic.data(), &numeric);
            assert!(err < 1e-4, "{:?}: relative error {}", reducer, err);
        }
    }

    #[test]
    fn momentum_formula() {
        let mut state = RotationState::identity(2, 1).unwrap();
        state.beta = 0.9;
        let g = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        state.momentum_update(&g).unwrap();
        for (m, gv) in state.grad_momentum.data().iter().zip(g.data()) {
            assert!((m - 0.1 * gv).abs() < 1e-15);
        }

        let mut state = RotationState::identity(2, 1).unwrap();
        state.beta = 0.0;
        state.momentum_update(&g).unwrap();
        assert_eq!(state.grad_momentum.data(), g.data());
    }

    #[test]
    fn momentum_converges_to_constant_stream() {
        let mut state = RotationState::identity(2, 1).unwrap();
        state.beta = 0.9;
        let g = Tensor::from_vec(&[2, 2], vec![0.5, -0.25, 1.5, 0.0]).unwrap();
        for _ in 0..150 {
            state.momentum_update(&g).unwrap();
        }
        for (m, gv) in state.grad_momentum.data().iter().zip(g.data()) {
            assert!((m - gv).abs() < 1e-6);
        }
    }

    #[test]
    fn cayley_step_with_zero_gradient_is_identity_map() {
        let mut rng = check::rng(2);
        let q = check::random_orthogonal(3, &mut rng);
        let next = cayley_step(&q, &Tensor::zeros(&[3, 3]), 0.7).unwrap();
        for (a, b) in next.data().iter().zip(q.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn cayley_matches_closed_form_rotation_in_2d() {
        // With Q = I and A = [[0, a], [-a, 0]], the Cayley map is the plane
        // rotation by angle 2·atan(ηa/2).
        let a = 0.8;
        let eta = 0.5;
        // Choose G′ so that A = G′Qᵀ − QG′ᵀ equals [[0, a], [-a, 0]].
        let gm = Tensor::from_vec(&[2, 2], vec![0.0, a / 2.0, -a / 2.0, 0.0]).unwrap();
        let q = Tensor::eye(2);
        let next = cayley_step(&q, &gm, eta).unwrap();
        let theta = 2.0 * (eta * a / 2.0).atan();
        let expect = [theta.cos(), -theta.sin(), theta.sin(), theta.cos()];
        for (got, want) in next.data().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12, "{} vs {}", got, want);
        }
    }

    #[test]
    fn cayley_preserves_orthogonality() {
        let mut rng = check::rng(41);
        let q = check::random_orthogonal(6, &mut rng);
        let gm = check::random_matrix(6, 6, &mut rng);
        let next = cayley_step(&q, &gm, 0.3).unwrap();
        assert!(linalg::orthogonality_error(&next).unwrap() < 1e-10);
    }

    #[test]
    fn search_decreases_toy_objective() {
        // Maximize alignment of q_0 with a fixed direction, i.e. minimize the
        // negated objective; one accepted step must strictly decrease it.
        let mut rng = check::rng(7);
        let q = check::random_orthogonal(2, &mut rng);
        let target = vector_batch(0, &[&[0.9, 0.1], &[0.8, 0.3]]);
        let batches = vec![target];
        let grad = alignment_gradient(&q, &batches).unwrap();
        let outcome = curvilinear_search(&q, &grad, &SearchParams::default(), |qc| {
            Ok(-alignment_objective(qc, &batches)?)
        })
        .unwrap();
        let f0 = -alignment_objective(&q, &batches).unwrap();
        assert!(!outcome.exhausted);
        assert!(outcome.objective < f0);
    }

    #[test]
    fn search_with_zero_momentum_returns_initial_step() {
        let q = Tensor::eye(3);
        let params = SearchParams::default();
        let outcome =
            curvilinear_search(&q, &Tensor::zeros(&[3, 3]), &params, |_| Ok(1.25)).unwrap();
        assert_eq!(outcome.eta, params.initial_step);
        assert_eq!(outcome.q_next.data(), q.data());
        assert_eq!(outcome.objective, 1.25);
        assert!(!outcome.exhausted);
    }

    #[test]
    fn search_halts_within_budget_on_adversarial_objective() {
        // Objective increases along every candidate: the search must exhaust
        // its budget, flag it, and still return the smallest tried step.
        let mut rng = check::rng(13);
        let q = check::random_orthogonal(3, &mut rng);
        let gm = check::random_matrix(3, 3, &mut rng);
        let mut calls = 0usize;
        let outcome = curvilinear_search(&q, &gm, &SearchParams::default(), |qc| {
            calls += 1;
            // Distance from the start grows with step size, so this rewards
            // only the (rejected) zero step.
            let mut dist = 0.0;
            for (a, b) in qc.data().iter().zip(q.data()) {
                dist += (a - b).abs();
            }
            Ok(dist)
        })
        .unwrap();
        assert!(outcome.exhausted);
        assert!(calls <= 22);
        assert!(outcome.eta <= SearchParams::default().initial_step * 0.5f64.powi(20) * 2.0);
    }

    #[test]
    fn two_dim_alignment_matches_angle_sweep() {
        // One concept whose whitened mean points 30 degrees off axis. Sweep
        // all rotations in 0.001-radian steps as the brute-force oracle, then
        // run momentum + curvilinear search to convergence.
        let angle = std::f64::consts::PI / 6.0;
        let mean = [angle.cos(), angle.sin()];
        let cols: Vec<Vec<f64>> = vec![
            vec![mean[0] * 1.2, mean[1] * 1.2],
            vec![mean[0] * 0.8, mean[1] * 0.8],
            vec![mean[0], mean[1]],
        ];
        let col_refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let batch = vector_batch(0, &col_refs);
        let batches = vec![batch];

        // Brute force over q_0 = (cos t, sin t).
        let mut best_obj = f64::NEG_INFINITY;
        let mut best_angle = 0.0;
        let mut t = 0.0;
        while t < std::f64::consts::TAU {
            let q = Tensor::from_vec(&[2, 2], vec![t.cos(), -t.sin(), t.sin(), t.cos()]).unwrap();
            let obj = alignment_objective(&q, &batches).unwrap();
            if obj > best_obj {
                best_obj = obj;
                best_angle = t;
            }
            t += 0.001;
        }
        assert!((best_angle - angle).abs() < 2e-3);

        let mut state = RotationState::identity(2, 1).unwrap();
        for _ in 0..200 {
            let grad = alignment_gradient(&state.q, &batches).unwrap();
            state.momentum_update(&grad).unwrap();
            let outcome = curvilinear_search(
                &state.q,
                &state.grad_momentum,
                &SearchParams::default(),
                |qc| Ok(-alignment_objective(qc, &batches)?),
            )
            .unwrap();
            state.q = outcome.q_next;
        }
        let final_obj = alignment_objective(&state.q, &batches).unwrap();
        assert!(
            (final_obj - best_obj).abs() < 1e-4,
            "optimizer {} vs sweep {}",
            final_obj,
            best_obj
        );
        let q0_angle = state.q.at2(1, 0).atan2(state.q.at2(0, 0));
        assert!(
            (q0_angle - angle).abs() < 0.01,
            "angle {} vs planted {}",
            q0_angle,
            angle
        );
    }
}
