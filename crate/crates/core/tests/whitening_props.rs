//! Property tests for the whitening identities: the defining covariance
//! property in exact mode, rotation freedom, Newton convergence, and the
//! reshape round trip.

use proptest::prelude::*;

use cw_core::check;
use cw_core::linalg;
use cw_core::numerics::Tensor;
use cw_core::whitening::{zca_exact, zca_newton, Mode, WhiteningState, WhitenSolver};

fn exact_state(dim: usize) -> WhiteningState {
    WhiteningState::new(dim)
        .with_solver(WhitenSolver::Exact)
        .with_eps(0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Exact mode: cov(apply(Z)) = I within 1e-8 for any full-rank batch
    /// with n > d.
    #[test]
    fn exact_whitening_defining_property(seed in 0u64..10_000, d in 2usize..6) {
        let mut rng = check::rng(seed);
        let n = d * 10 + 8;
        let z = check::random_matrix(d, n, &mut rng);
        let mut state = exact_state(d);
        let out = state.apply(&z, Mode::Train).unwrap();
        let err = check::covariance_identity_error(&out).unwrap();
        prop_assert!(err < 1e-8, "covariance error {}", err);
    }

    /// Rotation freedom: Qᵀ·apply(Z) is still perfectly whitened for any
    /// orthogonal Q.
    #[test]
    fn rotation_freedom(seed in 0u64..10_000, d in 2usize..6) {
        let mut rng = check::rng(seed);
        let n = d * 10 + 8;
        let z = check::random_matrix(d, n, &mut rng);
        let q = check::random_orthogonal(d, &mut rng);
        let mut state = exact_state(d);
        let whitened = state.apply(&z, Mode::Train).unwrap();
        let rotated = q.transpose().unwrap().matmul(&whitened).unwrap();
        let err = check::covariance_identity_error(&rotated).unwrap();
        prop_assert!(err < 1e-8, "covariance error {}", err);
    }

    /// The fitted whitener stays symmetric.
    #[test]
    fn whitener_symmetry(seed in 0u64..10_000, d in 2usize..6) {
        let mut rng = check::rng(seed);
        let sigma = check::random_spd(d, 20.0, &mut rng);
        let w = zca_exact(&sigma).unwrap();
        prop_assert!(linalg::symmetry_error(&w).unwrap() <= 1e-8);
    }

    /// The conv reshape and its inverse round-trip bit-exactly.
    #[test]
    fn conv_reshape_round_trip(
        n in 1usize..4,
        d in 1usize..5,
        h in 1usize..6,
        w in 1usize..6,
        seed in 0u64..10_000,
    ) {
        let mut rng = check::rng(seed);
        let data: Vec<f64> = (0..n * d * h * w).map(|_| check::normal(&mut rng)).collect();
        let x = Tensor::from_vec(&[n, d, h, w], data).unwrap();
        let m = x.conv_to_matrix().unwrap();
        prop_assert_eq!(m.shape(), &[d, h * w * n]);
        let back = m.matrix_to_conv(n, h, w).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }
}

/// Newton error versus exact ZCA is monotonically non-increasing in T per
/// eigendirection. The difference matrix is symmetric with eigenvalues
/// σ_k^{-1/2} − p_T(σ_k) ≥ 0, so the spectral norm is the right monotone
/// quantity; the entrywise max-norm can wiggle from sign cancellation across
/// eigendirections (observed on random dense Σ), and coincides with the
/// spectral norm only for diagonal Σ.
#[test]
fn newton_error_non_increasing_spectral() {
    for seed in 0..40u64 {
        let mut rng = check::rng(seed);
        let d = 2 + (seed % 6) as usize;
        let cond = 1.5 + (seed % 30) as f64;
        let sigma = check::random_spd(d, cond, &mut rng);
        let exact = zca_exact(&sigma).unwrap();
        let mut prev = f64::INFINITY;
        for t in 1..=10 {
            let newton = zca_newton(&sigma, t).unwrap();
            let diff = newton.sub(&exact).unwrap();
            let (eigenvalues, _) = linalg::eigh(&diff.add(&diff.transpose().unwrap()).unwrap().scale(0.5)).unwrap();
            let spectral = eigenvalues
                .iter()
                .fold(0.0_f64, |m, &v| m.max(v.abs()));
            // Below ~1e-9 the difference is dominated by the rounding floor
            // of zca_exact and the eigensolver; monotonicity is only
            // meaningful above it.
            if prev > 1e-9 {
                assert!(
                    spectral <= prev + 1e-11,
                    "seed {} T {}: spectral error rose {} -> {}",
                    seed,
                    t,
                    prev,
                    spectral
                );
            }
            prev = spectral;
        }
    }
}

#[test]
fn newton_error_non_increasing_max_norm_on_diagonal() {
    for seed in 0..40u64 {
        let mut rng = check::rng(1_000 + seed);
        let d = 2 + (seed % 6) as usize;
        let mut diag = vec![0.0; d * d];
        for i in 0..d {
            diag[i * d + i] = 0.05 + check::normal(&mut rng).abs();
        }
        let sigma = Tensor::from_vec(&[d, d], diag).unwrap();
        let exact = zca_exact(&sigma).unwrap();
        let mut prev = f64::INFINITY;
        for t in 1..=10 {
            let newton = zca_newton(&sigma, t).unwrap();
            let err = newton.sub(&exact).unwrap().max_abs();
            assert!(
                err <= prev + 1e-12,
                "seed {} T {}: max-norm error rose {} -> {}",
                seed,
                t,
                prev,
                err
            );
            prev = err;
        }
    }
}

/// Differentiability invariant: gradients of a scalar function of
/// apply(Z) with respect to Z match finite differences within 1e-4.
#[test]
fn train_mode_apply_is_differentiable() {
    use cw_core::numerics::backward;
    for seed in 0..5u64 {
        let mut rng = check::rng(40 + seed);
        let d = 3;
        let n = 10;
        let data: Vec<f64> = (0..d * n).map(|_| check::normal(&mut rng)).collect();
        let z = Tensor::parameter(&[d, n], data).unwrap();
        let run = |z: &Tensor| -> Tensor {
            let mut state = WhiteningState::new(d);
            let out = state.apply(z, Mode::Train).unwrap();
            out.mul(&out).unwrap().sum_all()
        };
        let grads = backward(&run(&z)).unwrap();
        let analytic = grads.get_or_zero(&z);
        let numeric = check::finite_difference_grad(&z, 1e-4, |probe| {
            let fresh = Tensor::parameter(probe.shape(), probe.data().to_vec()).unwrap();
            run(&fresh).item()
        })
        .unwrap();
        let err = check::max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "seed {}: gradient error {:.3e}", seed, err);
    }
}
