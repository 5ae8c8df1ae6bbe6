//! Measurement helpers used by tests and the acceptance suite: central
//! finite differences, covariance of a batch, and seeded random matrices.
//! These deliberately avoid the autodiff path so they can serve as
//! independent oracles for it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::Tensor;

/// Central finite-difference gradient of `f` with respect to `x`.
pub fn finite_difference_grad<F>(x: &Tensor, h: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut grad = vec![0.0; x.numel()];
    for i in 0..x.numel() {
        let mut plus = x.data().to_vec();
        let mut minus = x.data().to_vec();
        plus[i] += h;
        minus[i] -= h;
        let fp = f(&Tensor::from_vec(x.shape(), plus)?)?;
        let fm = f(&Tensor::from_vec(x.shape(), minus)?)?;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Largest relative deviation between an analytic gradient and its
/// finite-difference estimate, with an absolute floor for near-zero entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0_f64, f64::max)
}

/// Empirical covariance `(1/n)(Z−μ1ᵀ)(Z−μ1ᵀ)ᵀ` of a `d×n` batch, computed
/// with an explicit two-pass loop.
pub fn covariance(z: &Tensor) -> Result<Tensor> {
    let (d, n) = z.dims2()?;
    let data = z.data();
    let mut mean = vec![0.0; d];
    for i in 0..d {
        for j in 0..n {
            mean[i] += data[i * n + j];
        }
        mean[i] /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        for k in i..d {
            let mut acc = 0.0;
            for j in 0..n {
                acc += (data[i * n + j] - mean[i]) * (data[k * n + j] - mean[k]);
            }
            let v = acc / n as f64;
            cov[i * d + k] = v;
            cov[k * d + i] = v;
        }
    }
    Tensor::from_vec(&[d, d], cov)
}

/// `‖cov(Z) − I‖_max` of a `d×n` batch.
pub fn covariance_identity_error(z: &Tensor) -> Result<f64> {
    let cov = covariance(z)?;
    let (d, _) = cov.dims2()?;
    let mut err = 0.0_f64;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            err = err.max((cov.data()[i * d + j] - target).abs());
        }
    }
    Ok(err)
}

/// Standard normal draw via Box–Muller, fully determined by the generator.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.random();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.random();
        return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    }
}

/// `d×n` matrix of independent standard normals.
pub fn random_matrix(d: usize, n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data: Vec<f64> = (0..d * n).map(|_| normal(rng)).collect();
    Tensor::from_vec(&[d, n], data).expect("shape matches data")
}

/// Haar-ish random orthogonal matrix via Gram–Schmidt on a Gaussian matrix.
pub fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Tensor {
    loop {
        let g = random_matrix(d, d, rng);
        if let Some(q) = gram_schmidt(&g) {
            return q;
        }
    }
}

fn gram_schmidt(m: &Tensor) -> Option<Tensor> {
    let (d, _) = m.dims2().ok()?;
    let src = m.data();
    let mut cols: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..d).map(|i| src[i * d + j]).collect())
        .collect();
    for j in 0..d {
        for prev in 0..j {
            let dot: f64 = (0..d).map(|i| cols[j][i] * cols[prev][i]).sum();
            for i in 0..d {
                cols[j][i] -= dot * cols[prev][i];
            }
        }
        let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-10 {
            return None;
        }
        for v in cols[j].iter_mut() {
            *v /= norm;
        }
    }
    let mut data = vec![0.0; d * d];
    for j in 0..d {
        for i in 0..d {
            data[i * d + j] = cols[j][i];
        }
    }
    Some(Tensor::from_vec(&[d, d], data).expect("square"))
}

/// Random symmetric positive-definite matrix with the requested condition
/// number: log-spaced eigenvalues in `[1/cond, 1]` in a Haar-random basis.
pub fn random_spd(d: usize, cond: f64, rng: &mut ChaCha8Rng) -> Tensor {
    assert!(cond >= 1.0);
    let q = random_orthogonal(d, rng);
    let mut eig = vec![0.0; d * d];
    for i in 0..d {
        let frac = if d == 1 { 0.0 } else { i as f64 / (d - 1) as f64 };
        // from 1 down to 1/cond, log-spaced
        eig[i * d + i] = (-frac * cond.ln()).exp();
    }
    let eig = Tensor::from_vec(&[d, d], eig).expect("square");
    let half = q.matmul(&eig).expect("shapes agree");
    let spd = half.matmul(&q.transpose().expect("square")).expect("shapes agree");
    // Symmetrize away the last few ulps so eigh accepts it unconditionally.
    let (dd, _) = spd.dims2().expect("square");
    let mut data = spd.data().to_vec();
    for i in 0..dd {
        for j in (i + 1)..dd {
            let v = 0.5 * (data[i * dd + j] + data[j * dd + i]);
            data[i * dd + j] = v;
            data[j * dd + i] = v;
        }
    }
    Tensor::from_vec(&[dd, dd], data).expect("square")
}

/// Seeded generator for tests.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// FNV-1a over the bit patterns of a parameter list; used to detect whether
/// any value changed between training steps.
pub fn params_fingerprint<'a, I>(tensors: I) -> u64
where
    I: IntoIterator<Item = &'a Tensor>,
{
    let mut hash: u64 = 0xcbf29ce484222325;
    for t in tensors {
        for v in t.data() {
            for byte in v.to_bits().to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        }
    }
    hash
}
