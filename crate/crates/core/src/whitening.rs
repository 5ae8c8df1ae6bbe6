//! Batch whitening: sample moments, the symmetric ZCA whitener (exact via
//! eigendecomposition, approximate via Newton iterations for training), and
//! running estimates maintained by exponential moving average.

use crate::error::{CwError, Result};
use crate::linalg;
use crate::numerics::Tensor;

/// How the whitening matrix is computed.
///
/// `Newton` is the training path: a polynomial iteration on the graph, fully
/// differentiable. `Exact` diagonalizes the covariance, which is precise but
/// not differentiable; it always treats the batch statistics as constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WhitenSolver {
    Exact,
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Mean and whitener for one normalization site, with both the latest batch
/// values and their running averages.
#[derive(Debug, Clone)]
pub struct WhiteningState {
    pub dim: usize,
    pub eps: f64,
    pub ema_momentum: f64,
    pub newton_iters: usize,
    pub solver: WhitenSolver,
    /// When set, batch statistics are treated as constants during
    /// backpropagation instead of being differentiated through.
    pub stop_gradient: bool,
    pub batch_mean: Tensor,
    pub batch_whitener: Tensor,
    pub running_mean: Tensor,
    pub running_whitener: Tensor,
}

impl WhiteningState {
    pub fn new(dim: usize) -> WhiteningState {
        WhiteningState {
            dim,
            eps: 1e-5,
            ema_momentum: 0.9,
            newton_iters: 5,
            solver: WhitenSolver::Newton,
            stop_gradient: false,
            batch_mean: Tensor::zeros(&[dim, 1]),
            batch_whitener: Tensor::eye(dim),
            running_mean: Tensor::zeros(&[dim, 1]),
            running_whitener: Tensor::eye(dim),
        }
    }

    pub fn with_eps(mut self, eps: f64) -> WhiteningState {
        self.eps = eps;
        self
    }

    pub fn with_momentum(mut self, momentum: f64) -> WhiteningState {
        self.ema_momentum = momentum;
        self
    }

    pub fn with_newton_iters(mut self, iters: usize) -> WhiteningState {
        self.newton_iters = iters;
        self
    }

    pub fn with_solver(mut self, solver: WhitenSolver) -> WhiteningState {
        self.solver = solver;
        self
    }

    pub fn with_stop_gradient(mut self, stop: bool) -> WhiteningState {
        self.stop_gradient = stop;
        self
    }

    fn check_dim(&self, z: &Tensor) -> Result<usize> {
        let (d, n) = z.dims2()?;
        if d != self.dim {
            return Err(CwError::Dimension(format!(
                "whitening state has dim {}, input has {}",
                self.dim, d
            )));
        }
        Ok(n)
    }

    /// Whiten a `d×n` batch.
    ///
    /// Train mode fits mean and whitener to this batch, records the
    /// computation for backpropagation (unless `stop_gradient` or the exact
    /// solver is selected), and stashes the fitted statistics in
    /// `batch_mean`/`batch_whitener`. Eval mode applies the running
    /// estimates and never touches state.
    pub fn apply(&mut self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Train => self.apply_train(z),
            Mode::Eval => self.apply_eval(z),
        }
    }

    fn apply_train(&mut self, z: &Tensor) -> Result<Tensor> {
        let n = self.check_dim(z)?;
        if n < 2 {
            return Err(CwError::DegenerateBatch(format!(
                "whitening needs n >= 2 samples, got {}",
                n
            )));
        }
        let through_stats = self.solver == WhitenSolver::Newton && !self.stop_gradient;
        let stats_input = if through_stats { z.clone() } else { z.detach() };
        let (mean, sigma) = batch_moments(&stats_input, self.eps)?;
        let whitener = match self.solver {
            WhitenSolver::Exact => zca_exact(&sigma.detach())?,
            WhitenSolver::Newton => zca_newton(&sigma, self.newton_iters)?,
        };
        self.batch_mean = mean.detach();
        self.batch_whitener = whitener.detach();
        let centered = z.sub_col(&mean)?;
        whitener.matmul(&centered)
    }

    /// Eval-mode whitening with the running estimates; stateless.
    pub fn apply_eval(&self, z: &Tensor) -> Result<Tensor> {
        self.check_dim(z)?;
        let centered = z.sub_col(&self.running_mean)?;
        self.running_whitener.matmul(&centered)
    }

    /// Fold a batch mean/whitener pair into the running estimates:
    /// `running ← momentum·running + (1−momentum)·batch`.
    pub fn ema_update(&mut self, batch_mean: &Tensor, batch_whitener: &Tensor) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return Err(CwError::Config(format!(
                "ema momentum {} outside [0, 1]",
                self.ema_momentum
            )));
        }
        let m = self.ema_momentum;
        self.running_mean = self
            .running_mean
            .scale(m)
            .add(&batch_mean.detach().scale(1.0 - m))?;
        self.running_whitener = self
            .running_whitener
            .scale(m)
            .add(&batch_whitener.detach().scale(1.0 - m))?;
        Ok(())
    }
}

/// Column mean and ridge-regularized covariance of a `d×n` batch:
/// `Σ = (1/n)(Z−μ1ᵀ)(Z−μ1ᵀ)ᵀ + eps·I`. Recorded on the graph when `z` is.
pub fn batch_moments(z: &Tensor, eps: f64) -> Result<(Tensor, Tensor)> {
    let (d, n) = z.dims2()?;
    if n < 2 {
        return Err(CwError::DegenerateBatch(format!(
            "covariance needs n >= 2 samples, got {}",
            n
        )));
    }
    let mean = z.mean_cols()?;
    let centered = z.sub_col(&mean)?;
    let sigma = centered
        .matmul(&centered.transpose()?)?
        .scale(1.0 / n as f64);
    let ridge = Tensor::eye(d).scale(eps);
    let sigma = sigma.add(&ridge)?;
    Ok((mean, sigma))
}

/// Exact symmetric ZCA whitener `W = D Λ^{-1/2} Dᵀ` from the
/// eigendecomposition of `Σ`. Not differentiable.
pub fn zca_exact(sigma: &Tensor) -> Result<Tensor> {
    let (eigenvalues, vectors) = linalg::eigh(&sigma.detach())?;
    let d = eigenvalues.len();
    if let Some(&bad) = eigenvalues.iter().find(|&&l| l <= 0.0) {
        return Err(CwError::Conditioning(format!(
            "covariance has non-positive eigenvalue {:.3e}",
            bad
        )));
    }
    let mut inv_sqrt = vec![0.0; d * d];
    for i in 0..d {
        inv_sqrt[i * d + i] = 1.0 / eigenvalues[i].sqrt();
    }
    let inv_sqrt = Tensor::from_vec(&[d, d], inv_sqrt)?;
    let w = vectors.matmul(&inv_sqrt)?.matmul(&vectors.transpose()?)?;
    // Make the symmetry exact rather than up-to-rounding.
    let wt = w.transpose()?;
    Ok(w.add(&wt)?.scale(0.5))
}

/// Newton–Schulz approximation of the inverse square root:
/// trace-normalize `Σ_N = Σ/tr(Σ)`, iterate
/// `P_{k+1} = (3P_k − P_k³ Σ_N)/2` from `P₀ = I`, and rescale
/// `W = P_T/√tr(Σ)`. The whole computation stays on the graph, so gradients
/// flow through the batch covariance.
pub fn zca_newton(sigma: &Tensor, iters: usize) -> Result<Tensor> {
    let (d, _) = sigma.dims2()?;
    let tr = sigma.trace()?;
    if tr.item()? <= 0.0 {
        return Err(CwError::Conditioning(format!(
            "covariance trace {:.3e} is not positive",
            tr.item()?
        )));
    }
    let sigma_n = sigma.mul_scalar(&tr.recip())?;
    let mut p = Tensor::eye(d);
    for _ in 0..iters {
        let p2 = p.matmul(&p)?;
        let p3 = p2.matmul(&p)?;
        p = p.scale(3.0).sub(&p3.matmul(&sigma_n)?)?.scale(0.5);
    }
    p.mul_scalar(&tr.sqrt_elem().recip())
}
