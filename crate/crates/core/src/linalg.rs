//! Small dense linear-algebra kernels outside the autodiff graph.
//!
//! Everything here is for d ≤ a few dozen: cyclic Jacobi for symmetric
//! eigenproblems, LU with partial pivoting for the Cayley solve, and a polar
//! projection used to repair orthogonality drift. Results are deterministic.

use crate::error::{CwError, Result};
use crate::numerics::Tensor;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues ascending and the matrix of matching eigenvectors as
/// columns.
pub fn eigh(matrix: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let (d, c) = matrix.dims2()?;
    if d != c {
        return Err(CwError::Dimension(format!(
            "eigh of non-square {:?}",
            matrix.shape()
        )));
    }
    let sym_err = symmetry_error(matrix)?;
    let scale = matrix.max_abs().max(1.0);
    if sym_err > 1e-8 * scale {
        return Err(CwError::Contract(format!(
            "eigh requires a symmetric matrix, asymmetry {:.3e}",
            sym_err
        )));
    }

    let mut a = matrix.data().to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }

    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += a[p * d + q] * a[p * d + q];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let cos = 1.0 / (1.0 + t * t).sqrt();
                let sin = t * cos;

                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = cos * akp - sin * akq;
                    a[k * d + q] = sin * akp + cos * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = cos * apk - sin * aqk;
                    a[q * d + k] = sin * apk + cos * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = cos * vkp - sin * vkq;
                    v[k * d + q] = sin * vkp + cos * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[i * d + i].partial_cmp(&a[j * d + j]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * d + i]).collect();
    let mut vectors = vec![0.0; d * d];
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..d {
            vectors[k * d + new_col] = v[k * d + old_col];
        }
    }
    Ok((eigenvalues, Tensor::from_vec(&[d, d], vectors)?))
}

/// Solve `A X = B` by LU with partial pivoting. `A` is square; `B` may have
/// any number of right-hand-side columns.
pub fn solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (d, c) = a.dims2()?;
    if d != c {
        return Err(CwError::Dimension(format!(
            "solve with non-square {:?}",
            a.shape()
        )));
    }
    let (br, bc) = b.dims2()?;
    if br != d {
        return Err(CwError::Dimension(format!(
            "solve: rhs rows {} do not match system size {}",
            br, d
        )));
    }

    let mut lu = a.data().to_vec();
    let mut x = b.data().to_vec();
    for col in 0..d {
        let mut pivot_row = col;
        let mut pivot_val = lu[col * d + col].abs();
        for r in (col + 1)..d {
            let v = lu[r * d + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val < 1e-300 {
            return Err(CwError::StepSize(format!(
                "singular system at column {}",
                col
            )));
        }
        if pivot_row != col {
            for j in 0..d {
                lu.swap(col * d + j, pivot_row * d + j);
            }
            for j in 0..bc {
                x.swap(col * bc + j, pivot_row * bc + j);
            }
        }
        let inv_pivot = 1.0 / lu[col * d + col];
        for r in (col + 1)..d {
            let factor = lu[r * d + col] * inv_pivot;
            if factor == 0.0 {
                continue;
            }
            lu[r * d + col] = factor;
            for j in (col + 1)..d {
                lu[r * d + j] -= factor * lu[col * d + j];
            }
            for j in 0..bc {
                x[r * bc + j] -= factor * x[col * bc + j];
            }
        }
    }
    for col in (0..d).rev() {
        let inv_pivot = 1.0 / lu[col * d + col];
        for j in 0..bc {
            x[col * bc + j] *= inv_pivot;
        }
        for r in 0..col {
            let factor = lu[r * d + col];
            if factor == 0.0 {
                continue;
            }
            for j in 0..bc {
                x[r * bc + j] -= factor * x[col * bc + j];
            }
        }
    }
    Tensor::from_vec(&[d, bc], x)
}

/// Nearest orthogonal matrix in the polar sense: `Q (QᵀQ)^{-1/2}`.
pub fn polar_orthogonalize(q: &Tensor) -> Result<Tensor> {
    let qtq = q.transpose()?.matmul(q)?;
    let (eigenvalues, vectors) = eigh(&qtq)?;
    if eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(CwError::Conditioning(
            "polar projection of a rank-deficient matrix".into(),
        ));
    }
    let d = eigenvalues.len();
    let mut inv_sqrt = vec![0.0; d * d];
    for i in 0..d {
        inv_sqrt[i * d + i] = 1.0 / eigenvalues[i].sqrt();
    }
    let inv_sqrt = Tensor::from_vec(&[d, d], inv_sqrt)?;
    let correction = vectors
        .matmul(&inv_sqrt)?
        .matmul(&vectors.transpose()?)?;
    q.matmul(&correction)
}

/// `‖M − Mᵀ‖_max` of a square matrix.
pub fn symmetry_error(m: &Tensor) -> Result<f64> {
    let (d, c) = m.dims2()?;
    if d != c {
        return Err(CwError::Dimension(format!(
            "symmetry_error of non-square {:?}",
            m.shape()
        )));
    }
    let data = m.data();
    let mut err = 0.0_f64;
    for i in 0..d {
        for j in (i + 1)..d {
            err = err.max((data[i * d + j] - data[j * d + i]).abs());
        }
    }
    Ok(err)
}

/// `‖QᵀQ − I‖_max`, the orthogonality defect.
pub fn orthogonality_error(q: &Tensor) -> Result<f64> {
    let (d, c) = q.dims2()?;
    if d != c {
        return Err(CwError::Dimension(format!(
            "orthogonality_error of non-square {:?}",
            q.shape()
        )));
    }
    let qtq = q.transpose()?.matmul(q)?;
    let data = qtq.data();
    let mut err = 0.0_f64;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            err = err.max((data[i * d + j] - target).abs());
        }
    }
    Ok(err)
}
