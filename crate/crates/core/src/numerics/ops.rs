//! Differentiable tensor operations.
//!
//! Every op computes its forward value eagerly and registers a backward rule
//! capturing exactly what the vector-Jacobian product needs. Reductions run
//! in fixed left-to-right order so results are bit-reproducible.

use crate::error::{CwError, Result};

use super::tensor::Tensor;

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CwError::Dimension(format!(
            "{}: shapes {:?} and {:?} differ",
            op,
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn col_vector_for(a: &Tensor, v: &Tensor, op: &str) -> Result<(usize, usize)> {
    let (rows, cols) = a.dims2()?;
    let (vr, vc) = v.dims2()?;
    if vr != rows || vc != 1 {
        return Err(CwError::Dimension(format!(
            "{}: expected {}x1 column vector, got {:?}",
            op,
            rows,
            v.shape()
        )));
    }
    Ok((rows, cols))
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "add")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g| vec![g.to_vec(), g.to_vec()]),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "sub")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g| vec![g.to_vec(), g.iter().map(|v| -v).collect()]),
        ))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "mul")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a * b)
            .collect();
        let a = self.data().to_vec();
        let b = other.data().to_vec();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                vec![
                    g.iter().zip(&b).map(|(g, b)| g * b).collect(),
                    g.iter().zip(&a).map(|(g, a)| g * a).collect(),
                ]
            }),
        ))
    }

    pub fn neg(&self) -> Tensor {
        let data = self.data().iter().map(|v| -v).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g| vec![g.iter().map(|v| -v).collect()]),
        )
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| vec![g.iter().map(|v| v * c).collect()]),
        )
    }

    /// Add a constant to every element.
    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|v| v + c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g| vec![g.to_vec()]),
        )
    }

    /// Elementwise square root. Caller guarantees non-negative inputs.
    pub fn sqrt_elem(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| v.sqrt()).collect();
        let saved = out.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(&saved)
                    .map(|(g, s)| g * 0.5 / s)
                    .collect()]
            }),
        )
    }

    /// Elementwise reciprocal. Caller guarantees nonzero inputs.
    pub fn recip(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| 1.0 / v).collect();
        let saved = out.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(&saved)
                    .map(|(g, r)| -g * r * r)
                    .collect()]
            }),
        )
    }

    pub fn relu(&self) -> Tensor {
        let data = self.data().iter().map(|v| v.max(0.0)).collect();
        let mask: Vec<bool> = self.data().iter().map(|v| *v > 0.0).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(&mask)
                    .map(|(g, m)| if *m { *g } else { 0.0 })
                    .collect()]
            }),
        )
    }

    /// Standard matrix product of rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(CwError::Dimension(format!(
                "matmul: inner extents {} and {} differ",
                k, k2
            )));
        }
        let a = self.data();
        let b = other.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = a[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        let a_saved = a.to_vec();
        let b_saved = b.to_vec();
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                // dA = g Bᵀ, dB = Aᵀ g
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * b_saved[p * n + j];
                        }
                        da[i * k + p] = acc;
                    }
                }
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for i in 0..m {
                        let aip = a_saved[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
                vec![da, db]
            }),
        ))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let src = self.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(Tensor::from_op(
            vec![c, r],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gt = vec![0.0; r * c];
                for j in 0..c {
                    for i in 0..r {
                        gt[i * c + j] = g[j * r + i];
                    }
                }
                vec![gt]
            }),
        ))
    }

    /// Row means of a rank-2 tensor (mean over columns), as a column vector.
    pub fn mean_cols(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if c == 0 {
            return Err(CwError::Dimension("mean_cols on empty matrix".into()));
        }
        let src = self.data();
        let mut out = vec![0.0; r];
        for i in 0..r {
            let mut acc = 0.0;
            for j in 0..c {
                acc += src[i * c + j];
            }
            out[i] = acc / c as f64;
        }
        Ok(Tensor::from_op(
            vec![r, 1],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let inv = 1.0 / c as f64;
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let gi = g[i] * inv;
                    for j in 0..c {
                        gx[i * c + j] = gi;
                    }
                }
                vec![gx]
            }),
        ))
    }

    /// Subtract a column vector from every column.
    pub fn sub_col(&self, v: &Tensor) -> Result<Tensor> {
        let (r, c) = col_vector_for(self, v, "sub_col")?;
        let src = self.data();
        let vv = v.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = src[i * c + j] - vv[i];
            }
        }
        Ok(Tensor::from_op(
            vec![r, c],
            out,
            vec![self.clone(), v.clone()],
            Box::new(move |g| {
                let mut gv = vec![0.0; r];
                for i in 0..r {
                    let mut acc = 0.0;
                    for j in 0..c {
                        acc += g[i * c + j];
                    }
                    gv[i] = -acc;
                }
                vec![g.to_vec(), gv]
            }),
        ))
    }

    /// Add a column vector to every column.
    pub fn add_col(&self, v: &Tensor) -> Result<Tensor> {
        let (r, c) = col_vector_for(self, v, "add_col")?;
        let src = self.data();
        let vv = v.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = src[i * c + j] + vv[i];
            }
        }
        Ok(Tensor::from_op(
            vec![r, c],
            out,
            vec![self.clone(), v.clone()],
            Box::new(move |g| {
                let mut gv = vec![0.0; r];
                for i in 0..r {
                    let mut acc = 0.0;
                    for j in 0..c {
                        acc += g[i * c + j];
                    }
                    gv[i] = acc;
                }
                vec![g.to_vec(), gv]
            }),
        ))
    }

    /// Multiply every column elementwise by a column vector.
    pub fn mul_col(&self, v: &Tensor) -> Result<Tensor> {
        let (r, c) = col_vector_for(self, v, "mul_col")?;
        let src = self.data().to_vec();
        let vv = v.data().to_vec();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = src[i * c + j] * vv[i];
            }
        }
        let a_saved = src;
        let v_saved = vv;
        Ok(Tensor::from_op(
            vec![r, c],
            out,
            vec![self.clone(), v.clone()],
            Box::new(move |g| {
                let mut ga = vec![0.0; r * c];
                let mut gv = vec![0.0; r];
                for i in 0..r {
                    let mut acc = 0.0;
                    for j in 0..c {
                        ga[i * c + j] = g[i * c + j] * v_saved[i];
                        acc += g[i * c + j] * a_saved[i * c + j];
                    }
                    gv[i] = acc;
                }
                vec![ga, gv]
            }),
        ))
    }

    /// Multiply every element by a one-element tensor (the scalar stays on
    /// the graph, unlike `scale`).
    pub fn mul_scalar(&self, s: &Tensor) -> Result<Tensor> {
        if s.numel() != 1 {
            return Err(CwError::Dimension(format!(
                "mul_scalar: scalar operand has shape {:?}",
                s.shape()
            )));
        }
        let sv = s.data()[0];
        let data = self.data().iter().map(|v| v * sv).collect();
        let a_saved = self.data().to_vec();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), s.clone()],
            Box::new(move |g| {
                let ga = g.iter().map(|g| g * sv).collect();
                let mut gs = 0.0;
                for (g, a) in g.iter().zip(&a_saved) {
                    gs += g * a;
                }
                vec![ga, vec![gs]]
            }),
        ))
    }

    /// Sum of all elements, left to right.
    pub fn sum_all(&self) -> Tensor {
        let mut acc = 0.0;
        for v in self.data() {
            acc += v;
        }
        let numel = self.numel();
        let shape = self.shape().to_vec();
        Tensor::from_op(
            vec![1],
            vec![acc],
            vec![self.clone()],
            Box::new(move |g| {
                let _ = &shape;
                vec![vec![g[0]; numel]]
            }),
        )
    }

    /// Mean of all elements.
    pub fn mean_all(&self) -> Tensor {
        let numel = self.numel();
        self.sum_all().scale(1.0 / numel as f64)
    }

    /// Trace of a square rank-2 tensor.
    pub fn trace(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if r != c {
            return Err(CwError::Dimension(format!(
                "trace of non-square {:?}",
                self.shape()
            )));
        }
        let mut acc = 0.0;
        for i in 0..r {
            acc += self.data()[i * c + i];
        }
        Ok(Tensor::from_op(
            vec![1],
            vec![acc],
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    gx[i * c + i] = g[0];
                }
                vec![gx]
            }),
        ))
    }

    /// First `k` rows of a rank-2 tensor.
    pub fn take_rows(&self, k: usize) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if k > r {
            return Err(CwError::Dimension(format!(
                "take_rows: {} rows requested from {}",
                k, r
            )));
        }
        let out = self.data()[..k * c].to_vec();
        Ok(Tensor::from_op(
            vec![k, c],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; r * c];
                gx[..k * c].copy_from_slice(g);
                vec![gx]
            }),
        ))
    }

    /// Frobenius norm (no gradient participation needed; detached helper).
    pub fn frobenius_norm(&self) -> f64 {
        self.data().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Max-abs entry.
    pub fn max_abs(&self) -> f64 {
        self.data().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}
