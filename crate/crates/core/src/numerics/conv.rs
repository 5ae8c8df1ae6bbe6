//! Convolution, pooling, layout permutations, and the classification loss.

use crate::error::{CwError, Result};

use super::tensor::Tensor;

impl Tensor {
    /// 2-D cross-correlation of an `n×c×h×w` input with an `oc×c×kh×kw`
    /// kernel, zero padding `pad`, square stride `stride`.
    pub fn conv2d(&self, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        let (oc, kc, kh, kw) = kernel.dims4()?;
        if kc != c {
            return Err(CwError::Dimension(format!(
                "conv2d: kernel expects {} channels, input has {}",
                kc, c
            )));
        }
        if stride == 0 {
            return Err(CwError::Dimension("conv2d: stride must be positive".into()));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(CwError::Dimension(format!(
                "conv2d: kernel {}x{} larger than padded input {}x{}",
                kh,
                kw,
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;

        let x = self.data();
        let k = kernel.data();
        let mut out = vec![0.0; n * oc * oh * ow];
        let in_idx = |i: usize, ch: usize, y: usize, xx: usize| ((i * c + ch) * h + y) * w + xx;
        let k_idx = |o: usize, ch: usize, y: usize, xx: usize| ((o * c + ch) * kh + y) * kw + xx;
        let out_idx = |i: usize, o: usize, y: usize, xx: usize| ((i * oc + o) * oh + y) * ow + xx;

        for i in 0..n {
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ch in 0..c {
                            for ky in 0..kh {
                                let iy = oy * stride + ky;
                                if iy < pad || iy >= h + pad {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = ox * stride + kx;
                                    if ix < pad || ix >= w + pad {
                                        continue;
                                    }
                                    acc += x[in_idx(i, ch, iy - pad, ix - pad)]
                                        * k[k_idx(o, ch, ky, kx)];
                                }
                            }
                        }
                        out[out_idx(i, o, oy, ox)] = acc;
                    }
                }
            }
        }

        let x_saved = x.to_vec();
        let k_saved = k.to_vec();
        Ok(Tensor::from_op(
            vec![n, oc, oh, ow],
            out,
            vec![self.clone(), kernel.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; n * c * h * w];
                let mut dk = vec![0.0; oc * c * kh * kw];
                for i in 0..n {
                    for o in 0..oc {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let go = g[((i * oc + o) * oh + oy) * ow + ox];
                                if go == 0.0 {
                                    continue;
                                }
                                for ch in 0..c {
                                    for ky in 0..kh {
                                        let iy = oy * stride + ky;
                                        if iy < pad || iy >= h + pad {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = ox * stride + kx;
                                            if ix < pad || ix >= w + pad {
                                                continue;
                                            }
                                            let xi = ((i * c + ch) * h + (iy - pad)) * w
                                                + (ix - pad);
                                            let ki = ((o * c + ch) * kh + ky) * kw + kx;
                                            dx[xi] += go * k_saved[ki];
                                            dk[ki] += go * x_saved[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                vec![dx, dk]
            }),
        ))
    }

    /// Add a per-channel bias to an `n×c×h×w` tensor.
    pub fn add_chan_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if bias.shape() != [c, 1] && bias.shape() != [c] {
            return Err(CwError::Dimension(format!(
                "add_chan_bias: bias shape {:?} does not match {} channels",
                bias.shape(),
                c
            )));
        }
        let x = self.data();
        let b = bias.data();
        let mut out = vec![0.0; x.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * h * w;
                for p in 0..h * w {
                    out[base + p] = x[base + p] + b[ch];
                }
            }
        }
        let bias_len = bias.numel();
        Ok(Tensor::from_op(
            vec![n, c, h, w],
            out,
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                let mut db = vec![0.0; bias_len];
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * h * w;
                        let mut acc = 0.0;
                        for p in 0..h * w {
                            acc += g[base + p];
                        }
                        db[ch] += acc;
                    }
                }
                vec![g.to_vec(), db]
            }),
        ))
    }

    /// Max pooling over `pool×pool` windows with stride `pool`, discarding
    /// ragged borders. Adjoints route to the argmax winner (first in raster
    /// order on ties).
    pub fn maxpool2d(&self, pool: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if pool == 0 || pool > h || pool > w {
            return Err(CwError::Dimension(format!(
                "maxpool2d: pool {} invalid for {}x{} input",
                pool, h, w
            )));
        }
        let oh = h / pool;
        let ow = w / pool;
        let x = self.data();
        let mut out = vec![0.0; n * c * oh * ow];
        let mut winners = vec![0usize; n * c * oh * ow];
        for i in 0..n {
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for py in 0..pool {
                            for px in 0..pool {
                                let idx = ((i * c + ch) * h + oy * pool + py) * w
                                    + ox * pool
                                    + px;
                                if x[idx] > best {
                                    best = x[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let oidx = ((i * c + ch) * oh + oy) * ow + ox;
                        out[oidx] = best;
                        winners[oidx] = best_idx;
                    }
                }
            }
        }
        let in_len = x.len();
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; in_len];
                for (go, &win) in g.iter().zip(&winners) {
                    dx[win] += go;
                }
                vec![dx]
            }),
        ))
    }

    /// Mean softmax cross-entropy of `C×m` logits (columns are samples)
    /// against integer labels.
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        let (classes, m) = self.dims2()?;
        if labels.len() != m {
            return Err(CwError::Dimension(format!(
                "softmax_cross_entropy: {} labels for {} samples",
                labels.len(),
                m
            )));
        }
        if m == 0 {
            return Err(CwError::DegenerateBatch(
                "softmax_cross_entropy on empty batch".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(CwError::Label(format!(
                "label {} out of range for {} classes",
                bad, classes
            )));
        }
        let z = self.data();
        // probs[c, j] computed stably; saved for the backward rule
        let mut probs = vec![0.0; classes * m];
        let mut loss = 0.0;
        for j in 0..m {
            let mut maxv = f64::NEG_INFINITY;
            for cc in 0..classes {
                maxv = maxv.max(z[cc * m + j]);
            }
            let mut denom = 0.0;
            for cc in 0..classes {
                denom += (z[cc * m + j] - maxv).exp();
            }
            let log_denom = denom.ln();
            for cc in 0..classes {
                probs[cc * m + j] = ((z[cc * m + j] - maxv) - log_denom).exp();
            }
            loss += log_denom - (z[labels[j] * m + j] - maxv);
        }
        loss /= m as f64;
        let labels = labels.to_vec();
        Ok(Tensor::from_op(
            vec![1],
            vec![loss],
            vec![self.clone()],
            Box::new(move |g| {
                let scale = g[0] / m as f64;
                let mut dz = vec![0.0; classes * m];
                for j in 0..m {
                    for cc in 0..classes {
                        let y = if labels[j] == cc { 1.0 } else { 0.0 };
                        dz[cc * m + j] = (probs[cc * m + j] - y) * scale;
                    }
                }
                vec![dz]
            }),
        ))
    }

    /// Reshape a convolution output `n×d×h×w` into the `d×(h·w·n)` matrix
    /// whose columns enumerate spatial positions in raster order, sample by
    /// sample. Exact inverse of [`Tensor::matrix_to_conv`].
    pub fn conv_to_matrix(&self) -> Result<Tensor> {
        let (n, d, h, w) = self.dims4()?;
        let hw = h * w;
        let cols = hw * n;
        let x = self.data();
        let mut out = vec![0.0; d * cols];
        for i in 0..n {
            for ch in 0..d {
                for p in 0..hw {
                    out[ch * cols + i * hw + p] = x[(i * d + ch) * hw + p];
                }
            }
        }
        Ok(Tensor::from_op(
            vec![d, cols],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; n * d * hw];
                for i in 0..n {
                    for ch in 0..d {
                        for p in 0..hw {
                            dx[(i * d + ch) * hw + p] = g[ch * cols + i * hw + p];
                        }
                    }
                }
                vec![dx]
            }),
        ))
    }

    /// Inverse of [`Tensor::conv_to_matrix`] for the given tensor extents.
    pub fn matrix_to_conv(&self, n: usize, h: usize, w: usize) -> Result<Tensor> {
        let (d, cols) = self.dims2()?;
        let hw = h * w;
        if cols != hw * n {
            return Err(CwError::Dimension(format!(
                "matrix_to_conv: {} columns cannot reshape to {}x{}x{}x{}",
                cols, n, d, h, w
            )));
        }
        let x = self.data();
        let mut out = vec![0.0; n * d * hw];
        for i in 0..n {
            for ch in 0..d {
                for p in 0..hw {
                    out[(i * d + ch) * hw + p] = x[ch * cols + i * hw + p];
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, d, h, w],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; d * cols];
                for i in 0..n {
                    for ch in 0..d {
                        for p in 0..hw {
                            dx[ch * cols + i * hw + p] = g[(i * d + ch) * hw + p];
                        }
                    }
                }
                vec![dx]
            }),
        ))
    }

    /// Flatten `n×c×h×w` into a `(c·h·w)×n` matrix whose columns are samples,
    /// for feeding a linear head.
    pub fn flatten_to_columns(&self) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        let feat = c * h * w;
        let x = self.data();
        let mut out = vec![0.0; feat * n];
        for i in 0..n {
            for f in 0..feat {
                out[f * n + i] = x[i * feat + f];
            }
        }
        Ok(Tensor::from_op(
            vec![feat, n],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; n * feat];
                for i in 0..n {
                    for f in 0..feat {
                        dx[i * feat + f] = g[f * n + i];
                    }
                }
                vec![dx]
            }),
        ))
    }
}
