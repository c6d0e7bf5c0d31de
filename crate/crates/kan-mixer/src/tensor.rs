//! Dense row-major tensor container and the shape/statistics primitives the
//! rest of the crate builds on.
//!
//! Layout is row-major everywhere: for shape `[d0, d1, ..., dk]` the flat
//! index of `(i0, i1, ..., ik)` is `((i0*d1 + i1)*d2 + ...)*dk + ik`. There
//! are no views or strides; every operation allocates a fresh output.
//! Gradients live in an optional buffer of the same length as `data`, so a
//! parameter and its gradient travel together.

use crate::error::{KanError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(KanError::ShapeMismatch(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    /// Allocates a zeroed gradient buffer alongside the data.
    pub fn with_grad(mut self) -> Self {
        self.grad = Some(vec![0.0; self.data.len()]);
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn grad(&self) -> &[f64] {
        self.grad.as_deref().expect("tensor has no gradient buffer")
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        self.grad.as_deref_mut().expect("tensor has no gradient buffer")
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(KanError::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                self.shape, rhs.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
            grad: None,
        })
    }

    /// Same data, new shape. Row-major element order is preserved.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        let expect: usize = new_shape.iter().product();
        if expect != self.data.len() {
            return Err(KanError::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elements) into {:?} ({} elements)",
                self.shape,
                self.data.len(),
                new_shape,
                expect
            )));
        }
        Ok(Tensor {
            shape: new_shape.to_vec(),
            data: self.data.clone(),
            grad: None,
        })
    }

    /// Swaps the final two axes: element `(..., i, j)` of the result equals
    /// element `(..., j, i)` of the input.
    pub fn transpose_last_two(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return Err(KanError::Rank(format!(
                "transpose_last_two needs rank >= 2, got shape {:?}",
                self.shape
            )));
        }
        let rows = self.shape[r - 2];
        let cols = self.shape[r - 1];
        let batch: usize = self.shape[..r - 2].iter().product();
        let mut out_shape = self.shape.clone();
        out_shape[r - 2] = cols;
        out_shape[r - 1] = rows;
        let mut out = vec![0.0; self.data.len()];
        let plane = rows * cols;
        for b in 0..batch {
            let src = &self.data[b * plane..(b + 1) * plane];
            let dst = &mut out[b * plane..(b + 1) * plane];
            for i in 0..rows {
                for j in 0..cols {
                    dst[j * rows + i] = src[i * cols + j];
                }
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data: out,
            grad: None,
        })
    }

    /// Arithmetic mean over one axis; the axis is dropped from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(KanError::Rank(format!(
                "mean_axis axis {} out of range for shape {:?}",
                axis, self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out_shape = self.shape.clone();
        out_shape.remove(axis);
        let mut out = vec![0.0; outer * inner];
        let inv = 1.0 / len as f64;
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for i in 0..inner {
                    dst[i] += self.data[base + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(Tensor {
            shape: out_shape,
            data: out,
            grad: None,
        })
    }
}

/// Cached per-slice values from [`layer_norm`] needed by the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    /// Normalized values (x - mean) / sqrt(var + eps), same layout as input.
    pub x_hat: Vec<f64>,
    /// 1 / sqrt(var + eps) per slice.
    pub inv_std: Vec<f64>,
    pub shape: Vec<usize>,
}

/// Layer normalization over the last axis.
///
/// Per slice: `y = gain * (x - mean) / sqrt(var + eps) + bias`, where `var`
/// is the biased (divide-by-D) estimator.
pub fn layer_norm(
    t: &Tensor,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let d = *t.shape.last().ok_or_else(|| {
        KanError::Rank("layer_norm needs rank >= 1".to_string())
    })?;
    if gain.len() != d || bias.len() != d {
        return Err(KanError::ShapeMismatch(format!(
            "layer_norm gain/bias length {}/{} does not match last axis {}",
            gain.len(),
            bias.len(),
            d
        )));
    }
    let slices = t.numel() / d;
    let mut out = vec![0.0; t.numel()];
    let mut x_hat = vec![0.0; t.numel()];
    let mut inv_std = vec![0.0; slices];
    for s in 0..slices {
        let x = &t.data[s * d..(s + 1) * d];
        let mean = x.iter().sum::<f64>() / d as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + eps).sqrt();
        inv_std[s] = istd;
        for i in 0..d {
            let xh = (x[i] - mean) * istd;
            x_hat[s * d + i] = xh;
            out[s * d + i] = gain[i] * xh + bias[i];
        }
    }
    let out = Tensor {
        shape: t.shape.clone(),
        data: out,
        grad: None,
    };
    let cache = LayerNormCache {
        x_hat,
        inv_std,
        shape: t.shape.clone(),
    };
    Ok((out, cache))
}

/// Backward companion of [`layer_norm`]: returns `(d_input, d_gain, d_bias)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &[f64],
    d_out: &Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let d = *cache.shape.last().expect("cached shape is non-empty");
    let slices = d_out.numel() / d;
    debug_assert_eq!(d_out.shape, cache.shape);
    let mut dx = vec![0.0; d_out.numel()];
    let mut d_gain = vec![0.0; d];
    let mut d_bias = vec![0.0; d];
    let inv_d = 1.0 / d as f64;
    for s in 0..slices {
        let dy = &d_out.data[s * d..(s + 1) * d];
        let xh = &cache.x_hat[s * d..(s + 1) * d];
        let istd = cache.inv_std[s];
        // Gradients through the normalization couple every element of the
        // slice via the shared mean and variance.
        let mut mean_g = 0.0;
        let mut mean_gx = 0.0;
        for i in 0..d {
            let g = dy[i] * gain[i];
            mean_g += g;
            mean_gx += g * xh[i];
            d_gain[i] += dy[i] * xh[i];
            d_bias[i] += dy[i];
        }
        mean_g *= inv_d;
        mean_gx *= inv_d;
        for i in 0..d {
            let g = dy[i] * gain[i];
            dx[s * d + i] = (g - mean_g - xh[i] * mean_gx) * istd;
        }
    }
    let dx = Tensor {
        shape: cache.shape.clone(),
        data: dx,
        grad: None,
    };
    (dx, d_gain, d_bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn reshape_preserves_row_major_order() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = a.reshape(&[3, 2]).unwrap();
        assert_eq!(b.shape, vec![3, 2]);
        assert_eq!(b.data, a.data);
    }

    #[test]
    fn reshape_drops_unit_axes() {
        let data: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let a = t(&[1, 1, 4, 4], &data);
        let b = a.reshape(&[1, 4, 4]).unwrap();
        assert_eq!(b.data, data);
    }

    #[test]
    fn reshape_rejects_element_count_mismatch() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            a.reshape(&[5]),
            Err(KanError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn transpose_last_two_swaps_axes() {
        let a = t(&[1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = a.transpose_last_two().unwrap();
        assert_eq!(b.shape, vec![1, 3, 2]);
        assert_eq!(b.data, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn transpose_is_an_involution() {
        let data: Vec<f64> = (0..24).map(|v| v as f64 * 0.37 - 2.0).collect();
        let a = t(&[2, 3, 4], &data);
        let b = a.transpose_last_two().unwrap().transpose_last_two().unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.shape, b.shape);
    }

    #[test]
    fn transpose_rejects_rank_one() {
        let a = t(&[3], &[1.0, 2.0, 3.0]);
        assert!(matches!(a.transpose_last_two(), Err(KanError::Rank(_))));
    }

    #[test]
    fn mean_axis_zero() {
        let a = t(&[2, 2], &[1.0, 3.0, 5.0, 7.0]);
        let m = a.mean_axis(0).unwrap();
        assert_eq!(m.shape, vec![2]);
        assert_eq!(m.data, vec![3.0, 5.0]);
    }

    #[test]
    fn mean_axis_of_constant_is_constant() {
        let a = t(&[3, 4], &[2.5; 12]);
        let m = a.mean_axis(1).unwrap();
        assert_eq!(m.shape, vec![3]);
        assert!(m.data.iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn mean_axis_of_length_one_drops_it() {
        let a = t(&[2, 1, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let m = a.mean_axis(1).unwrap();
        assert_eq!(m.shape, vec![2, 3]);
        assert_eq!(m.data, a.data);
    }

    #[test]
    fn mean_axis_rejects_invalid_axis() {
        let a = t(&[2, 2], &[0.0; 4]);
        assert!(matches!(a.mean_axis(2), Err(KanError::Rank(_))));
    }

    #[test]
    fn layer_norm_constant_slice_maps_to_bias() {
        let a = t(&[1, 4], &[1.0, 1.0, 1.0, 1.0]);
        let (y, _) = layer_norm(&a, &[1.0; 4], &[0.0; 4], 1e-5).unwrap();
        assert!(y.data.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn layer_norm_symmetric_pair() {
        let a = t(&[1, 2], &[-3.0, 3.0]);
        let (y, _) = layer_norm(&a, &[1.0; 2], &[0.0; 2], 1e-10).unwrap();
        assert!((y.data[0] + 1.0).abs() < 1e-5);
        assert!((y.data[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_rejects_bad_gain_length() {
        let a = t(&[2, 3], &[0.0; 6]);
        assert!(matches!(
            layer_norm(&a, &[1.0; 2], &[0.0; 3], 1e-5),
            Err(KanError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn layer_norm_output_statistics() {
        // gain = 1, bias = 0, variance far above eps: per-slice mean ~ 0 and
        // standard deviation within 1e-3 of 1.
        let data: Vec<f64> = (0..8).map(|v| (v as f64) * 1.7 - 3.0).collect();
        let a = t(&[2, 4], &data);
        let (y, _) = layer_norm(&a, &[1.0; 4], &[0.0; 4], 1e-5).unwrap();
        for s in 0..2 {
            let slice = &y.data[s * 4..(s + 1) * 4];
            let mean = slice.iter().sum::<f64>() / 4.0;
            let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9, "mean = {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-3, "std = {}", var.sqrt());
        }
    }

    /// Central finite differences of a scalar function of a flat vector.
    fn fd_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let d = 4;
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let gain: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..1.5)).collect();
        let bias: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let dy: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps = 1e-5;

        let xt = t(&[1, d], &x);
        let (_, cache) = layer_norm(&xt, &gain, &bias, eps).unwrap();
        let dyt = t(&[1, d], &dy);
        let (dx, dgain, dbias) = layer_norm_backward(&cache, &gain, &dyt);

        // Scalar objective: sum(dy * layer_norm(x)).
        let loss_x = |xv: &[f64]| {
            let xt = t(&[1, d], xv);
            let (y, _) = layer_norm(&xt, &gain, &bias, eps).unwrap();
            y.data.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>()
        };
        let loss_gain = |gv: &[f64]| {
            let (y, _) = layer_norm(&xt, gv, &bias, eps).unwrap();
            y.data.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>()
        };
        let loss_bias = |bv: &[f64]| {
            let (y, _) = layer_norm(&xt, &gain, bv, eps).unwrap();
            y.data.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>()
        };

        let h = 1e-4;
        for (analytic, numeric) in [
            (dx.data.clone(), fd_grad(loss_x, &x, h)),
            (dgain, fd_grad(loss_gain, &gain, h)),
            (dbias, fd_grad(loss_bias, &bias, h)),
        ] {
            for (a, n) in analytic.iter().zip(&numeric) {
                let denom = a.abs().max(n.abs()).max(1e-8);
                assert!(
                    (a - n).abs() / denom < 1e-4,
                    "analytic {a} vs numeric {n}"
                );
            }
        }
    }
}
