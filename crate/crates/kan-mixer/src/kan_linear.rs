//! The KANLinear layer.
//!
//! Every input-output edge `(j, i)` carries its own learnable activation
//! `phi(x) = w[j,i] * (silu(x) + sum_t c[j,i,t] * B_t(x))`; output `j` sums
//! the edge activations over all inputs. All edges of a layer share one
//! [`SplineGrid`]. The backward pass is analytic: basis values from the
//! forward call are cached so backward never reruns the Cox-de Boor
//! recursion from scratch.
//!
//! Batches are processed in fixed-size row chunks. Chunks run in parallel,
//! and per-chunk gradient partials are summed in chunk order, so results are
//! bit-identical regardless of thread count.

use crate::bspline::SplineGrid;
use crate::error::{KanError, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

/// Rows per parallel work unit. Fixed so that the gradient reduction order
/// (and therefore every bit of the result) is independent of thread count.
const CHUNK_ROWS: usize = 16;

/// Numerically stable logistic function.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `silu(x) = x * sigmoid(x)`, safe for |x| far beyond 700.
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Derivative of silu: `sigma(x) * (1 + x * (1 - sigma(x)))`.
pub fn silu_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Per-forward cache of everything backward needs.
#[derive(Debug, Clone)]
struct ForwardCache {
    rows: usize,
    /// Leading axes of the forward input (everything but the feature axis).
    lead_shape: Vec<usize>,
    /// Input values, rows * n.
    x: Vec<f64>,
    /// silu(x) per scalar.
    silu: Vec<f64>,
    /// Degree-k basis values, rows * n * nb.
    basis: Vec<f64>,
    /// Degree-(k-1) values, rows * n * (nb + 1); derivatives come from these.
    lower: Vec<f64>,
    /// Half-open nonzero basis window per scalar.
    window: Vec<(u32, u32)>,
}

#[derive(Debug, Clone)]
pub struct KanLinearLayer {
    pub in_features: usize,
    pub out_features: usize,
    pub grid: SplineGrid,
    /// Per-edge weights, shape `[out_features, in_features]`.
    pub w: Tensor,
    /// Per-edge spline coefficients, shape `[out_features, in_features, basis_count]`.
    pub c: Tensor,
    cache: Option<ForwardCache>,
}

impl KanLinearLayer {
    /// Seeded initialization: `w ~ U[-1/sqrt(n), 1/sqrt(n)]`, then
    /// `c ~ Normal(0, 0.1/sqrt(n))`, in that order, so a given seed always
    /// reproduces the same parameters bit for bit.
    pub fn init(n: usize, m: usize, grid: SplineGrid, seed: u64) -> Result<Self> {
        if n < 1 || m < 1 {
            return Err(KanError::InvalidDim(format!(
                "layer dims must be >= 1, got {n} -> {m}"
            )));
        }
        let nb = grid.basis_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (n as f64).sqrt();
        let mut w = vec![0.0; m * n];
        for v in w.iter_mut() {
            *v = rng.random_range(-bound..=bound);
        }
        let normal = Normal::new(0.0, 0.1 / (n as f64).sqrt()).expect("std > 0");
        let mut c = vec![0.0; m * n * nb];
        for v in c.iter_mut() {
            *v = normal.sample(&mut rng);
        }
        Ok(KanLinearLayer {
            in_features: n,
            out_features: m,
            grid,
            w: Tensor::from_vec(&[m, n], w)?.with_grad(),
            c: Tensor::from_vec(&[m, n, nb], c)?.with_grad(),
            cache: None,
        })
    }

    pub fn param_count(&self) -> usize {
        self.w.numel() + self.c.numel()
    }

    /// Bytes held by the forward cache, for memory accounting.
    pub fn cached_bytes(&self) -> usize {
        match &self.cache {
            None => 0,
            Some(c) => {
                (c.x.len() + c.silu.len() + c.basis.len() + c.lower.len()) * 8
                    + c.window.len() * std::mem::size_of::<(u32, u32)>()
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.w.zero_grad();
        self.c.zero_grad();
    }

    /// Forward pass. Leading axes of `x` are treated as batch; the last axis
    /// must equal `in_features`. Caches basis and silu values for backward;
    /// the cache is replaced on every call.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let n = self.in_features;
        let m = self.out_features;
        if x.rank() < 1 || *x.shape.last().unwrap() != n {
            return Err(KanError::ShapeMismatch(format!(
                "kan_forward expects last axis {n}, got shape {:?}",
                x.shape
            )));
        }
        let rows = x.numel() / n;
        let nb = self.grid.basis_count();
        let nl = nb + 1;

        let mut silu_buf = vec![0.0; rows * n];
        let mut basis_buf = vec![0.0; rows * n * nb];
        let mut lower_buf = vec![0.0; rows * n * nl];
        let mut window_buf = vec![(0u32, 0u32); rows * n];

        let grid = &self.grid;
        silu_buf
            .par_chunks_mut(CHUNK_ROWS * n)
            .zip(basis_buf.par_chunks_mut(CHUNK_ROWS * n * nb))
            .zip(lower_buf.par_chunks_mut(CHUNK_ROWS * n * nl))
            .zip(window_buf.par_chunks_mut(CHUNK_ROWS * n))
            .zip(x.data.par_chunks(CHUNK_ROWS * n))
            .for_each(|((((sl, bs), lw), wd), xs)| {
                let mut scratch = vec![0.0; grid.scratch_len()];
                for (s, &xv) in xs.iter().enumerate() {
                    sl[s] = silu(xv);
                    grid.eval_into(
                        xv,
                        &mut bs[s * nb..(s + 1) * nb],
                        Some(&mut lw[s * nl..(s + 1) * nl]),
                        &mut scratch,
                    );
                    let (lo, hi) = grid.support_window(xv);
                    wd[s] = (lo as u32, hi as u32);
                }
            });

        let mut y = vec![0.0; rows * m];
        let w = &self.w.data;
        let c = &self.c.data;
        y.par_chunks_mut(CHUNK_ROWS * m)
            .enumerate()
            .for_each(|(ci, y_chunk)| {
                let row0 = ci * CHUNK_ROWS;
                for (rl, y_row) in y_chunk.chunks_mut(m).enumerate() {
                    let off = (row0 + rl) * n;
                    for (j, out) in y_row.iter_mut().enumerate() {
                        let w_row = &w[j * n..(j + 1) * n];
                        let mut acc = 0.0;
                        for i in 0..n {
                            let (lo, hi) = window_buf[off + i];
                            let c_row = &c[(j * n + i) * nb..(j * n + i + 1) * nb];
                            let b_row = &basis_buf[(off + i) * nb..(off + i + 1) * nb];
                            let mut spline = 0.0;
                            for t in lo as usize..hi as usize {
                                spline += c_row[t] * b_row[t];
                            }
                            acc += w_row[i] * (silu_buf[off + i] + spline);
                        }
                        *out = acc;
                    }
                }
            });

        let lead_shape = x.shape[..x.rank() - 1].to_vec();
        let mut out_shape = lead_shape.clone();
        out_shape.push(m);
        self.cache = Some(ForwardCache {
            rows,
            lead_shape,
            x: x.data.clone(),
            silu: silu_buf,
            basis: basis_buf,
            lower: lower_buf,
            window: window_buf,
        });
        Tensor::from_vec(&out_shape, y)
    }

    /// Backward pass. Accumulates into `w.grad` and `c.grad` and returns the
    /// gradient with respect to the forward input. Requires a preceding
    /// [`forward`](Self::forward); gradients add on top of whatever is
    /// already in the buffers.
    pub fn backward(&mut self, d_out: &Tensor) -> Result<Tensor> {
        let n = self.in_features;
        let m = self.out_features;
        let nb = self.grid.basis_count();
        let nl = nb + 1;
        let cache = self
            .cache
            .as_ref()
            .ok_or(KanError::StaleCache("kan_backward called without a cached forward"))?;
        if d_out.numel() != cache.rows * m || *d_out.shape.last().unwrap_or(&0) != m {
            return Err(KanError::ShapeMismatch(format!(
                "kan_backward expects {} x {m} gradient, got shape {:?}",
                cache.rows, d_out.shape
            )));
        }

        let grid = &self.grid;
        let w = &self.w.data;
        let c = &self.c.data;
        let mut dx = vec![0.0; cache.rows * n];

        // Each chunk accumulates its own parameter partials; they are summed
        // in chunk order afterwards.
        let partials: Vec<(Vec<f64>, Vec<f64>)> = dx
            .par_chunks_mut(CHUNK_ROWS * n)
            .enumerate()
            .map(|(ci, dx_chunk)| {
                let row0 = ci * CHUNK_ROWS;
                let rows_here = dx_chunk.len() / n;
                let mut wg = vec![0.0; m * n];
                let mut cg = vec![0.0; m * n * nb];
                let mut bderiv = vec![0.0; n * nb];
                let mut sderiv = vec![0.0; n];
                for rl in 0..rows_here {
                    let r = row0 + rl;
                    let off = r * n;
                    for i in 0..n {
                        grid.derivative_from_lower(
                            &cache.lower[(off + i) * nl..(off + i + 1) * nl],
                            &mut bderiv[i * nb..(i + 1) * nb],
                        );
                        sderiv[i] = silu_derivative(cache.x[off + i]);
                    }
                    let dy_row = &d_out.data[r * m..(r + 1) * m];
                    let dx_row = &mut dx_chunk[rl * n..(rl + 1) * n];
                    for (j, &g) in dy_row.iter().enumerate() {
                        let w_row = &w[j * n..(j + 1) * n];
                        for i in 0..n {
                            let (lo, hi) = cache.window[off + i];
                            let (lo, hi) = (lo as usize, hi as usize);
                            let edge = (j * n + i) * nb;
                            let c_row = &c[edge..edge + nb];
                            let b_row = &cache.basis[(off + i) * nb..(off + i + 1) * nb];
                            let d_row = &bderiv[i * nb..(i + 1) * nb];
                            let cg_row = &mut cg[edge..edge + nb];
                            let mut spline = 0.0;
                            let mut spline_d = 0.0;
                            let gw = g * w_row[i];
                            for t in lo..hi {
                                spline += c_row[t] * b_row[t];
                                spline_d += c_row[t] * d_row[t];
                                cg_row[t] += gw * b_row[t];
                            }
                            wg[j * n + i] += g * (cache.silu[off + i] + spline);
                            dx_row[i] += gw * (sderiv[i] + spline_d);
                        }
                    }
                }
                (wg, cg)
            })
            .collect();

        // Fold partials into fresh totals, then add once into the persistent
        // buffers: accumulation over repeated backward calls stays exact.
        let mut wg_total = vec![0.0; m * n];
        let mut cg_total = vec![0.0; m * n * nb];
        for (wg, cg) in partials {
            for (t, v) in wg_total.iter_mut().zip(wg) {
                *t += v;
            }
            for (t, v) in cg_total.iter_mut().zip(cg) {
                *t += v;
            }
        }
        for (g, v) in self.w.grad_mut().iter_mut().zip(wg_total) {
            *g += v;
        }
        for (g, v) in self.c.grad_mut().iter_mut().zip(cg_total) {
            *g += v;
        }

        let mut dx_shape = cache.lead_shape.clone();
        dx_shape.push(n);
        Tensor::from_vec(&dx_shape, dx)
    }
}
