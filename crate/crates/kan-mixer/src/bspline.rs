//! B-spline basis construction, evaluation, and analytic derivatives.
//!
//! A [`SplineGrid`] holds a uniform knot vector over `[x_min, x_max]` with
//! `order` extra knots extended past each end at the same spacing, so that
//! all `grid_size + order` basis functions stay defined near (and beyond)
//! the boundaries. Evaluation is the iterative Cox-de Boor recursion, run
//! bottom-up over the whole knot span.
//!
//! Inputs outside the range are evaluated on the extended knots rather than
//! clamped; far enough out, every basis function is simply zero. Values
//! exactly on a knot take the right-limit convention.

use crate::error::{KanError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SplineGrid {
    /// Polynomial degree of the basis functions.
    pub order: usize,
    /// Number of interior intervals between `x_min` and `x_max`.
    pub grid_size: usize,
    pub x_min: f64,
    pub x_max: f64,
    /// Non-decreasing, uniformly spaced, length `grid_size + 2*order + 1`.
    pub knots: Vec<f64>,
    spacing: f64,
    /// `1 / (d * spacing)` for degrees `d = 0..=order` (index 0 unused).
    inv_dh: Vec<f64>,
}

impl SplineGrid {
    pub fn new(order: usize, grid_size: usize, range: [f64; 2]) -> Result<Self> {
        let [x_min, x_max] = range;
        if order < 1 {
            return Err(KanError::InvalidGrid("order must be >= 1".to_string()));
        }
        if grid_size < 1 {
            return Err(KanError::InvalidGrid("grid_size must be >= 1".to_string()));
        }
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(KanError::InvalidGrid(format!(
                "range [{x_min}, {x_max}] must satisfy x_min < x_max"
            )));
        }
        let spacing = (x_max - x_min) / grid_size as f64;
        let n_knots = grid_size + 2 * order + 1;
        let knots: Vec<f64> = (0..n_knots)
            .map(|i| x_min + (i as f64 - order as f64) * spacing)
            .collect();
        let inv_dh: Vec<f64> = (0..=order)
            .map(|d| if d == 0 { 0.0 } else { 1.0 / (d as f64 * spacing) })
            .collect();
        Ok(SplineGrid {
            order,
            grid_size,
            x_min,
            x_max,
            knots,
            spacing,
            inv_dh,
        })
    }

    /// Number of basis functions: `grid_size + order`.
    pub fn basis_count(&self) -> usize {
        self.grid_size + self.order
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Scratch length needed by [`eval_into`](Self::eval_into).
    pub(crate) fn scratch_len(&self) -> usize {
        self.grid_size + 2 * self.order
    }

    /// All basis values at `x` as a fresh vector of length `basis_count()`.
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.basis_count()];
        let mut scratch = vec![0.0; self.scratch_len()];
        self.eval_into(x, &mut out, None, &mut scratch);
        out
    }

    /// All basis derivatives at `x`, via the degree-lowering identity
    /// `B'_{i,k} = k * (B_{i,k-1}/(t_{i+k}-t_i) - B_{i+1,k-1}/(t_{i+k+1}-t_{i+1}))`,
    /// which for uniform knots reduces to `(B_{i,k-1} - B_{i+1,k-1}) / h`.
    pub fn basis_derivative(&self, x: f64) -> Vec<f64> {
        let nb = self.basis_count();
        let mut basis = vec![0.0; nb];
        let mut lower = vec![0.0; nb + 1];
        let mut scratch = vec![0.0; self.scratch_len()];
        self.eval_into(x, &mut basis, Some(&mut lower), &mut scratch);
        let mut out = vec![0.0; nb];
        self.derivative_from_lower(&lower, &mut out);
        out
    }

    /// Cox-de Boor, bottom-up. Writes the degree-`order` values into `basis`
    /// (length `basis_count()`); when `lower` is given, also writes the
    /// degree-`order-1` values (length `basis_count() + 1`) used for
    /// derivatives. `scratch` must have length `scratch_len()`.
    pub(crate) fn eval_into(
        &self,
        x: f64,
        basis: &mut [f64],
        lower: Option<&mut [f64]>,
        scratch: &mut [f64],
    ) {
        let k = self.order;
        let n0 = self.scratch_len();
        debug_assert_eq!(basis.len(), self.basis_count());
        debug_assert!(scratch.len() >= n0);
        let mut lower = lower;
        let w = &mut scratch[..n0];
        for i in 0..n0 {
            w[i] = if self.knots[i] <= x && x < self.knots[i + 1] {
                1.0
            } else {
                0.0
            };
        }
        for d in 1..=k {
            let inv = self.inv_dh[d];
            if d == k {
                if let Some(lw) = lower.take() {
                    lw.copy_from_slice(&w[..self.basis_count() + 1]);
                }
            }
            for i in 0..n0 - d {
                let left = (x - self.knots[i]) * inv;
                let right = (self.knots[i + d + 1] - x) * inv;
                w[i] = left * w[i] + right * w[i + 1];
            }
            if d == k {
                basis.copy_from_slice(&w[..self.basis_count()]);
                return;
            }
        }
        // order >= 1, so the loop always returns from the d == k arm.
        unreachable!("eval_into requires order >= 1");
    }

    /// Derivatives from cached degree-`order-1` values.
    pub(crate) fn derivative_from_lower(&self, lower: &[f64], out: &mut [f64]) {
        let inv_h = 1.0 / self.spacing;
        for i in 0..self.basis_count() {
            out[i] = (lower[i] - lower[i + 1]) * inv_h;
        }
    }

    /// Half-open index range `[lo, hi)` of basis functions that can be
    /// nonzero at `x` (at most `order + 1` wide); empty when `x` lies beyond
    /// the extended knots.
    pub(crate) fn support_window(&self, x: f64) -> (usize, usize) {
        let f = (x - self.knots[0]) / self.spacing;
        let n0 = self.scratch_len();
        if !(f >= 0.0) || f >= n0 as f64 {
            return (0, 0);
        }
        let span = (f as usize).min(n0 - 1);
        let lo = span.saturating_sub(self.order);
        let hi = (span + 1).min(self.basis_count());
        if lo >= hi {
            (0, 0)
        } else {
            (lo, hi)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_dimensions() {
        let g = SplineGrid::new(3, 5, [-1.0, 1.0]).unwrap();
        assert_eq!(g.knots.len(), 12);
        assert_eq!(g.basis_count(), 8);
    }

    #[test]
    fn degenerate_linear_grid() {
        let g = SplineGrid::new(1, 1, [0.0, 1.0]).unwrap();
        assert_eq!(g.knots, vec![-1.0, 0.0, 1.0, 2.0]);
        assert_eq!(g.basis_count(), 2);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(matches!(
            SplineGrid::new(3, 0, [-1.0, 1.0]),
            Err(KanError::InvalidGrid(_))
        ));
        assert!(matches!(
            SplineGrid::new(0, 5, [-1.0, 1.0]),
            Err(KanError::InvalidGrid(_))
        ));
        assert!(matches!(
            SplineGrid::new(3, 5, [1.0, 1.0]),
            Err(KanError::InvalidGrid(_))
        ));
    }

    #[test]
    fn knot_spacing_is_uniform() {
        let g = SplineGrid::new(3, 7, [-2.5, 4.0]).unwrap();
        let h = g.spacing();
        for pair in g.knots.windows(2) {
            assert!(((pair[1] - pair[0]) - h).abs() / h < 1e-12);
        }
    }

    #[test]
    fn linear_hats_split_evenly_at_midpoint() {
        let g = SplineGrid::new(1, 1, [0.0, 1.0]).unwrap();
        let b = g.basis(0.5);
        assert!((b[0] - 0.5).abs() < 1e-15);
        assert!((b[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cubic_values_match_naive_recursion_and_frozen_values() {
        let g = SplineGrid::new(3, 5, [-1.0, 1.0]).unwrap();
        let b = g.basis(0.0);
        // Frozen from the naive recursive oracle: x = 0 sits halfway through
        // the interval [-0.2, 0.2), so the four active cubic values are
        // (1/48, 23/48, 23/48, 1/48) at indices 2..=5.
        let expected = [0.0, 0.0, 1.0 / 48.0, 23.0 / 48.0, 23.0 / 48.0, 1.0 / 48.0, 0.0, 0.0];
        for (i, (&got, &want)) in b.iter().zip(expected.iter()).enumerate() {
            assert!((got - want).abs() < 1e-12, "index {i}: {got} vs {want}");
        }
        let naive = oracle::basis_reference(&g, 0.0);
        for (i, (&got, &want)) in b.iter().zip(naive.iter()).enumerate() {
            assert!((got - want).abs() < 1e-12, "index {i}: {got} vs oracle {want}");
        }
    }

    #[test]
    fn matches_naive_recursion_at_random_points() {
        let g = SplineGrid::new(3, 5, [-1.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            // Includes points beyond the range to exercise the extension.
            let x = rng.random_range(-2.5..2.5);
            let naive = oracle::basis_reference(&g, x);
            for (got, want) in g.basis(x).iter().zip(naive.iter()) {
                assert!((got - want).abs() < 1e-12, "x = {x}");
            }
        }
    }

    #[test]
    fn partition_of_unity_inside_range() {
        for (k, gs) in [(1, 1), (2, 3), (3, 5), (4, 8)] {
            let g = SplineGrid::new(k, gs, [-1.0, 1.0]).unwrap();
            for i in 0..=100 {
                let x = -1.0 + 2.0 * i as f64 / 100.0;
                let sum: f64 = g.basis(x).iter().sum();
                assert!((sum - 1.0).abs() < 1e-9, "k={k} G={gs} x={x} sum={sum}");
            }
        }
    }

    #[test]
    fn local_support_and_nonnegativity() {
        let g = SplineGrid::new(3, 5, [-1.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let x = rng.random_range(-1.0..1.0);
            let b = g.basis(x);
            let nonzero = b.iter().filter(|v| v.abs() > 0.0).count();
            assert!(nonzero <= g.order + 1);
            assert!(b.iter().all(|&v| v >= 0.0));
            let (lo, hi) = g.support_window(x);
            for (i, &v) in b.iter().enumerate() {
                if v.abs() > 1e-12 {
                    assert!(i >= lo && i < hi, "window ({lo},{hi}) misses index {i}");
                }
            }
        }
    }

    #[test]
    fn derivative_sums_to_zero_inside_range() {
        let g = SplineGrid::new(3, 5, [-1.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x = rng.random_range(-1.0..1.0);
            let sum: f64 = g.basis_derivative(x).iter().sum();
            assert!(sum.abs() < 1e-9, "x={x} sum={sum}");
        }
    }

    #[test]
    fn derivative_matches_central_differences() {
        let g = SplineGrid::new(3, 5, [-1.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-5;
        for _ in 0..100 {
            let x = rng.random_range(-0.99..0.99);
            let analytic = g.basis_derivative(x);
            let plus = g.basis(x + h);
            let minus = g.basis(x - h);
            for i in 0..g.basis_count() {
                let numeric = (plus[i] - minus[i]) / (2.0 * h);
                assert!(
                    (analytic[i] - numeric).abs() < 1e-5,
                    "x={x} i={i}: {} vs {}",
                    analytic[i],
                    numeric
                );
            }
        }
    }

    #[test]
    fn linear_hat_derivatives() {
        let g = SplineGrid::new(1, 1, [0.0, 1.0]).unwrap();
        let d = g.basis_derivative(0.25);
        assert!((d[0] + 1.0).abs() < 1e-15);
        assert!((d[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn beyond_extension_everything_is_zero() {
        let g = SplineGrid::new(3, 5, [-1.0, 1.0]).unwrap();
        // Extension ends at 1 + 3 * 0.4 = 2.2.
        for x in [-5.0, 2.3, 100.0] {
            assert!(g.basis(x).iter().all(|&v| v == 0.0));
            assert!(g.basis_derivative(x).iter().all(|&v| v == 0.0));
            assert_eq!(g.support_window(x), (0, 0));
        }
    }
}
