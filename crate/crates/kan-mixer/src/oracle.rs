//! Naive reference implementations used as test oracles.
//!
//! Everything here trades speed for obviousness: the B-spline evaluation is
//! the textbook recursive Cox-de Boor definition and the layer forward is a
//! literal triple loop over outputs, inputs, and basis indices. Tests compare
//! the optimized paths against these; nothing in the crate's forward or
//! backward code calls into this module.

use crate::bspline::SplineGrid;
use crate::kan_linear::KanLinearLayer;

/// Textbook recursive Cox-de Boor evaluation of a single basis function
/// `B_{i,d}` over an explicit knot vector, right-limit convention at knots.
pub fn cox_de_boor(knots: &[f64], i: usize, d: usize, x: f64) -> f64 {
    if d == 0 {
        return if knots[i] <= x && x < knots[i + 1] { 1.0 } else { 0.0 };
    }
    let mut value = 0.0;
    let left_den = knots[i + d] - knots[i];
    if left_den > 0.0 {
        value += (x - knots[i]) / left_den * cox_de_boor(knots, i, d - 1, x);
    }
    let right_den = knots[i + d + 1] - knots[i + 1];
    if right_den > 0.0 {
        value += (knots[i + d + 1] - x) / right_den * cox_de_boor(knots, i + 1, d - 1, x);
    }
    value
}

/// All basis values of a grid at `x`, by the recursive definition.
pub fn basis_reference(grid: &SplineGrid, x: f64) -> Vec<f64> {
    (0..grid.basis_count())
        .map(|i| cox_de_boor(&grid.knots, i, grid.order, x))
        .collect()
}

fn silu_reference(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Literal evaluation of `y_j = sum_i w[j,i] * (silu(x_i) + sum_t c[j,i,t] * B_t(x_i))`
/// for one input row.
pub fn kan_forward_reference(layer: &KanLinearLayer, row: &[f64]) -> Vec<f64> {
    let n = layer.in_features;
    let m = layer.out_features;
    let nb = layer.grid.basis_count();
    assert_eq!(row.len(), n);
    let mut y = vec![0.0; m];
    for j in 0..m {
        for i in 0..n {
            let mut spline = 0.0;
            for t in 0..nb {
                spline += layer.c.data[(j * n + i) * nb + t]
                    * cox_de_boor(&layer.grid.knots, t, layer.grid.order, row[i]);
            }
            y[j] += layer.w.data[j * n + i] * (silu_reference(row[i]) + spline);
        }
    }
    y
}
