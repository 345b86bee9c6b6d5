//! Clamped B-spline basis over the lag axis and its difference penalty.
//!
//! The basis matrix `H` evaluates k cubic B-splines at the integer lags
//! 0..=L; the penalty `S = D2' D2` squares second differences of adjacent
//! basis coefficients, leaving constants and linear ramps unpenalized
//! (null space of dimension 2).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum DesignError {
    #[error("basis dimension k={k} invalid for L={l}: need 4 <= k <= L+1")]
    InvalidDimension { l: usize, k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineDesign {
    /// (L+1) x k basis evaluations; row l is the basis at lag l.
    pub h: DMatrix<f64>,
    /// k x k second-order difference penalty.
    pub s: DMatrix<f64>,
    pub knots: Vec<f64>,
    /// Spline order (4 = cubic).
    pub order: usize,
}

impl SplineDesign {
    pub fn n_lags(&self) -> usize {
        self.h.nrows()
    }

    pub fn basis_dim(&self) -> usize {
        self.h.ncols()
    }

    /// Wraps externally supplied basis evaluations (e.g. an identity basis
    /// for low-dimensional toy models) with the matching difference penalty.
    pub fn from_basis(h: DMatrix<f64>) -> Self {
        let k = h.ncols();
        SplineDesign {
            s: difference_penalty(k),
            knots: Vec::new(),
            order: 0,
            h,
        }
    }
}

/// S = D2' D2 with D2 the (k-2) x k second-difference operator. For k < 3
/// the penalty is the zero matrix.
pub fn difference_penalty(k: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(k, k);
    if k < 3 {
        return s;
    }
    let mut d2 = DMatrix::zeros(k - 2, k);
    for i in 0..k - 2 {
        d2[(i, i)] = 1.0;
        d2[(i, i + 1)] = -2.0;
        d2[(i, i + 2)] = 1.0;
    }
    s.copy_from(&(d2.transpose() * &d2));
    s
}

/// Clamped knot vector on [0, L]: `order` copies of each endpoint and
/// k - order equally spaced interior knots.
fn clamped_knots(l: usize, k: usize, order: usize) -> Vec<f64> {
    let n_interior = k - order;
    let mut knots = Vec::with_capacity(k + order);
    knots.extend(std::iter::repeat(0.0).take(order));
    for i in 1..=n_interior {
        knots.push(l as f64 * i as f64 / (n_interior + 1) as f64);
    }
    knots.extend(std::iter::repeat(l as f64).take(order));
    knots
}

/// All k B-spline basis values at x via the Cox-de Boor recursion.
fn bspline_row(knots: &[f64], k: usize, order: usize, x: f64) -> DVector<f64> {
    let n_knots = knots.len();
    // Degree-0 indicators; the last span is closed on the right so the
    // basis stays a partition of unity at x = L.
    let mut b = vec![0.0f64; n_knots - 1];
    for i in 0..n_knots - 1 {
        let last_span = knots[i + 1] >= knots[n_knots - 1];
        if (knots[i] <= x && x < knots[i + 1])
            || (last_span && knots[i] < knots[i + 1] && x >= knots[i] && x <= knots[i + 1])
        {
            b[i] = 1.0;
        }
    }
    for deg in 1..order {
        for i in 0..n_knots - deg - 1 {
            let left = if knots[i + deg] > knots[i] {
                (x - knots[i]) / (knots[i + deg] - knots[i]) * b[i]
            } else {
                0.0
            };
            let right = if knots[i + deg + 1] > knots[i + 1] {
                (knots[i + deg + 1] - x) / (knots[i + deg + 1] - knots[i + 1]) * b[i + 1]
            } else {
                0.0
            };
            b[i] = left + right;
        }
    }
    DVector::from_iterator(k, b.into_iter().take(k))
}

/// Cubic B-spline design over lags 0..=L with k basis functions and the
/// second-difference penalty.
pub fn build_design(l: usize, k: usize) -> Result<SplineDesign, DesignError> {
    const ORDER: usize = 4;
    if k < ORDER || k > l + 1 {
        return Err(DesignError::InvalidDimension { l, k });
    }
    let knots = clamped_knots(l, k, ORDER);
    let mut h = DMatrix::zeros(l + 1, k);
    for lag in 0..=l {
        h.row_mut(lag)
            .copy_from(&bspline_row(&knots, k, ORDER, lag as f64).transpose());
    }
    Ok(SplineDesign {
        h,
        s: difference_penalty(k),
        knots,
        order: ORDER,
    })
}

/// Log pseudo-determinant (product of eigenvalues above 1e-10 x max) and
/// numeric rank of a symmetric PSD matrix.
pub fn generalized_inverse_logdet(s: &DMatrix<f64>) -> (f64, usize) {
    if s.nrows() == 0 {
        return (0.0, 0);
    }
    let eig = s.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return (0.0, 0);
    }
    let tol = 1e-10 * max;
    let mut logdet = 0.0;
    let mut rank = 0;
    for &ev in eig.eigenvalues.iter() {
        if ev > tol {
            logdet += ev.ln();
            rank += 1;
        }
    }
    (logdet, rank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rows_sum_to_one() {
        let d = build_design(10, 7).unwrap();
        assert_eq!(d.h.shape(), (11, 7));
        for r in 0..11 {
            assert_abs_diff_eq!(d.h.row(r).sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn basis_nonnegative_and_local() {
        let d = build_design(20, 9).unwrap();
        for v in d.h.iter() {
            assert!(*v >= -1e-14);
        }
        // each basis function spans at most 4 knot intervals
        for j in 0..9 {
            let support: Vec<usize> = (0..=20).filter(|&l| d.h[(l, j)] > 1e-12).collect();
            let lo = *support.first().unwrap() as f64;
            let hi = *support.last().unwrap() as f64;
            assert!(hi - lo <= d.knots[j + 4] - d.knots[j] + 1e-9);
        }
    }

    #[test]
    fn full_column_rank() {
        for (l, k) in [(10usize, 7usize), (6, 7), (12, 10), (3, 4)] {
            let d = build_design(l, k).unwrap();
            assert_eq!(d.h.clone().svd(true, true).rank(1e-9), k, "L={l} k={k}");
        }
    }

    #[test]
    fn invalid_dimensions_rejected() {
        assert!(matches!(
            build_design(10, 3),
            Err(DesignError::InvalidDimension { .. })
        ));
        assert!(matches!(
            build_design(4, 6),
            Err(DesignError::InvalidDimension { .. })
        ));
    }

    #[test]
    fn penalty_k4_hand_computed() {
        // D2 = [[1,-2,1,0],[0,1,-2,1]]; S = D2'D2
        let s = difference_penalty(4);
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, -2.0, 1.0, 0.0, //
                -2.0, 5.0, -4.0, 1.0, //
                1.0, -4.0, 5.0, -2.0, //
                0.0, 1.0, -2.0, 1.0,
            ],
        );
        assert_eq!(s, expected);
    }

    #[test]
    fn penalty_null_space_is_constant_and_linear() {
        for (l, k) in [(10usize, 7usize), (12, 10), (6, 5), (3, 4)] {
            let d = build_design(l, k).unwrap();
            let ones = DVector::from_element(k, 1.0);
            let ramp = DVector::from_iterator(k, (0..k).map(|i| i as f64));
            assert!((&d.s * &ones).norm() < 1e-10);
            assert!((&d.s * &ramp).norm() < 1e-10);
            // anything orthogonal to the null space is penalized
            let mut v = DVector::from_iterator(k, (0..k).map(|i| ((i * i) as f64).sin()));
            let ramp_n = ramp.normalize();
            let ones_n = ones.normalize();
            v -= ones_n.scale(v.dot(&ones_n));
            v -= ramp_n.scale(v.dot(&ramp_n));
            if v.norm() > 1e-8 {
                assert!((&d.s * &v).norm() > 1e-6);
            }
        }
    }

    #[test]
    fn penalty_symmetric_psd_rank() {
        for (l, k) in [(10usize, 7usize), (6, 7), (12, 10), (3, 4), (20, 10)] {
            let k = k.min(l + 1);
            let d = build_design(l, k).unwrap();
            assert_eq!(d.s, d.s.transpose());
            let eig = d.s.clone().symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&e| e > -1e-10));
            let (_, rank) = generalized_inverse_logdet(&d.s);
            assert_eq!(rank, k - 2);
        }
    }

    #[test]
    fn pseudo_logdet_of_k4_penalty() {
        let s = difference_penalty(4);
        let (logdet, rank) = generalized_inverse_logdet(&s);
        assert_eq!(rank, 2);
        // nonzero eigenvalues of the 4x4 case multiply to 20 (det of D2 D2' = [[6,-4],[-4,6]])
        assert_abs_diff_eq!(logdet, 20.0f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn pseudo_logdet_zero_matrix() {
        let (logdet, rank) = generalized_inverse_logdet(&DMatrix::zeros(5, 5));
        assert_eq!((logdet, rank), (0.0, 0));
    }

    #[test]
    fn pseudo_logdet_scaling() {
        let s = difference_penalty(6);
        let (base, rank) = generalized_inverse_logdet(&s);
        let (scaled, rank2) = generalized_inverse_logdet(&s.scale(3.5));
        assert_eq!(rank, rank2);
        assert_abs_diff_eq!(scaled, base + rank as f64 * 3.5f64.ln(), epsilon = 1e-9);
    }
}
