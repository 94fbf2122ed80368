//! Singular values via one-sided Jacobi (Hestenes) rotations.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Singular values of a 2-D tensor, descending, with a copy normalized so
/// the largest is 1. The normalized curve is what the spectrum diagnostics
/// plot.
#[derive(Debug, Clone)]
pub struct SingularValues {
    pub raw: Vec<Real>,
    pub normalized: Vec<Real>,
}

/// Compute all singular values of `w` by one-sided Jacobi: rotate column
/// pairs until mutually orthogonal; the column norms are then the singular
/// values.
pub fn singular_values(w: &Tensor) -> Result<SingularValues> {
    if !w.is_matrix() {
        return Err(Error::ShapeMismatch {
            op: "singular_values",
            lhs: w.shape().to_vec(),
            rhs: vec![],
        });
    }
    if !w.all_finite() {
        return Err(Error::numeric("singular_values: non-finite entries"));
    }
    let (m, n) = (w.rows(), w.cols());
    if m == 0 || n == 0 {
        return Err(Error::ShapeMismatch {
            op: "singular_values",
            lhs: w.shape().to_vec(),
            rhs: vec![],
        });
    }

    // Work on the tall orientation so columns are the short axis.
    let (rows, cols, mut a) = if m >= n {
        (m, n, w.data().to_vec())
    } else {
        let mut t = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                t[j * m + i] = w.data()[i * n + j];
            }
        }
        (n, m, t)
    };

    let col = |a: &[Real], j: usize, i: usize| a[i * cols + j];
    let frob2: Real = a.iter().map(|x| x * x).sum();
    let tol = Real::EPSILON * (rows as Real).sqrt();

    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..rows {
                    let x = col(&a, p, i);
                    let y = col(&a, q, i);
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                if apq.abs() <= tol * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let x = a[i * cols + p];
                    let y = a[i * cols + q];
                    a[i * cols + p] = c * x - s * y;
                    a[i * cols + q] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<Real> = (0..cols)
        .map(|j| (0..rows).map(|i| col(&a, j, i).powi(2)).sum::<Real>().sqrt())
        .collect();
    sigma.sort_by(|x, y| y.partial_cmp(x).expect("finite singular values"));

    // Rotations preserve the Frobenius norm; use it as a cheap self-check.
    let sum2: Real = sigma.iter().map(|x| x * x).sum();
    debug_assert!(
        (sum2 - frob2).abs() <= 1e-8 * frob2.max(1.0),
        "frobenius drift: {sum2} vs {frob2}"
    );

    let top = sigma[0];
    let normalized = if top > 0.0 {
        sigma.iter().map(|x| x / top).collect()
    } else {
        vec![0.0; sigma.len()]
    };
    Ok(SingularValues {
        raw: sigma,
        normalized,
    })
}
