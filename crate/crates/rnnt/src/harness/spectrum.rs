//! Singular-value spectrum diagnostics for named weight matrices: values
//! are normalized so the largest is 1 and reported as (index, log10) pairs.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::linalg::singular_values;
use crate::tensor::Real;

/// Values below this floor are clamped before taking log10, so rank
/// deficiency shows up as a flat tail instead of -inf.
pub const SPECTRUM_FLOOR: Real = 1e-12;

/// (index, log10(sigma_i / sigma_0)) for a named 2-D parameter.
pub fn spectrum_report(params: &ModelParams, matrix_name: &str) -> Result<Vec<(usize, Real)>> {
    let tensor = params.tensor(matrix_name)?;
    if !tensor.is_matrix() {
        return Err(Error::config(format!(
            "{matrix_name} has shape {:?}, spectrum needs a 2-D matrix",
            tensor.shape()
        )));
    }
    let sv = singular_values(tensor)?;
    Ok(sv
        .normalized
        .iter()
        .enumerate()
        .map(|(i, &v)| (i, v.max(SPECTRUM_FLOOR).log10()))
        .collect())
}

/// Fraction of tail indices (>= start) where `a`'s normalized spectrum is
/// at least `b`'s. Used to compare noisy-trained and baseline models.
pub fn tail_dominance(a: &[(usize, Real)], b: &[(usize, Real)], start: usize) -> Real {
    let pairs: Vec<_> = a
        .iter()
        .zip(b)
        .filter(|((i, _), _)| *i >= start)
        .collect();
    if pairs.is_empty() {
        return 0.0;
    }
    let wins = pairs.iter().filter(|((_, x), (_, y))| x >= y).count();
    wins as Real / pairs.len() as Real
}
