//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::model::params::{GradMap, ModelParams};
use crate::tensor::rng::RngStream;
use crate::tensor::Real;

/// Relative error uses max(|fd|, |tape|, REL_FLOOR) as denominator so that
/// near-zero gradient pairs are compared absolutely at the floor scale.
pub const REL_FLOOR: Real = 1e-6;

#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_err: Real,
    pub coords_checked: usize,
    /// (param name, flat index, fd estimate, tape gradient) of the worst coordinate.
    pub worst: Option<(String, usize, Real, Real)>,
}

/// Compare `tape_grads` against central finite differences of `f` at the
/// current `params`, over every coordinate when the model is small or a
/// seeded sample of at least `min_coords` coordinates otherwise. Parameters
/// are restored bit-exactly after probing.
pub fn finite_difference_check(
    params: &mut ModelParams,
    tape_grads: &GradMap,
    f: &mut dyn FnMut(&ModelParams) -> Result<Real>,
    h: Real,
    min_coords: usize,
    rng: &mut RngStream,
) -> Result<FdReport> {
    if h <= 0.0 {
        return Err(Error::config(format!("finite difference step {h} must be > 0")));
    }
    let names: Vec<String> = params.iter().map(|e| e.name.clone()).collect();
    let sizes: Vec<usize> = params.iter().map(|e| e.tensor.numel()).collect();
    let total: usize = sizes.iter().sum();

    let min_coords = min_coords.max(64).min(total);
    let coords: Vec<(usize, usize)> = if total <= min_coords {
        let mut all = Vec::with_capacity(total);
        for (p, &sz) in sizes.iter().enumerate() {
            for i in 0..sz {
                all.push((p, i));
            }
        }
        all
    } else {
        let mut seen = std::collections::BTreeSet::new();
        while seen.len() < min_coords {
            let flat = rng.next_below_inclusive(total as u64 - 1) as usize;
            seen.insert(flat);
        }
        seen.into_iter()
            .map(|flat| {
                let mut rest = flat;
                for (p, &sz) in sizes.iter().enumerate() {
                    if rest < sz {
                        return (p, rest);
                    }
                    rest -= sz;
                }
                unreachable!("flat coordinate within total")
            })
            .collect()
    };

    let mut report = FdReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        worst: None,
    };

    for (p, i) in coords {
        let name = &names[p];
        let original = params.tensor(name)?.data()[i];

        params.tensor_mut(name)?.data_mut()[i] = original + h;
        let up = f(params)?;
        params.tensor_mut(name)?.data_mut()[i] = original - h;
        let down = f(params)?;
        params.tensor_mut(name)?.data_mut()[i] = original;

        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numeric(format!(
                "finite_difference_check: oracle returned non-finite value at {name}[{i}]"
            )));
        }

        let fd = (up - down) / (2.0 * h);
        let g = tape_grads.get(name).map_or(0.0, |v| v[i]);
        let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(REL_FLOOR);
        report.coords_checked += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some((name.clone(), i, fd, g));
        }
    }
    Ok(report)
}
