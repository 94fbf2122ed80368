//! Transducer negative log-likelihood over the alignment lattice.
//!
//! The lattice has states (t, u): t frames consumed, u labels emitted. A
//! blank at (t, u) advances time, an emit consumes label u+1. Every complete
//! alignment ends with the blank at (T-1, U). All dynamic programming runs
//! in log space with a large negative sentinel standing in for log 0.

pub mod decode;

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Log-space "zero": large negative sentinel instead of -inf so sums of
/// impossible scores stay finite and NaN-free.
pub const LOG_ZERO: Real = -1e30;

#[inline]
pub fn logadd(a: Real, b: Real) -> Real {
    if a <= LOG_ZERO / 2.0 {
        return b;
    }
    if b <= LOG_ZERO / 2.0 {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn logsumexp(xs: &[Real]) -> Real {
    let m = xs.iter().fold(Real::NEG_INFINITY, |a, &b| a.max(b));
    if !m.is_finite() || m <= LOG_ZERO / 2.0 {
        return LOG_ZERO;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<Real>().ln()
}

/// Per-u time window restricting which lattice states are reachable.
/// Windows come from a reference alignment padded by left/right buffers.
#[derive(Debug, Clone)]
pub struct AlignmentBand {
    /// Inclusive window [t_left[u], t_right[u]] for each u in 0..=U.
    pub t_left: Vec<usize>,
    pub t_right: Vec<usize>,
}

impl AlignmentBand {
    /// Band covering the entire lattice.
    pub fn full(t_len: usize, num_labels: usize) -> Self {
        AlignmentBand {
            t_left: vec![0; num_labels + 1],
            t_right: vec![t_len.saturating_sub(1); num_labels + 1],
        }
    }

    /// Build a band around a reference alignment. `align[u]` is the frame at
    /// which label u+1 is emitted (non-decreasing). While u labels have been
    /// emitted, time may range from the u-th emission frame minus
    /// `left_buf` up to the (u+1)-th emission frame plus `right_buf`.
    pub fn from_alignment(
        align: &[usize],
        t_len: usize,
        left_buf: usize,
        right_buf: usize,
    ) -> Result<Self> {
        if t_len == 0 {
            return Err(Error::data("alignment band over empty time axis"));
        }
        let u_len = align.len() + 1;
        let mut t_left = vec![0usize; u_len];
        let mut t_right = vec![t_len - 1; u_len];
        for u in 0..u_len {
            if u > 0 {
                t_left[u] = align[u - 1].saturating_sub(left_buf);
            }
            if u < align.len() {
                t_right[u] = (align[u] + right_buf).min(t_len - 1);
            }
        }
        let band = AlignmentBand { t_left, t_right };
        band.validate(t_len, align.len())?;
        Ok(band)
    }

    pub fn contains(&self, t: usize, u: usize) -> bool {
        u < self.t_left.len() && t >= self.t_left[u] && t <= self.t_right[u]
    }

    pub fn validate(&self, t_len: usize, num_labels: usize) -> Result<()> {
        if self.t_left.len() != num_labels + 1 || self.t_right.len() != num_labels + 1 {
            return Err(Error::data(format!(
                "band has {} windows for {} labels",
                self.t_left.len(),
                num_labels
            )));
        }
        for u in 0..=num_labels {
            if self.t_left[u] > self.t_right[u] || self.t_right[u] >= t_len {
                return Err(Error::data(format!(
                    "infeasible band window [{}, {}] at u={u} (T={t_len})",
                    self.t_left[u], self.t_right[u]
                )));
            }
            if u > 0 {
                if self.t_left[u] < self.t_left[u - 1] || self.t_right[u] < self.t_right[u - 1] {
                    return Err(Error::data(format!("band windows not monotone at u={u}")));
                }
                if self.t_left[u] > self.t_right[u - 1] {
                    return Err(Error::data(format!(
                        "band windows for u={} and u={u} do not overlap",
                        u - 1
                    )));
                }
            }
        }
        if !self.contains(0, 0) {
            return Err(Error::data("infeasible band: excludes state (0, 0)"));
        }
        if !self.contains(t_len - 1, num_labels) {
            return Err(Error::data("infeasible band: excludes state (T-1, U)"));
        }
        Ok(())
    }
}

/// Forward/backward tables and the gradient of the loss w.r.t. log_probs.
#[derive(Debug, Clone)]
pub struct TransducerLattice {
    pub t_len: usize,
    /// U + 1.
    pub u_len: usize,
    /// V + 1; blank is the last class.
    pub num_classes: usize,
    pub alpha: Vec<Real>,
    pub beta: Vec<Real>,
    pub loss: Real,
    pub grad: Vec<Real>,
    pub total_alpha: Real,
    pub total_beta: Real,
}

impl TransducerLattice {
    pub fn occupancy(&self, t: usize, u: usize) -> Real {
        let a = self.alpha[t * self.u_len + u];
        let b = self.beta[t * self.u_len + u];
        if a <= LOG_ZERO / 2.0 || b <= LOG_ZERO / 2.0 {
            return 0.0;
        }
        (a + b - self.total_alpha).exp()
    }
}

fn check_inputs(log_probs: &Tensor, labels: &[usize]) -> Result<(usize, usize, usize)> {
    let shape = log_probs.shape();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "transducer_loss",
            lhs: shape.to_vec(),
            rhs: vec![],
        });
    }
    let (t_len, u_len, num_classes) = (shape[0], shape[1], shape[2]);
    if t_len == 0 {
        return Err(Error::data(format!(
            "impossible alignment: {} labels with 0 frames",
            labels.len()
        )));
    }
    if u_len != labels.len() + 1 {
        return Err(Error::ShapeMismatch {
            op: "transducer_loss",
            lhs: vec![t_len, u_len, num_classes],
            rhs: vec![labels.len()],
        });
    }
    if num_classes < 2 {
        return Err(Error::config("transducer needs at least one label class plus blank"));
    }
    let blank = num_classes - 1;
    if let Some(&bad) = labels.iter().find(|&&y| y >= blank) {
        return Err(Error::Vocab(format!(
            "label id {bad} out of range (vocab size {blank}, blank reserved)"
        )));
    }
    if !log_probs.all_finite() {
        return Err(Error::numeric("transducer_loss: non-finite log-probabilities"));
    }
    Ok((t_len, u_len, num_classes))
}

fn warn_if_unnormalized(log_probs: &Tensor, t_len: usize, u_len: usize, num_classes: usize) {
    let data = log_probs.data();
    for r in 0..t_len * u_len {
        let row = &data[r * num_classes..(r + 1) * num_classes];
        let lse = logsumexp(row);
        if lse.abs() > 1e-6 {
            log::warn!(
                "transducer_loss: log-prob row {} sums to exp({lse:.3e}) != 1; \
                 treating values as-is",
                r
            );
            return;
        }
    }
}

/// Forward-backward over the (optionally banded) lattice. Returns the full
/// lattice with loss and analytic gradient w.r.t. the log-probabilities.
pub fn transducer_lattice(
    log_probs: &Tensor,
    labels: &[usize],
    band: Option<&AlignmentBand>,
) -> Result<TransducerLattice> {
    let (t_len, u_len, num_classes) = check_inputs(log_probs, labels)?;
    if let Some(b) = band {
        b.validate(t_len, labels.len())?;
    }
    warn_if_unnormalized(log_probs, t_len, u_len, num_classes);

    let blank = num_classes - 1;
    let lp = |t: usize, u: usize, k: usize| log_probs.data()[(t * u_len + u) * num_classes + k];
    let in_band = |t: usize, u: usize| band.is_none_or(|b| b.contains(t, u));

    let mut alpha = vec![LOG_ZERO; t_len * u_len];
    for t in 0..t_len {
        for u in 0..u_len {
            if !in_band(t, u) {
                continue;
            }
            if t == 0 && u == 0 {
                alpha[0] = 0.0;
                continue;
            }
            let from_blank = if t > 0 && in_band(t - 1, u) {
                alpha[(t - 1) * u_len + u] + lp(t - 1, u, blank)
            } else {
                LOG_ZERO
            };
            let from_emit = if u > 0 && in_band(t, u - 1) {
                alpha[t * u_len + u - 1] + lp(t, u - 1, labels[u - 1])
            } else {
                LOG_ZERO
            };
            alpha[t * u_len + u] = logadd(from_blank, from_emit);
        }
    }
    let total_alpha = alpha[(t_len - 1) * u_len + u_len - 1] + lp(t_len - 1, u_len - 1, blank);

    let mut beta = vec![LOG_ZERO; t_len * u_len];
    for t in (0..t_len).rev() {
        for u in (0..u_len).rev() {
            if !in_band(t, u) {
                continue;
            }
            if t == t_len - 1 && u == u_len - 1 {
                beta[t * u_len + u] = lp(t, u, blank);
                continue;
            }
            let via_blank = if t + 1 < t_len && in_band(t + 1, u) {
                lp(t, u, blank) + beta[(t + 1) * u_len + u]
            } else {
                LOG_ZERO
            };
            let via_emit = if u + 1 < u_len && in_band(t, u + 1) {
                lp(t, u, labels[u]) + beta[t * u_len + u + 1]
            } else {
                LOG_ZERO
            };
            beta[t * u_len + u] = logadd(via_blank, via_emit);
        }
    }
    let total_beta = beta[0];

    if total_alpha <= LOG_ZERO / 2.0 {
        return Err(Error::data(
            "impossible alignment: no path reaches (T-1, U) inside the band",
        ));
    }

    // dL/d lp(t,u,k) = -exp(alpha(t,u) + lp(t,u,k) + beta(next state) - total)
    let mut grad = vec![0.0; t_len * u_len * num_classes];
    for t in 0..t_len {
        for u in 0..u_len {
            if !in_band(t, u) {
                continue;
            }
            let a = alpha[t * u_len + u];
            if a <= LOG_ZERO / 2.0 {
                continue;
            }
            let beta_after_blank = if t == t_len - 1 && u == u_len - 1 {
                0.0
            } else if t + 1 < t_len && in_band(t + 1, u) {
                beta[(t + 1) * u_len + u]
            } else {
                LOG_ZERO
            };
            if beta_after_blank > LOG_ZERO / 2.0 {
                grad[(t * u_len + u) * num_classes + blank] =
                    -(a + lp(t, u, blank) + beta_after_blank - total_alpha).exp();
            }
            if u + 1 < u_len && in_band(t, u + 1) {
                let b = beta[t * u_len + u + 1];
                if b > LOG_ZERO / 2.0 {
                    grad[(t * u_len + u) * num_classes + labels[u]] =
                        -(a + lp(t, u, labels[u]) + b - total_alpha).exp();
                }
            }
        }
    }

    Ok(TransducerLattice {
        t_len,
        u_len,
        num_classes,
        alpha,
        beta,
        loss: -total_alpha,
        grad,
        total_alpha,
        total_beta,
    })
}

/// Negative log-likelihood and its gradient w.r.t. the log-probabilities.
pub fn transducer_loss(log_probs: &Tensor, labels: &[usize]) -> Result<(Real, Tensor)> {
    let lat = transducer_lattice(log_probs, labels, None)?;
    let grad = Tensor::new(log_probs.shape().to_vec(), lat.grad)?;
    Ok((lat.loss, grad))
}

/// Same recurrence with states outside `band` forced to log 0. Equals the
/// full loss when the band covers the whole lattice; otherwise an upper
/// bound on it (fewer alignments, smaller likelihood).
pub fn restricted_transducer_loss(
    log_probs: &Tensor,
    labels: &[usize],
    band: &AlignmentBand,
) -> Result<(Real, Tensor)> {
    let lat = transducer_lattice(log_probs, labels, Some(band))?;
    let grad = Tensor::new(log_probs.shape().to_vec(), lat.grad)?;
    Ok((lat.loss, grad))
}

/// Record the transducer loss on the tape as a scalar with the lattice
/// gradient as its vector-Jacobian product.
pub fn transducer_loss_op(
    tape: &mut Tape,
    log_probs: Var,
    labels: &[usize],
    band: Option<&AlignmentBand>,
) -> Result<Var> {
    let lp = tape.to_tensor(log_probs);
    let lat = transducer_lattice(&lp, labels, band)?;
    tape.opaque_scalar(log_probs, lat.loss, lat.grad)
}

const ENUM_MAX_T: usize = 5;
const ENUM_MAX_U: usize = 4;

/// Score of every complete alignment path, by explicit enumeration. Paths
/// interleave U emits with T blanks, the last move always the blank that
/// consumes the final frame. Exponential in T+U; refuses large lattices.
pub fn enumerate_alignment_scores(
    log_probs: &Tensor,
    labels: &[usize],
    band: Option<&AlignmentBand>,
) -> Result<Vec<Real>> {
    let (t_len, _u_len, num_classes) = check_inputs(log_probs, labels)?;
    if t_len > ENUM_MAX_T || labels.len() > ENUM_MAX_U {
        return Err(Error::config(format!(
            "enumeration oracle refuses T={t_len}, U={} (bounds T<={ENUM_MAX_T}, U<={ENUM_MAX_U})",
            labels.len()
        )));
    }
    let blank = num_classes - 1;
    let u_len = labels.len() + 1;
    let lp = |t: usize, u: usize, k: usize| log_probs.data()[(t * u_len + u) * num_classes + k];
    let in_band = |t: usize, u: usize| band.is_none_or(|b| b.contains(t, u));

    let mut scores = Vec::new();
    // Iterative DFS over (t, u, acc).
    let mut stack = vec![(0usize, 0usize, 0.0)];
    if !in_band(0, 0) {
        return Ok(scores);
    }
    while let Some((t, u, acc)) = stack.pop() {
        if u < labels.len() && in_band(t, u + 1) {
            stack.push((t, u + 1, acc + lp(t, u, labels[u])));
        }
        if t + 1 < t_len {
            if in_band(t + 1, u) {
                stack.push((t + 1, u, acc + lp(t, u, blank)));
            }
        } else if u == labels.len() {
            // final blank consumes the last frame and completes the path
            scores.push(acc + lp(t, u, blank));
        }
    }
    Ok(scores)
}

/// Loss by brute-force enumeration: -logsumexp over all path scores.
pub fn enumerate_alignments_loss(
    log_probs: &Tensor,
    labels: &[usize],
    band: Option<&AlignmentBand>,
) -> Result<Real> {
    let scores = enumerate_alignment_scores(log_probs, labels, band)?;
    if scores.is_empty() {
        return Err(Error::data("impossible alignment: no complete path"));
    }
    Ok(-logsumexp(&scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rng::RngStream;

    /// Random normalized log-prob lattice.
    fn random_lattice(t: usize, u: usize, v: usize, rng: &mut RngStream) -> Tensor {
        let classes = v + 1;
        let mut data = vec![0.0; t * (u + 1) * classes];
        for row in 0..t * (u + 1) {
            let logits: Vec<Real> = (0..classes).map(|_| rng.next_gaussian() as Real).collect();
            let lse = logsumexp(&logits);
            for k in 0..classes {
                data[row * classes + k] = logits[k] - lse;
            }
        }
        Tensor::new(vec![t, u + 1, classes], data).unwrap()
    }

    #[test]
    fn single_blank_path() {
        // T=1, U=0: loss is -log p(blank at (0,0))
        let lp = Tensor::new(vec![1, 1, 3], vec![-1.0, -2.0, -0.5]).unwrap();
        let (loss, _) = transducer_loss(&lp, &[]).unwrap();
        assert!((loss - 0.5).abs() < 1e-12);
        let oracle = enumerate_alignments_loss(&lp, &[], None).unwrap();
        assert!((loss - oracle).abs() < 1e-12);
    }

    #[test]
    fn two_path_hand_case() {
        // T=2, U=1, V=2: the two complete alignments are blank-emit(-blank)
        // and emit-blank(-blank).
        let mut rng = RngStream::new(5);
        let lp = random_lattice(2, 1, 2, &mut rng);
        let labels = [1usize];
        let blank = 2;
        let g = |t: usize, u: usize, k: usize| lp.data()[(t * 2 + u) * 3 + k];
        // path A: emit y at t=0, then blanks at (1,1)... wait: emit first:
        // (0,0) emit -> (0,1), blank -> (1,1), final blank consumes frame 1.
        let path_emit_first = g(0, 0, labels[0]) + g(0, 1, blank) + g(1, 1, blank);
        // path B: blank first: (0,0) blank -> (1,0), emit -> (1,1), final blank.
        let path_blank_first = g(0, 0, blank) + g(1, 0, labels[0]) + g(1, 1, blank);
        let expected = -logadd(path_emit_first, path_blank_first);
        let (loss, _) = transducer_loss(&lp, &labels).unwrap();
        assert!((loss - expected).abs() <= 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn path_count_is_binomial_with_final_blank_fixed() {
        // T blanks and U emits with the last move pinned to blank:
        // C(T-1+U, U) interleavings. For (T=3, U=2) that is C(4, 2) = 6.
        let mut rng = RngStream::new(6);
        let lp = random_lattice(3, 2, 2, &mut rng);
        let scores = enumerate_alignment_scores(&lp, &[0, 1], None).unwrap();
        assert_eq!(scores.len(), 6);
    }

    #[test]
    fn uniform_lattice_matches_oracle() {
        let t = 4;
        let u = 3;
        let v = 3;
        let classes = v + 1;
        let cell = -( (classes as Real).ln() );
        let lp = Tensor::filled(vec![t, u + 1, classes], cell);
        let labels = [0usize, 1, 2];
        let (loss, _) = transducer_loss(&lp, &labels).unwrap();
        let oracle = enumerate_alignments_loss(&lp, &labels, None).unwrap();
        assert!((loss - oracle).abs() <= 1e-9);
    }

    #[test]
    fn dp_matches_enumeration_on_random_lattices() {
        let mut rng = RngStream::new(7);
        for case in 0..120 {
            let t = 1 + (rng.next_below_inclusive(3) as usize);
            let u = (rng.next_below_inclusive(3) as usize).min(t + 1);
            let v = 1 + (rng.next_below_inclusive(2) as usize);
            let lp = random_lattice(t, u, v, &mut rng);
            let labels: Vec<usize> = (0..u)
                .map(|_| rng.next_below_inclusive(v as u64 - 1) as usize)
                .collect();
            let (loss, _) = transducer_loss(&lp, &labels).unwrap();
            let oracle = enumerate_alignments_loss(&lp, &labels, None).unwrap();
            assert!(
                (loss - oracle).abs() <= 1e-9,
                "case {case}: dp {loss} oracle {oracle} (T={t} U={u} V={v})"
            );
        }
    }

    #[test]
    fn alpha_and_beta_totals_agree() {
        let mut rng = RngStream::new(8);
        for _ in 0..50 {
            let lp = random_lattice(4, 3, 3, &mut rng);
            let labels = [0usize, 2, 1];
            let lat = transducer_lattice(&lp, &labels, None).unwrap();
            assert!((lat.total_alpha - lat.total_beta).abs() <= 1e-9);
        }
    }

    #[test]
    fn grad_row_sums_equal_negative_occupancy() {
        let mut rng = RngStream::new(9);
        let lp = random_lattice(4, 2, 3, &mut rng);
        let labels = [1usize, 2];
        let lat = transducer_lattice(&lp, &labels, None).unwrap();
        for t in 0..lat.t_len {
            for u in 0..lat.u_len {
                let row_sum: Real = (0..lat.num_classes)
                    .map(|k| lat.grad[(t * lat.u_len + u) * lat.num_classes + k])
                    .sum();
                // occupancy of interior nodes equals total outgoing flow;
                // (T-1, U)'s only outgoing edge is the final blank
                assert!(
                    (row_sum + lat.occupancy(t, u)).abs() <= 1e-9,
                    "node ({t},{u}): {row_sum} vs -{}",
                    lat.occupancy(t, u)
                );
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = RngStream::new(10);
        let lp = random_lattice(3, 2, 2, &mut rng);
        let labels = [0usize, 1];
        let (_, grad) = transducer_loss(&lp, &labels).unwrap();
        let h = 1e-5;
        let mut worst: Real = 0.0;
        for i in 0..lp.numel() {
            let mut up = lp.clone();
            up.data_mut()[i] += h;
            let mut down = lp.clone();
            down.data_mut()[i] -= h;
            // perturbed rows are no longer normalized, which is fine: the
            // loss is a function of arbitrary finite log-scores
            let (lu, _) = transducer_loss(&up, &labels).unwrap();
            let (ld, _) = transducer_loss(&down, &labels).unwrap();
            let fd = (lu - ld) / (2.0 * h);
            let g = grad.data()[i];
            worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-6));
        }
        assert!(worst <= 1e-4, "worst rel err {worst}");
    }

    #[test]
    fn impossible_alignment_rejected() {
        let lp = Tensor::new(vec![1, 2, 3], vec![-1.0; 6]).unwrap();
        // U=1 labels but T=1 frame is fine (emit then final blank)...
        assert!(transducer_loss(&lp, &[0]).is_ok());
        // ...but T=0 with U>0 cannot host any alignment.
        let empty = Tensor::new(vec![0, 2, 3], vec![]).unwrap();
        assert!(transducer_loss(&empty, &[0]).is_err());
    }

    #[test]
    fn label_out_of_vocab_rejected() {
        let lp = Tensor::new(vec![2, 2, 3], vec![-1.0; 12]).unwrap();
        assert!(matches!(
            transducer_loss(&lp, &[2]),
            Err(Error::Vocab(_))
        ));
    }

    #[test]
    fn full_band_is_identity() {
        let mut rng = RngStream::new(11);
        let lp = random_lattice(4, 3, 3, &mut rng);
        let labels = [0usize, 1, 2];
        let (full, grad_full) = transducer_loss(&lp, &labels).unwrap();
        let band = AlignmentBand::full(4, 3);
        let (restricted, grad_r) = restricted_transducer_loss(&lp, &labels, &band).unwrap();
        assert_eq!(full, restricted);
        assert_eq!(grad_full.data(), grad_r.data());
    }

    #[test]
    fn sub_band_never_beats_full_loss() {
        let mut rng = RngStream::new(12);
        for _ in 0..40 {
            let lp = random_lattice(5, 3, 2, &mut rng);
            let labels = [0usize, 1, 0];
            let (full, _) = transducer_loss(&lp, &labels).unwrap();
            // diagonal-ish alignment at frames 1, 2, 3 with width-2 buffers
            let band = AlignmentBand::from_alignment(&[1, 2, 3], 5, 1, 1).unwrap();
            let (restricted, _) = restricted_transducer_loss(&lp, &labels, &band).unwrap();
            assert!(restricted >= full - 1e-12, "{restricted} < {full}");
        }
    }

    #[test]
    fn restricted_matches_restricted_enumeration() {
        let mut rng = RngStream::new(13);
        for _ in 0..40 {
            let lp = random_lattice(5, 3, 2, &mut rng);
            let labels = [1usize, 0, 1];
            let band = AlignmentBand::from_alignment(&[1, 2, 4], 5, 1, 1).unwrap();
            let (restricted, _) = restricted_transducer_loss(&lp, &labels, &band).unwrap();
            let oracle = enumerate_alignments_loss(&lp, &labels, Some(&band)).unwrap();
            assert!((restricted - oracle).abs() <= 1e-9);
        }
    }

    #[test]
    fn band_excluding_endpoints_is_infeasible() {
        let band = AlignmentBand {
            t_left: vec![1, 1],
            t_right: vec![3, 3],
        };
        assert!(band.validate(4, 1).is_err()); // excludes (0,0)
        let band2 = AlignmentBand {
            t_left: vec![0, 0],
            t_right: vec![2, 2],
        };
        assert!(band2.validate(4, 1).is_err()); // excludes (T-1, U)
    }

    #[test]
    fn enumeration_refuses_large_lattices() {
        let lp = Tensor::filled(vec![6, 1, 2], -0.5);
        assert!(enumerate_alignment_scores(&lp, &[], None).is_err());
    }

    #[test]
    fn loss_op_plugs_into_tape() {
        let mut rng = RngStream::new(14);
        let lp = random_lattice(3, 2, 2, &mut rng);
        let labels = [0usize, 1];
        let mut tape = Tape::new();
        let logits = tape.leaf(&{
            let mut t = lp.clone();
            t.requires_grad = true;
            t
        });
        let loss = transducer_loss_op(&mut tape, logits, &labels, None).unwrap();
        tape.backward(loss).unwrap();
        let (expect_loss, expect_grad) = transducer_loss(&lp, &labels).unwrap();
        assert_eq!(tape.scalar_value(loss), expect_loss);
        assert_eq!(tape.grad(logits).unwrap(), expect_grad.data());
    }
}
