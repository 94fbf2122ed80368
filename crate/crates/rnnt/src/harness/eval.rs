//! Token error scoring via minimum edit distance, and whole-dataset
//! evaluation with greedy decoding.

use crate::data::Utterance;
use crate::error::Result;
use crate::loss::decode::decode_utterance;
use crate::model::{ModelParams, RnntModel};
use crate::tensor::tape::Mode;
use crate::tensor::rng::RngStream;
use crate::tensor::tape::Tape;
use crate::tensor::Real;

/// Levenshtein alignment counts between a reference and a hypothesis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WerStats {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub hits: usize,
    pub ref_len: usize,
}

impl WerStats {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// (S + D + I) / N. An empty reference scores 0 against an empty
    /// hypothesis and 1 otherwise.
    pub fn rate(&self) -> Real {
        if self.ref_len == 0 {
            if self.insertions == 0 {
                0.0
            } else {
                1.0
            }
        } else {
            self.errors() as Real / self.ref_len as Real
        }
    }

    pub fn accumulate(&mut self, other: &WerStats) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.hits += other.hits;
        self.ref_len += other.ref_len;
    }
}

/// Minimum-edit-distance alignment over token sequences, with the standard
/// unit costs and a backtrace to split errors into S/D/I.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> WerStats {
    let n = reference.len();
    let m = hypothesis.len();
    // dp[i][j]: cost of aligning ref[..i] with hyp[..j]
    let mut dp = vec![0usize; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        dp[idx(i, 0)] = i;
    }
    for j in 0..=m {
        dp[idx(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[idx(i - 1, j - 1)] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = dp[idx(i - 1, j)] + 1;
            let ins = dp[idx(i, j - 1)] + 1;
            dp[idx(i, j)] = sub.min(del).min(ins);
        }
    }

    let mut stats = WerStats {
        ref_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let here = dp[idx(i, j)];
            let diag = dp[idx(i - 1, j - 1)];
            if reference[i - 1] == hypothesis[j - 1] && here == diag {
                stats.hits += 1;
                i -= 1;
                j -= 1;
                continue;
            }
            if here == diag + 1 {
                stats.substitutions += 1;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[idx(i, j)] == dp[idx(i - 1, j)] + 1 {
            stats.deletions += 1;
            i -= 1;
        } else {
            stats.insertions += 1;
            j -= 1;
        }
    }
    stats
}

#[derive(Debug, Clone, Copy)]
pub struct EvalReport {
    /// Corpus-level token error rate (identical scoring feeds both fields;
    /// tokens are the word unit at desk scale).
    pub wer: Real,
    pub ter: Real,
    pub stats: WerStats,
    pub mean_loss: Real,
    pub utterances: usize,
}

/// Greedy-decode every utterance and score against the reference labels;
/// also reports the eval-mode mean loss.
pub fn evaluate(
    model: &RnntModel,
    params: &ModelParams,
    dataset: &[Utterance],
    max_symbols_per_frame: usize,
) -> Result<EvalReport> {
    let mut stats = WerStats::default();
    let mut loss_sum = 0.0;
    for utt in dataset {
        let hyp = decode_utterance(model, params, &utt.features, max_symbols_per_frame)?;
        stats.accumulate(&wer(&utt.labels, &hyp));
        loss_sum += utterance_eval_loss(model, params, utt)?;
    }
    let rate = stats.rate();
    Ok(EvalReport {
        wer: rate,
        ter: rate,
        stats,
        mean_loss: loss_sum / dataset.len().max(1) as Real,
        utterances: dataset.len(),
    })
}

/// Eval-mode transducer loss for one utterance (no noise, no dropout).
pub fn utterance_eval_loss(
    model: &RnntModel,
    params: &ModelParams,
    utt: &Utterance,
) -> Result<Real> {
    let mut tape = Tape::new();
    let pv = params.bind(&mut tape);
    let mut rng = RngStream::new(0);
    let loss = model.utterance_loss(
        &mut tape,
        &pv,
        &utt.features,
        &utt.labels,
        None,
        0.0,
        Mode::Eval,
        &mut rng,
    )?;
    debug_assert_eq!(rng.draw_count(), 0);
    Ok(tape.scalar_value(loss))
}

/// Mean eval loss over a dataset.
pub fn dataset_eval_loss(
    model: &RnntModel,
    params: &ModelParams,
    dataset: &[Utterance],
) -> Result<Real> {
    let mut sum = 0.0;
    for utt in dataset {
        sum += utterance_eval_loss(model, params, utt)?;
    }
    Ok(sum / dataset.len().max(1) as Real)
}
