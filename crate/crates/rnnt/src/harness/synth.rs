//! Synthetic tasks standing in for real speech at desk scale. Each token
//! has a fixed random template vector; an utterance repeats its tokens'
//! templates for a few frames each, plus Gaussian feature noise. Every
//! utterance carries its exact token-end alignment.

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::harness::config::{SyntheticTaskConfig, TaskKind};
use crate::tensor::rng::RngStream;
use crate::tensor::{Real, Tensor};

const TEMPLATE_STREAM: u64 = 0;
const UTTERANCE_STREAM: u64 = 1;

/// Fixed per-token template vectors for a task.
pub fn token_templates(task: &SyntheticTaskConfig, rng: &RngStream) -> Vec<Vec<Real>> {
    let mut trng = rng.substream(TEMPLATE_STREAM);
    (0..task.vocab_size)
        .map(|_| {
            let mut v = vec![0.0f64; task.feat_dim];
            trng.fill_gaussian(&mut v);
            v.into_iter().map(|x| x as Real).collect()
        })
        .collect()
}

/// Generate `count` utterances. Ids are 0..count; item i is a pure function
/// of (rng, i), so corpora are reproducible and order-independent.
pub fn generate_synthetic_corpus(
    task: &SyntheticTaskConfig,
    count: usize,
    rng: &RngStream,
) -> Result<Vec<Utterance>> {
    if task.vocab_size < 2 {
        return Err(Error::config("synthetic vocab_size must be >= 2"));
    }
    if count == 0 {
        return Err(Error::config("synthetic corpus count must be >= 1"));
    }
    if task.min_len == 0 || task.max_len < task.min_len || task.frames_per_token == 0 {
        return Err(Error::config("synthetic length parameters invalid"));
    }
    let templates = token_templates(task, rng);
    let delay = match task.kind {
        TaskKind::Copy => 0,
        TaskKind::DelayedCopy => task.delay_frames,
    };

    let mut out = Vec::with_capacity(count);
    for id in 0..count {
        let mut urng = rng.substream(UTTERANCE_STREAM).substream(id as u64);
        let len = task.min_len
            + urng.next_below_inclusive((task.max_len - task.min_len) as u64) as usize;
        let labels: Vec<usize> = (0..len)
            .map(|_| urng.next_below_inclusive(task.vocab_size as u64 - 1) as usize)
            .collect();
        let t_len = delay + len * task.frames_per_token;
        let mut data = vec![0.0 as Real; t_len * task.feat_dim];
        for (u, &y) in labels.iter().enumerate() {
            for k in 0..task.frames_per_token {
                let t = delay + u * task.frames_per_token + k;
                data[t * task.feat_dim..(t + 1) * task.feat_dim]
                    .copy_from_slice(&templates[y]);
            }
        }
        if task.feature_noise_std > 0.0 {
            let mut noise = vec![0.0f64; data.len()];
            urng.fill_gaussian(&mut noise);
            for (d, n) in data.iter_mut().zip(noise) {
                *d += task.feature_noise_std * n as Real;
            }
        }
        let alignment: Vec<usize> = (0..len)
            .map(|u| delay + (u + 1) * task.frames_per_token - 1)
            .collect();
        out.push(Utterance {
            id,
            features: Tensor::new(vec![t_len, task.feat_dim], data)?,
            labels,
            alignment: Some(alignment),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> SyntheticTaskConfig {
        SyntheticTaskConfig {
            vocab_size: 5,
            min_len: 4,
            max_len: 4,
            frames_per_token: 3,
            feature_noise_std: 0.0,
            feat_dim: 6,
            ..SyntheticTaskConfig::default()
        }
    }

    #[test]
    fn noiseless_features_are_exact_templates() {
        let t = task();
        let rng = RngStream::new(7);
        let corpus = generate_synthetic_corpus(&t, 3, &rng).unwrap();
        let templates = token_templates(&t, &rng);
        for utt in &corpus {
            for (u, &y) in utt.labels.iter().enumerate() {
                for k in 0..3 {
                    let row = utt.features.row(u * 3 + k);
                    assert_eq!(row, &templates[y][..]);
                }
            }
        }
    }

    #[test]
    fn frame_count_arithmetic() {
        // 4 labels x 3 frames-per-token = 12 frames
        let t = task();
        let corpus = generate_synthetic_corpus(&t, 2, &RngStream::new(8)).unwrap();
        for utt in &corpus {
            assert_eq!(utt.labels.len(), 4);
            assert_eq!(utt.num_frames(), 12);
            assert_eq!(utt.alignment.as_ref().unwrap(), &vec![2, 5, 8, 11]);
        }
    }

    #[test]
    fn delayed_copy_shifts_alignment() {
        let mut t = task();
        t.kind = TaskKind::DelayedCopy;
        t.delay_frames = 4;
        let corpus = generate_synthetic_corpus(&t, 1, &RngStream::new(9)).unwrap();
        assert_eq!(corpus[0].num_frames(), 16);
        assert_eq!(corpus[0].alignment.as_ref().unwrap()[0], 6);
        // silence prefix
        for t_idx in 0..4 {
            assert!(corpus[0].features.row(t_idx).iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let t = task();
        let a = generate_synthetic_corpus(&t, 4, &RngStream::new(10)).unwrap();
        let b = generate_synthetic_corpus(&t, 4, &RngStream::new(10)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.features.data(), y.features.data());
            assert_eq!(x.labels, y.labels);
        }
    }

    #[test]
    fn tiny_vocab_rejected() {
        let mut t = task();
        t.vocab_size = 1;
        assert!(generate_synthetic_corpus(&t, 1, &RngStream::new(11)).is_err());
    }
}
