//! Audio front-end: speed perturbation, logMel filterbank features, and
//! SpecAugment masking. The harness can also bypass audio entirely and read
//! precomputed feature matrices (see `featio`).

pub mod featio;
pub mod mel;
pub mod specaug;
pub mod wav;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Mono audio buffer.
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<Real>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<Real>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::config("sample_rate must be > 0"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::data("audio clip contains non-finite samples"));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn duration_samples(&self) -> usize {
        self.samples.len()
    }
}

/// T x n_mels feature matrix (row per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Real>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Real>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::ShapeMismatch {
                op: "feature_matrix",
                lhs: vec![rows, cols],
                rhs: vec![data.len()],
            });
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn at(&self, t: usize, m: usize) -> Real {
        self.data[t * self.cols + m]
    }

    pub fn row(&self, t: usize) -> &[Real] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.cols], self.data.clone())
            .expect("consistent feature matrix")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if !t.is_matrix() {
            return Err(Error::ShapeMismatch {
                op: "feature_matrix",
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        FeatureMatrix::new(t.rows(), t.cols(), t.data().to_vec())
    }
}

/// Time-axis resampling by linear interpolation. A ratio of 0.9 slows the
/// clip down (longer output), 1.1 speeds it up; output length is
/// round(len / ratio).
pub fn speed_perturb(clip: &AudioClip, ratio: Real) -> Result<AudioClip> {
    if ratio <= 0.0 {
        return Err(Error::config(format!("speed ratio {ratio} must be > 0")));
    }
    let n_in = clip.samples.len();
    if n_in == 0 {
        return Ok(clip.clone());
    }
    if ratio == 1.0 {
        return Ok(clip.clone());
    }
    let n_out = ((n_in as Real) / ratio).round() as usize;
    let mut out = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let pos = i as Real * ratio;
        let lo = pos.floor() as usize;
        if lo + 1 >= n_in {
            out.push(clip.samples[n_in - 1]);
        } else {
            let frac = pos - lo as Real;
            out.push(clip.samples[lo] * (1.0 - frac) + clip.samples[lo + 1] * frac);
        }
    }
    AudioClip::new(out, clip.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: Real, sr: u32, n: usize) -> AudioClip {
        let samples = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI as Real * freq * i as Real / sr as Real).sin())
            .collect();
        AudioClip::new(samples, sr).unwrap()
    }

    #[test]
    fn identity_ratio_is_exact() {
        let clip = sine(100.0, 16000, 1000);
        let out = speed_perturb(&clip, 1.0).unwrap();
        assert_eq!(out.samples, clip.samples);
    }

    #[test]
    fn length_arithmetic() {
        let clip = sine(100.0, 16000, 1000);
        let out = speed_perturb(&clip, 0.9).unwrap();
        let expect = (1000.0f64 / 0.9).round() as usize;
        assert!((out.samples.len() as i64 - expect as i64).abs() <= 1);
    }

    #[test]
    fn empty_clip_passes_through() {
        let clip = AudioClip::new(vec![], 16000).unwrap();
        assert_eq!(speed_perturb(&clip, 0.9).unwrap().samples.len(), 0);
    }

    #[test]
    fn round_trip_duration_within_two_samples() {
        let clip = sine(220.0, 16000, 4096);
        for ratio in [0.9, 1.1] {
            let there = speed_perturb(&clip, ratio).unwrap();
            let back = speed_perturb(&there, 1.0 / ratio).unwrap();
            let diff = (back.samples.len() as i64 - clip.samples.len() as i64).abs();
            assert!(diff <= 2, "ratio {ratio}: diff {diff}");
        }
    }

    #[test]
    fn sine_frequency_shifts_by_ratio() {
        // 100 Hz at ratio 1.1 should peak at 110 Hz (FFT oracle)
        use rustfft::{num_complex::Complex, FftPlanner};
        let n = 8192;
        let clip = sine(100.0, 16000, n + 1024);
        let out = speed_perturb(&clip, 1.1).unwrap();
        let mut buf: Vec<Complex<f64>> = out.samples[..n]
            .iter()
            .map(|&s| Complex::new(s as f64, 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let peak = (1..n / 2)
            .max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap())
            .unwrap();
        let bin_hz = 16000.0 / n as f64;
        let peak_hz = peak as f64 * bin_hz;
        assert!(
            (peak_hz - 110.0).abs() <= bin_hz + 1e-9,
            "peak at {peak_hz} Hz"
        );
    }
}
