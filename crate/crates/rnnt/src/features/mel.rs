//! logMel feature extraction: Hann window, magnitude FFT, HTK-scale mel
//! filterbank, log with a fixed floor.
//!
//! Defaults (the common convention; upstream settings only fix the 80
//! channels and the 25 ms / 10 ms windowing): HTK mel scale, 512-point FFT
//! at 16 kHz, no dither, natural log.

use rustfft::{num_complex::Complex, FftPlanner};

use super::{AudioClip, FeatureMatrix};
use crate::error::{Error, Result};
use crate::tensor::Real;

pub const N_MELS: usize = 80;
pub const N_FFT: usize = 512;
pub const FRAME_LENGTH_MS: usize = 25;
pub const FRAME_SHIFT_MS: usize = 10;
pub const LOG_FLOOR: f64 = 1e-10;

#[inline]
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

#[inline]
pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank over FFT magnitude bins [0, n_fft/2].
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    /// Dense weights, n_mels rows of n_bins.
    pub weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, n_fft: usize, n_mels: usize) -> Self {
        let n_bins = n_fft / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let mel_points: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(hz_to_mel(nyquist) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = vec![0.0; n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, mid, hi) = (mel_points[m], mel_points[m + 1], mel_points[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * sample_rate as f64 / n_fft as f64;
                let w = if f >= lo && f <= mid && mid > lo {
                    (f - lo) / (mid - lo)
                } else if f > mid && f <= hi && hi > mid {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights[m * n_bins + k] = w;
            }
        }
        MelFilterbank {
            n_mels,
            n_bins,
            weights,
        }
    }

    pub fn filter(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    pub fn apply(&self, magnitudes: &[f64]) -> Vec<f64> {
        (0..self.n_mels)
            .map(|m| {
                self.filter(m)
                    .iter()
                    .zip(magnitudes)
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect()
    }
}

/// Frame count for a clip: floor((len - window) / hop) + 1.
pub fn num_frames(len: usize, window: usize, hop: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / hop + 1
    }
}

/// Extract logMel features: per frame Hann window, magnitude FFT, mel
/// filterbank, log(max(x, 1e-10)).
pub fn logmel(clip: &AudioClip, n_mels: usize) -> Result<FeatureMatrix> {
    let sr = clip.sample_rate as usize;
    let window = sr * FRAME_LENGTH_MS / 1000;
    let hop = sr * FRAME_SHIFT_MS / 1000;
    if window == 0 || hop == 0 {
        return Err(Error::config(format!("sample rate {sr} too low to frame")));
    }
    if window > N_FFT {
        return Err(Error::config(format!(
            "window of {window} samples exceeds the {N_FFT}-point FFT"
        )));
    }
    let t_len = num_frames(clip.samples.len(), window, hop);
    if t_len == 0 {
        return Err(Error::data(format!(
            "clip of {} samples is shorter than one {window}-sample window",
            clip.samples.len()
        )));
    }

    let bank = MelFilterbank::new(clip.sample_rate, N_FFT, n_mels);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(N_FFT);
    let hann: Vec<f64> = (0..window)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (window - 1) as f64).cos())
        .collect();

    let mut data = vec![0.0 as Real; t_len * n_mels];
    let mut buf = vec![Complex::new(0.0f64, 0.0); N_FFT];
    for t in 0..t_len {
        for c in buf.iter_mut() {
            *c = Complex::new(0.0, 0.0);
        }
        for i in 0..window {
            buf[i] = Complex::new(clip.samples[t * hop + i] as f64 * hann[i], 0.0);
        }
        fft.process(&mut buf);
        let mags: Vec<f64> = buf[..N_FFT / 2 + 1].iter().map(|c| c.norm()).collect();
        for (m, e) in bank.apply(&mags).into_iter().enumerate() {
            data[t * n_mels + m] = e.max(LOG_FLOOR).ln() as Real;
        }
    }
    FeatureMatrix::new(t_len, n_mels, data)
}
