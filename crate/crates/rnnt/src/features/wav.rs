//! Minimal RIFF/WAVE reader and writer for 16-bit mono PCM.

use std::fs;
use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};
use crate::tensor::Real;

fn rd_u32(b: &[u8], off: usize) -> Result<u32> {
    b.get(off..off + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::data("wav: truncated header"))
}

fn rd_u16(b: &[u8], off: usize) -> Result<u16> {
    b.get(off..off + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| Error::data("wav: truncated header"))
}

/// Read a 16-bit mono PCM WAV file; samples scaled to [-1, 1).
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::data(format!("{}: not a RIFF/WAVE file", path.display())));
    }
    let mut off = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = rd_u32(&bytes, off + 4)? as usize;
        let body = off + 8;
        if body + size > bytes.len() {
            return Err(Error::data("wav: chunk overruns file"));
        }
        match id {
            b"fmt " => {
                fmt = Some((
                    rd_u16(&bytes, body)?,
                    rd_u16(&bytes, body + 2)?,
                    rd_u32(&bytes, body + 4)?,
                    rd_u16(&bytes, body + 14)?,
                ));
            }
            b"data" => data = Some(&bytes[body..body + size]),
            _ => {}
        }
        off = body + size + (size & 1);
    }
    let (format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| Error::data("wav: missing fmt chunk"))?;
    if format != 1 || bits != 16 {
        return Err(Error::data(format!(
            "wav: only 16-bit PCM supported (format {format}, {bits} bits)"
        )));
    }
    if channels != 1 {
        return Err(Error::data(format!("wav: expected mono, got {channels} channels")));
    }
    let raw = data.ok_or_else(|| Error::data("wav: missing data chunk"))?;
    let samples: Vec<Real> = raw
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as Real / 32768.0)
        .collect();
    AudioClip::new(samples, sample_rate)
}

/// Write a 16-bit mono PCM WAV file; samples clamped to [-1, 1).
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let n = clip.samples.len();
    let data_size = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 0.999_97) * 32768.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<Real> = (0..320)
            .map(|i| ((i as Real) * 0.05).sin() * 0.5)
            .collect();
        let clip = AudioClip::new(samples, 16000).unwrap();
        write_wav(&path, &clip).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        assert_eq!(back.samples.len(), clip.samples.len());
        for (a, b) in back.samples.iter().zip(&clip.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0 + 1e-9);
        }
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"not a wav at all").unwrap();
        assert!(read_wav(&path).is_err());
    }
}
