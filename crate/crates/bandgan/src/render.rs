//! Spectrogram rendering as binary portable graymaps (P5).
//!
//! Time runs left to right, mel bin 0 sits at the bottom. Gray levels map
//! the whole sequence's min..max linearly to 0..255 so slices of one
//! utterance share a scale; a constant sequence renders mid-gray.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureSequence};

/// Frames whose center time falls inside [start_ms, end_ms).
pub fn frames_in_range(
    seq: &FeatureSequence,
    cfg: &FeatureConfig,
    start_ms: f64,
    end_ms: f64,
) -> Result<(usize, usize)> {
    if !(start_ms < end_ms) {
        return Err(Error::Input(format!(
            "empty time range [{start_ms}, {end_ms})"
        )));
    }
    let center = |t: usize| t as f64 * cfg.frame_shift_ms + cfg.frame_length_ms / 2.0;
    let mut lo = None;
    let mut hi = 0;
    for t in 0..seq.t() {
        let c = center(t);
        if c >= start_ms && c < end_ms {
            if lo.is_none() {
                lo = Some(t);
            }
            hi = t + 1;
        }
    }
    let Some(lo) = lo else {
        return Err(Error::Input(format!(
            "no frames inside [{start_ms}, {end_ms}) ms"
        )));
    };
    Ok((lo, hi))
}

/// Render a time slice to a P5 graymap: width = frames in range,
/// height = n_mels.
pub fn render_spectrogram(
    seq: &FeatureSequence,
    cfg: &FeatureConfig,
    start_ms: f64,
    end_ms: f64,
    path: &Path,
) -> Result<()> {
    let (lo, hi) = frames_in_range(seq, cfg, start_ms, end_ms)?;
    let width = hi - lo;
    let height = seq.n_mels;

    let min = seq.frames.iter().cloned().fold(f32::INFINITY, f32::min);
    let max = seq.frames.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let level = |v: f32| -> u8 {
        if max > min {
            (((v - min) / (max - min)) * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            128
        }
    };

    let mut body = Vec::with_capacity(width * height);
    for row in 0..height {
        let bin = height - 1 - row; // bin 0 at the bottom
        for t in lo..hi {
            body.push(level(seq.row(t)[bin]));
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&body);
    fs::write(path, out)?;
    Ok(())
}
