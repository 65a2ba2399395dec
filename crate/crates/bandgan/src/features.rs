//! Log-Mel filterbank front end.
//!
//! Audio goes through the conventional ASR chain: framing, Hamming window,
//! FFT power spectrum, triangular mel filters, natural log with a floor.
//! Sequences are then stacked into fixed context windows — the
//! (1, 2·context+1, n_mels) unit every network in this crate consumes —
//! and enhanced windows are reassembled by taking center frames.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::wav;

/// Raw mono audio in [-1, 1].
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Input("audio clip is empty".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn from_wav(path: &Path) -> Result<Self> {
        let (samples, sample_rate) = wav::read_mono16(path)?;
        AudioClip::new(samples, sample_rate)
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Window taper applied to each frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowKind {
    #[default]
    Hamming,
}

/// Front-end parameters. Defaults match the feature space the enhancement
/// networks are sized for: 40 mel bins, 25 ms frames every 10 ms, a context
/// of 5 frames each side.
#[derive(Debug, Clone)]
pub struct FeatureConfig {
    pub n_mels: usize,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub window: WindowKind,
    /// Minimum pre-log mel energy; keeps silence finite.
    pub log_floor: f64,
    /// Frames of context on each side of the current frame.
    pub context: usize,
    pub n_fft: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            n_mels: 40,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            window: WindowKind::Hamming,
            log_floor: 1e-10,
            context: 5,
            n_fft: 512,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be >= 1".into()));
        }
        if self.frame_shift_ms > self.frame_length_ms || self.frame_shift_ms <= 0.0 {
            return Err(Error::Config(
                "frame shift must be positive and <= frame length".into(),
            ));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::Config("log_floor must be > 0".into()));
        }
        if !self.n_fft.is_power_of_two() {
            return Err(Error::Config(format!(
                "n_fft must be a power of two, got {}",
                self.n_fft
            )));
        }
        Ok(())
    }

    pub fn frame_len_samples(&self, sample_rate: u32) -> usize {
        (self.frame_length_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn shift_samples(&self, sample_rate: u32) -> usize {
        (self.frame_shift_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    /// Rows of one context window: 2·context + 1.
    pub fn window_rows(&self) -> usize {
        2 * self.context + 1
    }
}

/// T x n_mels log-Mel energies, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Vec<f32>,
    pub n_mels: usize,
    /// Originating utterance id.
    pub meta: String,
}

impl FeatureSequence {
    pub fn new(frames: Vec<f32>, n_mels: usize, meta: impl Into<String>) -> Result<Self> {
        if n_mels == 0 || frames.is_empty() || frames.len() % n_mels != 0 {
            return Err(Error::Input(format!(
                "feature sequence of {} values is not a multiple of {} bins",
                frames.len(),
                n_mels
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("feature sequence contains non-finite values".into()));
        }
        Ok(FeatureSequence {
            frames,
            n_mels,
            meta: meta.into(),
        })
    }

    pub fn t(&self) -> usize {
        self.frames.len() / self.n_mels
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.frames[t * self.n_mels..(t + 1) * self.n_mels]
    }
}

/// One (1, rows, n_mels) network input unit.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub data: Vec<f32>,
    pub rows: usize,
    pub n_mels: usize,
}

impl FeatureWindow {
    pub fn shape(&self) -> (usize, usize, usize) {
        (1, self.rows, self.n_mels)
    }

    pub fn center_row(&self) -> &[f32] {
        let c = self.rows / 2;
        &self.data[c * self.n_mels..(c + 1) * self.n_mels]
    }
}

/// Triangular mel filter weights, one row per mel bin.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub n_mels: usize,
    /// n_fft/2 + 1 spectrum bins per row.
    pub n_bins: usize,
    pub weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Build the n_mels x (n_fft/2 + 1) triangular filter matrix spanning
/// 0 Hz to Nyquist on the mel scale.
pub fn mel_filterbank_matrix(
    config: &FeatureConfig,
    sample_rate: u32,
    n_fft: usize,
) -> Result<MelFilterbank> {
    config.validate()?;
    if !n_fft.is_power_of_two() || n_fft < config.frame_len_samples(sample_rate) {
        return Err(Error::Config(format!(
            "n_fft {n_fft} must be a power of two >= the {}-sample frame",
            config.frame_len_samples(sample_rate)
        )));
    }
    let n_mels = config.n_mels;
    let n_bins = n_fft / 2 + 1;
    let fmax = sample_rate as f64 / 2.0;
    let mel_lo = hz_to_mel(0.0);
    let mel_hi = hz_to_mel(fmax);
    let pts: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    let mut weights = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, mid, hi) = (pts[m], pts[m + 1], pts[m + 2]);
        let mut peak = 0.0f64;
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let up = (f - lo) / (mid - lo);
            let down = (hi - f) / (hi - mid);
            let w = up.min(down).max(0.0);
            weights[m * n_bins + k] = w;
            peak = peak.max(w);
        }
        if peak == 0.0 {
            return Err(Error::Config(format!(
                "n_mels {n_mels} is too large for n_fft {n_fft} at {sample_rate} Hz: filter {m} covers no FFT bin"
            )));
        }
    }
    Ok(MelFilterbank {
        n_mels,
        n_bins,
        weights,
    })
}

fn window_taper(kind: WindowKind, n: usize) -> Vec<f64> {
    match kind {
        WindowKind::Hamming => (0..n)
            .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
            .collect(),
    }
}

/// Number of frames for a clip of `len` samples.
pub fn frame_count(len: usize, frame_len: usize, shift: usize) -> Option<usize> {
    if len < frame_len {
        return None;
    }
    Some(1 + (len - frame_len) / shift)
}

/// Full front end: framing, window, FFT power spectrum, mel filters,
/// ln with floor. Deterministic for identical input and config.
pub fn compute_log_mel(clip: &AudioClip, config: &FeatureConfig) -> Result<FeatureSequence> {
    config.validate()?;
    let frame_len = config.frame_len_samples(clip.sample_rate);
    let shift = config.shift_samples(clip.sample_rate);
    let Some(t) = frame_count(clip.samples.len(), frame_len, shift) else {
        return Err(Error::Input(format!(
            "clip of {} samples is shorter than one {frame_len}-sample frame",
            clip.samples.len()
        )));
    };
    let bank = mel_filterbank_matrix(config, clip.sample_rate, config.n_fft)?;
    let taper = window_taper(config.window, frame_len);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(config.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); config.n_fft];
    let mut power = vec![0.0f64; bank.n_bins];

    let mut frames = Vec::with_capacity(t * config.n_mels);
    for ti in 0..t {
        let start = ti * shift;
        for (i, c) in buf.iter_mut().enumerate() {
            let s = if i < frame_len {
                clip.samples[start + i] as f64 * taper[i]
            } else {
                0.0
            };
            *c = Complex::new(s, 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        for m in 0..config.n_mels {
            let row = bank.row(m);
            let mut e = 0.0f64;
            for (w, p) in row.iter().zip(&power) {
                e += w * p;
            }
            frames.push(e.max(config.log_floor).ln() as f32);
        }
    }
    FeatureSequence::new(frames, config.n_mels, "")
}

/// One window per frame; rows t-context .. t+context with edge replication.
pub fn stack_context_windows(seq: &FeatureSequence, context: usize) -> Vec<FeatureWindow> {
    let t = seq.t() as isize;
    let rows = 2 * context + 1;
    (0..t)
        .map(|ti| {
            let mut data = Vec::with_capacity(rows * seq.n_mels);
            for off in -(context as isize)..=(context as isize) {
                let src = (ti + off).clamp(0, t - 1) as usize;
                data.extend_from_slice(seq.row(src));
            }
            FeatureWindow {
                data,
                rows,
                n_mels: seq.n_mels,
            }
        })
        .collect()
}

/// Frame t of the result is the center row of window t; the exact inverse
/// of [`stack_context_windows`].
pub fn unstack_center_frames(windows: &[FeatureWindow]) -> Result<FeatureSequence> {
    let Some(first) = windows.first() else {
        return Err(Error::Input("no windows to unstack".into()));
    };
    let shape = first.shape();
    let mut frames = Vec::with_capacity(windows.len() * first.n_mels);
    for w in windows {
        if w.shape() != shape {
            return Err(Error::Input(format!(
                "inconsistent window shapes: {:?} vs {:?}",
                w.shape(),
                shape
            )));
        }
        frames.extend_from_slice(w.center_row());
    }
    FeatureSequence::new(frames, first.n_mels, "")
}

const FEATURE_MAGIC: &[u8; 4] = b"BGSE";
const FEATURE_VERSION: u32 = 1;

/// Write the binary feature file: magic "BGSE", version, T, n_mels, then
/// T*n_mels little-endian f32 row-major.
pub fn write_feature_file(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(seq.t() as u32).to_le_bytes())?;
    w.write_all(&(seq.n_mels as u32).to_le_bytes())?;
    for v in &seq.frames {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<FeatureSequence> {
    let mut r = BufReader::new(File::open(path)?);
    let bad = |msg: &str| Error::Input(format!("{}: {msg}", path.display()));
    let mut head = [0u8; 16];
    r.read_exact(&mut head).map_err(|_| bad("truncated feature header"))?;
    if &head[0..4] != FEATURE_MAGIC {
        return Err(bad("bad magic, not a BGSE feature file"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(bad(&format!("unsupported feature file version {version}")));
    }
    let t = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let n_mels = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
    let mut body = vec![0u8; t * n_mels * 4];
    r.read_exact(&mut body).map_err(|_| bad("truncated feature payload"))?;
    let frames = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let meta = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureSequence::new(frames, n_mels, meta)
}
