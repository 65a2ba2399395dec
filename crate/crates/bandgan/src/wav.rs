//! 16-bit PCM mono WAV reading and writing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Write samples as 16-bit PCM mono, clamping to [-1, 1).
pub fn write_mono16(path: &Path, sample_rate: u32, samples: &[f32]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let data_len = (samples.len() * 2) as u32;
    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_len).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&sample_rate.to_le_bytes())?;
    w.write_all(&(sample_rate * 2).to_le_bytes())?;
    w.write_all(&2u16.to_le_bytes())?;
    w.write_all(&16u16.to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&data_len.to_le_bytes())?;
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0 - 1.0 / 32768.0) * 32768.0).round() as i16;
        w.write_all(&q.to_le_bytes())?;
    }
    Ok(())
}

/// Read a 16-bit PCM mono WAV file. Returns (samples in [-1, 1), sample rate).
pub fn read_mono16(path: &Path) -> Result<(Vec<f32>, u32)> {
    let mut r = BufReader::new(File::open(path)?);
    let bad = |msg: &str| Error::Input(format!("{}: {msg}", path.display()));

    let mut hdr = [0u8; 12];
    r.read_exact(&mut hdr).map_err(|_| bad("truncated header"))?;
    if &hdr[0..4] != b"RIFF" || &hdr[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    loop {
        let mut chunk = [0u8; 8];
        if r.read_exact(&mut chunk).is_err() {
            return Err(bad("no data chunk"));
        }
        let id = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let len = u32::from_le_bytes(chunk[4..8].try_into().unwrap()) as usize;
        match &id {
            b"fmt " => {
                let mut body = vec![0u8; len];
                r.read_exact(&mut body).map_err(|_| bad("truncated fmt chunk"))?;
                let u16_at = |o: usize| u16::from_le_bytes(body[o..o + 2].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                fmt = Some((u16_at(0), u16_at(2), rate, u16_at(14)));
            }
            b"data" => {
                let Some((tag, channels, rate, bits)) = fmt else {
                    return Err(bad("data chunk before fmt chunk"));
                };
                if tag != 1 || channels != 1 || bits != 16 {
                    return Err(bad("only 16-bit PCM mono is supported"));
                }
                let mut body = vec![0u8; len];
                r.read_exact(&mut body).map_err(|_| bad("truncated data chunk"))?;
                let samples = body
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
                    .collect();
                return Ok((samples, rate));
            }
            _ => {
                // skip unknown chunks (word-aligned)
                let skip = len + (len & 1);
                std::io::copy(&mut r.by_ref().take(skip as u64), &mut std::io::sink())?;
            }
        }
    }
}
