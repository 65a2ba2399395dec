//! The inference path and its desk-scale quality metric.
//!
//! Enhancement runs features through the routed generator window by
//! window and reassembles the center frames, so the output always has the
//! input's frame count. Quality is quantified as log-spectral distance
//! (RMS difference of two log-Mel sequences) of enhanced-vs-clean against
//! noisy-vs-clean.

use std::fmt::Write as _;

use crate::autodiff::Scalar;
use crate::corpus::{load_features, CorpusManifest, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::{
    stack_context_windows, unstack_center_frames, FeatureConfig, FeatureSequence, FeatureWindow,
};
use crate::losses::Domain;
use crate::models::{window_batch, EnhanceMap};
use crate::routing::GeneratorBank;

/// Map a whole feature sequence through an enhancement map: stack context
/// windows, run them as one batch, take center frames. Output frame count
/// equals input frame count.
pub fn enhance_features<S: Scalar>(
    map: &impl EnhanceMap<S>,
    seq: &FeatureSequence,
    context: usize,
) -> Result<FeatureSequence> {
    let windows = stack_context_windows(seq, context);
    let refs: Vec<&FeatureWindow> = windows.iter().collect();
    let batch = window_batch::<S>(&refs)?;
    let out = map.apply(&batch)?;
    if out.shape() != batch.shape() {
        return Err(Error::Shape(format!(
            "enhancement changed the batch shape: {:?} -> {:?}",
            batch.shape(),
            out.shape()
        )));
    }
    let rows = 2 * context + 1;
    let wlen = rows * seq.n_mels;
    let enhanced: Vec<FeatureWindow> = out
        .values()
        .chunks_exact(wlen)
        .map(|chunk| FeatureWindow {
            data: chunk.iter().map(|&v| v.as_f64() as f32).collect(),
            rows,
            n_mels: seq.n_mels,
        })
        .collect();
    let mut result = unstack_center_frames(&enhanced)?;
    result.meta = seq.meta.clone();
    Ok(result)
}

/// Enhance one noisy utterance with its routed generator (eval mode).
pub fn enhance_utterance<S: Scalar>(
    bank: &GeneratorBank<S>,
    record: &UtteranceRecord,
    feat_cfg: &FeatureConfig,
) -> Result<FeatureSequence> {
    if record.domain != Domain::A {
        return Err(Error::Routing(format!(
            "utterance '{}' is not in the noisy domain",
            record.id
        )));
    }
    let key = record.key().ok_or_else(|| {
        Error::Routing(format!(
            "utterance '{}' lacks the gender/noise metadata routing needs",
            record.id
        ))
    })?;
    let seq = load_features(record, feat_cfg)?;
    let generator = bank.instance_for(key).g_a.bind(false);
    enhance_features(&generator, &seq, feat_cfg.context)
}

/// RMS difference over all (frame, bin) cells of two equal-shape log-Mel
/// sequences. Symmetric, non-negative, zero iff bitwise equal.
pub fn log_spectral_distance(a: &FeatureSequence, b: &FeatureSequence) -> Result<f64> {
    if a.t() != b.t() || a.n_mels != b.n_mels {
        return Err(Error::Input(format!(
            "LSD needs matching shapes: {}x{} vs {}x{}",
            a.t(),
            a.n_mels,
            b.t(),
            b.n_mels
        )));
    }
    let sum: f64 = a
        .frames
        .iter()
        .zip(&b.frames)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok((sum / a.frames.len() as f64).sqrt())
}

/// Per-utterance evaluation row.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub utt_id: String,
    pub lsd_noisy: f64,
    pub lsd_enhanced: f64,
    /// Relative improvement: (lsd_noisy - lsd_enhanced) / lsd_noisy.
    pub improvement: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_lsd_noisy: f64,
    pub mean_lsd_enhanced: f64,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> EvalReport {
        let n = rows.len().max(1) as f64;
        let mean_lsd_noisy = rows.iter().map(|r| r.lsd_noisy).sum::<f64>() / n;
        let mean_lsd_enhanced = rows.iter().map(|r| r.lsd_enhanced).sum::<f64>() / n;
        EvalReport {
            rows,
            mean_lsd_noisy,
            mean_lsd_enhanced,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("utt_id,lsd_noisy,lsd_enhanced,improvement\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{}",
                r.utt_id, r.lsd_noisy, r.lsd_enhanced, r.improvement
            )
            .unwrap();
        }
        out
    }
}

/// Clean-reference record for a noisy id: `<stem>_noisy` pairs with
/// `<stem>_clean`. The pairing is an evaluation-only convention.
pub fn clean_reference<'a>(
    manifest: &'a CorpusManifest,
    noisy: &UtteranceRecord,
) -> Result<&'a UtteranceRecord> {
    let stem = noisy.id.strip_suffix("_noisy").ok_or_else(|| {
        Error::Input(format!(
            "cannot derive a clean reference for '{}' (expected an id ending in _noisy)",
            noisy.id
        ))
    })?;
    let clean_id = format!("{stem}_clean");
    manifest
        .records
        .iter()
        .find(|r| r.id == clean_id && r.domain == Domain::B)
        .ok_or_else(|| Error::Input(format!("no clean reference '{clean_id}' in manifest")))
}

/// Enhance every domain-A utterance and score it against its paired clean
/// reference.
pub fn evaluate_bank<S: Scalar>(
    bank: &GeneratorBank<S>,
    manifest: &CorpusManifest,
    feat_cfg: &FeatureConfig,
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for record in manifest.domain_records(Domain::A) {
        let clean_rec = clean_reference(manifest, record)?;
        let clean = load_features(clean_rec, feat_cfg)?;
        let noisy = load_features(record, feat_cfg)?;
        let enhanced = enhance_utterance(bank, record, feat_cfg)?;
        let lsd_noisy = log_spectral_distance(&noisy, &clean)?;
        let lsd_enhanced = log_spectral_distance(&enhanced, &clean)?;
        let improvement = if lsd_noisy > 0.0 {
            (lsd_noisy - lsd_enhanced) / lsd_noisy
        } else {
            0.0
        };
        rows.push(EvalRow {
            utt_id: record.id.clone(),
            lsd_noisy,
            lsd_enhanced,
            improvement,
        });
    }
    Ok(EvalReport::from_rows(rows))
}

#[cfg(test)]
mod tests;
