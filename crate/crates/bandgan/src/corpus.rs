//! Corpus ingestion and desk-scale synthetic data.
//!
//! Manifests are one tab-separated record per line:
//! `id  path  domain(A|B)  gender(F|M|-)  noise(BUS|CAF|PED|STR|-)  duration_s`.
//! Noisy (domain A) records must carry full subset metadata; clean records
//! may leave fields unknown and are then shared across every consistent
//! instance.
//!
//! The synthesizer builds paired clean/noisy clips — harmonic tone
//! complexes with a gender-dependent fundamental, plus one noise archetype
//! per noise type, mixed at a sampled SNR. The pairing is recorded through
//! id stems for evaluation only; the training set builder pools windows per
//! (instance, domain) and never sees pair identities.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{
    compute_log_mel, read_feature_file, stack_context_windows, AudioClip, FeatureConfig,
    FeatureSequence,
};
use crate::losses::Domain;
use crate::rng;
use crate::routing::{route, ArchitectureSpec, Gender, NoiseType, SubsetKey, Variant};
use crate::training::{InstanceData, TrainingSet, WindowPool};
use crate::wav;

#[derive(Debug, Clone)]
pub struct UtteranceRecord {
    pub id: String,
    pub path: PathBuf,
    pub domain: Domain,
    pub gender: Option<Gender>,
    pub noise: Option<NoiseType>,
    pub duration_s: f64,
}

impl UtteranceRecord {
    pub fn key(&self) -> Option<SubsetKey> {
        Some(SubsetKey {
            gender: self.gender?,
            noise: self.noise?,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct CorpusManifest {
    pub records: Vec<UtteranceRecord>,
}

impl CorpusManifest {
    /// Parse a manifest file. Errors carry the offending line number.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read manifest {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 6 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected 6 tab-separated fields, got {}", fields.len()),
                });
            }
            let wrap = |e: Error| Error::Parse {
                line,
                msg: e.to_string(),
            };
            let id = fields[0].to_string();
            if !seen.insert(id.clone()) {
                return Err(Error::Parse {
                    line,
                    msg: format!("duplicate utterance id '{id}'"),
                });
            }
            let domain = Domain::parse(fields[2]).map_err(wrap)?;
            let gender = match fields[3] {
                "-" => None,
                s => Some(Gender::parse(s).map_err(wrap)?),
            };
            let noise = match fields[4] {
                "-" => None,
                s => Some(NoiseType::parse(s).map_err(wrap)?),
            };
            if domain == Domain::A && (gender.is_none() || noise.is_none()) {
                return Err(Error::Parse {
                    line,
                    msg: format!("domain A record '{id}' must carry gender and noise tags"),
                });
            }
            let duration_s: f64 = fields[5].parse().map_err(|_| Error::Parse {
                line,
                msg: format!("cannot parse duration '{}'", fields[5]),
            })?;
            records.push(UtteranceRecord {
                id,
                path: PathBuf::from(fields[1]),
                domain,
                gender,
                noise,
                duration_s,
            });
        }
        Ok(CorpusManifest { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in &self.records {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.id,
                r.path.display(),
                r.domain.tag(),
                r.gender.map_or("-", Gender::tag),
                r.noise.map_or("-", NoiseType::tag),
                r.duration_s
            )
            .unwrap();
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Record counts per (domain, subset key); only fully keyed records
    /// are counted.
    pub fn counts(&self) -> BTreeMap<(char, SubsetKey), usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            if let Some(key) = r.key() {
                let d = match r.domain {
                    Domain::A => 'A',
                    Domain::B => 'B',
                };
                *counts.entry((d, key)).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every referenced path must exist before training starts.
    pub fn validate_paths(&self) -> Result<()> {
        for r in &self.records {
            if !r.path.exists() {
                return Err(Error::Input(format!(
                    "missing file for utterance '{}': {}",
                    r.id,
                    r.path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn domain_records(&self, domain: Domain) -> impl Iterator<Item = &UtteranceRecord> {
        self.records.iter().filter(move |r| r.domain == domain)
    }
}

/// Knobs for the synthetic paired corpus.
#[derive(Debug, Clone)]
pub struct SyntheticNoiseSpec {
    pub sample_rate: u32,
    pub duration_s: f64,
    /// Per-utterance SNR targets are sampled uniformly from this range (dB).
    pub snr_db: (f64, f64),
    /// Fundamental ranges of the two pseudo-genders (Hz).
    pub female_f0: (f64, f64),
    pub male_f0: (f64, f64),
}

impl Default for SyntheticNoiseSpec {
    fn default() -> Self {
        SyntheticNoiseSpec {
            sample_rate: 16000,
            duration_s: 0.5,
            snr_db: (3.0, 10.0),
            female_f0: (170.0, 250.0),
            male_f0: (90.0, 140.0),
        }
    }
}

impl SyntheticNoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.snr_db.0.is_finite() && self.snr_db.1.is_finite() && self.snr_db.0 <= self.snr_db.1)
        {
            return Err(Error::Config("SNR range must be finite and ordered".into()));
        }
        if self.duration_s <= 0.0 || self.sample_rate == 0 {
            return Err(Error::Config("duration and sample rate must be positive".into()));
        }
        Ok(())
    }
}

/// One generated pair, with the SNR target it was mixed at.
#[derive(Debug, Clone)]
pub struct PairInfo {
    /// Common id stem; `<stem>_noisy` and `<stem>_clean` are the record ids.
    pub stem: String,
    pub key: SubsetKey,
    pub snr_db: f64,
}

pub struct SynthOutcome {
    pub manifest: CorpusManifest,
    pub pairs: Vec<PairInfo>,
}

/// Harmonic tone complex with a slow random amplitude envelope; voiced
/// everywhere so no mel band sits at the log floor.
fn harmonic_clip(r: &mut ChaCha8Rng, f0_range: (f64, f64), n: usize, sr: f64) -> Vec<f64> {
    let f0 = r.random_range(f0_range.0..f0_range.1);
    let n_harm = ((sr / 2.0 - 400.0) / f0).floor().min(14.0).max(3.0) as usize;
    let harmonics: Vec<(f64, f64, f64)> = (1..=n_harm)
        .map(|h| {
            let amp = (h as f64).powf(-0.8) * r.random_range(0.6..1.0);
            let phase = r.random_range(0.0..2.0 * PI);
            (h as f64 * f0, amp, phase)
        })
        .collect();
    let env_rate = r.random_range(1.0..3.0);
    let env_phase = r.random_range(0.0..2.0 * PI);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let env = 0.65 + 0.35 * (2.0 * PI * env_rate * t + env_phase).sin();
        let mut s = 0.0;
        for &(f, a, p) in &harmonics {
            s += a * (2.0 * PI * f * t + p).sin();
        }
        out.push(env * s);
    }
    // fixed peak so quantization never clips after noise is added
    let peak = out.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let scale = 0.30 / peak;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Bank of random-phase sinusoids; the workhorse for stationary archetypes.
fn sinusoid_bank(
    r: &mut ChaCha8Rng,
    n: usize,
    sr: f64,
    count: usize,
    f_lo: f64,
    f_hi: f64,
    amp_of: impl Fn(f64) -> f64,
    am_depth: f64,
) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            let f = r.random_range(f_lo..f_hi);
            let amp = amp_of(f);
            let phase = r.random_range(0.0..2.0 * PI);
            let am_rate = r.random_range(1.0..6.0);
            let am_phase = r.random_range(0.0..2.0 * PI);
            (f, amp, phase, am_rate, am_phase)
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let mut s = 0.0;
        for &(f, a, p, mr, mp) in &comps {
            let am = 1.0 - am_depth + am_depth * (2.0 * PI * mr * t + mp).sin();
            s += a * am * (2.0 * PI * f * t + p).sin();
        }
        out.push(s);
    }
    out
}

/// The four noise archetypes, one per noise type.
fn archetype_noise(r: &mut ChaCha8Rng, noise: NoiseType, n: usize, sr: f64) -> Vec<f64> {
    match noise {
        // band-limited stationary hum
        NoiseType::Bus => sinusoid_bank(r, n, sr, 12, 40.0, 260.0, |_| 1.0, 0.0),
        // babble-like broadband with slow per-component modulation
        NoiseType::Caf => sinusoid_bank(r, n, sr, 32, 150.0, 6500.0, |f| (150.0 / f).sqrt(), 0.8),
        // impulsive bursts over a faint floor
        NoiseType::Ped => {
            let mut out: Vec<f64> = (0..n).map(|_| r.random_range(-0.02..0.02)).collect();
            let bursts = ((n as f64 / sr) * 12.0).round().max(2.0) as usize;
            let blen = (0.02 * sr) as usize;
            for _ in 0..bursts {
                let at = r.random_range(0..n.saturating_sub(blen).max(1));
                let amp = r.random_range(0.5..1.5);
                for j in 0..blen.min(n - at) {
                    let decay = (-(j as f64) / (0.006 * sr)).exp();
                    out[at + j] += amp * decay * r.random_range(-1.0..1.0);
                }
            }
            out
        }
        // colored wideband, energy falling with frequency
        NoiseType::Str => sinusoid_bank(r, n, sr, 40, 60.0, 7000.0, |f| (60.0 / f).powf(0.75), 0.0),
    }
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Generate `n_per_subset` clean/noisy pairs for each of the eight
/// subsets, write WAVs and a manifest under `out_dir`, and report the
/// sampled SNR targets. Same seed, same corpus.
pub fn synthesize_corpus(
    spec: &SyntheticNoiseSpec,
    n_per_subset: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<SynthOutcome> {
    spec.validate()?;
    if n_per_subset == 0 {
        return Err(Error::Config("n_per_subset must be >= 1".into()));
    }
    fs::create_dir_all(out_dir)?;
    let sr = spec.sample_rate as f64;
    let n = (spec.duration_s * sr).round() as usize;

    let mut manifest = CorpusManifest::default();
    let mut pairs = Vec::new();
    for (s_idx, key) in SubsetKey::all().into_iter().enumerate() {
        let f0_range = match key.gender {
            Gender::Female => spec.female_f0,
            Gender::Male => spec.male_f0,
        };
        for j in 0..n_per_subset {
            let tags = [s_idx as u64, j as u64];
            let clean = harmonic_clip(
                &mut rng::stream(seed, &[tags[0], tags[1], 0]),
                f0_range,
                n,
                sr,
            );
            let noise = archetype_noise(
                &mut rng::stream(seed, &[tags[0], tags[1], 1]),
                key.noise,
                n,
                sr,
            );
            let snr_db = rng::stream(seed, &[tags[0], tags[1], 2])
                .random_range(spec.snr_db.0..=spec.snr_db.1);

            let scale = (power(&clean) / (power(&noise) * 10f64.powf(snr_db / 10.0))).sqrt();
            let noisy: Vec<f64> = clean.iter().zip(&noise).map(|(c, w)| c + scale * w).collect();

            let stem = format!(
                "{}_{}_{j:04}",
                key.gender.tag().to_ascii_lowercase(),
                key.noise.tag().to_ascii_lowercase()
            );
            let clean_path = out_dir.join(format!("{stem}_clean.wav"));
            let noisy_path = out_dir.join(format!("{stem}_noisy.wav"));
            let to_f32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
            wav::write_mono16(&clean_path, spec.sample_rate, &to_f32(&clean))?;
            wav::write_mono16(&noisy_path, spec.sample_rate, &to_f32(&noisy))?;

            manifest.records.push(UtteranceRecord {
                id: format!("{stem}_noisy"),
                path: noisy_path,
                domain: Domain::A,
                gender: Some(key.gender),
                noise: Some(key.noise),
                duration_s: spec.duration_s,
            });
            manifest.records.push(UtteranceRecord {
                id: format!("{stem}_clean"),
                path: clean_path,
                domain: Domain::B,
                gender: Some(key.gender),
                noise: Some(key.noise),
                duration_s: spec.duration_s,
            });
            pairs.push(PairInfo {
                stem,
                key,
                snr_db,
            });
        }
    }
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(SynthOutcome { manifest, pairs })
}

/// Load the feature sequence for a record: `.bgse` files are read
/// directly, anything else is treated as audio and run through the
/// front end.
pub fn load_features(record: &UtteranceRecord, cfg: &FeatureConfig) -> Result<FeatureSequence> {
    let mut seq = if record.path.extension().is_some_and(|e| e == "bgse") {
        read_feature_file(&record.path)?
    } else {
        compute_log_mel(&AudioClip::from_wav(&record.path)?, cfg)?
    };
    seq.meta = record.id.clone();
    Ok(seq)
}

/// Instance labels in routing order, for diagnostics.
pub fn instance_labels(arch: &ArchitectureSpec) -> Vec<String> {
    match arch.variant {
        Variant::A1 => vec!["all".into()],
        Variant::A2 => Gender::ALL.iter().map(|g| g.tag().to_string()).collect(),
        Variant::A3 => SubsetKey::all().iter().map(|k| k.to_string()).collect(),
    }
}

/// Instances a domain-B record with possibly partial metadata feeds. The
/// clean side has no intrinsic noise type, so a record missing a tag is
/// shared across every instance consistent with the tags it does have.
fn consistent_instances(arch: &ArchitectureSpec, gender: Option<Gender>, noise: Option<NoiseType>) -> Vec<usize> {
    let keys = SubsetKey::all();
    let mut out: Vec<usize> = keys
        .into_iter()
        .filter(|k| gender.is_none_or(|g| g == k.gender) && noise.is_none_or(|n| n == k.noise))
        .map(|k| route(arch, k))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Pool every record's context windows into per-(instance, domain) piles.
/// Utterance identities are dropped here: batches are built from windows
/// alone, so training cannot observe the clean/noisy pairing.
pub fn build_training_set(
    manifest: &CorpusManifest,
    feat_cfg: &FeatureConfig,
    arch: &ArchitectureSpec,
) -> Result<TrainingSet> {
    if feat_cfg.n_mels != arch.feat_dim {
        return Err(Error::Config(format!(
            "feature n_mels {} does not match architecture feat_dim {}",
            feat_cfg.n_mels, arch.feat_dim
        )));
    }
    let labels = instance_labels(arch);
    let rows = feat_cfg.window_rows();
    let mut per_instance: Vec<InstanceData> = labels
        .into_iter()
        .map(|label| InstanceData {
            label,
            pool_a: WindowPool::new(rows, feat_cfg.n_mels),
            pool_b: WindowPool::new(rows, feat_cfg.n_mels),
        })
        .collect();

    for record in &manifest.records {
        let seq = load_features(record, feat_cfg)?;
        if seq.n_mels != feat_cfg.n_mels {
            return Err(Error::Input(format!(
                "utterance '{}' has {} mel bins, expected {}",
                record.id, seq.n_mels, feat_cfg.n_mels
            )));
        }
        let windows = stack_context_windows(&seq, feat_cfg.context);
        match record.domain {
            Domain::A => {
                let key = record.key().ok_or_else(|| {
                    Error::Routing(format!("noisy record '{}' lacks subset metadata", record.id))
                })?;
                let pool = &mut per_instance[route(arch, key)].pool_a;
                for w in &windows {
                    pool.push_window(&w.data);
                }
            }
            Domain::B => {
                for k in consistent_instances(arch, record.gender, record.noise) {
                    let pool = &mut per_instance[k].pool_b;
                    for w in &windows {
                        pool.push_window(&w.data);
                    }
                }
            }
        }
    }
    Ok(TrainingSet { per_instance })
}

#[cfg(test)]
mod tests;
