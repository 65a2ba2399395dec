use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::corpus::{synthesize_corpus, SyntheticNoiseSpec};
use crate::models::IdentityMap;
use crate::rng;
use crate::routing::{build_architecture, ArchitectureSpec, ModelSizing};

fn random_seq(t: usize, n_mels: usize, seed: u64) -> FeatureSequence {
    let mut r = rng::stream(seed, &[77]);
    let frames = (0..t * n_mels).map(|_| r.random_range(-20.0..5.0f32)).collect();
    FeatureSequence::new(frames, n_mels, format!("u{seed}")).unwrap()
}

#[test]
fn identity_map_enhancement_is_bit_exact() {
    for context in [0usize, 1, 5] {
        let seq = random_seq(23, 16, context as u64);
        let out = enhance_features::<f32>(&IdentityMap, &seq, context).unwrap();
        assert_eq!(out.frames, seq.frames);
        assert_eq!(out.meta, seq.meta);
    }
}

#[test]
fn real_generator_preserves_frame_and_bin_counts() {
    let arch = ArchitectureSpec::parse("cyclegan-1g+2da", 16).unwrap();
    let sizing = ModelSizing {
        context: 1,
        gen_width: 2,
        gen_blocks: 1,
        disc_width: 2,
    };
    let bank = build_architecture::<f32>(&arch, &sizing, 5).unwrap();
    for t in [1usize, 7, 31] {
        let seq = random_seq(t, 16, t as u64);
        let out = enhance_features(&bank.instances[0].g_a.bind(false), &seq, 1).unwrap();
        assert_eq!(out.t(), t);
        assert_eq!(out.n_mels, 16);
        assert!(out.frames.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn lsd_examples_and_independent_recomputation() {
    let a = random_seq(12, 8, 1);
    assert_eq!(log_spectral_distance(&a, &a).unwrap(), 0.0);

    let shifted = FeatureSequence::new(
        a.frames.iter().map(|v| v + 1.5).collect(),
        8,
        "b",
    )
    .unwrap();
    assert!((log_spectral_distance(&a, &shifted).unwrap() - 1.5).abs() < 1e-6);

    let b = random_seq(12, 8, 2);
    let lsd = log_spectral_distance(&a, &b).unwrap();
    // second code path: accumulate per frame, then average the frame sums
    let mut total = 0.0f64;
    for t in 0..a.t() {
        let (ra, rb) = (a.row(t), b.row(t));
        let mut frame = 0.0f64;
        for k in 0..8 {
            let d = ra[k] as f64 - rb[k] as f64;
            frame += d * d;
        }
        total += frame;
    }
    let oracle = (total / (a.t() * 8) as f64).sqrt();
    assert!((lsd - oracle).abs() < 1e-12);

    let short = random_seq(5, 8, 3);
    assert!(matches!(
        log_spectral_distance(&a, &short),
        Err(Error::Input(_))
    ));
}

#[test]
fn bank_enhancement_routes_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticNoiseSpec {
        duration_s: 0.12,
        ..SyntheticNoiseSpec::default()
    };
    let out = synthesize_corpus(&spec, 1, 42, dir.path()).unwrap();
    let feat_cfg = FeatureConfig {
        n_mels: 16,
        context: 1,
        ..FeatureConfig::default()
    };
    let arch = ArchitectureSpec::parse("cyclegan-8g+16da", 16).unwrap();
    let sizing = ModelSizing {
        context: 1,
        gen_width: 2,
        gen_blocks: 1,
        disc_width: 2,
    };
    let bank = build_architecture::<f32>(&arch, &sizing, 9).unwrap();

    let noisy = out
        .manifest
        .domain_records(Domain::A)
        .next()
        .unwrap()
        .clone();
    let enhanced = enhance_utterance(&bank, &noisy, &feat_cfg).unwrap();
    let original = load_features(&noisy, &feat_cfg).unwrap();
    assert_eq!(enhanced.t(), original.t());

    // clean-side records are refused
    let clean = out
        .manifest
        .domain_records(Domain::B)
        .next()
        .unwrap()
        .clone();
    assert!(matches!(
        enhance_utterance(&bank, &clean, &feat_cfg),
        Err(Error::Routing(_))
    ));

    let report = evaluate_bank(&bank, &out.manifest, &feat_cfg).unwrap();
    assert_eq!(report.rows.len(), 8);
    assert!(report.mean_lsd_noisy > 0.0);
    let csv = report.to_csv();
    assert!(csv.starts_with("utt_id,lsd_noisy,lsd_enhanced,improvement\n"));
    assert_eq!(csv.lines().count(), 9);

    // pairing convention
    let referenced = clean_reference(&out.manifest, &noisy).unwrap();
    assert_eq!(referenced.id, noisy.id.replace("_noisy", "_clean"));
    let mut orphan = noisy.clone();
    orphan.id = "solo".into();
    assert!(clean_reference(&out.manifest, &orphan).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lsd_is_a_metric(sa in 0u64..200, sb in 0u64..200, sc in 0u64..200) {
        let a = random_seq(6, 4, sa);
        let b = random_seq(6, 4, sb.wrapping_add(1000));
        let c = random_seq(6, 4, sc.wrapping_add(2000));
        let ab = log_spectral_distance(&a, &b).unwrap();
        let ba = log_spectral_distance(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
        let ac = log_spectral_distance(&a, &c).unwrap();
        let cb = log_spectral_distance(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }
}
