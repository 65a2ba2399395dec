use super::*;
use crate::losses::Domain;

#[test]
fn empty_manifest_parses_to_zero_counts() {
    let m = CorpusManifest::parse_str("").unwrap();
    assert!(m.records.is_empty());
    assert!(m.counts().is_empty());
}

#[test]
fn parse_errors_carry_line_numbers_and_tags() {
    let text = "u1\t/tmp/u1.wav\tA\tF\tBUS\t0.5\nu2\t/tmp/u2.wav\tA\tF\tLOBBY\t0.5\n";
    match CorpusManifest::parse_str(text) {
        Err(Error::Parse { line, msg }) => {
            assert_eq!(line, 2);
            assert!(msg.contains("LOBBY"), "{msg}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }

    let dup = "u1\t/a.wav\tA\tF\tBUS\t0.5\nu1\t/b.wav\tB\t-\t-\t0.5\n";
    assert!(matches!(
        CorpusManifest::parse_str(dup),
        Err(Error::Parse { line: 2, .. })
    ));

    let keyless_a = "u1\t/a.wav\tA\t-\tBUS\t0.5\n";
    assert!(CorpusManifest::parse_str(keyless_a).is_err());

    let short = "u1\t/a.wav\tA\tF\tBUS\n";
    assert!(matches!(
        CorpusManifest::parse_str(short),
        Err(Error::Parse { line: 1, .. })
    ));
}

#[test]
fn table_like_manifest_counts_every_combination() {
    let mut text = String::new();
    let mut i = 0;
    for domain in ["A", "B"] {
        for noise in ["BUS", "CAF", "PED", "STR"] {
            for gender in ["F", "M"] {
                text.push_str(&format!(
                    "u{i}\t/tmp/u{i}.wav\t{domain}\t{gender}\t{noise}\t1.0\n"
                ));
                i += 1;
            }
        }
    }
    let m = CorpusManifest::parse_str(&text).unwrap();
    let counts = m.counts();
    assert_eq!(counts.len(), 16, "2 domains x 8 subsets");
    assert!(counts.values().all(|&c| c == 1));
    // aggregated over gender: 4 noise types x 2 domains
    let mut by_domain_noise: std::collections::BTreeMap<(char, NoiseType), usize> =
        Default::default();
    for ((d, key), c) in &counts {
        *by_domain_noise.entry((*d, key.noise)).or_insert(0) += c;
    }
    assert_eq!(by_domain_noise.len(), 8);

    // round trip through the on-disk format
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.tsv");
    m.save(&path).unwrap();
    let back = CorpusManifest::load(&path).unwrap();
    assert_eq!(back.records.len(), m.records.len());
    for (a, b) in back.records.iter().zip(&m.records) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.domain, b.domain);
        assert_eq!(a.gender, b.gender);
        assert_eq!(a.noise, b.noise);
    }
}

fn quick_spec() -> SyntheticNoiseSpec {
    SyntheticNoiseSpec {
        duration_s: 0.25,
        ..SyntheticNoiseSpec::default()
    }
}

#[test]
fn synthesis_is_seeded_and_counts_match() {
    let dir = tempfile::tempdir().unwrap();
    let out = synthesize_corpus(&quick_spec(), 10, 77, &dir.path().join("a")).unwrap();
    assert_eq!(out.manifest.records.len(), 160, "80 noisy + 80 clean");
    assert_eq!(out.pairs.len(), 80);
    let counts = out.manifest.counts();
    for key in SubsetKey::all() {
        assert_eq!(counts[&('A', key)], 10);
        assert_eq!(counts[&('B', key)], 10);
    }
    out.manifest.validate_paths().unwrap();

    // same seed reproduces the corpus bit for bit
    let again = synthesize_corpus(&quick_spec(), 10, 77, &dir.path().join("b")).unwrap();
    for (x, y) in out.manifest.records.iter().zip(&again.manifest.records) {
        assert_eq!(x.id, y.id);
        assert_eq!(fs::read(&x.path).unwrap(), fs::read(&y.path).unwrap());
    }
    for (x, y) in out.pairs.iter().zip(&again.pairs) {
        assert_eq!(x.snr_db, y.snr_db);
    }
}

#[test]
fn emitted_waveforms_hit_their_snr_targets() {
    let dir = tempfile::tempdir().unwrap();
    let out = synthesize_corpus(&quick_spec(), 2, 123, dir.path()).unwrap();
    for pair in &out.pairs {
        let (clean, _) = wav::read_mono16(&dir.path().join(format!("{}_clean.wav", pair.stem))).unwrap();
        let (noisy, _) = wav::read_mono16(&dir.path().join(format!("{}_noisy.wav", pair.stem))).unwrap();
        let p_clean: f64 = clean.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / clean.len() as f64;
        let p_noise: f64 = clean
            .iter()
            .zip(&noisy)
            .map(|(&c, &n)| ((n - c) as f64).powi(2))
            .sum::<f64>()
            / clean.len() as f64;
        let measured = 10.0 * (p_clean / p_noise).log10();
        assert!(
            (measured - pair.snr_db).abs() < 0.5,
            "{}: measured {measured:.2} dB vs target {:.2} dB",
            pair.stem,
            pair.snr_db
        );
    }
}

fn tiny_feat_cfg() -> FeatureConfig {
    FeatureConfig {
        n_mels: 16,
        context: 1,
        ..FeatureConfig::default()
    }
}

#[test]
fn training_set_routes_windows_per_instance() {
    let dir = tempfile::tempdir().unwrap();
    let out = synthesize_corpus(&quick_spec(), 2, 5, dir.path()).unwrap();
    let cfg = tiny_feat_cfg();
    let frames_per_clip = 1 + ((0.25f64 * 16000.0) as usize - 400) / 160;

    let a3 = ArchitectureSpec::parse("cyclegan-8g+16da", 16).unwrap();
    let set = build_training_set(&out.manifest, &cfg, &a3).unwrap();
    assert_eq!(set.per_instance.len(), 8);
    for inst in &set.per_instance {
        assert_eq!(inst.pool_a.count, 2 * frames_per_clip);
        assert_eq!(inst.pool_b.count, 2 * frames_per_clip);
    }

    let a1 = ArchitectureSpec::parse("cyclegan-1g+2da", 16).unwrap();
    let set = build_training_set(&out.manifest, &cfg, &a1).unwrap();
    assert_eq!(set.per_instance.len(), 1);
    assert_eq!(set.per_instance[0].pool_a.count, 16 * frames_per_clip);

    // clean records with unknown noise are shared across the gender's
    // four A3 instances
    let mut shared = out.manifest.clone();
    for r in &mut shared.records {
        if r.domain == Domain::B {
            r.noise = None;
        }
    }
    let set = build_training_set(&shared, &cfg, &a3).unwrap();
    for inst in &set.per_instance {
        assert_eq!(inst.pool_b.count, 8 * frames_per_clip, "4 subsets shared");
    }
}

#[test]
fn training_pools_are_blind_to_pair_ids() {
    // renaming every utterance id must not change any pooled window
    let dir = tempfile::tempdir().unwrap();
    let out = synthesize_corpus(&quick_spec(), 2, 9, dir.path()).unwrap();
    let cfg = tiny_feat_cfg();
    let arch = ArchitectureSpec::parse("cyclegan-2g+2da", 16).unwrap();

    let base = build_training_set(&out.manifest, &cfg, &arch).unwrap();
    let mut renamed = out.manifest.clone();
    for (i, r) in renamed.records.iter_mut().enumerate() {
        r.id = format!("opaque-{i}");
    }
    let anon = build_training_set(&renamed, &cfg, &arch).unwrap();
    for (a, b) in base.per_instance.iter().zip(&anon.per_instance) {
        let batch_a = a.pool_a.batch::<f32>(&(0..a.pool_a.count).collect::<Vec<_>>()).unwrap();
        let batch_b = b.pool_a.batch::<f32>(&(0..b.pool_a.count).collect::<Vec<_>>()).unwrap();
        assert_eq!(batch_a.values(), batch_b.values());
    }
}

#[test]
fn feature_files_feed_the_training_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = synthesize_corpus(&quick_spec(), 1, 11, dir.path()).unwrap();
    let cfg = tiny_feat_cfg();

    // pre-extract to .bgse and point a manifest at the feature files
    let mut extracted = out.manifest.clone();
    for r in &mut extracted.records {
        let seq = load_features(r, &cfg).unwrap();
        let fpath = dir.path().join(format!("{}.bgse", r.id));
        crate::features::write_feature_file(&fpath, &seq).unwrap();
        r.path = fpath;
    }
    let arch = ArchitectureSpec::parse("cyclegan-1g+1da", 16).unwrap();
    let from_audio = build_training_set(&out.manifest, &cfg, &arch).unwrap();
    let from_feats = build_training_set(&extracted, &cfg, &arch).unwrap();
    assert_eq!(
        from_audio.per_instance[0].pool_a.count,
        from_feats.per_instance[0].pool_a.count
    );
    let idx: Vec<usize> = (0..from_audio.per_instance[0].pool_a.count).collect();
    assert_eq!(
        from_audio.per_instance[0].pool_a.batch::<f32>(&idx).unwrap().values(),
        from_feats.per_instance[0].pool_a.batch::<f32>(&idx).unwrap().values()
    );
}
