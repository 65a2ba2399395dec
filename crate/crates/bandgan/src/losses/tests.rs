use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::autodiff::backward;
use crate::models::{
    DiscriminatorConfig, DiscriminatorNet, GeneratorConfig, GeneratorNet, IdentityMap,
};
use crate::rng;

/// Emits a constant score map regardless of input.
struct ConstScore(f64);

impl ScoreMap<f64> for ConstScore {
    fn score(&self, band: &Tensor<f64>) -> Result<Tensor<f64>> {
        let b = band.shape()[0];
        Ok(Tensor::full(vec![b, 1, 2, 2], self.0))
    }
}

/// Scores 1 when the band mean is positive, else 0.
struct SignScore;

impl ScoreMap<f64> for SignScore {
    fn score(&self, band: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mean: f64 = band.values().iter().sum::<f64>() / band.numel() as f64;
        Ok(Tensor::scalar(if mean > 0.0 { 1.0 } else { 0.0 }))
    }
}

struct ScaleMap(f64);

impl EnhanceMap<f64> for ScaleMap {
    fn apply(&self, batch: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(batch.scale(self.0))
    }
}

struct AddMap(f64);

impl EnhanceMap<f64> for AddMap {
    fn apply(&self, batch: &Tensor<f64>) -> Result<Tensor<f64>> {
        batch.add(&Tensor::full(batch.shape().to_vec(), self.0))
    }
}

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, &[31]);
    let n: usize = shape.iter().product();
    Tensor::constant(shape.to_vec(), (0..n).map(|_| r.random_range(-3.0..3.0)).collect()).unwrap()
}

#[test]
fn mask_formula_matches_stated_bounds() {
    let bounds = |fd, n| {
        make_band_masks(fd, n)
            .unwrap()
            .iter()
            .map(|m| (m.start, m.end))
            .collect::<Vec<_>>()
    };
    assert_eq!(bounds(40, 2), vec![(0, 20), (20, 40)]);
    assert_eq!(bounds(40, 1), vec![(0, 40)]);
    assert_eq!(bounds(40, 3), vec![(0, 13), (13, 26), (26, 40)]);
    assert!(matches!(make_band_masks(40, 0), Err(Error::Config(_))));
    assert!(matches!(make_band_masks(40, 41), Err(Error::Config(_))));
}

#[test]
fn apply_mask_slices_without_scaling() {
    let w = rand_tensor(&[1, 1, 3, 40], 1);
    let full = apply_band_mask(&BandMask::full(40), &w).unwrap();
    assert_eq!(full.values(), w.values());

    let upper = apply_band_mask(
        &BandMask {
            index: 2,
            start: 20,
            end: 40,
            feat_dim: 40,
        },
        &w,
    )
    .unwrap();
    assert_eq!(upper.shape(), &[1, 1, 3, 20]);
    for row in 0..3 {
        assert_eq!(
            upper.values()[row * 20..(row + 1) * 20],
            w.values()[row * 40 + 20..(row + 1) * 40]
        );
    }

    // concatenating every slice reconstructs the window
    let masks = make_band_masks(40, 3).unwrap();
    let slices: Vec<Tensor<f64>> = masks
        .iter()
        .map(|m| apply_band_mask(m, &w).unwrap())
        .collect();
    let mut rebuilt = vec![0.0; w.numel()];
    for (m, s) in masks.iter().zip(&slices) {
        let width = m.width();
        for row in 0..3 {
            rebuilt[row * 40 + m.start..row * 40 + m.end]
                .copy_from_slice(&s.values()[row * width..(row + 1) * width]);
        }
    }
    assert_eq!(rebuilt, w.values());

    let narrow = rand_tensor(&[1, 1, 3, 16], 2);
    assert!(matches!(
        apply_band_mask(&BandMask::full(40), &narrow),
        Err(Error::Shape(_))
    ));
}

#[test]
fn adv_loss_reduces_to_single_discriminator_form() {
    let mut r = rng::stream(3, &[]);
    let d = DiscriminatorNet::<f64>::init(
        DiscriminatorConfig {
            input_bins: 16,
            base_width: 4,
        },
        &mut r,
    );
    let bound = d.bind(false);
    for seed in 0..10 {
        let fake = rand_tensor(&[2, 1, 3, 16], 100 + seed);
        let banked = adv_generator_loss(&fake, std::slice::from_ref(&bound), &[BandMask::full(16)])
            .unwrap();
        let direct = adv_single_loss(&bound, &fake).unwrap();
        assert_eq!(
            banked.item().unwrap().to_bits(),
            direct.item().unwrap().to_bits()
        );
    }
}

#[test]
fn adv_loss_examples() {
    let fake = rand_tensor(&[3, 1, 3, 40], 4);
    let masks = make_band_masks(40, 2).unwrap();
    let all_ones = [ConstScore(1.0), ConstScore(1.0)];
    let loss = adv_generator_loss(&fake, &all_ones, &masks).unwrap();
    assert_eq!(loss.item().unwrap(), 0.0);

    let split = [ConstScore(1.0), ConstScore(0.0)];
    let loss = adv_generator_loss(&fake, &split, &masks).unwrap();
    assert!((loss.item().unwrap() - 0.5).abs() < 1e-15);

    // mask/discriminator count mismatch
    assert!(matches!(
        adv_generator_loss(&fake, &all_ones, &make_band_masks(40, 3).unwrap()),
        Err(Error::Config(_))
    ));
}

#[test]
fn identity_loss_examples_and_oracle() {
    let x = rand_tensor(&[2, 1, 3, 16], 5);
    assert_eq!(identity_loss(&IdentityMap, &x).unwrap().item().unwrap(), 0.0);

    let shifted = identity_loss(&AddMap(-0.75), &x).unwrap();
    assert!((shifted.item().unwrap() - 0.75).abs() < 1e-12);

    // independent recomputation of the mean absolute difference
    let mut r = rng::stream(6, &[]);
    let gen = GeneratorNet::<f64>::init(
        GeneratorConfig {
            n_mels: 16,
            context: 1,
            base_width: 2,
            n_blocks: 1,
        },
        &mut r,
    );
    let bound = gen.bind(false);
    let loss = identity_loss(&bound, &x).unwrap().item().unwrap();
    let y = bound.forward(&x).unwrap();
    let manual: f64 = y
        .values()
        .iter()
        .zip(x.values())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / x.numel() as f64;
    assert!((loss - manual).abs() < 1e-12);
}

#[test]
fn cycle_loss_examples_and_oracle() {
    let x = rand_tensor(&[2, 1, 3, 16], 7);
    let zero = cycle_loss(&ScaleMap(2.0), &ScaleMap(0.5), &x).unwrap();
    assert_eq!(zero.item().unwrap(), 0.0);
    let zero = cycle_loss(&IdentityMap, &IdentityMap, &x).unwrap();
    assert_eq!(zero.item().unwrap(), 0.0);

    let mut r = rng::stream(8, &[]);
    let cfg = GeneratorConfig {
        n_mels: 16,
        context: 1,
        base_width: 2,
        n_blocks: 1,
    };
    let ga = GeneratorNet::<f64>::init(cfg.clone(), &mut r).bind(false);
    let gb = GeneratorNet::<f64>::init(cfg, &mut r).bind(false);
    let loss = cycle_loss(&ga, &gb, &x).unwrap().item().unwrap();
    let back = gb.forward(&ga.forward(&x).unwrap()).unwrap();
    let manual: f64 = back
        .values()
        .iter()
        .zip(x.values())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / x.numel() as f64;
    assert!((loss - manual).abs() < 1e-12);
}

#[test]
fn discriminator_loss_examples() {
    let real = Tensor::full(vec![2, 1, 3, 16], 2.0);
    let fake = Tensor::full(vec![2, 1, 3, 16], -2.0);
    let mask = BandMask::full(16);

    let perfect = discriminator_loss(&SignScore, &mask, &real, &fake).unwrap();
    assert_eq!(perfect.item().unwrap(), 0.0);

    let fence_sitter = discriminator_loss(&ConstScore(0.5), &mask, &real, &fake).unwrap();
    assert!((fence_sitter.item().unwrap() - 0.25).abs() < 1e-15);

    // full-band value equals the classic form computed directly
    let mut r = rng::stream(9, &[]);
    let d = DiscriminatorNet::<f64>::init(
        DiscriminatorConfig {
            input_bins: 16,
            base_width: 4,
        },
        &mut r,
    )
    .bind(false);
    let real = rand_tensor(&[2, 1, 3, 16], 10);
    let fake = rand_tensor(&[2, 1, 3, 16], 11);
    let banded = discriminator_loss(&d, &mask, &real, &fake).unwrap();
    let sr = d.forward(&real).unwrap();
    let sf = d.forward(&fake).unwrap();
    let direct = crate::autodiff::mse_loss(&sr, &Tensor::full(sr.shape().to_vec(), 1.0))
        .unwrap()
        .add(&crate::autodiff::mse_loss(&sf, &Tensor::zeros(sf.shape().to_vec())).unwrap())
        .unwrap()
        .scale(0.5);
    assert_eq!(
        banded.item().unwrap().to_bits(),
        direct.item().unwrap().to_bits()
    );
}

#[test]
fn discriminator_loss_enforces_detachment() {
    let mut r = rng::stream(12, &[]);
    let cfg = GeneratorConfig {
        n_mels: 16,
        context: 1,
        base_width: 2,
        n_blocks: 1,
    };
    let gen = GeneratorNet::<f64>::init(cfg, &mut r);
    let d = DiscriminatorNet::<f64>::init(
        DiscriminatorConfig {
            input_bins: 16,
            base_width: 4,
        },
        &mut r,
    );
    let x = rand_tensor(&[2, 1, 3, 16], 13);
    let real = rand_tensor(&[2, 1, 3, 16], 14);

    let g_bound = gen.bind(true);
    let fake = g_bound.forward(&x).unwrap();

    // a still-tracked fake is refused
    assert!(matches!(
        discriminator_loss(&d.bind(true), &BandMask::full(16), &real, &fake),
        Err(Error::Usage(_))
    ));

    // with a detached fake, no gradient reaches any generator parameter
    let d_bound = d.bind(true);
    let loss = discriminator_loss(&d_bound, &BandMask::full(16), &real, &fake.detach()).unwrap();
    let grads = backward(&loss).unwrap();
    for leaf in g_bound.leaves() {
        assert!(grads.get(leaf).is_none());
        assert!(grads.grad(leaf).iter().all(|&g| g == 0.0));
    }
    // while the discriminator itself does learn
    assert!(d_bound
        .leaves()
        .iter()
        .any(|l| grads.grad(l).iter().any(|&g| g != 0.0)));
}

#[test]
fn total_objective_examples() {
    let term = |v: f64| Tensor::scalar(v);
    let zeros = GeneratorTerms {
        adv_a: term(0.0),
        adv_b: term(0.0),
        idt_a: term(0.0),
        idt_b: term(0.0),
        cycle_a: term(0.0),
        cycle_b: term(0.0),
    };
    let w = LossWeights::default();
    assert_eq!(total_objective(&zeros, &w).unwrap().item().unwrap(), 0.0);

    let ones = GeneratorTerms {
        adv_a: term(1.0),
        adv_b: term(1.0),
        idt_a: term(1.0),
        idt_b: term(1.0),
        cycle_a: term(1.0),
        cycle_b: term(1.0),
    };
    // 1 + 1 + 0.5*2 + 10*2 = 23
    assert_eq!(total_objective(&ones, &w).unwrap().item().unwrap(), 23.0);

    let unweighted = LossWeights {
        lambda_idt: 0.0,
        lambda_cycle: 0.0,
    };
    let mixed = GeneratorTerms {
        adv_a: term(0.7),
        adv_b: term(0.2),
        idt_a: term(5.0),
        idt_b: term(5.0),
        cycle_a: term(9.0),
        cycle_b: term(9.0),
    };
    assert!(
        (total_objective(&mixed, &unweighted).unwrap().item().unwrap() - 0.9).abs() < 1e-15
    );

    let non_scalar = GeneratorTerms {
        adv_a: Tensor::zeros(vec![2]),
        adv_b: term(0.0),
        idt_a: term(0.0),
        idt_b: term(0.0),
        cycle_a: term(0.0),
        cycle_b: term(0.0),
    };
    assert!(matches!(
        total_objective(&non_scalar, &w),
        Err(Error::Usage(_))
    ));
}

#[test]
fn breakdown_csv_schema() {
    let bd = LossBreakdown {
        l_ga: 0.5,
        l_gb: 0.25,
        l_idt_a: 1.0,
        l_idt_b: 2.0,
        l_cycle_a: 3.0,
        l_cycle_b: 4.0,
        per_discriminator: vec![(1, 0.125), (2, 0.375)],
        l_d_b: 0.0625,
        total: 70.75,
    };
    assert_eq!(
        LossBreakdown::csv_header(2),
        "step,L_GA,L_GB,L_idt_A,L_idt_B,L_cycle_A,L_cycle_B,L_D_A_1,L_D_A_2,L_D_B,total"
    );
    assert_eq!(
        bd.csv_row(17),
        "17,0.5,0.25,1,2,3,4,0.125,0.375,0.0625,70.75"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masks_partition_the_bin_range(feat_dim in 1usize..=64, n_seed in 0usize..64) {
        let n = n_seed % feat_dim + 1;
        let masks = make_band_masks(feat_dim, n).unwrap();
        prop_assert_eq!(masks.len(), n);
        let mut covered = vec![0usize; feat_dim];
        for m in &masks {
            prop_assert!(m.start < m.end && m.end <= feat_dim);
            for c in &mut covered[m.start..m.end] {
                *c += 1;
            }
        }
        prop_assert!(covered.iter().all(|&c| c == 1));
    }

    #[test]
    fn loss_terms_are_non_negative(seed in 0u64..500, v in -2.0f64..2.0) {
        let x = rand_tensor(&[1, 1, 3, 8], seed);
        let adv = adv_generator_loss(&x, &[ConstScore(v)], &[BandMask::full(8)]).unwrap();
        prop_assert!(adv.item().unwrap() >= 0.0);
        let idt = identity_loss(&AddMap(v), &x).unwrap();
        prop_assert!(idt.item().unwrap() >= 0.0);
        let dl = discriminator_loss(&ConstScore(v), &BandMask::full(8), &x, &rand_tensor(&[1,1,3,8], seed + 1)).unwrap();
        prop_assert!(dl.item().unwrap() >= 0.0);
    }
}
