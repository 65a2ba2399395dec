//! The complete training objective.
//!
//! Two adversarial terms, two identity terms and two cycle terms combine
//! into one weighted total; on the clean side the adversarial term averages
//! over a bank of discriminators, each judging one contiguous band of mel
//! bins selected by a [`BandMask`]. With a single full-band mask every
//! banded formula reduces bitwise to its classic one-discriminator form.

use crate::autodiff::{l1_loss, mse_loss, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::models::{EnhanceMap, ScoreMap};

/// Which side of the unpaired mapping a sample belongs to:
/// `A` is the noisy domain, `B` the clean domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub fn parse(s: &str) -> Result<Domain> {
        match s {
            "A" | "a" => Ok(Domain::A),
            "B" | "b" => Ok(Domain::B),
            _ => Err(Error::Input(format!("unknown domain tag '{s}' (want A or B)"))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Domain::A => "A",
            Domain::B => "B",
        }
    }
}

/// Contiguous range of mel bins assigned to one discriminator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandMask {
    /// 1-based discriminator index.
    pub index: usize,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub feat_dim: usize,
}

impl BandMask {
    pub fn width(&self) -> usize {
        self.end - self.start
    }

    pub fn full(feat_dim: usize) -> BandMask {
        BandMask {
            index: 1,
            start: 0,
            end: feat_dim,
            feat_dim,
        }
    }
}

/// Split `feat_dim` bins into `n` contiguous masks: step = floor(feat_dim/n),
/// mask_i = [(i-1)·step, i·step), with the last mask absorbing the remainder.
/// The masks partition [0, feat_dim).
pub fn make_band_masks(feat_dim: usize, n: usize) -> Result<Vec<BandMask>> {
    if n < 1 || n > feat_dim {
        return Err(Error::Config(format!(
            "cannot split {feat_dim} bins across {n} discriminators (need 1 <= n <= feat_dim)"
        )));
    }
    let step = feat_dim / n;
    Ok((1..=n)
        .map(|i| BandMask {
            index: i,
            start: (i - 1) * step,
            end: if i == n { feat_dim } else { i * step },
            feat_dim,
        })
        .collect())
}

/// Pure slice of the mel-bin axis: no scaling, other dims unchanged.
pub fn apply_band_mask<S: Scalar>(mask: &BandMask, window: &Tensor<S>) -> Result<Tensor<S>> {
    let Some(&bins) = window.shape().last() else {
        return Err(Error::Shape("band mask on a rank-0 tensor".into()));
    };
    if bins != mask.feat_dim {
        return Err(Error::Shape(format!(
            "window has {bins} bins but mask was built for {}",
            mask.feat_dim
        )));
    }
    window.slice_last(mask.start, mask.end)
}

/// Objective weights; identity and cycle multipliers.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda_idt: f64,
    pub lambda_cycle: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_idt: 0.5,
            lambda_cycle: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_idt < 0.0 || self.lambda_cycle < 0.0 {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Mean over the discriminator bank of MSE-to-ones on the masked fake.
/// With n = 1 and a full-band mask this is numerically identical to the
/// single-discriminator generator loss.
pub fn adv_generator_loss<S: Scalar, D: ScoreMap<S>>(
    fake: &Tensor<S>,
    discriminators: &[D],
    masks: &[BandMask],
) -> Result<Tensor<S>> {
    if discriminators.is_empty() || discriminators.len() != masks.len() {
        return Err(Error::Config(format!(
            "{} discriminators for {} masks",
            discriminators.len(),
            masks.len()
        )));
    }
    let mut total: Option<Tensor<S>> = None;
    for (d, mask) in discriminators.iter().zip(masks) {
        let scores = d.score(&apply_band_mask(mask, fake)?)?;
        let term = mse_loss(&scores, &Tensor::full(scores.shape().to_vec(), S::one()))?;
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    let n = S::from_usize(discriminators.len());
    Ok(total.unwrap().scale(S::one() / n))
}

/// Single-discriminator adversarial loss: MSE of the score map to ones.
pub fn adv_single_loss<S: Scalar, D: ScoreMap<S>>(d: &D, fake: &Tensor<S>) -> Result<Tensor<S>> {
    let scores = d.score(fake)?;
    mse_loss(&scores, &Tensor::full(scores.shape().to_vec(), S::one()))
}

/// L1 between the generator applied to its *output*-domain batch and the
/// batch itself: pushes the map toward the identity on already-clean (or
/// already-noisy) input.
pub fn identity_loss<S: Scalar, G: EnhanceMap<S>>(
    gen: &G,
    target_domain_batch: &Tensor<S>,
) -> Result<Tensor<S>> {
    l1_loss(&gen.apply(target_domain_batch)?, target_domain_batch)
}

/// L1 reconstruction through the round trip g_bwd(g_fwd(batch)).
pub fn cycle_loss<S: Scalar, F: EnhanceMap<S>, B: EnhanceMap<S>>(
    g_fwd: &F,
    g_bwd: &B,
    batch: &Tensor<S>,
) -> Result<Tensor<S>> {
    let there = g_fwd.apply(batch)?;
    let back = g_bwd.apply(&there)?;
    l1_loss(&back, batch)
}

/// Least-squares discriminator loss on one band:
/// (MSE(d(mask(real)), 1) + MSE(d(mask(fake)), 0)) / 2.
/// `fake_detached` must be severed from the generator graph.
pub fn discriminator_loss<S: Scalar, D: ScoreMap<S>>(
    d: &D,
    mask: &BandMask,
    real: &Tensor<S>,
    fake_detached: &Tensor<S>,
) -> Result<Tensor<S>> {
    if fake_detached.is_tracked() {
        return Err(Error::Usage(
            "discriminator_loss requires a detached fake batch".into(),
        ));
    }
    let real_scores = d.score(&apply_band_mask(mask, real)?)?;
    let fake_scores = d.score(&apply_band_mask(mask, fake_detached)?)?;
    let on_real = mse_loss(
        &real_scores,
        &Tensor::full(real_scores.shape().to_vec(), S::one()),
    )?;
    let on_fake = mse_loss(&fake_scores, &Tensor::zeros(fake_scores.shape().to_vec()))?;
    Ok(on_real.add(&on_fake)?.scale(S::from_f64(0.5)))
}

/// The six generator-side scalar terms of the full objective.
pub struct GeneratorTerms<S: Scalar> {
    pub adv_a: Tensor<S>,
    pub adv_b: Tensor<S>,
    pub idt_a: Tensor<S>,
    pub idt_b: Tensor<S>,
    pub cycle_a: Tensor<S>,
    pub cycle_b: Tensor<S>,
}

impl<S: Scalar> GeneratorTerms<S> {
    fn all(&self) -> [&Tensor<S>; 6] {
        [
            &self.adv_a,
            &self.adv_b,
            &self.idt_a,
            &self.idt_b,
            &self.cycle_a,
            &self.cycle_b,
        ]
    }
}

/// Weighted sum of the six terms:
/// adv_a + adv_b + λ_idt·(idt_a + idt_b) + λ_cycle·(cycle_a + cycle_b).
pub fn total_objective<S: Scalar>(
    terms: &GeneratorTerms<S>,
    weights: &LossWeights,
) -> Result<Tensor<S>> {
    weights.validate().map_err(|e| Error::Usage(e.to_string()))?;
    for t in terms.all() {
        if t.numel() != 1 {
            return Err(Error::Usage(format!(
                "objective term must be scalar, got shape {:?}",
                t.shape()
            )));
        }
    }
    let li = S::from_f64(weights.lambda_idt);
    let lc = S::from_f64(weights.lambda_cycle);
    terms
        .adv_a
        .add(&terms.adv_b)?
        .add(&terms.idt_a.scale(li))?
        .add(&terms.idt_b.scale(li))?
        .add(&terms.cycle_a.scale(lc))?
        .add(&terms.cycle_b.scale(lc))
}

/// Every term of one training step, for logging and invariant checks.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_ga: f64,
    pub l_gb: f64,
    pub l_idt_a: f64,
    pub l_idt_b: f64,
    pub l_cycle_a: f64,
    pub l_cycle_b: f64,
    /// (1-based discriminator index, loss) for each clean-side band
    /// discriminator.
    pub per_discriminator: Vec<(usize, f64)>,
    /// Loss of the single full-band noisy-side discriminator.
    pub l_d_b: f64,
    /// Value of the weighted generator objective.
    pub total: f64,
}

impl LossBreakdown {
    pub fn csv_header(n_da: usize) -> String {
        let mut cols = vec![
            "step".into(),
            "L_GA".into(),
            "L_GB".into(),
            "L_idt_A".into(),
            "L_idt_B".into(),
            "L_cycle_A".into(),
            "L_cycle_B".into(),
        ];
        for i in 1..=n_da {
            cols.push(format!("L_D_A_{i}"));
        }
        cols.push("L_D_B".into());
        cols.push("total".into());
        cols.join(",")
    }

    pub fn csv_row(&self, step: usize) -> String {
        let mut cols = vec![
            step.to_string(),
            format_f64(self.l_ga),
            format_f64(self.l_gb),
            format_f64(self.l_idt_a),
            format_f64(self.l_idt_b),
            format_f64(self.l_cycle_a),
            format_f64(self.l_cycle_b),
        ];
        for (_, v) in &self.per_discriminator {
            cols.push(format_f64(*v));
        }
        cols.push(format_f64(self.l_d_b));
        cols.push(format_f64(self.total));
        cols.join(",")
    }
}

/// Shortest round-trip decimal form; identical runs serialize identically.
fn format_f64(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests;
