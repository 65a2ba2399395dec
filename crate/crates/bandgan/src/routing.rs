//! Metadata-routed generator banks.
//!
//! Three bank layouts: A1 trains one CycleGAN on everything, A2 one per
//! gender, A3 one per (gender, noise type) subset — eight in total. Each
//! instance owns two generators, `n_da` band discriminators on the clean
//! side and one full-band discriminator on the noisy side. Instances never
//! share parameters.

use std::fmt;

use crate::error::{Error, Result};
use crate::losses::{make_band_masks, BandMask};
use crate::models::{
    DiscriminatorConfig, DiscriminatorNet, GeneratorConfig, GeneratorNet,
};
use crate::rng;
use crate::autodiff::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Female, Gender::Male];

    pub fn index(self) -> usize {
        match self {
            Gender::Female => 0,
            Gender::Male => 1,
        }
    }

    pub fn parse(s: &str) -> Result<Gender> {
        match s.to_ascii_uppercase().as_str() {
            "F" | "FEMALE" => Ok(Gender::Female),
            "M" | "MALE" => Ok(Gender::Male),
            _ => Err(Error::Input(format!("unknown gender tag '{s}' (want F or M)"))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Gender::Female => "F",
            Gender::Male => "M",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoiseType {
    Bus,
    Caf,
    Ped,
    Str,
}

impl NoiseType {
    pub const ALL: [NoiseType; 4] = [NoiseType::Bus, NoiseType::Caf, NoiseType::Ped, NoiseType::Str];

    pub fn index(self) -> usize {
        match self {
            NoiseType::Bus => 0,
            NoiseType::Caf => 1,
            NoiseType::Ped => 2,
            NoiseType::Str => 3,
        }
    }

    pub fn parse(s: &str) -> Result<NoiseType> {
        match s.to_ascii_uppercase().as_str() {
            "BUS" => Ok(NoiseType::Bus),
            "CAF" => Ok(NoiseType::Caf),
            "PED" => Ok(NoiseType::Ped),
            "STR" => Ok(NoiseType::Str),
            _ => Err(Error::Input(format!(
                "unknown noise tag '{s}' (want BUS, CAF, PED or STR)"
            ))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            NoiseType::Bus => "BUS",
            NoiseType::Caf => "CAF",
            NoiseType::Ped => "PED",
            NoiseType::Str => "STR",
        }
    }
}

/// The metadata that routes an utterance to a generator instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetKey {
    pub gender: Gender,
    pub noise: NoiseType,
}

impl SubsetKey {
    /// All eight keys in routing order: female before male,
    /// BUS < CAF < PED < STR.
    pub fn all() -> Vec<SubsetKey> {
        let mut keys = Vec::with_capacity(8);
        for gender in Gender::ALL {
            for noise in NoiseType::ALL {
                keys.push(SubsetKey { gender, noise });
            }
        }
        keys
    }
}

impl fmt::Display for SubsetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.gender.tag(), self.noise.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    A1,
    A2,
    A3,
}

impl Variant {
    pub fn generator_count(self) -> usize {
        match self {
            Variant::A1 => 1,
            Variant::A2 => 2,
            Variant::A3 => 8,
        }
    }

    fn from_generator_count(g: usize) -> Result<Variant> {
        match g {
            1 => Ok(Variant::A1),
            2 => Ok(Variant::A2),
            8 => Ok(Variant::A3),
            _ => Err(Error::Config(format!(
                "descriptor asks for {g} generators; supported bank sizes are 1, 2 and 8"
            ))),
        }
    }
}

/// Bank layout plus discriminator count per generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub variant: Variant,
    /// Clean-side discriminators per generator.
    pub n_da: usize,
    /// Mel bins the discriminator bands partition.
    pub feat_dim: usize,
}

impl ArchitectureSpec {
    pub fn new(variant: Variant, n_da: usize, feat_dim: usize) -> Result<Self> {
        if n_da < 1 || n_da > feat_dim {
            return Err(Error::Config(format!(
                "n_da {n_da} must satisfy 1 <= n_da <= feat_dim ({feat_dim})"
            )));
        }
        Ok(ArchitectureSpec {
            variant,
            n_da,
            feat_dim,
        })
    }

    /// Parse `cyclegan-<G>g+<D>da` (case-insensitive); `D` must be
    /// divisible by `G`.
    pub fn parse(descriptor: &str, feat_dim: usize) -> Result<Self> {
        let lower = descriptor.to_ascii_lowercase();
        let bad = || {
            Error::Config(format!(
                "bad architecture descriptor '{descriptor}' (expected cyclegan-<G>g+<D>da)"
            ))
        };
        let rest = lower.strip_prefix("cyclegan-").ok_or_else(bad)?;
        let (g_part, d_part) = rest.split_once('+').ok_or_else(bad)?;
        let g: usize = g_part.strip_suffix('g').ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let d: usize = d_part.strip_suffix("da").ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if g == 0 || d == 0 || d % g != 0 {
            return Err(Error::Config(format!(
                "descriptor '{descriptor}': discriminator count {d} must be a positive multiple of generator count {g}"
            )));
        }
        ArchitectureSpec::new(Variant::from_generator_count(g)?, d / g, feat_dim)
    }

    /// Canonical descriptor string, e.g. `cyclegan-8g+24da`.
    pub fn descriptor(&self) -> String {
        let g = self.variant.generator_count();
        format!("cyclegan-{g}g+{}da", g * self.n_da)
    }

    /// Total clean-side discriminators across the bank.
    pub fn total_da(&self) -> usize {
        self.variant.generator_count() * self.n_da
    }
}

/// Map a subset key to its generator index. Total and pure: A1 sends
/// everything to 0, A2 splits on gender, A3 on gender x noise with
/// female < male and BUS < CAF < PED < STR.
pub fn route(spec: &ArchitectureSpec, key: SubsetKey) -> usize {
    match spec.variant {
        Variant::A1 => 0,
        Variant::A2 => key.gender.index(),
        Variant::A3 => 4 * key.gender.index() + key.noise.index(),
    }
}

/// Network size knobs shared by every instance in a bank.
#[derive(Debug, Clone)]
pub struct ModelSizing {
    pub context: usize,
    pub gen_width: usize,
    pub gen_blocks: usize,
    pub disc_width: usize,
}

impl Default for ModelSizing {
    fn default() -> Self {
        ModelSizing {
            context: 5,
            gen_width: 64,
            gen_blocks: 9,
            disc_width: 64,
        }
    }
}

/// One CycleGAN: both generators, the clean-side discriminator bank and
/// the noisy-side full-band discriminator.
#[derive(Debug, Clone)]
pub struct CycleGanInstance<S> {
    pub g_a: GeneratorNet<S>,
    pub g_b: GeneratorNet<S>,
    pub d_a: Vec<DiscriminatorNet<S>>,
    pub d_b: DiscriminatorNet<S>,
    pub masks: Vec<BandMask>,
}

impl<S: Scalar> CycleGanInstance<S> {
    /// Digest over every parameter of every net in the instance.
    pub fn param_hash(&self) -> u64 {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&self.g_a.params().hash64().to_le_bytes());
        bytes.extend_from_slice(&self.g_b.params().hash64().to_le_bytes());
        for d in &self.d_a {
            bytes.extend_from_slice(&d.params().hash64().to_le_bytes());
        }
        bytes.extend_from_slice(&self.d_b.params().hash64().to_le_bytes());
        rng::fnv1a(&bytes)
    }
}

/// The full A1/A2/A3 structure: one [`CycleGanInstance`] per routing class.
#[derive(Debug, Clone)]
pub struct GeneratorBank<S> {
    pub spec: ArchitectureSpec,
    pub sizing: ModelSizing,
    pub instances: Vec<CycleGanInstance<S>>,
}

/// Fresh bank with per-instance seeds derived deterministically from
/// `seed`. No parameters are shared between instances.
pub fn build_architecture<S: Scalar>(
    spec: &ArchitectureSpec,
    sizing: &ModelSizing,
    seed: u64,
) -> Result<GeneratorBank<S>> {
    let masks = make_band_masks(spec.feat_dim, spec.n_da)?;
    let gen_cfg = GeneratorConfig {
        n_mels: spec.feat_dim,
        context: sizing.context,
        base_width: sizing.gen_width,
        n_blocks: sizing.gen_blocks,
    };
    let mut instances = Vec::with_capacity(spec.variant.generator_count());
    for k in 0..spec.variant.generator_count() {
        let k64 = k as u64;
        let g_a = GeneratorNet::init(gen_cfg.clone(), &mut rng::stream(seed, &[k64, 0]));
        let g_b = GeneratorNet::init(gen_cfg.clone(), &mut rng::stream(seed, &[k64, 1]));
        let d_a = masks
            .iter()
            .enumerate()
            .map(|(i, m)| {
                DiscriminatorNet::init(
                    DiscriminatorConfig {
                        input_bins: m.width(),
                        base_width: sizing.disc_width,
                    },
                    &mut rng::stream(seed, &[k64, 2 + i as u64]),
                )
            })
            .collect();
        let d_b = DiscriminatorNet::init(
            DiscriminatorConfig {
                input_bins: spec.feat_dim,
                base_width: sizing.disc_width,
            },
            &mut rng::stream(seed, &[k64, 100]),
        );
        instances.push(CycleGanInstance {
            g_a,
            g_b,
            d_a,
            d_b,
            masks: masks.clone(),
        });
    }
    Ok(GeneratorBank {
        spec: spec.clone(),
        sizing: sizing.clone(),
        instances,
    })
}

impl<S: Scalar> GeneratorBank<S> {
    /// Clean-side discriminators actually present, for the xG+yDA naming
    /// arithmetic.
    pub fn total_da(&self) -> usize {
        self.instances.iter().map(|i| i.d_a.len()).sum()
    }

    pub fn instance_for(&self, key: SubsetKey) -> &CycleGanInstance<S> {
        &self.instances[route(&self.spec, key)]
    }

    pub fn param_hashes(&self) -> Vec<u64> {
        self.instances.iter().map(|i| i.param_hash()).collect()
    }
}
