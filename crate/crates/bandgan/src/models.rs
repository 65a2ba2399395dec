//! Generator and discriminator networks as pure functions over named
//! parameter sets.
//!
//! The generator is the familiar residual image-translation stack sized
//! for log-Mel windows: 7x7 stem, two stride-2 downsampling convs,
//! `n_blocks` residual blocks, two stride-2 transposed convs and a linear
//! 7x7 output conv (log energies are unbounded below, so no squashing).
//! Width doubles at each downsampling stage from `base_width`. The odd
//! 11-frame context axis is zero-padded to a multiple of four internally
//! and cropped back on the way out.
//!
//! The discriminator judges one band of mel bins: three stride (2,2,1)
//! convs with per-layer normalization and leaky activations, then a
//! 1-channel projection producing a patch score map.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::features::FeatureWindow;

/// Instance-norm variance guard.
pub const NORM_EPS: f64 = 1e-5;
/// Discriminator leaky-ReLU slope.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Std-dev of the conv weight init distribution.
pub const INIT_STD: f64 = 0.02;

/// One named parameter array.
#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<S>,
}

/// Ordered set of named parameters; order is the binding contract between
/// `init`, `forward` and the optimizer.
#[derive(Debug, Clone)]
pub struct ParamSet<S> {
    entries: Vec<Param<S>>,
}

impl<S> Default for ParamSet<S> {
    fn default() -> Self {
        ParamSet {
            entries: Vec::new(),
        }
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<S>) {
        let name = name.into();
        debug_assert_eq!(shape.iter().product::<usize>(), values.len(), "{name}");
        self.entries.push(Param {
            name,
            shape,
            values,
        });
    }

    pub fn entries(&self) -> &[Param<S>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Param<S>] {
        &mut self.entries
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|p| p.values.len()).sum()
    }

    /// Stable digest of names, shapes and value bits. Two sets hash equal
    /// iff they are bitwise identical.
    pub fn hash64(&self) -> u64 {
        let mut bytes = Vec::new();
        for p in &self.entries {
            bytes.extend_from_slice(p.name.as_bytes());
            for &d in &p.shape {
                bytes.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &p.values {
                bytes.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        crate::rng::fnv1a(&bytes)
    }

    /// Serialize into a checkpoint bag under `prefix`, as f32.
    pub fn append_to(&self, out: &mut crate::checkpoint::NamedArrays, prefix: &str) {
        for p in &self.entries {
            out.push(
                format!("{prefix}{}", p.name),
                p.shape.clone(),
                p.values.iter().map(|v| v.as_f64() as f32).collect(),
            );
        }
    }

    /// Restore every entry from a checkpoint bag; shapes must match.
    pub fn load_from(
        &mut self,
        arrays: &crate::checkpoint::NamedArrays,
        prefix: &str,
    ) -> Result<()> {
        for p in &mut self.entries {
            let key = format!("{prefix}{}", p.name);
            let (shape, values) = arrays.require(&key)?;
            if shape != p.shape.as_slice() {
                return Err(Error::Input(format!(
                    "checkpoint array '{key}' has shape {shape:?}, expected {:?}",
                    p.shape
                )));
            }
            p.values = values.iter().map(|&v| S::from_f64(v as f64)).collect();
        }
        Ok(())
    }

    /// Bind every parameter as a graph leaf: trainable leaves when
    /// `trainable`, constants otherwise (inference, or the frozen side of
    /// an adversarial step).
    pub fn bind(&self, trainable: bool) -> Vec<Tensor<S>> {
        self.entries
            .iter()
            .map(|p| {
                if trainable {
                    Tensor::param(p.shape.clone(), p.values.clone()).unwrap()
                } else {
                    Tensor::constant(p.shape.clone(), p.values.clone()).unwrap()
                }
            })
            .collect()
    }
}

struct Cursor<'a, S: Scalar> {
    leaves: &'a [Tensor<S>],
    i: usize,
}

impl<'a, S: Scalar> Cursor<'a, S> {
    fn next(&mut self) -> &'a Tensor<S> {
        let t = &self.leaves[self.i];
        self.i += 1;
        t
    }
}

fn normal_draws<S: Scalar>(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<S> {
    let dist = Normal::new(0.0f64, std).unwrap();
    (0..n).map(|_| S::from_f64(dist.sample(rng))).collect()
}

/// Kernel-only conv parameters; used where instance norm follows the conv
/// and would cancel any per-channel bias.
fn push_conv<S: Scalar>(
    params: &mut ParamSet<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    shape: [usize; 4],
) {
    let n = shape.iter().product();
    params.push(format!("{name}.w"), shape.to_vec(), normal_draws(rng, n, INIT_STD));
}

/// Conv with a bias, for unnormalized output layers.
fn push_conv_bias<S: Scalar>(
    params: &mut ParamSet<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    shape: [usize; 4],
) {
    push_conv(params, rng, name, shape);
    let out_ch = shape[0];
    params.push(format!("{name}.b"), vec![out_ch], vec![S::zero(); out_ch]);
}

fn push_norm<S: Scalar>(params: &mut ParamSet<S>, name: &str, ch: usize) {
    params.push(format!("{name}.g"), vec![ch], vec![S::one(); ch]);
    params.push(format!("{name}.bias"), vec![ch], vec![S::zero(); ch]);
}

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub n_mels: usize,
    pub context: usize,
    pub base_width: usize,
    pub n_blocks: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_mels: 40,
            context: 5,
            base_width: 64,
            n_blocks: 9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorNet<S> {
    pub cfg: GeneratorConfig,
    params: ParamSet<S>,
}

impl<S: Scalar> GeneratorNet<S> {
    pub fn init(cfg: GeneratorConfig, rng: &mut ChaCha8Rng) -> Self {
        let w = cfg.base_width;
        let mut p = ParamSet::default();
        push_conv(&mut p, rng, "stem", [w, 1, 7, 7]);
        push_norm(&mut p, "stem.norm", w);
        push_conv(&mut p, rng, "down1", [2 * w, w, 3, 3]);
        push_norm(&mut p, "down1.norm", 2 * w);
        push_conv(&mut p, rng, "down2", [4 * w, 2 * w, 3, 3]);
        push_norm(&mut p, "down2.norm", 4 * w);
        for i in 0..cfg.n_blocks {
            push_conv(&mut p, rng, &format!("res{i}.c1"), [4 * w, 4 * w, 3, 3]);
            push_norm(&mut p, &format!("res{i}.n1"), 4 * w);
            push_conv(&mut p, rng, &format!("res{i}.c2"), [4 * w, 4 * w, 3, 3]);
            push_norm(&mut p, &format!("res{i}.n2"), 4 * w);
        }
        push_conv(&mut p, rng, "up1", [4 * w, 2 * w, 3, 3]);
        push_norm(&mut p, "up1.norm", 2 * w);
        push_conv(&mut p, rng, "up2", [2 * w, w, 3, 3]);
        push_norm(&mut p, "up2.norm", w);
        push_conv_bias(&mut p, rng, "out", [1, w, 7, 7]);
        GeneratorNet { cfg, params: p }
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn bind(&self, trainable: bool) -> BoundGenerator<S> {
        BoundGenerator {
            cfg: self.cfg.clone(),
            leaves: self.params.bind(trainable),
        }
    }
}

/// A generator with its parameters bound as graph leaves.
pub struct BoundGenerator<S: Scalar> {
    cfg: GeneratorConfig,
    leaves: Vec<Tensor<S>>,
}

impl<S: Scalar> BoundGenerator<S> {
    /// Rebind from externally constructed leaves (the verification suite
    /// differentiates through these). Order must match [`GeneratorNet::init`].
    pub fn from_leaves(cfg: GeneratorConfig, leaves: Vec<Tensor<S>>) -> Self {
        BoundGenerator { cfg, leaves }
    }
}

fn conv_block<S: Scalar>(
    x: &Tensor<S>,
    c: &mut Cursor<'_, S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    x.conv2d(c.next(), stride, padding)
}

fn conv_block_bias<S: Scalar>(
    x: &Tensor<S>,
    c: &mut Cursor<'_, S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let w = c.next();
    let b = c.next();
    x.conv2d(w, stride, padding)?.add_channel_bias(b)
}

fn norm_of<S: Scalar>(x: &Tensor<S>, c: &mut Cursor<'_, S>) -> Result<Tensor<S>> {
    let g = c.next();
    let b = c.next();
    x.instance_norm(g, b, S::from_f64(NORM_EPS))
}

impl<S: Scalar> BoundGenerator<S> {
    pub fn leaves(&self) -> &[Tensor<S>] {
        &self.leaves
    }

    /// Shape-preserving enhancement map over (B, 1, 2·context+1, n_mels)
    /// batches. The output is linear.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let [_, ch, h, w] = *x.shape() else {
            return Err(Error::Shape(format!(
                "generator expects rank-4 input, got {:?}",
                x.shape()
            )));
        };
        if ch != 1 {
            return Err(Error::Shape(format!(
                "generator expects 1 input channel, got {ch}"
            )));
        }

        // two stride-2 stages need extents divisible by 4
        let (pad_h, pad_w) = ((4 - h % 4) % 4, (4 - w % 4) % 4);
        let (top, left) = (pad_h / 2, pad_w / 2);
        let (bottom, right) = (pad_h - top, pad_w - left);
        let mut y = if pad_h + pad_w > 0 {
            x.pad_hw(top, bottom, left, right)?
        } else {
            x.clone()
        };

        let c = &mut Cursor {
            leaves: &self.leaves,
            i: 0,
        };
        y = norm_of(&conv_block(&y, c, 1, 3)?, c)?.relu();
        y = norm_of(&conv_block(&y, c, 2, 1)?, c)?.relu();
        y = norm_of(&conv_block(&y, c, 2, 1)?, c)?.relu();
        for _ in 0..self.cfg.n_blocks {
            let skip = y.clone();
            let mut f = norm_of(&conv_block(&y, c, 1, 1)?, c)?.relu();
            f = norm_of(&conv_block(&f, c, 1, 1)?, c)?;
            y = skip.add(&f)?;
        }
        for _ in 0..2 {
            y = y.conv_transpose2d(c.next(), 2, 1, 1)?;
            y = norm_of(&y, c)?.relu();
        }
        y = conv_block_bias(&y, c, 1, 3)?;
        debug_assert_eq!(c.i, self.leaves.len());

        if pad_h + pad_w > 0 {
            y = y.crop_hw(top, bottom, left, right)?;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorConfig {
    /// Width of the mel-bin band this discriminator judges.
    pub input_bins: usize,
    pub base_width: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            input_bins: 40,
            base_width: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorNet<S> {
    pub cfg: DiscriminatorConfig,
    params: ParamSet<S>,
}

impl<S: Scalar> DiscriminatorNet<S> {
    pub fn init(cfg: DiscriminatorConfig, rng: &mut ChaCha8Rng) -> Self {
        let w = cfg.base_width;
        let mut p = ParamSet::default();
        push_conv(&mut p, rng, "c1", [w, 1, 3, 3]);
        push_norm(&mut p, "c1.norm", w);
        push_conv(&mut p, rng, "c2", [2 * w, w, 3, 3]);
        push_norm(&mut p, "c2.norm", 2 * w);
        push_conv(&mut p, rng, "c3", [4 * w, 2 * w, 3, 3]);
        push_norm(&mut p, "c3.norm", 4 * w);
        push_conv_bias(&mut p, rng, "proj", [1, 4 * w, 3, 3]);
        DiscriminatorNet { cfg, params: p }
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn bind(&self, trainable: bool) -> BoundDiscriminator<S> {
        BoundDiscriminator {
            input_bins: self.cfg.input_bins,
            leaves: self.params.bind(trainable),
        }
    }
}

pub struct BoundDiscriminator<S: Scalar> {
    input_bins: usize,
    leaves: Vec<Tensor<S>>,
}

impl<S: Scalar> BoundDiscriminator<S> {
    pub fn leaves(&self) -> &[Tensor<S>] {
        &self.leaves
    }

    pub fn input_bins(&self) -> usize {
        self.input_bins
    }

    /// Patch score map over a (B, 1, rows, input_bins) band. Trained toward
    /// 1 on real input and 0 on generated input.
    pub fn forward(&self, band: &Tensor<S>) -> Result<Tensor<S>> {
        let [_, ch, _, w] = *band.shape() else {
            return Err(Error::Shape(format!(
                "discriminator expects rank-4 input, got {:?}",
                band.shape()
            )));
        };
        if ch != 1 {
            return Err(Error::Shape(format!(
                "discriminator expects 1 input channel, got {ch}"
            )));
        }
        if w != self.input_bins {
            return Err(Error::Shape(format!(
                "discriminator judges a {}-bin band, got {w} bins",
                self.input_bins
            )));
        }
        let slope = S::from_f64(LEAKY_SLOPE);
        let c = &mut Cursor {
            leaves: &self.leaves,
            i: 0,
        };
        let mut y = band.clone();
        for stride in [2, 2, 1] {
            y = norm_of(&conv_block(&y, c, stride, 1)?, c)?.leaky_relu(slope);
        }
        y = conv_block_bias(&y, c, 1, 1)?;
        debug_assert_eq!(c.i, self.leaves.len());
        Ok(y)
    }
}

/// Anything that maps a feature batch to a feature batch of the same
/// shape: bound generators, or simple stubs in tests.
pub trait EnhanceMap<S: Scalar> {
    fn apply(&self, batch: &Tensor<S>) -> Result<Tensor<S>>;
}

impl<S: Scalar> EnhanceMap<S> for BoundGenerator<S> {
    fn apply(&self, batch: &Tensor<S>) -> Result<Tensor<S>> {
        self.forward(batch)
    }
}

/// The do-nothing enhancer.
pub struct IdentityMap;

impl<S: Scalar> EnhanceMap<S> for IdentityMap {
    fn apply(&self, batch: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(batch.clone())
    }
}

/// Anything that scores a band: bound discriminators, or stubs in tests.
pub trait ScoreMap<S: Scalar> {
    fn score(&self, band: &Tensor<S>) -> Result<Tensor<S>>;
}

impl<S: Scalar> ScoreMap<S> for BoundDiscriminator<S> {
    fn score(&self, band: &Tensor<S>) -> Result<Tensor<S>> {
        self.forward(band)
    }
}

/// Stack feature windows into a (B, 1, rows, n_mels) input batch.
pub fn window_batch<S: Scalar>(windows: &[&FeatureWindow]) -> Result<Tensor<S>> {
    let Some(first) = windows.first() else {
        return Err(Error::Usage("empty window batch".into()));
    };
    let (rows, mels) = (first.rows, first.n_mels);
    let mut values = Vec::with_capacity(windows.len() * rows * mels);
    for w in windows {
        if w.rows != rows || w.n_mels != mels {
            return Err(Error::Shape("mixed window shapes in batch".into()));
        }
        values.extend(w.data.iter().map(|&v| S::from_f64(v as f64)));
    }
    Tensor::constant(vec![windows.len(), 1, rows, mels], values)
}
