//! Alternating generator/discriminator optimization.
//!
//! Each step: (1) forward both generators, assemble the weighted objective
//! and update G_A and G_B jointly with one Adam step; (2) update every
//! clean-side band discriminator on detached fakes, ascending index;
//! (3) update the noisy-side discriminator. Epochs are full passes over the
//! smaller domain of each instance under independent seeded shuffles.
//! Given (seed, config, corpus) every parameter value at every step is
//! bitwise reproducible, and training resumes exactly from any epoch
//! checkpoint.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::autodiff::{backward, Scalar, Tensor};
use crate::checkpoint::{read_bgck, write_bgck, NamedArrays};
use crate::error::{Error, Result};
use crate::losses::{
    adv_generator_loss, adv_single_loss, discriminator_loss, identity_loss, total_objective,
    BandMask, GeneratorTerms, LossBreakdown, LossWeights,
};
use crate::models::ParamSet;
use crate::rng;
use crate::routing::{build_architecture, ArchitectureSpec, CycleGanInstance, GeneratorBank, ModelSizing};

/// Everything the trainer needs, one flat bag of keys. Field names are the
/// config-file keys; unknown keys in a file are errors.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub epochs: usize,
    pub lambda_idt: f64,
    pub lambda_cycle: f64,
    pub arch: ArchitectureSpec,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub n_mels: usize,
    pub context: usize,
    pub gen_width: usize,
    pub gen_blocks: usize,
    pub disc_width: usize,
    /// Upper bound on concurrently training instances.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            lr: 2e-4,
            lr_decay_every: 50,
            lr_decay_factor: 0.5,
            epochs: 200,
            lambda_idt: 0.5,
            lambda_cycle: 10.0,
            arch: ArchitectureSpec::parse("cyclegan-1g+1da", 40).unwrap(),
            seed: 0,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            n_mels: 40,
            context: 5,
            gen_width: 64,
            gen_blocks: 9,
            disc_width: 64,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_idt: self.lambda_idt,
            lambda_cycle: self.lambda_cycle,
        }
    }

    pub fn sizing(&self) -> ModelSizing {
        ModelSizing {
            context: self.context,
            gen_width: self.gen_width,
            gen_blocks: self.gen_blocks,
            disc_width: self.disc_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.lr_decay_every == 0 {
            return Err(Error::Config("counts must be >= 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be > 0".into()));
        }
        if self.lr_decay_factor <= 0.0 || self.lr_decay_factor > 1.0 {
            return Err(Error::Config("lr_decay_factor must be in (0, 1]".into()));
        }
        if self.n_mels != self.arch.feat_dim {
            return Err(Error::Config(format!(
                "n_mels {} does not match architecture feat_dim {}",
                self.n_mels, self.arch.feat_dim
            )));
        }
        if self.gen_width == 0 || self.gen_blocks == 0 || self.disc_width == 0 || self.jobs == 0 {
            return Err(Error::Config("model sizes and jobs must be >= 1".into()));
        }
        self.weights().validate()
    }

    /// Parse a flat `key = value` file. Unknown keys are configuration
    /// errors; the architecture descriptor is resolved against `n_mels`,
    /// so `n_mels` in the file takes effect regardless of line order.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut arch_text: Option<(String, usize)> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected key = value, got '{raw}'"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            let parse_err = |what: &str| Error::Parse {
                line: line_no,
                msg: format!("cannot parse {what} from '{value}' for key '{key}'"),
            };
            match key {
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| parse_err("count"))?,
                "lr" => cfg.lr = value.parse().map_err(|_| parse_err("real"))?,
                "lr_decay_every" => {
                    cfg.lr_decay_every = value.parse().map_err(|_| parse_err("count"))?
                }
                "lr_decay_factor" => {
                    cfg.lr_decay_factor = value.parse().map_err(|_| parse_err("real"))?
                }
                "epochs" => cfg.epochs = value.parse().map_err(|_| parse_err("count"))?,
                "lambda_idt" => cfg.lambda_idt = value.parse().map_err(|_| parse_err("real"))?,
                "lambda_cycle" => {
                    cfg.lambda_cycle = value.parse().map_err(|_| parse_err("real"))?
                }
                "arch" => arch_text = Some((value.to_string(), line_no)),
                "seed" => cfg.seed = value.parse().map_err(|_| parse_err("integer"))?,
                "adam_beta1" => cfg.adam_beta1 = value.parse().map_err(|_| parse_err("real"))?,
                "adam_beta2" => cfg.adam_beta2 = value.parse().map_err(|_| parse_err("real"))?,
                "adam_eps" => cfg.adam_eps = value.parse().map_err(|_| parse_err("real"))?,
                "n_mels" => cfg.n_mels = value.parse().map_err(|_| parse_err("count"))?,
                "context" => cfg.context = value.parse().map_err(|_| parse_err("count"))?,
                "gen_width" => cfg.gen_width = value.parse().map_err(|_| parse_err("count"))?,
                "gen_blocks" => cfg.gen_blocks = value.parse().map_err(|_| parse_err("count"))?,
                "disc_width" => cfg.disc_width = value.parse().map_err(|_| parse_err("count"))?,
                "jobs" => cfg.jobs = value.parse().map_err(|_| parse_err("count"))?,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown config key '{key}' at line {line_no}"
                    )))
                }
            }
        }
        if let Some((text, line_no)) = arch_text {
            cfg.arch = ArchitectureSpec::parse(&text, cfg.n_mels).map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
        } else {
            cfg.arch = ArchitectureSpec::parse(&cfg.arch.descriptor(), cfg.n_mels)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical key = value rendering; also the config-hash preimage.
    pub fn to_kv_string(&self) -> String {
        format!(
            "arch = {}\nbatch_size = {}\nlr = {}\nlr_decay_every = {}\nlr_decay_factor = {}\n\
             epochs = {}\nlambda_idt = {}\nlambda_cycle = {}\nseed = {}\nadam_beta1 = {}\n\
             adam_beta2 = {}\nadam_eps = {}\nn_mels = {}\ncontext = {}\ngen_width = {}\n\
             gen_blocks = {}\ndisc_width = {}\njobs = {}\n",
            self.arch.descriptor(),
            self.batch_size,
            self.lr,
            self.lr_decay_every,
            self.lr_decay_factor,
            self.epochs,
            self.lambda_idt,
            self.lambda_cycle,
            self.seed,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_eps,
            self.n_mels,
            self.context,
            self.gen_width,
            self.gen_blocks,
            self.disc_width,
            self.jobs
        )
    }

    /// Fingerprint of everything that affects the numbers. `jobs` is
    /// excluded: parallelism never changes results.
    pub fn config_hash(&self) -> u64 {
        let mut canon = self.to_kv_string();
        if let Some(pos) = canon.find("\njobs = ") {
            canon.truncate(pos + 1);
        }
        rng::fnv1a(canon.as_bytes())
    }
}

/// Learning rate for a 0-based epoch index:
/// lr · factor^floor(epoch / every).
pub fn lr_schedule(config: &TrainConfig, epoch: usize) -> f64 {
    config.lr * config.lr_decay_factor.powi((epoch / config.lr_decay_every) as i32)
}

/// Per-parameter first/second moment estimates plus the shared step count.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new_for(params: &ParamSet<S>) -> Self {
        let zeros: Vec<Vec<S>> = params
            .entries()
            .iter()
            .map(|p| vec![S::zero(); p.values.len()])
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn append_to(&self, out: &mut NamedArrays, prefix: &str, params: &ParamSet<S>) {
        for ((p, m), v) in params.entries().iter().zip(&self.m).zip(&self.v) {
            out.push(
                format!("{prefix}m/{}", p.name),
                p.shape.clone(),
                m.iter().map(|x| x.as_f64() as f32).collect(),
            );
            out.push(
                format!("{prefix}v/{}", p.name),
                p.shape.clone(),
                v.iter().map(|x| x.as_f64() as f32).collect(),
            );
        }
        out.push_u64(format!("{prefix}t"), self.t);
    }

    fn load_from(
        &mut self,
        arrays: &NamedArrays,
        prefix: &str,
        params: &ParamSet<S>,
    ) -> Result<()> {
        for (i, p) in params.entries().iter().enumerate() {
            let (_, m) = arrays.require(&format!("{prefix}m/{}", p.name))?;
            let (_, v) = arrays.require(&format!("{prefix}v/{}", p.name))?;
            self.m[i] = m.iter().map(|&x| S::from_f64(x as f64)).collect();
            self.v[i] = v.iter().map(|&x| S::from_f64(x as f64)).collect();
        }
        self.t = arrays.get_u64(&format!("{prefix}t"))?;
        Ok(())
    }
}

/// One Adam update over an aligned (params, grads, state) triple.
pub fn adam_step<S: Scalar>(
    params: &mut ParamSet<S>,
    grads: &[Vec<S>],
    state: &mut AdamState<S>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.entries().len() {
        return Err(Error::Usage(format!(
            "adam_step: {} gradient arrays for {} parameters",
            grads.len(),
            params.entries().len()
        )));
    }
    state.t += 1;
    let b1 = S::from_f64(cfg.adam_beta1);
    let b2 = S::from_f64(cfg.adam_beta2);
    let eps = S::from_f64(cfg.adam_eps);
    let bc1 = S::from_f64(1.0 - cfg.adam_beta1.powi(state.t as i32));
    let bc2 = S::from_f64(1.0 - cfg.adam_beta2.powi(state.t as i32));
    let lr_s = S::from_f64(lr);
    let one = S::one();

    for ((p, g), (m, v)) in params
        .entries_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if g.len() != p.values.len() {
            return Err(Error::Usage(format!(
                "adam_step: gradient length {} for parameter '{}' of {} values",
                g.len(),
                p.name,
                p.values.len()
            )));
        }
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.values[i] = p.values[i] - lr_s * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Flattened windows of one domain of one instance.
#[derive(Debug, Clone)]
pub struct WindowPool {
    data: Vec<f32>,
    pub count: usize,
    pub rows: usize,
    pub n_mels: usize,
}

impl WindowPool {
    pub fn new(rows: usize, n_mels: usize) -> Self {
        WindowPool {
            data: Vec::new(),
            count: 0,
            rows,
            n_mels,
        }
    }

    pub fn push_window(&mut self, window: &[f32]) {
        debug_assert_eq!(window.len(), self.rows * self.n_mels);
        self.data.extend_from_slice(window);
        self.count += 1;
    }

    /// Gather the indexed windows into a (B, 1, rows, n_mels) batch.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> Result<Tensor<S>> {
        if indices.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let wlen = self.rows * self.n_mels;
        let mut values = Vec::with_capacity(indices.len() * wlen);
        for &i in indices {
            values.extend(
                self.data[i * wlen..(i + 1) * wlen]
                    .iter()
                    .map(|&v| S::from_f64(v as f64)),
            );
        }
        Tensor::constant(vec![indices.len(), 1, self.rows, self.n_mels], values)
    }
}

/// Both domains of one instance, plus a label for error messages.
#[derive(Debug, Clone)]
pub struct InstanceData {
    pub label: String,
    pub pool_a: WindowPool,
    pub pool_b: WindowPool,
}

/// Window pools for every instance of a bank, in routing order.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub per_instance: Vec<InstanceData>,
}

/// Optimizer state for one instance.
pub struct InstanceTrainState<S> {
    pub opt_g_a: AdamState<S>,
    pub opt_g_b: AdamState<S>,
    pub opt_d_a: Vec<AdamState<S>>,
    pub opt_d_b: AdamState<S>,
    /// Steps taken so far, across epochs; numbers the CSV rows.
    pub step: u64,
}

impl<S: Scalar> InstanceTrainState<S> {
    pub fn new_for(inst: &CycleGanInstance<S>) -> Self {
        InstanceTrainState {
            opt_g_a: AdamState::new_for(inst.g_a.params()),
            opt_g_b: AdamState::new_for(inst.g_b.params()),
            opt_d_a: inst.d_a.iter().map(|d| AdamState::new_for(d.params())).collect(),
            opt_d_b: AdamState::new_for(inst.d_b.params()),
            step: 0,
        }
    }
}

fn collect_grads<S: Scalar>(
    grads: &crate::autodiff::Gradients<S>,
    leaves: &[Tensor<S>],
) -> Vec<Vec<S>> {
    leaves.iter().map(|l| grads.grad(l)).collect()
}

fn truncate_batch<S: Scalar>(batch: &Tensor<S>, keep: usize) -> Result<Tensor<S>> {
    let shape = batch.shape().to_vec();
    if shape[0] == keep {
        return Ok(batch.clone());
    }
    let per = batch.numel() / shape[0];
    let mut shape = shape;
    shape[0] = keep;
    Tensor::constant(shape, batch.values()[..keep * per].to_vec())
}

/// One alternating optimization step. Returns the pre-update loss values.
pub fn train_step<S: Scalar>(
    inst: &mut CycleGanInstance<S>,
    state: &mut InstanceTrainState<S>,
    batch_a: &Tensor<S>,
    batch_b: &Tensor<S>,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<LossBreakdown> {
    let (ba, bb) = (batch_a.shape()[0], batch_b.shape()[0]);
    if ba == 0 || bb == 0 {
        return Err(Error::Usage("train_step on an empty batch".into()));
    }
    // unpaired batches need not agree in size; truncate to the shorter
    let keep = ba.min(bb);
    let batch_a = truncate_batch(batch_a, keep)?;
    let batch_b = truncate_batch(batch_b, keep)?;

    // (1) generators: joint objective, one Adam step for G_A and G_B
    let g_a = inst.g_a.bind(true);
    let g_b = inst.g_b.bind(true);
    let d_a_frozen: Vec<_> = inst.d_a.iter().map(|d| d.bind(false)).collect();
    let d_b_frozen = inst.d_b.bind(false);

    let fake_b = g_a.forward(&batch_a)?;
    let fake_a = g_b.forward(&batch_b)?;

    let terms = GeneratorTerms {
        adv_a: adv_generator_loss(&fake_b, &d_a_frozen, &inst.masks)?,
        adv_b: adv_single_loss(&d_b_frozen, &fake_a)?,
        idt_a: identity_loss(&g_a, &batch_b)?,
        idt_b: identity_loss(&g_b, &batch_a)?,
        cycle_a: crate::autodiff::l1_loss(&g_b.forward(&fake_b)?, &batch_a)?,
        cycle_b: crate::autodiff::l1_loss(&g_a.forward(&fake_a)?, &batch_b)?,
    };
    let total = total_objective(&terms, &cfg.weights())?;

    let grads = backward(&total)?;
    let ga_grads = collect_grads(&grads, g_a.leaves());
    let gb_grads = collect_grads(&grads, g_b.leaves());
    adam_step(inst.g_a.params_mut(), &ga_grads, &mut state.opt_g_a, lr, cfg)?;
    adam_step(inst.g_b.params_mut(), &gb_grads, &mut state.opt_g_b, lr, cfg)?;

    // (2) clean-side band discriminators on detached fakes, ascending index
    let fake_b_det = fake_b.detach();
    let fake_a_det = fake_a.detach();
    let mut per_discriminator = Vec::with_capacity(inst.d_a.len());
    for (i, mask) in inst.masks.clone().iter().enumerate() {
        let bound = inst.d_a[i].bind(true);
        let loss = discriminator_loss(&bound, mask, &batch_b, &fake_b_det)?;
        per_discriminator.push((mask.index, loss.item()?.as_f64()));
        let d_grads = collect_grads(&backward(&loss)?, bound.leaves());
        adam_step(inst.d_a[i].params_mut(), &d_grads, &mut state.opt_d_a[i], lr, cfg)?;
    }

    // (3) full-band noisy-side discriminator
    let full = BandMask::full(inst.d_b.cfg.input_bins);
    let bound_db = inst.d_b.bind(true);
    let db_loss = discriminator_loss(&bound_db, &full, &batch_a, &fake_a_det)?;
    let l_d_b = db_loss.item()?.as_f64();
    let db_grads = collect_grads(&backward(&db_loss)?, bound_db.leaves());
    adam_step(inst.d_b.params_mut(), &db_grads, &mut state.opt_d_b, lr, cfg)?;

    Ok(LossBreakdown {
        l_ga: terms.adv_a.item()?.as_f64(),
        l_gb: terms.adv_b.item()?.as_f64(),
        l_idt_a: terms.idt_a.item()?.as_f64(),
        l_idt_b: terms.idt_b.item()?.as_f64(),
        l_cycle_a: terms.cycle_a.item()?.as_f64(),
        l_cycle_b: terms.cycle_b.item()?.as_f64(),
        per_discriminator,
        l_d_b,
        total: total.item()?.as_f64(),
    })
}

const TAG_SHUFFLE: u64 = 0x53_48_46_4c;

/// Shuffle-order index stream for (instance, epoch, domain).
fn epoch_permutation(seed: u64, instance: usize, epoch: usize, domain: u64, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed, &[TAG_SHUFFLE, instance as u64, epoch as u64, domain]);
    idx.shuffle(&mut r);
    idx
}

/// One full pass over the smaller domain of one instance.
pub fn train_instance_epoch<S: Scalar>(
    k: usize,
    inst: &mut CycleGanInstance<S>,
    state: &mut InstanceTrainState<S>,
    data: &InstanceData,
    cfg: &TrainConfig,
    epoch: usize,
    lr: f64,
) -> Result<Vec<LossBreakdown>> {
    let used = data.pool_a.count.min(data.pool_b.count);
    if used == 0 {
        return Err(Error::Config(format!(
            "instance {k} ({}) has an empty routed subset",
            data.label
        )));
    }
    let perm_a = epoch_permutation(cfg.seed, k, epoch, 0, data.pool_a.count);
    let perm_b = epoch_permutation(cfg.seed, k, epoch, 1, data.pool_b.count);
    let steps = used.div_ceil(cfg.batch_size);
    let mut out = Vec::with_capacity(steps);
    for s in 0..steps {
        let lo = s * cfg.batch_size;
        let hi = ((s + 1) * cfg.batch_size).min(used);
        let batch_a = data.pool_a.batch::<S>(&perm_a[lo..hi])?;
        let batch_b = data.pool_b.batch::<S>(&perm_b[lo..hi])?;
        out.push(train_step(inst, state, &batch_a, &batch_b, cfg, lr)?);
        state.step += 1;
    }
    Ok(out)
}

/// Per-epoch summary.
#[derive(Debug, Clone)]
pub struct EpochReport {
    /// 1-based trained-epoch number.
    pub epoch: usize,
    pub mean: LossBreakdown,
    pub lr: f64,
    pub wall_secs: f64,
}

fn mean_breakdown(all: &[LossBreakdown]) -> LossBreakdown {
    let n = all.len().max(1) as f64;
    let mut acc = LossBreakdown {
        l_ga: 0.0,
        l_gb: 0.0,
        l_idt_a: 0.0,
        l_idt_b: 0.0,
        l_cycle_a: 0.0,
        l_cycle_b: 0.0,
        per_discriminator: all
            .first()
            .map(|b| b.per_discriminator.iter().map(|&(i, _)| (i, 0.0)).collect())
            .unwrap_or_default(),
        l_d_b: 0.0,
        total: 0.0,
    };
    for b in all {
        acc.l_ga += b.l_ga / n;
        acc.l_gb += b.l_gb / n;
        acc.l_idt_a += b.l_idt_a / n;
        acc.l_idt_b += b.l_idt_b / n;
        acc.l_cycle_a += b.l_cycle_a / n;
        acc.l_cycle_b += b.l_cycle_b / n;
        acc.l_d_b += b.l_d_b / n;
        acc.total += b.total / n;
        for (slot, (_, v)) in acc.per_discriminator.iter_mut().zip(&b.per_discriminator) {
            slot.1 += v / n;
        }
    }
    acc
}

/// Output locations and verbosity for a training run.
pub struct TrainSinks {
    pub out_dir: PathBuf,
    pub quiet: bool,
}

pub fn checkpoint_path(out_dir: &Path, instance: usize, epoch: usize) -> PathBuf {
    out_dir.join(format!("inst{instance}_epoch{epoch}.ckpt"))
}

pub fn losses_csv_path(out_dir: &Path, instance: usize) -> PathBuf {
    out_dir.join(format!("losses_inst{instance}.csv"))
}

pub fn save_instance_checkpoint<S: Scalar>(
    path: &Path,
    inst: &CycleGanInstance<S>,
    state: &InstanceTrainState<S>,
    epoch: usize,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut arrays = NamedArrays::default();
    arrays.push_string("meta/arch", &cfg.arch.descriptor());
    arrays.push_scalar("meta/epoch", epoch as f32);
    arrays.push_u64("meta/config_hash", cfg.config_hash());
    inst.g_a.params().append_to(&mut arrays, "g_a/");
    inst.g_b.params().append_to(&mut arrays, "g_b/");
    for (i, d) in inst.d_a.iter().enumerate() {
        d.params().append_to(&mut arrays, &format!("d_a{i}/"));
    }
    inst.d_b.params().append_to(&mut arrays, "d_b/");
    state.opt_g_a.append_to(&mut arrays, "opt/g_a/", inst.g_a.params());
    state.opt_g_b.append_to(&mut arrays, "opt/g_b/", inst.g_b.params());
    for (i, (o, d)) in state.opt_d_a.iter().zip(&inst.d_a).enumerate() {
        o.append_to(&mut arrays, &format!("opt/d_a{i}/"), d.params());
    }
    state.opt_d_b.append_to(&mut arrays, "opt/d_b/", inst.d_b.params());
    arrays.push_u64("meta/step", state.step);
    write_bgck(path, &arrays)
}

/// Restore one instance (parameters and optimizer state) from a checkpoint
/// written by [`save_instance_checkpoint`]. Validates the architecture
/// descriptor and config hash.
pub fn load_instance_checkpoint<S: Scalar>(
    path: &Path,
    inst: &mut CycleGanInstance<S>,
    state: &mut InstanceTrainState<S>,
    cfg: &TrainConfig,
) -> Result<usize> {
    let arrays = read_bgck(path)?;
    let arch = arrays.get_string("meta/arch")?;
    if arch != cfg.arch.descriptor() {
        return Err(Error::Config(format!(
            "checkpoint {} was trained as '{arch}' but the configured architecture is '{}'",
            path.display(),
            cfg.arch.descriptor()
        )));
    }
    let hash = arrays.get_u64("meta/config_hash")?;
    if hash != cfg.config_hash() {
        return Err(Error::Config(format!(
            "checkpoint {} was written under a different config (hash mismatch)",
            path.display()
        )));
    }
    inst.g_a.params_mut().load_from(&arrays, "g_a/")?;
    inst.g_b.params_mut().load_from(&arrays, "g_b/")?;
    for (i, d) in inst.d_a.iter_mut().enumerate() {
        d.params_mut().load_from(&arrays, &format!("d_a{i}/"))?;
    }
    inst.d_b.params_mut().load_from(&arrays, "d_b/")?;
    state.opt_g_a.load_from(&arrays, "opt/g_a/", inst.g_a.params())?;
    state.opt_g_b.load_from(&arrays, "opt/g_b/", inst.g_b.params())?;
    for (i, (o, d)) in state.opt_d_a.iter_mut().zip(&inst.d_a).enumerate() {
        o.load_from(&arrays, &format!("opt/d_a{i}/"), d.params())?;
    }
    state.opt_d_b.load_from(&arrays, "opt/d_b/", inst.d_b.params())?;
    state.step = arrays.get_u64("meta/step")?;
    Ok(arrays.get_scalar("meta/epoch")? as usize)
}

/// The outcome of [`train_loop`].
#[derive(Debug)]
pub struct TrainOutcome {
    pub reports: Vec<EpochReport>,
    /// Checkpoint paths of the final epoch, one per instance.
    pub final_checkpoints: Vec<PathBuf>,
}

/// Build a fresh bank for the config and train it; see [`train_loop`].
pub fn train_bank<S: Scalar>(
    data: &TrainingSet,
    cfg: &TrainConfig,
    sinks: &TrainSinks,
    resume_epoch: Option<usize>,
) -> Result<(GeneratorBank<S>, TrainOutcome)> {
    let mut bank = build_architecture::<S>(&cfg.arch, &cfg.sizing(), cfg.seed)?;
    let outcome = train_loop(&mut bank, data, cfg, sinks, resume_epoch)?;
    Ok((bank, outcome))
}

/// Run the full schedule. Writes one checkpoint per instance per epoch
/// (including the epoch-0 initialization state) plus per-instance loss CSVs.
/// With `resume_epoch = Some(k)` the bank and optimizers are restored from
/// the epoch-k checkpoints and training continues at epoch k+1, reproducing
/// the uninterrupted run exactly.
pub fn train_loop<S: Scalar>(
    bank: &mut GeneratorBank<S>,
    data: &TrainingSet,
    cfg: &TrainConfig,
    sinks: &TrainSinks,
    resume_epoch: Option<usize>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.per_instance.len() != bank.instances.len() {
        return Err(Error::Usage(format!(
            "training set covers {} instances, bank has {}",
            data.per_instance.len(),
            bank.instances.len()
        )));
    }
    for (k, d) in data.per_instance.iter().enumerate() {
        if d.pool_a.count == 0 || d.pool_b.count == 0 {
            return Err(Error::Config(format!(
                "instance {k} ({}) has an empty routed subset (A: {}, B: {} windows)",
                d.label, d.pool_a.count, d.pool_b.count
            )));
        }
    }
    fs::create_dir_all(&sinks.out_dir)?;

    let mut states: Vec<InstanceTrainState<S>> = bank
        .instances
        .iter()
        .map(InstanceTrainState::new_for)
        .collect();

    let start_epoch = match resume_epoch {
        Some(e) => {
            for (k, (inst, state)) in bank.instances.iter_mut().zip(&mut states).enumerate() {
                let path = checkpoint_path(&sinks.out_dir, k, e);
                let got = load_instance_checkpoint(&path, inst, state, cfg)?;
                if got != e {
                    return Err(Error::Config(format!(
                        "checkpoint {} stores epoch {got}, expected {e}",
                        path.display()
                    )));
                }
            }
            e
        }
        None => {
            for (k, (inst, state)) in bank.instances.iter().zip(&states).enumerate() {
                save_instance_checkpoint(
                    &checkpoint_path(&sinks.out_dir, k, 0),
                    inst,
                    state,
                    0,
                    cfg,
                )?;
            }
            0
        }
    };

    // one CSV per instance; fresh runs start them with the header
    let n_da = cfg.arch.n_da;
    let mut csvs: Vec<fs::File> = Vec::with_capacity(bank.instances.len());
    for k in 0..bank.instances.len() {
        let path = losses_csv_path(&sinks.out_dir, k);
        let mut file = fs::File::create(&path)?;
        writeln!(file, "{}", LossBreakdown::csv_header(n_da))?;
        csvs.push(file);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.min(bank.instances.len()).max(1))
        .build()
        .map_err(|e| Error::Usage(format!("cannot build thread pool: {e}")))?;

    let mut reports = Vec::new();
    for epoch in start_epoch + 1..=cfg.epochs {
        let t0 = Instant::now();
        let lr = lr_schedule(cfg, epoch - 1);

        let step_offsets: Vec<u64> = states.iter().map(|s| s.step).collect();
        let results: Vec<Result<Vec<LossBreakdown>>> = pool.install(|| {
            use rayon::prelude::*;
            bank.instances
                .par_iter_mut()
                .zip(states.par_iter_mut())
                .zip(data.per_instance.par_iter())
                .enumerate()
                .map(|(k, ((inst, state), d))| {
                    train_instance_epoch(k, inst, state, d, cfg, epoch, lr)
                })
                .collect()
        });

        let mut epoch_breakdowns = Vec::new();
        for (k, result) in results.into_iter().enumerate() {
            let breakdowns = result?;
            for (i, b) in breakdowns.iter().enumerate() {
                writeln!(csvs[k], "{}", b.csv_row(step_offsets[k] as usize + i))?;
            }
            epoch_breakdowns.extend(breakdowns);
        }
        for (k, (inst, state)) in bank.instances.iter().zip(&states).enumerate() {
            save_instance_checkpoint(
                &checkpoint_path(&sinks.out_dir, k, epoch),
                inst,
                state,
                epoch,
                cfg,
            )?;
        }

        let report = EpochReport {
            epoch,
            mean: mean_breakdown(&epoch_breakdowns),
            lr,
            wall_secs: t0.elapsed().as_secs_f64(),
        };
        if !sinks.quiet {
            println!(
                "epoch {:>4}/{}  lr {:.2e}  total {:.4}  adv {:.4}/{:.4}  cycle {:.4}/{:.4}  D_B {:.4}  ({:.1}s)",
                report.epoch,
                cfg.epochs,
                report.lr,
                report.mean.total,
                report.mean.l_ga,
                report.mean.l_gb,
                report.mean.l_cycle_a,
                report.mean.l_cycle_b,
                report.mean.l_d_b,
                report.wall_secs
            );
        }
        reports.push(report);
    }

    let last = if cfg.epochs == 0 { 0 } else { cfg.epochs };
    let final_checkpoints = (0..bank.instances.len())
        .map(|k| checkpoint_path(&sinks.out_dir, k, last))
        .collect();
    Ok(TrainOutcome {
        reports,
        final_checkpoints,
    })
}
