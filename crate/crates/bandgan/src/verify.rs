//! The gradient verification suite behind the `gradcheck` command.
//!
//! Runs central finite-difference checks for every differentiable tensor
//! op exactly once at 64-bit, then the full weighted objective on a
//! 2-block generator pair at both precisions. A named fault can be
//! injected (the loss gradient is scaled by 1.1 inside one check) to prove
//! the harness actually catches broken backward passes.

use rand::Rng;

use crate::autodiff::check::CheckParam;
use crate::autodiff::{gradient_check, GradCheckReport, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::losses::{
    adv_generator_loss, adv_single_loss, identity_loss, total_objective, GeneratorTerms,
    LossWeights,
};
use crate::models::{BoundGenerator, GeneratorConfig};
use crate::rng;
use crate::routing::{build_architecture, ArchitectureSpec, ModelSizing, Variant};

/// Ops covered by the per-op sweep, in report order.
pub const CHECKED_OPS: [&str; 18] = [
    "conv2d",
    "conv_transpose2d",
    "instance_norm",
    "relu",
    "leaky_relu",
    "tanh",
    "add",
    "sub",
    "mul",
    "scale",
    "add_channel_bias",
    "slice_last",
    "pad_hw",
    "crop_hw",
    "sum",
    "mean",
    "mse_loss",
    "l1_loss",
];

const OP_STEP: f64 = 1e-5;
const OP_TOL: f64 = 1e-5;

fn rvals(seed: u64, tag: u64, n: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, &[0x47_43, tag]);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Values bounded away from zero so kinked ops stay smooth under the probe.
fn rvals_off_kink(seed: u64, tag: u64, n: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, &[0x47_4b, tag]);
    (0..n)
        .map(|_| {
            let v: f64 = r.random_range(0.2..1.0);
            if r.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn corrupt<S: Scalar>(loss: Tensor<S>, fault: bool) -> Tensor<S> {
    if fault {
        loss.grad_scale(S::from_f64(1.1))
    } else {
        loss
    }
}

fn check_op(name: &str, seed: u64, fault: bool) -> Result<GradCheckReport> {
    type P = Vec<CheckParam<f64>>;
    let p4 = |tag: u64, shape: [usize; 4]| -> CheckParam<f64> {
        let n = shape.iter().product();
        ("x".into(), shape.to_vec(), rvals(seed, tag, n))
    };
    match name {
        "conv2d" => {
            let params: P = vec![
                p4(0, [1, 2, 5, 6]),
                ("k".into(), vec![2, 2, 3, 3], rvals(seed, 1, 36)),
            ];
            gradient_check(
                name,
                move |p| Ok(corrupt(p[0].conv2d(&p[1], 2, 1)?.sum(), fault)),
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        "conv_transpose2d" => {
            let params: P = vec![
                p4(0, [1, 2, 3, 4]),
                ("k".into(), vec![2, 3, 3, 3], rvals(seed, 1, 54)),
            ];
            gradient_check(
                name,
                move |p| Ok(corrupt(p[0].conv_transpose2d(&p[1], 2, 1, 1)?.sum(), fault)),
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        "instance_norm" => {
            let params: P = vec![
                p4(0, [2, 3, 4, 4]),
                ("gain".into(), vec![3], rvals(seed, 1, 3)),
                ("bias".into(), vec![3], rvals(seed, 2, 3)),
            ];
            gradient_check(
                name,
                move |p| {
                    let y = p[0].instance_norm(&p[1], &p[2], 1e-5)?;
                    Ok(corrupt(y.tanh().sum(), fault))
                },
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        "relu" => {
            let params: P = vec![("x".into(), vec![24], rvals_off_kink(seed, 0, 24))];
            gradient_check(
                name,
                move |p| Ok(corrupt(p[0].relu().sum(), fault)),
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        "leaky_relu" => {
            let params: P = vec![("x".into(), vec![24], rvals_off_kink(seed, 0, 24))];
            gradient_check(
                name,
                move |p| Ok(corrupt(p[0].leaky_relu(0.2).sum(), fault)),
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        "tanh" => {
            let params: P = vec![("x".into(), vec![24], rvals(seed, 0, 24))];
            gradient_check(
                name,
                move |p| Ok(corrupt(p[0].tanh().sum(), fault)),
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        "add" => {
            let params: P = vec![
                ("a".into(), vec![12], rvals(seed, 0, 12)),
                ("b".into(), vec![12], rvals(seed, 1, 12)),
            ];
            gradient_check(
                name,
                move |p| Ok(corrupt(p[0].add(&p[1])?.tanh().sum(), fault)),
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        "sub" => {
            let params: P = vec![
                ("a".into(), vec![12], rvals(seed, 0, 12)),
                ("b".into(), vec![12], rvals(seed, 1, 12)),
            ];
            gradient_check(
                name,
                move |p| Ok(corrupt(p[0].sub(&p[1])?.tanh().sum(), fault)),
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        "mul" => {
            let params: P = vec![
                ("a".into(), vec![12], rvals(seed, 0, 12)),
                ("b".into(), vec![12], rvals(seed, 1, 12)),
            ];
            gradient_check(
                name,
                move |p| Ok(corrupt(p[0].mul(&p[1])?.sum(), fault)),
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        "scale" => {
            let params: P = vec![("x".into(), vec![12], rvals(seed, 0, 12))];
            gradient_check(
                name,
                move |p| Ok(corrupt(p[0].scale(1.7).tanh().sum(), fault)),
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        "add_channel_bias" => {
            let params: P = vec![
                p4(0, [2, 3, 2, 2]),
                ("bias".into(), vec![3], rvals(seed, 1, 3)),
            ];
            gradient_check(
                name,
                move |p| Ok(corrupt(p[0].add_channel_bias(&p[1])?.tanh().sum(), fault)),
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        "slice_last" => {
            let params: P = vec![p4(0, [1, 2, 3, 8])];
            gradient_check(
                name,
                move |p| Ok(corrupt(p[0].slice_last(2, 7)?.tanh().sum(), fault)),
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        "pad_hw" => {
            let params: P = vec![p4(0, [1, 2, 3, 4])];
            gradient_check(
                name,
                move |p| Ok(corrupt(p[0].pad_hw(1, 0, 2, 1)?.tanh().sum(), fault)),
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        "crop_hw" => {
            let params: P = vec![p4(0, [1, 1, 4, 6])];
            gradient_check(
                name,
                move |p| Ok(corrupt(p[0].crop_hw(1, 0, 2, 1)?.tanh().sum(), fault)),
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        "sum" => {
            let params: P = vec![("x".into(), vec![9], rvals(seed, 0, 9))];
            gradient_check(
                name,
                move |p| Ok(corrupt(p[0].tanh().sum(), fault)),
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        "mean" => {
            let params: P = vec![("x".into(), vec![9], rvals(seed, 0, 9))];
            gradient_check(
                name,
                move |p| Ok(corrupt(p[0].tanh().mean(), fault)),
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        "mse_loss" => {
            let params: P = vec![
                ("pred".into(), vec![10], rvals(seed, 0, 10)),
                ("target".into(), vec![10], rvals(seed, 1, 10)),
            ];
            gradient_check(
                name,
                move |p| Ok(corrupt(crate::autodiff::mse_loss(&p[0], &p[1])?, fault)),
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        "l1_loss" => {
            let pred = rvals(seed, 0, 10);
            let mut r = rng::stream(seed, &[0x4c, 1]);
            let target: Vec<f64> = pred
                .iter()
                .map(|&v| {
                    let off: f64 = r.random_range(0.3..1.0);
                    if r.random_bool(0.5) {
                        v + off
                    } else {
                        v - off
                    }
                })
                .collect();
            let params: P = vec![
                ("pred".into(), vec![10], pred),
                ("target".into(), vec![10], target),
            ];
            gradient_check(
                name,
                move |p| Ok(corrupt(crate::autodiff::l1_loss(&p[0], &p[1])?, fault)),
                &params,
                OP_STEP,
                OP_TOL,
            )
        }
        _ => Err(Error::Config(format!("unknown op '{name}' in gradcheck suite"))),
    }
}

/// Finite-difference check of the full weighted objective on a 2-block
/// generator pair, over every generator parameter.
pub fn check_full_objective<S: Scalar>(
    seed: u64,
    step: f64,
    tolerance: f64,
    fault: bool,
) -> Result<GradCheckReport> {
    let feat_dim = 8;
    let context = 1;
    let arch = ArchitectureSpec::new(Variant::A1, 2, feat_dim)?;
    let sizing = ModelSizing {
        context,
        gen_width: 2,
        gen_blocks: 2,
        disc_width: 2,
    };
    let bank = build_architecture::<S>(&arch, &sizing, seed)?;
    let inst = &bank.instances[0];
    let gen_cfg = GeneratorConfig {
        n_mels: feat_dim,
        context,
        base_width: sizing.gen_width,
        n_blocks: sizing.gen_blocks,
    };

    let mut r = rng::stream(seed, &[0x45_32_45]);
    let rows = 2 * context + 1;
    let mk_batch = |r: &mut rand_chacha::ChaCha8Rng| {
        let values: Vec<S> = (0..2 * rows * feat_dim)
            .map(|_| S::from_f64(r.random_range(-1.5..1.5)))
            .collect();
        Tensor::constant(vec![2, 1, rows, feat_dim], values).unwrap()
    };
    let batch_a = mk_batch(&mut r);
    let batch_b = mk_batch(&mut r);

    let d_a: Vec<_> = inst.d_a.iter().map(|d| d.bind(false)).collect();
    let d_b = inst.d_b.bind(false);
    let masks = inst.masks.clone();
    let weights = LossWeights::default();

    let mut params: Vec<CheckParam<S>> = Vec::new();
    let mut split = 0;
    for p in inst.g_a.params().entries() {
        params.push((format!("g_a/{}", p.name), p.shape.clone(), p.values.clone()));
        split += 1;
    }
    for p in inst.g_b.params().entries() {
        params.push((format!("g_b/{}", p.name), p.shape.clone(), p.values.clone()));
    }

    let name = format!("full_objective_{}", S::NAME);
    gradient_check(
        &name,
        move |leaves| {
            let g_a = BoundGenerator::from_leaves(gen_cfg.clone(), leaves[..split].to_vec());
            let g_b = BoundGenerator::from_leaves(gen_cfg.clone(), leaves[split..].to_vec());
            let fake_b = g_a.forward(&batch_a)?;
            let fake_a = g_b.forward(&batch_b)?;
            let terms = GeneratorTerms {
                adv_a: adv_generator_loss(&fake_b, &d_a, &masks)?,
                adv_b: adv_single_loss(&d_b, &fake_a)?,
                idt_a: identity_loss(&g_a, &batch_b)?,
                idt_b: identity_loss(&g_b, &batch_a)?,
                cycle_a: crate::autodiff::l1_loss(&g_b.forward(&fake_b)?, &batch_a)?,
                cycle_b: crate::autodiff::l1_loss(&g_a.forward(&fake_a)?, &batch_b)?,
            };
            Ok(corrupt(total_objective(&terms, &weights)?, fault))
        },
        &params,
        step,
        tolerance,
    )
}

/// Run the whole suite. `fault` injects a 10% gradient error into the
/// named op's check, which must then fail.
pub fn gradcheck_suite(seed: u64, fault: Option<&str>) -> Result<Vec<GradCheckReport>> {
    if let Some(f) = fault {
        let known = CHECKED_OPS.contains(&f) || f == "full_objective";
        if !known {
            return Err(Error::Config(format!("cannot inject fault into unknown op '{f}'")));
        }
    }
    let mut reports = Vec::with_capacity(CHECKED_OPS.len() + 2);
    for name in CHECKED_OPS {
        reports.push(check_op(name, seed, fault == Some(name))?);
    }
    let fault_obj = fault == Some("full_objective");
    reports.push(check_full_objective::<f64>(seed, 1e-5, 1e-5, fault_obj)?);
    reports.push(check_full_objective::<f32>(seed, 1e-2, 1e-3, fault_obj)?);
    Ok(reports)
}
