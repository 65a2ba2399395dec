use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::rng;

type CheckParams = Vec<(String, Vec<usize>, Vec<f64>)>;

fn rvals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn t64(shape: &[usize], values: Vec<f64>) -> Tensor<f64> {
    Tensor::constant(shape.to_vec(), values).unwrap()
}

#[test]
fn conv_1x1_identity() {
    let x = t64(&[1, 1, 2, 3], vec![1.0, -2.0, 3.0, 0.5, 4.0, -1.0]);
    let k = t64(&[1, 1, 1, 1], vec![1.0]);
    let y = x.conv2d(&k, 1, 0).unwrap();
    assert_eq!(y.shape(), x.shape());
    assert_eq!(y.values(), x.values());
}

#[test]
fn conv_all_ones_sums_to_nine() {
    let x = t64(&[1, 1, 3, 3], vec![1.0; 9]);
    let k = t64(&[1, 1, 3, 3], vec![1.0; 9]);
    let y = x.conv2d(&k, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 1, 1]);
    assert_eq!(y.values(), &[9.0]);
}

#[test]
fn conv_rejects_channel_mismatch_and_empty_output() {
    let x = t64(&[1, 2, 4, 4], vec![0.0; 32]);
    let k = t64(&[1, 3, 3, 3], vec![0.0; 27]);
    assert!(matches!(x.conv2d(&k, 1, 1), Err(Error::Shape(_))));
    let k = t64(&[1, 2, 5, 5], vec![0.0; 50]);
    assert!(matches!(x.conv2d(&k, 1, 0), Err(Error::Shape(_))));
}

#[test]
fn conv_grad_matches_finite_differences() {
    let mut r = rng::stream(11, &[1]);
    let xv = rvals(&mut r, 2 * 5 * 5);
    let kv = rvals(&mut r, 3 * 2 * 3 * 3);
    let params: CheckParams = vec![
        ("x".into(), vec![1, 2, 5, 5], xv),
        ("k".into(), vec![3, 2, 3, 3], kv),
    ];
    let report = gradient_check(
        "conv2d",
        |p| p[0].conv2d(&p[1], 1, 1)?.sum().mul(&p[0].conv2d(&p[1], 2, 0)?.mean()),
        &params,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.pass, "{}", report.line());
}

#[test]
fn convt_grad_and_shape_inverse() {
    // stride-2 transposed conv with out_padding 1 exactly undoes the
    // stride-2 conv shape map on even extents
    let mut r = rng::stream(11, &[2]);
    let x = t64(&[1, 2, 8, 12], rvals(&mut r, 2 * 8 * 12));
    let kd = t64(&[3, 2, 3, 3], rvals(&mut r, 54));
    let ku = t64(&[3, 2, 3, 3], rvals(&mut r, 54));
    let down = x.conv2d(&kd, 2, 1).unwrap();
    assert_eq!(down.shape(), &[1, 3, 4, 6]);
    let up = down.conv_transpose2d(&ku, 2, 1, 1).unwrap();
    assert_eq!(up.shape(), &[1, 2, 8, 12]);

    let params: CheckParams = vec![
        ("x".into(), vec![1, 1, 4, 5], rvals(&mut r, 20)),
        ("k".into(), vec![1, 2, 3, 3], rvals(&mut r, 18)),
    ];
    let report = gradient_check(
        "conv_transpose2d",
        |p| Ok(p[0].conv_transpose2d(&p[1], 2, 1, 1)?.sum()),
        &params,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.pass, "{}", report.line());
}

#[test]
fn instance_norm_constant_channel_yields_bias() {
    let x = t64(&[1, 2, 2, 2], vec![3.0; 8]);
    let g = t64(&[2], vec![1.5, 2.0]);
    let b = t64(&[2], vec![-0.25, 0.75]);
    let y = x.instance_norm(&g, &b, 1e-5).unwrap();
    for i in 0..4 {
        assert!((y.values()[i] - -0.25).abs() < 1e-9);
        assert!((y.values()[4 + i] - 0.75).abs() < 1e-9);
    }
}

#[test]
fn instance_norm_plus_minus_one_is_fixed_point() {
    let x = t64(&[1, 1, 1, 2], vec![-1.0, 1.0]);
    let g = t64(&[1], vec![1.0]);
    let b = t64(&[1], vec![0.0]);
    let y = x.instance_norm(&g, &b, 1e-8).unwrap();
    assert!((y.values()[0] + 1.0).abs() < 1e-6);
    assert!((y.values()[1] - 1.0).abs() < 1e-6);
}

#[test]
fn instance_norm_grad_matches_finite_differences() {
    let mut r = rng::stream(11, &[3]);
    let params: CheckParams = vec![
        ("x".into(), vec![2, 3, 4, 4], rvals(&mut r, 96)),
        ("g".into(), vec![3], rvals(&mut r, 3)),
        ("b".into(), vec![3], rvals(&mut r, 3)),
    ];
    let report = gradient_check(
        "instance_norm",
        |p| {
            let y = p[0].instance_norm(&p[1], &p[2], 1e-5)?;
            Ok(y.tanh().sum())
        },
        &params,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.pass, "{}", report.line());
}

#[test]
fn activation_values() {
    let x = t64(&[3], vec![-2.0, 0.0, 3.0]);
    assert_eq!(x.relu().values(), &[0.0, 0.0, 3.0]);
    assert_eq!(x.leaky_relu(0.2).values(), &[-0.4, 0.0, 3.0]);
    assert_eq!(x.tanh().values()[1], 0.0);
}

#[test]
fn activation_grads_away_from_kinks() {
    // keep |x| >= 0.2 so the 1e-5-scaled probe never crosses a kink
    let mut r = rng::stream(11, &[4]);
    let vals: Vec<f64> = (0..24)
        .map(|_| {
            let v: f64 = r.random_range(0.2..1.0);
            if r.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let params: CheckParams = vec![("x".into(), vec![24], vals)];
    for (name, f) in [
        ("relu", Box::new(|p: &[Tensor<f64>]| Ok(p[0].relu().sum())) as Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>),
        ("leaky_relu", Box::new(|p: &[Tensor<f64>]| Ok(p[0].leaky_relu(0.2).sum()))),
        ("tanh", Box::new(|p: &[Tensor<f64>]| Ok(p[0].tanh().sum()))),
    ] {
        let report = gradient_check(name, f, &params, 1e-5, 1e-6).unwrap();
        assert!(report.pass, "{}", report.line());
    }
}

#[test]
fn mse_examples_and_grad() {
    let a = t64(&[4], vec![0.5; 4]);
    let b = t64(&[4], vec![1.0; 4]);
    assert_eq!(mse_loss(&a, &a).unwrap().item().unwrap(), 0.0);
    assert!((mse_loss(&a, &b).unwrap().item().unwrap() - 0.25).abs() < 1e-12);

    let mut r = rng::stream(11, &[5]);
    let params: CheckParams = vec![
        ("pred".into(), vec![6], rvals(&mut r, 6)),
        ("target".into(), vec![6], rvals(&mut r, 6)),
    ];
    let report = gradient_check("mse_loss", |p| mse_loss(&p[0], &p[1]), &params, 1e-5, 1e-6).unwrap();
    assert!(report.pass, "{}", report.line());

    // analytic form 2(pred - target)/N
    let pred = Tensor::param(vec![3], vec![1.0, 2.0, -1.0]).unwrap();
    let target = t64(&[3], vec![0.5, 0.5, 0.5]);
    let grads = backward(&mse_loss(&pred, &target).unwrap()).unwrap();
    let g = grads.grad(&pred);
    for (i, expect) in [(0, 2.0 * 0.5 / 3.0), (1, 2.0 * 1.5 / 3.0), (2, 2.0 * -1.5 / 3.0)] {
        assert!((g[i] - expect).abs() < 1e-12);
    }
}

#[test]
fn l1_examples_and_grad() {
    let a = t64(&[5], vec![0.25; 5]);
    let b = t64(&[5], vec![-0.55; 5]);
    assert_eq!(l1_loss(&a, &a).unwrap().item().unwrap(), 0.0);
    assert!((l1_loss(&a, &b).unwrap().item().unwrap() - 0.8).abs() < 1e-12);

    // differences bounded away from zero
    let mut r = rng::stream(11, &[6]);
    let pred = rvals(&mut r, 8);
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
    let params: CheckParams = vec![
        ("pred".into(), vec![8], pred),
        ("target".into(), vec![8], target),
    ];
    let report = gradient_check("l1_loss", |p| l1_loss(&p[0], &p[1]), &params, 1e-5, 1e-6).unwrap();
    assert!(report.pass, "{}", report.line());
}

#[test]
fn backward_of_sum_is_ones() {
    let x = Tensor::param(vec![3], vec![5.0, -1.0, 2.0]).unwrap();
    let grads = backward(&x.sum()).unwrap();
    assert_eq!(grads.grad(&x), vec![1.0, 1.0, 1.0]);
}

#[test]
fn disconnected_parameter_gets_zero_grad() {
    let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
    let other = Tensor::param(vec![4], vec![0.0; 4]).unwrap();
    let grads = backward(&x.sum()).unwrap();
    assert!(grads.get(&other).is_none());
    assert_eq!(grads.grad(&other), vec![0.0; 4]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
    assert!(matches!(backward(&x.relu()), Err(Error::Usage(_))));
}

#[test]
fn detach_blocks_gradient_flow() {
    let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
    let loss = x.detach().scale(2.0).sum();
    let grads = backward(&loss).unwrap();
    assert!(grads.get(&x).is_none());
    assert!(grads.is_empty());
}

#[test]
fn gradient_check_quadratic_at_three() {
    let params: CheckParams = vec![("x".into(), vec![1], vec![3.0])];
    let report = gradient_check("square", |p| p[0].mul(&p[0]).map(|t| t.sum()), &params, 1e-5, 1e-6).unwrap();
    assert!(report.pass, "{}", report.line());
    // analytic derivative is 6 by hand
    let x = Tensor::<f64>::param(vec![1], vec![3.0]).unwrap();
    let grads = backward(&x.mul(&x).unwrap().sum()).unwrap();
    assert!((grads.grad(&x)[0] - 6.0).abs() < 1e-12);
}

#[test]
fn gradient_check_linear_mse_passes() {
    let mut r = rng::stream(11, &[7]);
    let xv = rvals(&mut r, 12);
    let x = t64(&[1, 1, 3, 4], xv);
    let target = t64(&[1, 1, 3, 4], rvals(&mut r, 12));
    let params: CheckParams = vec![("w".into(), vec![1, 1, 1, 1], vec![0.7])];
    let report = gradient_check(
        "mse_of_linear_map",
        move |p| mse_loss(&x.conv2d(&p[0], 1, 0)?, &target),
        &params,
        1e-5,
        1e-6,
    )
    .unwrap();
    assert!(report.pass, "{}", report.line());
}

#[test]
fn gradient_check_flags_corrupted_gradient() {
    let mut r = rng::stream(11, &[8]);
    let params: CheckParams = vec![("x".into(), vec![5], rvals(&mut r, 5))];
    let report = gradient_check(
        "corrupted",
        |p| Ok(p[0].grad_scale(1.1).mul(&p[0].grad_scale(1.1))?.sum()),
        &params,
        1e-5,
        1e-5,
    )
    .unwrap();
    assert!(!report.pass, "a +10% gradient error must fail the check");
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut r = rng::stream(11, &[9]);
    let x = Tensor::param(vec![2, 2, 3, 3], rvals(&mut r, 36)).unwrap();
    let k = t64(&[2, 2, 3, 3], rvals(&mut r, 36));
    let f = x.conv2d(&k, 1, 1).unwrap().tanh().mean();
    let g = x.relu().sum();
    let (a, b) = (0.37, -2.11);
    let combined = f.scale(a).add(&g.scale(b)).unwrap();

    let gf = backward(&f).unwrap().grad(&x);
    let gg = backward(&g).unwrap().grad(&x);
    let gc = backward(&combined).unwrap().grad(&x);
    for i in 0..36 {
        assert!((gc[i] - (a * gf[i] + b * gg[i])).abs() < 1e-12);
    }
}

#[test]
fn forward_and_grads_are_bitwise_deterministic() {
    let run = || {
        let mut r = rng::stream(42, &[0]);
        let x = Tensor::param(vec![2, 1, 4, 6], rvals(&mut r, 48)).unwrap();
        let k = Tensor::param(vec![2, 1, 3, 3], rvals(&mut r, 18)).unwrap();
        let g = t64(&[2], vec![1.0, 0.9]);
        let b = t64(&[2], vec![0.0, 0.1]);
        let y = x
            .conv2d(&k, 2, 1)
            .unwrap()
            .instance_norm(&g, &b, 1e-5)
            .unwrap()
            .leaky_relu(0.2);
        let loss = mse_loss(&y, &Tensor::zeros(y.shape().to_vec())).unwrap();
        let grads = backward(&loss).unwrap();
        (
            loss.item().unwrap().to_bits(),
            grads.grad(&x).iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            grads.grad(&k).iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn slice_pad_crop_semantics() {
    let x = t64(&[1, 1, 2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    let s = x.slice_last(1, 3).unwrap();
    assert_eq!(s.shape(), &[1, 1, 2, 2]);
    assert_eq!(s.values(), &[2.0, 3.0, 6.0, 7.0]);
    assert!(x.slice_last(3, 3).is_err());
    assert!(x.slice_last(0, 5).is_err());

    let p = x.pad_hw(1, 0, 0, 1).unwrap();
    assert_eq!(p.shape(), &[1, 1, 3, 5]);
    assert_eq!(&p.values()[0..5], &[0.0; 5]);
    assert_eq!(&p.values()[5..9], &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(p.values()[9], 0.0);

    let c = p.crop_hw(1, 0, 0, 1).unwrap();
    assert_eq!(c.shape(), x.shape());
    assert_eq!(c.values(), x.values());
}

#[test]
fn every_op_passes_randomized_gradient_checks() {
    // the per-op fuzz: 20 random trials each, f64, tolerance 1e-5
    let trials = 20;
    for trial in 0..trials {
        let mut r = rng::stream(1000 + trial, &[]);
        let b = r.random_range(1..3usize);
        let cin = r.random_range(1..3usize);
        let cout = r.random_range(1..3usize);
        let (h, w) = (r.random_range(3..6usize), r.random_range(3..7usize));
        let stride = r.random_range(1..3usize);
        let pad = r.random_range(0..2usize);

        let params: CheckParams = vec![
            ("x".into(), vec![b, cin, h, w], rvals(&mut r, b * cin * h * w)),
            ("k".into(), vec![cout, cin, 3, 3], rvals(&mut r, cout * cin * 9)),
            ("kt".into(), vec![cin, cout, 3, 3], rvals(&mut r, cin * cout * 9)),
            ("gain".into(), vec![cin], rvals(&mut r, cin)),
            ("bias".into(), vec![cin], rvals(&mut r, cin)),
        ];
        let target = Tensor::constant(vec![b, cin, h, w], rvals(&mut r, b * cin * h * w)).unwrap();
        let report = gradient_check(
            "composite",
            move |p| {
                let normed = p[0].instance_norm(&p[3], &p[4], 1e-3)?;
                let c = normed.conv2d(&p[1], stride, pad)?;
                let t = p[0].conv_transpose2d(&p[2], stride, pad, stride - 1)?;
                let biased = p[0].add_channel_bias(&p[4])?;
                let sliced = biased.slice_last(1, w)?;
                let padded = p[0].pad_hw(1, 0, 1, 1)?.crop_hw(1, 0, 1, 1)?;
                let pieces = c.tanh().mean().add(&t.leaky_relu(0.15).mean())?;
                let more = mse_loss(&padded, &target)?.add(&sliced.sum().scale(0.1))?;
                pieces.add(&more)
            },
            &params,
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.pass, "trial {trial}: {}", report.line());
    }
}
