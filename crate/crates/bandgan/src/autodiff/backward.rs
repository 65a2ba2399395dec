//! Reverse sweep over the recorded graph.

use std::collections::{HashMap, HashSet};

use super::conv;
use super::scalar::Scalar;
use super::{Op, Tensor};
use crate::error::{Error, Result};

/// Gradient of a scalar loss with respect to every reachable `param` leaf.
pub struct Gradients<S: Scalar> {
    map: HashMap<u64, Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for `t`, or `None` if `t` was not reached from the loss.
    pub fn get(&self, t: &Tensor<S>) -> Option<&[S]> {
        self.map.get(&t.id()).map(|v| v.as_slice())
    }

    /// Gradient for `t`; unreached parameters get an all-zero gradient.
    pub fn grad(&self, t: &Tensor<S>) -> Vec<S> {
        match self.map.get(&t.id()) {
            Some(g) => g.clone(),
            None => vec![S::zero(); t.numel()],
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Post-order over tracked nodes: every parent precedes its consumers.
fn topo_order<S: Scalar>(root: &Tensor<S>) -> Vec<Tensor<S>> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    // (node, next parent index) keeps the traversal iterative; graphs from
    // chained generator passes get a few hundred nodes deep.
    let mut stack: Vec<(Tensor<S>, usize)> = Vec::new();
    if root.0.tracked && seen.insert(root.id()) {
        stack.push((root.clone(), 0));
    }
    while let Some((node, idx)) = stack.pop() {
        if idx < node.0.parents.len() {
            let parent = node.0.parents[idx].clone();
            stack.push((node, idx + 1));
            if parent.0.tracked && seen.insert(parent.id()) {
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

/// Backpropagate from a scalar loss. Returns gradients for every
/// `requires_grad` leaf reachable from it; leaves not connected to the loss
/// simply have no entry (read as zero via [`Gradients::grad`]).
pub fn backward<S: Scalar>(loss: &Tensor<S>) -> Result<Gradients<S>> {
    if loss.numel() != 1 {
        return Err(Error::Usage(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    let order = topo_order(loss);
    let leaf_ids: HashSet<u64> = order
        .iter()
        .filter(|n| n.0.requires_grad)
        .map(|n| n.id())
        .collect();
    let mut grads: HashMap<u64, Vec<S>> = HashMap::new();
    grads.insert(loss.id(), vec![S::one()]);

    for node in order.iter().rev() {
        let Some(gy) = grads.get(&node.id()).cloned() else {
            continue;
        };
        accumulate_parents(node, &gy, &mut grads);
        if !node.0.requires_grad {
            grads.remove(&node.id());
        }
    }
    grads.retain(|id, _| leaf_ids.contains(id));
    Ok(Gradients { map: grads })
}

fn add_into<S: Scalar>(grads: &mut HashMap<u64, Vec<S>>, t: &Tensor<S>, contrib: &[S]) {
    if !t.0.tracked {
        return;
    }
    let slot = grads
        .entry(t.id())
        .or_insert_with(|| vec![S::zero(); t.numel()]);
    for (dst, &c) in slot.iter_mut().zip(contrib) {
        *dst = *dst + c;
    }
}

fn add_into_mapped<S: Scalar>(
    grads: &mut HashMap<u64, Vec<S>>,
    t: &Tensor<S>,
    f: impl Fn(&mut [S]),
) {
    if !t.0.tracked {
        return;
    }
    let slot = grads
        .entry(t.id())
        .or_insert_with(|| vec![S::zero(); t.numel()]);
    f(slot);
}

fn accumulate_parents<S: Scalar>(node: &Tensor<S>, gy: &[S], grads: &mut HashMap<u64, Vec<S>>) {
    let parents = &node.0.parents;
    let tracked = |i: usize| parents[i].0.tracked;
    match node.0.op {
        Op::Leaf => {}
        Op::Relu => {
            let x = parents[0].values();
            add_into_mapped(grads, &parents[0], |dst| {
                for i in 0..dst.len() {
                    if x[i] > S::zero() {
                        dst[i] = dst[i] + gy[i];
                    }
                }
            });
        }
        Op::LeakyRelu(slope) => {
            let x = parents[0].values();
            add_into_mapped(grads, &parents[0], |dst| {
                for i in 0..dst.len() {
                    let f = if x[i] > S::zero() { S::one() } else { slope };
                    dst[i] = dst[i] + f * gy[i];
                }
            });
        }
        Op::Tanh => {
            let y = node.values();
            add_into_mapped(grads, &parents[0], |dst| {
                for i in 0..dst.len() {
                    dst[i] = dst[i] + (S::one() - y[i] * y[i]) * gy[i];
                }
            });
        }
        Op::Add => {
            if tracked(0) {
                add_into(grads, &parents[0], gy);
            }
            if tracked(1) {
                add_into(grads, &parents[1], gy);
            }
        }
        Op::Sub => {
            if tracked(0) {
                add_into(grads, &parents[0], gy);
            }
            if tracked(1) {
                add_into_mapped(grads, &parents[1], |dst| {
                    for i in 0..dst.len() {
                        dst[i] = dst[i] - gy[i];
                    }
                });
            }
        }
        Op::Mul => {
            if tracked(0) {
                let b = parents[1].values();
                add_into_mapped(grads, &parents[0], |dst| {
                    for i in 0..dst.len() {
                        dst[i] = dst[i] + b[i] * gy[i];
                    }
                });
            }
            if tracked(1) {
                let a = parents[0].values();
                add_into_mapped(grads, &parents[1], |dst| {
                    for i in 0..dst.len() {
                        dst[i] = dst[i] + a[i] * gy[i];
                    }
                });
            }
        }
        Op::Scale(c) => {
            add_into_mapped(grads, &parents[0], |dst| {
                for i in 0..dst.len() {
                    dst[i] = dst[i] + c * gy[i];
                }
            });
        }
        Op::GradScale(c) => {
            add_into_mapped(grads, &parents[0], |dst| {
                for i in 0..dst.len() {
                    dst[i] = dst[i] + c * gy[i];
                }
            });
        }
        Op::AddChannelBias => {
            let [b, c, h, w] = *node.shape() else { unreachable!() };
            if tracked(0) {
                add_into(grads, &parents[0], gy);
            }
            if tracked(1) {
                add_into_mapped(grads, &parents[1], |dst| {
                    let hw = h * w;
                    for bi in 0..b {
                        for ci in 0..c {
                            let mut acc = S::zero();
                            for &g in &gy[(bi * c + ci) * hw..][..hw] {
                                acc = acc + g;
                            }
                            dst[ci] = dst[ci] + acc;
                        }
                    }
                });
            }
        }
        Op::Conv2d { stride, padding } => {
            let x = &parents[0];
            let k = &parents[1];
            let (dx, dw) = conv::conv2d_backward(
                x.values(),
                x.shape(),
                k.values(),
                k.shape(),
                gy,
                stride,
                padding,
            );
            if tracked(0) {
                add_into(grads, x, &dx);
            }
            if tracked(1) {
                add_into(grads, k, &dw);
            }
        }
        Op::ConvT2d {
            stride,
            padding,
            out_padding,
        } => {
            let x = &parents[0];
            let k = &parents[1];
            let (dx, dw) = conv::convt2d_backward(
                x.values(),
                x.shape(),
                k.values(),
                k.shape(),
                gy,
                stride,
                padding,
                out_padding,
            );
            if tracked(0) {
                add_into(grads, x, &dx);
            }
            if tracked(1) {
                add_into(grads, k, &dw);
            }
        }
        Op::InstanceNorm { eps } => {
            instance_norm_backward(node, gy, eps, grads);
        }
        Op::SliceLast { start, end } => {
            let last = *parents[0].shape().last().unwrap();
            let width = end - start;
            add_into_mapped(grads, &parents[0], |dst| {
                for r in 0..gy.len() / width {
                    let drow = &mut dst[r * last + start..r * last + end];
                    for (d, &g) in drow.iter_mut().zip(&gy[r * width..][..width]) {
                        *d = *d + g;
                    }
                }
            });
        }
        Op::PadHw { top, left } => {
            let [b, c, h, w] = *parents[0].shape() else { unreachable!() };
            let [_, _, nh, nw] = *node.shape() else { unreachable!() };
            add_into_mapped(grads, &parents[0], |dst| {
                for plane in 0..b * c {
                    for y in 0..h {
                        let src = &gy[(plane * nh + y + top) * nw + left..][..w];
                        let drow = &mut dst[(plane * h + y) * w..][..w];
                        for (d, &g) in drow.iter_mut().zip(src) {
                            *d = *d + g;
                        }
                    }
                }
            });
        }
        Op::CropHw { top, left } => {
            let [b, c, h, w] = *parents[0].shape() else { unreachable!() };
            let [_, _, nh, nw] = *node.shape() else { unreachable!() };
            add_into_mapped(grads, &parents[0], |dst| {
                for plane in 0..b * c {
                    for y in 0..nh {
                        let src = &gy[(plane * nh + y) * nw..][..nw];
                        let drow = &mut dst[(plane * h + y + top) * w + left..][..nw];
                        for (d, &g) in drow.iter_mut().zip(src) {
                            *d = *d + g;
                        }
                    }
                }
            });
        }
        Op::Sum => {
            let g = gy[0];
            add_into_mapped(grads, &parents[0], |dst| {
                for d in dst.iter_mut() {
                    *d = *d + g;
                }
            });
        }
        Op::Mean => {
            let g = gy[0] / S::from_usize(parents[0].numel());
            add_into_mapped(grads, &parents[0], |dst| {
                for d in dst.iter_mut() {
                    *d = *d + g;
                }
            });
        }
        Op::MseLoss => {
            let a = parents[0].values();
            let b = parents[1].values();
            let n = S::from_usize(a.len());
            let two = S::from_f64(2.0);
            let g = gy[0];
            if tracked(0) {
                add_into_mapped(grads, &parents[0], |dst| {
                    for i in 0..dst.len() {
                        dst[i] = dst[i] + two * (a[i] - b[i]) / n * g;
                    }
                });
            }
            if tracked(1) {
                add_into_mapped(grads, &parents[1], |dst| {
                    for i in 0..dst.len() {
                        dst[i] = dst[i] - two * (a[i] - b[i]) / n * g;
                    }
                });
            }
        }
        Op::L1Loss => {
            let a = parents[0].values();
            let b = parents[1].values();
            let n = S::from_usize(a.len());
            let g = gy[0];
            let sign = |d: S| {
                if d > S::zero() {
                    S::one()
                } else if d < S::zero() {
                    -S::one()
                } else {
                    S::zero()
                }
            };
            if tracked(0) {
                add_into_mapped(grads, &parents[0], |dst| {
                    for i in 0..dst.len() {
                        dst[i] = dst[i] + sign(a[i] - b[i]) / n * g;
                    }
                });
            }
            if tracked(1) {
                add_into_mapped(grads, &parents[1], |dst| {
                    for i in 0..dst.len() {
                        dst[i] = dst[i] - sign(a[i] - b[i]) / n * g;
                    }
                });
            }
        }
    }
}

fn instance_norm_backward<S: Scalar>(
    node: &Tensor<S>,
    gy: &[S],
    eps: S,
    grads: &mut HashMap<u64, Vec<S>>,
) {
    let parents = &node.0.parents;
    let x = parents[0].values();
    let gain = parents[1].values();
    let [b, c, h, w] = *node.shape() else { unreachable!() };
    let hw = h * w;
    let n = S::from_usize(hw);

    let mut dx = vec![S::zero(); x.len()];
    let mut dgain = vec![S::zero(); c];
    let mut dbias = vec![S::zero(); c];

    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * hw;
            let xs = &x[base..base + hw];
            let gys = &gy[base..base + hw];
            let mean = xs.iter().copied().sum::<S>() / n;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let inv = (var + eps).sqrt().recip();

            let mut sum_g = S::zero();
            let mut sum_gx = S::zero();
            for i in 0..hw {
                let xhat = (xs[i] - mean) * inv;
                sum_g = sum_g + gys[i];
                sum_gx = sum_gx + gys[i] * xhat;
            }
            dbias[ci] = dbias[ci] + sum_g;
            dgain[ci] = dgain[ci] + sum_gx;

            let gscale = gain[ci] * inv;
            let mean_g = sum_g / n;
            let mean_gx = sum_gx / n;
            for i in 0..hw {
                let xhat = (xs[i] - mean) * inv;
                dx[base + i] = gscale * (gys[i] - mean_g - xhat * mean_gx);
            }
        }
    }

    if parents[0].0.tracked {
        add_into(grads, &parents[0], &dx);
    }
    if parents[1].0.tracked {
        add_into(grads, &parents[1], &dgain);
    }
    if parents[2].0.tracked {
        add_into(grads, &parents[2], &dbias);
    }
}
