//! Minimal reverse-mode differentiation engine.
//!
//! Exactly the tensor operations the enhancement networks and losses need,
//! nothing more: eager forward evaluation that records a DAG of `Rc` nodes,
//! plus a single-pass reverse sweep. A graph and its tensors form one
//! execution context; contexts are independent, so separate training
//! instances can run on separate threads. Gradient correctness for every op
//! is verifiable against central finite differences (see [`check`] and the
//! `gradcheck` CLI command).

mod backward;
pub mod check;
mod conv;
pub mod scalar;

#[cfg(test)]
mod tests;

pub use backward::{backward, Gradients};
pub use check::{gradient_check, GradCheckReport};
pub use scalar::Scalar;

use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// The differentiable operations. Each variant stores only what its
/// backward pass cannot recompute from parent and output values.
#[derive(Debug, Clone)]
pub(crate) enum Op<S> {
    Leaf,
    Relu,
    LeakyRelu(S),
    Tanh,
    Add,
    Sub,
    Mul,
    Scale(S),
    AddChannelBias,
    Conv2d {
        stride: usize,
        padding: usize,
    },
    ConvT2d {
        stride: usize,
        padding: usize,
        out_padding: usize,
    },
    InstanceNorm {
        eps: S,
    },
    SliceLast {
        start: usize,
        end: usize,
    },
    PadHw {
        top: usize,
        left: usize,
    },
    CropHw {
        top: usize,
        left: usize,
    },
    Sum,
    Mean,
    MseLoss,
    L1Loss,
    /// Identity forward; multiplies the gradient flowing through it.
    /// Used by the verification suite to inject known-bad gradients.
    GradScale(S),
}

pub(crate) struct Node<S: Scalar> {
    id: u64,
    shape: Vec<usize>,
    values: Vec<S>,
    parents: Vec<Tensor<S>>,
    op: Op<S>,
    /// True if this node or any ancestor is a gradient leaf; backward
    /// prunes untracked subgraphs.
    tracked: bool,
    requires_grad: bool,
}

/// Handle to one node of the computation graph. Cloning is cheap.
pub struct Tensor<S: Scalar>(Rc<Node<S>>);

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor(id={}, shape={:?})", self.0.id, self.0.shape)
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    fn make(shape: Vec<usize>, values: Vec<S>, parents: Vec<Tensor<S>>, op: Op<S>) -> Self {
        debug_assert_eq!(numel(&shape), values.len());
        let tracked = match op {
            Op::Leaf => false,
            _ => parents.iter().any(|p| p.0.tracked),
        };
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            values,
            parents,
            op,
            tracked,
            requires_grad: false,
        }))
    }

    fn leaf(shape: Vec<usize>, values: Vec<S>, requires_grad: bool) -> Result<Self> {
        if numel(&shape) != values.len() {
            return Err(Error::Shape(format!(
                "tensor of shape {:?} needs {} values, got {}",
                shape,
                numel(&shape),
                values.len()
            )));
        }
        Ok(Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            values,
            parents: Vec::new(),
            op: Op::Leaf,
            tracked: requires_grad,
            requires_grad,
        })))
    }

    /// Constant input: no gradient is tracked through it.
    pub fn constant(shape: Vec<usize>, values: Vec<S>) -> Result<Self> {
        Self::leaf(shape, values, false)
    }

    /// Trainable leaf: `backward` will produce a gradient entry for it.
    pub fn param(shape: Vec<usize>, values: Vec<S>) -> Result<Self> {
        Self::leaf(shape, values, true)
    }

    pub fn scalar(v: S) -> Self {
        Self::leaf(Vec::new(), vec![v], false).unwrap()
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self::leaf(shape, vec![S::zero(); n], false).unwrap()
    }

    pub fn full(shape: Vec<usize>, v: S) -> Self {
        let n = numel(&shape);
        Self::leaf(shape, vec![v; n], false).unwrap()
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn values(&self) -> &[S] {
        &self.0.values
    }

    pub fn numel(&self) -> usize {
        self.0.values.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// True if gradients can flow through this tensor to some leaf.
    pub fn is_tracked(&self) -> bool {
        self.0.tracked
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.values[0])
    }

    /// Same values, severed from the graph. Gradients never flow through
    /// a detached tensor.
    pub fn detach(&self) -> Tensor<S> {
        Self::leaf(self.0.shape.clone(), self.0.values.clone(), false).unwrap()
    }

    fn rank4(&self, what: &str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape() {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::Shape(format!(
                "{what} expects rank-4 input, got shape {:?}",
                self.shape()
            ))),
        }
    }

    fn same_shape(&self, other: &Tensor<S>, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{what}: shape {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    fn map(&self, op: Op<S>, f: impl Fn(S) -> S) -> Tensor<S> {
        let values = self.values().iter().map(|&v| f(v)).collect();
        Tensor::make(self.0.shape.clone(), values, vec![self.clone()], op)
    }

    pub fn relu(&self) -> Tensor<S> {
        self.map(Op::Relu, |v| if v > S::zero() { v } else { S::zero() })
    }

    pub fn leaky_relu(&self, slope: S) -> Tensor<S> {
        self.map(
            Op::LeakyRelu(slope),
            |v| if v > S::zero() { v } else { slope * v },
        )
    }

    pub fn tanh(&self) -> Tensor<S> {
        self.map(Op::Tanh, |v| v.tanh())
    }

    pub fn scale(&self, c: S) -> Tensor<S> {
        self.map(Op::Scale(c), |v| c * v)
    }

    /// Identity forward that multiplies the backward gradient by `c`.
    pub fn grad_scale(&self, c: S) -> Tensor<S> {
        self.map(Op::GradScale(c), |v| v)
    }

    fn zip(&self, other: &Tensor<S>, op: Op<S>, f: impl Fn(S, S) -> S, what: &str) -> Result<Tensor<S>> {
        self.same_shape(other, what)?;
        let values = self
            .values()
            .iter()
            .zip(other.values())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::make(
            self.0.shape.clone(),
            values,
            vec![self.clone(), other.clone()],
            op,
        ))
    }

    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.zip(other, Op::Add, |a, b| a + b, "add")
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.zip(other, Op::Sub, |a, b| a - b, "sub")
    }

    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.zip(other, Op::Mul, |a, b| a * b, "mul")
    }

    /// Per-channel bias add on an NCHW tensor.
    pub fn add_channel_bias(&self, bias: &Tensor<S>) -> Result<Tensor<S>> {
        let (b, c, h, w) = self.rank4("add_channel_bias")?;
        if bias.shape() != [c] {
            return Err(Error::Shape(format!(
                "bias shape {:?} does not match {c} channels",
                bias.shape()
            )));
        }
        let hw = h * w;
        let mut values = self.values().to_vec();
        for bi in 0..b {
            for ci in 0..c {
                let bv = bias.values()[ci];
                for v in &mut values[(bi * c + ci) * hw..][..hw] {
                    *v = *v + bv;
                }
            }
        }
        Ok(Tensor::make(
            self.0.shape.clone(),
            values,
            vec![self.clone(), bias.clone()],
            Op::AddChannelBias,
        ))
    }

    /// Cross-correlation with zero padding. Input NCHW, kernel
    /// (out_ch, in_ch, kh, kw).
    pub fn conv2d(&self, kernel: &Tensor<S>, stride: usize, padding: usize) -> Result<Tensor<S>> {
        let (_, c_in, h, w) = self.rank4("conv2d")?;
        let [k_out, k_in, kh, kw] = *kernel.shape() else {
            return Err(Error::Shape(format!(
                "conv2d kernel must be rank 4, got {:?}",
                kernel.shape()
            )));
        };
        let _ = k_out;
        if k_in != c_in {
            return Err(Error::Shape(format!(
                "conv2d channel mismatch: input has {c_in}, kernel expects {k_in}"
            )));
        }
        if stride == 0 {
            return Err(Error::Usage("conv2d stride must be >= 1".into()));
        }
        let oh = conv::conv_out_dim(h, kh, stride, padding);
        let ow = conv::conv_out_dim(w, kw, stride, padding);
        if oh.is_none_or(|d| d == 0) || ow.is_none_or(|d| d == 0) {
            return Err(Error::Shape(format!(
                "conv2d output is empty for input {h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {padding}"
            )));
        }
        let (values, shape) = conv::conv2d_forward(
            self.values(),
            self.shape(),
            kernel.values(),
            kernel.shape(),
            stride,
            padding,
        );
        Ok(Tensor::make(
            shape,
            values,
            vec![self.clone(), kernel.clone()],
            Op::Conv2d { stride, padding },
        ))
    }

    /// Transposed convolution; the exact shape inverse of [`Tensor::conv2d`]
    /// when `out_padding` restores the parity the strided conv discarded.
    /// Kernel layout (in_ch, out_ch, kh, kw).
    pub fn conv_transpose2d(
        &self,
        kernel: &Tensor<S>,
        stride: usize,
        padding: usize,
        out_padding: usize,
    ) -> Result<Tensor<S>> {
        let (_, c_in, h, w) = self.rank4("conv_transpose2d")?;
        let [k_in, _, kh, kw] = *kernel.shape() else {
            return Err(Error::Shape(format!(
                "conv_transpose2d kernel must be rank 4, got {:?}",
                kernel.shape()
            )));
        };
        if k_in != c_in {
            return Err(Error::Shape(format!(
                "conv_transpose2d channel mismatch: input has {c_in}, kernel expects {k_in}"
            )));
        }
        if stride == 0 || out_padding >= stride {
            return Err(Error::Usage(
                "conv_transpose2d needs stride >= 1 and out_padding < stride".into(),
            ));
        }
        let oh = conv::convt_out_dim(h, kh, stride, padding, out_padding);
        let ow = conv::convt_out_dim(w, kw, stride, padding, out_padding);
        if oh.is_none_or(|d| d == 0) || ow.is_none_or(|d| d == 0) {
            return Err(Error::Shape(format!(
                "conv_transpose2d output is empty for input {h}x{w}, kernel {kh}x{kw}"
            )));
        }
        let (values, shape) = conv::convt2d_forward(
            self.values(),
            self.shape(),
            kernel.values(),
            kernel.shape(),
            stride,
            padding,
            out_padding,
        );
        Ok(Tensor::make(
            shape,
            values,
            vec![self.clone(), kernel.clone()],
            Op::ConvT2d {
                stride,
                padding,
                out_padding,
            },
        ))
    }

    /// Per-(sample, channel) normalization to zero mean and unit variance,
    /// followed by a per-channel affine map.
    pub fn instance_norm(&self, gain: &Tensor<S>, bias: &Tensor<S>, eps: S) -> Result<Tensor<S>> {
        let (b, c, h, w) = self.rank4("instance_norm")?;
        if gain.shape() != [c] || bias.shape() != [c] {
            return Err(Error::Shape(format!(
                "instance_norm affine shapes {:?}/{:?} do not match {c} channels",
                gain.shape(),
                bias.shape()
            )));
        }
        let hw = h * w;
        let n = S::from_usize(hw);
        let x = self.values();
        let mut values = vec![S::zero(); x.len()];
        for bi in 0..b {
            for ci in 0..c {
                let group = &x[(bi * c + ci) * hw..][..hw];
                let mean = group.iter().copied().sum::<S>() / n;
                let var = group
                    .iter()
                    .map(|&v| (v - mean) * (v - mean))
                    .sum::<S>()
                    / n;
                let inv = (var + eps).sqrt().recip();
                let (g, be) = (gain.values()[ci], bias.values()[ci]);
                for (dst, &v) in values[(bi * c + ci) * hw..][..hw].iter_mut().zip(group) {
                    *dst = g * (v - mean) * inv + be;
                }
            }
        }
        Ok(Tensor::make(
            self.0.shape.clone(),
            values,
            vec![self.clone(), gain.clone(), bias.clone()],
            Op::InstanceNorm { eps },
        ))
    }

    /// Slice along the last axis: keeps `[start, end)`.
    pub fn slice_last(&self, start: usize, end: usize) -> Result<Tensor<S>> {
        let Some(&last) = self.shape().last() else {
            return Err(Error::Shape("slice_last on rank-0 tensor".into()));
        };
        if start >= end || end > last {
            return Err(Error::Shape(format!(
                "slice [{start}, {end}) out of range for last dim {last}"
            )));
        }
        let width = end - start;
        let rows = self.numel() / last;
        let mut values = Vec::with_capacity(rows * width);
        for r in 0..rows {
            values.extend_from_slice(&self.values()[r * last + start..r * last + end]);
        }
        let mut shape = self.0.shape.clone();
        *shape.last_mut().unwrap() = width;
        Ok(Tensor::make(
            shape,
            values,
            vec![self.clone()],
            Op::SliceLast { start, end },
        ))
    }

    /// Zero-pad the two spatial axes of an NCHW tensor.
    pub fn pad_hw(&self, top: usize, bottom: usize, left: usize, right: usize) -> Result<Tensor<S>> {
        let (b, c, h, w) = self.rank4("pad_hw")?;
        let (nh, nw) = (h + top + bottom, w + left + right);
        let mut values = vec![S::zero(); b * c * nh * nw];
        for plane in 0..b * c {
            for y in 0..h {
                let src = &self.values()[(plane * h + y) * w..][..w];
                let dst = &mut values[(plane * nh + y + top) * nw + left..][..w];
                dst.copy_from_slice(src);
            }
        }
        Ok(Tensor::make(
            vec![b, c, nh, nw],
            values,
            vec![self.clone()],
            Op::PadHw { top, left },
        ))
    }

    /// Remove rows/columns from the edges of the two spatial axes.
    pub fn crop_hw(&self, top: usize, bottom: usize, left: usize, right: usize) -> Result<Tensor<S>> {
        let (b, c, h, w) = self.rank4("crop_hw")?;
        if top + bottom >= h || left + right >= w {
            return Err(Error::Shape(format!(
                "crop ({top},{bottom},{left},{right}) consumes the whole {h}x{w} extent"
            )));
        }
        let (nh, nw) = (h - top - bottom, w - left - right);
        let mut values = Vec::with_capacity(b * c * nh * nw);
        for plane in 0..b * c {
            for y in 0..nh {
                let src = &self.values()[(plane * h + y + top) * w + left..][..nw];
                values.extend_from_slice(src);
            }
        }
        Ok(Tensor::make(
            vec![b, c, nh, nw],
            values,
            vec![self.clone()],
            Op::CropHw { top, left },
        ))
    }

    pub fn sum(&self) -> Tensor<S> {
        let total = self.values().iter().copied().sum::<S>();
        Tensor::make(Vec::new(), vec![total], vec![self.clone()], Op::Sum)
    }

    pub fn mean(&self) -> Tensor<S> {
        let total = self.values().iter().copied().sum::<S>();
        let m = total / S::from_usize(self.numel());
        Tensor::make(Vec::new(), vec![m], vec![self.clone()], Op::Mean)
    }
}

/// Mean of elementwise squared differences.
pub fn mse_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<Tensor<S>> {
    pred.same_shape(target, "mse_loss")?;
    let n = S::from_usize(pred.numel());
    let total = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<S>();
    Ok(Tensor::make(
        Vec::new(),
        vec![total / n],
        vec![pred.clone(), target.clone()],
        Op::MseLoss,
    ))
}

/// Mean of elementwise absolute differences.
pub fn l1_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<Tensor<S>> {
    pred.same_shape(target, "l1_loss")?;
    let n = S::from_usize(pred.numel());
    let total = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(&a, &b)| (a - b).abs())
        .sum::<S>();
    Ok(Tensor::make(
        Vec::new(),
        vec![total / n],
        vec![pred.clone(), target.clone()],
        Op::L1Loss,
    ))
}
