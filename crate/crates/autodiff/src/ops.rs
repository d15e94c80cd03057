//! Differentiable operations on [`Var`]s.

use crate::graph::Backward;
use crate::kernels::{self, Conv2dGeometry};
use crate::{Element, Shape, Tensor, Var};

fn want<E: Element>(needs: &[bool], i: usize, f: impl FnOnce() -> Var<E>) -> Option<Var<E>> {
    needs[i].then(f)
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

struct AddRule;
impl<E: Element> Backward<E> for AddRule {
    fn backward(&self, _: &[Var<E>], _: &Var<E>, g: &Var<E>, needs: &[bool]) -> Vec<Option<Var<E>>> {
        vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())]
    }
}

pub fn add<E: Element>(a: &Var<E>, b: &Var<E>) -> Var<E> {
    let v = a.value().zip_map(b.value(), |x, y| x + y);
    Var::from_op(v, vec![a.clone(), b.clone()], AddRule)
}

struct SubRule;
impl<E: Element> Backward<E> for SubRule {
    fn backward(&self, _: &[Var<E>], _: &Var<E>, g: &Var<E>, needs: &[bool]) -> Vec<Option<Var<E>>> {
        vec![needs[0].then(|| g.clone()), needs[1].then(|| neg(g))]
    }
}

pub fn sub<E: Element>(a: &Var<E>, b: &Var<E>) -> Var<E> {
    let v = a.value().zip_map(b.value(), |x, y| x - y);
    Var::from_op(v, vec![a.clone(), b.clone()], SubRule)
}

struct MulRule;
impl<E: Element> Backward<E> for MulRule {
    fn backward(&self, x: &[Var<E>], _: &Var<E>, g: &Var<E>, needs: &[bool]) -> Vec<Option<Var<E>>> {
        vec![
            want(needs, 0, || mul(g, &x[1])),
            want(needs, 1, || mul(g, &x[0])),
        ]
    }
}

pub fn mul<E: Element>(a: &Var<E>, b: &Var<E>) -> Var<E> {
    let v = a.value().zip_map(b.value(), |x, y| x * y);
    Var::from_op(v, vec![a.clone(), b.clone()], MulRule)
}

pub fn square<E: Element>(a: &Var<E>) -> Var<E> {
    mul(a, a)
}

struct ScaleRule<E>(E);
impl<E: Element> Backward<E> for ScaleRule<E> {
    fn backward(&self, _: &[Var<E>], _: &Var<E>, g: &Var<E>, _: &[bool]) -> Vec<Option<Var<E>>> {
        vec![Some(scale(g, self.0))]
    }
}

pub fn scale<E: Element>(a: &Var<E>, c: E) -> Var<E> {
    Var::from_op(a.value().map(|x| x * c), vec![a.clone()], ScaleRule(c))
}

pub fn neg<E: Element>(a: &Var<E>) -> Var<E> {
    scale(a, -E::one())
}

struct AddScalarRule;
impl<E: Element> Backward<E> for AddScalarRule {
    fn backward(&self, _: &[Var<E>], _: &Var<E>, g: &Var<E>, _: &[bool]) -> Vec<Option<Var<E>>> {
        vec![Some(g.clone())]
    }
}

pub fn add_scalar<E: Element>(a: &Var<E>, c: E) -> Var<E> {
    Var::from_op(a.value().map(|x| x + c), vec![a.clone()], AddScalarRule)
}

/// Product with a constant tensor of the same shape.
pub fn mul_const<E: Element>(a: &Var<E>, mask: &Tensor<E>) -> Var<E> {
    struct Rule<E>(Tensor<E>);
    impl<E: Element> Backward<E> for Rule<E> {
        fn backward(&self, _: &[Var<E>], _: &Var<E>, g: &Var<E>, _: &[bool]) -> Vec<Option<Var<E>>> {
            vec![Some(mul_const(g, &self.0))]
        }
    }
    let v = a.value().zip_map(mask, |x, m| x * m);
    Var::from_op(v, vec![a.clone()], Rule(mask.clone()))
}

/// Leaky rectifier; the slope pattern is piecewise constant, so its
/// derivative is a fixed mask.
pub fn leaky_relu<E: Element>(a: &Var<E>, negative_slope: E) -> Var<E> {
    let mask = a
        .value()
        .map(|x| if x > E::zero() { E::one() } else { negative_slope });
    mul_const(a, &mask)
}

struct TanhRule;
impl<E: Element> Backward<E> for TanhRule {
    fn backward(&self, _: &[Var<E>], y: &Var<E>, g: &Var<E>, _: &[bool]) -> Vec<Option<Var<E>>> {
        // d tanh = 1 - y^2
        let slope = add_scalar(&neg(&square(y)), E::one());
        vec![Some(mul(g, &slope))]
    }
}

pub fn tanh<E: Element>(a: &Var<E>) -> Var<E> {
    Var::from_op(a.value().map(|x| x.tanh()), vec![a.clone()], TanhRule)
}

struct PowfRule<E>(E);
impl<E: Element> Backward<E> for PowfRule<E> {
    fn backward(&self, x: &[Var<E>], _: &Var<E>, g: &Var<E>, _: &[bool]) -> Vec<Option<Var<E>>> {
        let p = self.0;
        let d = scale(&powf(&x[0], p - E::one()), p);
        vec![Some(mul(g, &d))]
    }
}

pub fn powf<E: Element>(a: &Var<E>, p: E) -> Var<E> {
    Var::from_op(a.value().map(|x| x.powf(p)), vec![a.clone()], PowfRule(p))
}

struct RecipSafeRule;
impl<E: Element> Backward<E> for RecipSafeRule {
    fn backward(&self, _: &[Var<E>], y: &Var<E>, g: &Var<E>, _: &[bool]) -> Vec<Option<Var<E>>> {
        // d(1/x) = -1/x^2 = -y^2, with the same zero convention as the value.
        vec![Some(neg(&mul(g, &square(y))))]
    }
}

/// `1/x`, defined as 0 where `x == 0`.
pub fn recip_safe<E: Element>(a: &Var<E>) -> Var<E> {
    let v = a
        .value()
        .map(|x| if x == E::zero() { E::zero() } else { x.recip() });
    Var::from_op(v, vec![a.clone()], RecipSafeRule)
}

struct SqrtRule;
impl<E: Element> Backward<E> for SqrtRule {
    fn backward(&self, _: &[Var<E>], y: &Var<E>, g: &Var<E>, _: &[bool]) -> Vec<Option<Var<E>>> {
        vec![Some(mul(g, &recip_safe(&scale(y, E::of(2.0)))))]
    }
}

/// Square root whose derivative is taken as 0 at 0 (a subgradient of `‖·‖`).
pub fn sqrt<E: Element>(a: &Var<E>) -> Var<E> {
    Var::from_op(a.value().map(|x| x.sqrt()), vec![a.clone()], SqrtRule)
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts

struct SumAllRule(Shape);
impl<E: Element> Backward<E> for SumAllRule {
    fn backward(&self, _: &[Var<E>], _: &Var<E>, g: &Var<E>, _: &[bool]) -> Vec<Option<Var<E>>> {
        vec![Some(expand_scalar(g, &self.0))]
    }
}

pub fn sum_all<E: Element>(a: &Var<E>) -> Var<E> {
    let v = Tensor::scalar(a.value().sum());
    Var::from_op(v, vec![a.clone()], SumAllRule(a.shape().clone()))
}

pub fn mean_all<E: Element>(a: &Var<E>) -> Var<E> {
    let n = E::of(a.value().numel() as f64);
    scale(&sum_all(a), E::one() / n)
}

struct ExpandScalarRule;
impl<E: Element> Backward<E> for ExpandScalarRule {
    fn backward(&self, _: &[Var<E>], _: &Var<E>, g: &Var<E>, _: &[bool]) -> Vec<Option<Var<E>>> {
        vec![Some(sum_all(g))]
    }
}

/// Broadcasts a one-element tensor to `shape`.
pub fn expand_scalar<E: Element>(a: &Var<E>, shape: &Shape) -> Var<E> {
    let v = Tensor::full(shape.clone(), a.item());
    Var::from_op(v, vec![a.clone()], ExpandScalarRule)
}

struct ChannelSumRule(Shape);
impl<E: Element> Backward<E> for ChannelSumRule {
    fn backward(&self, _: &[Var<E>], _: &Var<E>, g: &Var<E>, _: &[bool]) -> Vec<Option<Var<E>>> {
        vec![Some(channel_expand(g, &self.0))]
    }
}

/// `[N, C, H, W] -> [C]`.
pub fn channel_sum<E: Element>(a: &Var<E>) -> Var<E> {
    Var::from_op(
        a.value().channel_sum(),
        vec![a.clone()],
        ChannelSumRule(a.shape().clone()),
    )
}

struct ChannelExpandRule;
impl<E: Element> Backward<E> for ChannelExpandRule {
    fn backward(&self, _: &[Var<E>], _: &Var<E>, g: &Var<E>, _: &[bool]) -> Vec<Option<Var<E>>> {
        vec![Some(channel_sum(g))]
    }
}

/// `[C] -> [N, C, H, W]`.
pub fn channel_expand<E: Element>(a: &Var<E>, shape: &Shape) -> Var<E> {
    Var::from_op(a.value().channel_expand(shape), vec![a.clone()], ChannelExpandRule)
}

/// Adds a per-channel bias.
pub fn add_bias<E: Element>(x: &Var<E>, bias: &Var<E>) -> Var<E> {
    add(x, &channel_expand(bias, x.shape()))
}

// ---------------------------------------------------------------------------
// Spatial

struct PadRule([usize; 4]);
impl<E: Element> Backward<E> for PadRule {
    fn backward(&self, _: &[Var<E>], _: &Var<E>, g: &Var<E>, _: &[bool]) -> Vec<Option<Var<E>>> {
        let [top, bottom, left, right] = self.0;
        let (_, _, h, w) = g.shape().nchw();
        vec![Some(crop2d(g, top, left, h - top - bottom, w - left - right))]
    }
}

/// Zero padding `(top, bottom, left, right)` of the spatial axes.
pub fn pad2d<E: Element>(a: &Var<E>, pad: [usize; 4]) -> Var<E> {
    Var::from_op(a.value().pad2d(pad), vec![a.clone()], PadRule(pad))
}

struct CropRule {
    pad: [usize; 4],
}
impl<E: Element> Backward<E> for CropRule {
    fn backward(&self, _: &[Var<E>], _: &Var<E>, g: &Var<E>, _: &[bool]) -> Vec<Option<Var<E>>> {
        vec![Some(pad2d(g, self.pad))]
    }
}

pub fn crop2d<E: Element>(a: &Var<E>, top: usize, left: usize, height: usize, width: usize) -> Var<E> {
    let (_, _, h, w) = a.shape().nchw();
    let pad = [top, h - top - height, left, w - left - width];
    Var::from_op(
        a.value().crop2d(top, left, height, width),
        vec![a.clone()],
        CropRule { pad },
    )
}

// ---------------------------------------------------------------------------
// Convolution
//
// The three maps below are the partial derivatives of the trilinear form
// T(x, w, g) = <g, conv(x, w)>, so each one's backward is expressed with the
// other two.

struct ConvRule(Conv2dGeometry);
impl<E: Element> Backward<E> for ConvRule {
    fn backward(&self, x: &[Var<E>], _: &Var<E>, g: &Var<E>, needs: &[bool]) -> Vec<Option<Var<E>>> {
        let (_, _, h, w) = x[0].shape().nchw();
        let (_, _, kh, kw) = x[1].shape().nchw();
        vec![
            want(needs, 0, || conv2d_input_grad(g, &x[1], self.0, (h, w))),
            want(needs, 1, || conv2d_weight_grad(&x[0], g, self.0, (kh, kw))),
        ]
    }
}

/// Cross-correlation of `x: [N, Ci, H, W]` with `w: [Co, Ci, k, k]`.
pub fn conv2d<E: Element>(x: &Var<E>, w: &Var<E>, geom: Conv2dGeometry) -> Var<E> {
    let v = kernels::conv2d(x.value(), w.value(), geom);
    Var::from_op(v, vec![x.clone(), w.clone()], ConvRule(geom))
}

struct ConvInputGradRule(Conv2dGeometry);
impl<E: Element> Backward<E> for ConvInputGradRule {
    fn backward(&self, x: &[Var<E>], _: &Var<E>, u: &Var<E>, needs: &[bool]) -> Vec<Option<Var<E>>> {
        // inputs: (g, w); <u, input_grad(g, w)> = T(u, w, g)
        let (_, _, kh, kw) = x[1].shape().nchw();
        vec![
            want(needs, 0, || conv2d(u, &x[1], self.0)),
            want(needs, 1, || conv2d_weight_grad(u, &x[0], self.0, (kh, kw))),
        ]
    }
}

pub fn conv2d_input_grad<E: Element>(
    g: &Var<E>,
    w: &Var<E>,
    geom: Conv2dGeometry,
    input_hw: (usize, usize),
) -> Var<E> {
    let v = kernels::conv2d_input_grad(g.value(), w.value(), geom, input_hw);
    Var::from_op(v, vec![g.clone(), w.clone()], ConvInputGradRule(geom))
}

struct ConvWeightGradRule(Conv2dGeometry);
impl<E: Element> Backward<E> for ConvWeightGradRule {
    fn backward(&self, x: &[Var<E>], _: &Var<E>, u: &Var<E>, needs: &[bool]) -> Vec<Option<Var<E>>> {
        // inputs: (x, g); <u, weight_grad(x, g)> = T(x, u, g)
        let (_, _, h, w) = x[0].shape().nchw();
        vec![
            want(needs, 0, || conv2d_input_grad(&x[1], u, self.0, (h, w))),
            want(needs, 1, || conv2d(&x[0], u, self.0)),
        ]
    }
}

pub fn conv2d_weight_grad<E: Element>(
    x: &Var<E>,
    g: &Var<E>,
    geom: Conv2dGeometry,
    kernel_hw: (usize, usize),
) -> Var<E> {
    let v = kernels::conv2d_weight_grad(x.value(), g.value(), geom, kernel_hw);
    Var::from_op(v, vec![x.clone(), g.clone()], ConvWeightGradRule(geom))
}

// ---------------------------------------------------------------------------
// Composites

/// Mean squared error between two same-shape tensors.
pub fn mse<E: Element>(a: &Var<E>, b: &Var<E>) -> Var<E> {
    mean_all(&square(&sub(a, b)))
}

/// Euclidean norm of all entries.
pub fn l2_norm<E: Element>(a: &Var<E>) -> Var<E> {
    sqrt(&sum_all(&square(a)))
}

/// Per-channel statistics over N, H, W used by batch normalization.
#[derive(Clone, Debug)]
pub struct BatchStats<E: Element> {
    pub mean: Tensor<E>,
    pub var: Tensor<E>,
}

/// Batch normalization with statistics of `x` itself (biased variance).
pub fn batch_norm_train<E: Element>(
    x: &Var<E>,
    gamma: &Var<E>,
    beta: &Var<E>,
    eps: E,
) -> (Var<E>, BatchStats<E>) {
    let shape = x.shape().clone();
    let (n, _, h, w) = shape.nchw();
    let inv_count = E::one() / E::of((n * h * w) as f64);
    let mean = scale(&channel_sum(x), inv_count);
    let centered = sub(x, &channel_expand(&mean, &shape));
    let var = scale(&channel_sum(&square(&centered)), inv_count);
    let inv_std = powf(&add_scalar(&var, eps), E::of(-0.5));
    let normalized = mul(&centered, &channel_expand(&inv_std, &shape));
    let y = add(
        &mul(&normalized, &channel_expand(gamma, &shape)),
        &channel_expand(beta, &shape),
    );
    let stats = BatchStats {
        mean: mean.value().clone(),
        var: var.value().clone(),
    };
    (y, stats)
}

/// Batch normalization with fixed statistics.
pub fn batch_norm_eval<E: Element>(
    x: &Var<E>,
    gamma: &Var<E>,
    beta: &Var<E>,
    stats: &BatchStats<E>,
    eps: E,
) -> Var<E> {
    let shape = x.shape().clone();
    let inv_std = stats.var.map(|v| (v + eps).powf(E::of(-0.5)));
    let centered = sub(x, &Var::constant(stats.mean.channel_expand(&shape)));
    let normalized = mul_const(&centered, &inv_std.channel_expand(&shape));
    add(
        &mul(&normalized, &channel_expand(gamma, &shape)),
        &channel_expand(beta, &shape),
    )
}
