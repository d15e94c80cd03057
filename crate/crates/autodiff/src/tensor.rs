use std::fmt;
use std::sync::Arc;

use crate::Element;

/// Dimensions of a tensor, outermost first. An empty shape is a scalar.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        Shape(dims.into())
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// `(n, c, h, w)` for rank-4 shapes.
    pub fn nchw(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.0.len(), 4, "expected NCHW shape, got {self:?}");
        (self.0[0], self.0[1], self.0[2], self.0[3])
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&[usize]> for Shape {
    fn from(v: &[usize]) -> Self {
        Shape(v.to_vec())
    }
}

impl<const N: usize> From<[usize; N]> for Shape {
    fn from(v: [usize; N]) -> Self {
        Shape(v.to_vec())
    }
}

impl From<Vec<usize>> for Shape {
    fn from(v: Vec<usize>) -> Self {
        Shape(v)
    }
}

/// Immutable dense tensor with shared storage. Cloning is cheap; mutation goes
/// through [`Tensor::data_mut`], which copies on write when shared.
#[derive(Clone)]
pub struct Tensor<E> {
    shape: Shape,
    data: Arc<Vec<E>>,
}

impl<E: Element> Tensor<E> {
    pub fn from_vec(shape: impl Into<Shape>, data: Vec<E>) -> Self {
        let shape = shape.into();
        assert_eq!(
            shape.numel(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn full(shape: impl Into<Shape>, value: E) -> Self {
        let shape = shape.into();
        let n = shape.numel();
        Tensor::from_vec(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, E::zero())
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, E::one())
    }

    pub fn scalar(value: E) -> Self {
        Tensor::from_vec(Shape::scalar(), vec![value])
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<E> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> E {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        assert_eq!(shape.numel(), self.numel(), "reshape changes element count");
        Tensor {
            shape,
            data: Arc::clone(&self.data),
        }
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Tensor::from_vec(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(E, E) -> E) -> Self {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        Tensor::from_vec(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sum(&self) -> E {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> E {
        self.sum() / E::of(self.numel() as f64)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element type, e.g. to run an f32 network in f64.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor::from_vec(
            self.shape.clone(),
            self.data.iter().map(|v| F::of(v.to_f64().unwrap_or(f64::NAN))).collect(),
        )
    }

    /// Whether two tensors share the same shape and bit patterns.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_f64().map(f64::to_bits) == b.to_f64().map(f64::to_bits))
    }

    /// Per-channel sum over N, H and W of an NCHW tensor.
    pub fn channel_sum(&self) -> Tensor<E> {
        let (n, c, h, w) = self.shape.nchw();
        let plane = h * w;
        let mut out = vec![E::zero(); c];
        for b in 0..n {
            for (ch, acc) in out.iter_mut().enumerate() {
                let start = (b * c + ch) * plane;
                *acc += self.data[start..start + plane].iter().copied().sum::<E>();
            }
        }
        Tensor::from_vec([c], out)
    }

    /// Broadcasts a `[C]` vector over an NCHW shape.
    pub fn channel_expand(&self, shape: &Shape) -> Tensor<E> {
        let (n, c, h, w) = shape.nchw();
        assert_eq!(self.dims(), [c], "channel vector does not match {shape:?}");
        let plane = h * w;
        let mut out = Vec::with_capacity(shape.numel());
        for _ in 0..n {
            for &v in self.data.iter() {
                out.extend(std::iter::repeat_n(v, plane));
            }
        }
        Tensor::from_vec(shape.clone(), out)
    }

    /// Zero-pads the two spatial axes: `(top, bottom, left, right)`.
    pub fn pad2d(&self, pad: [usize; 4]) -> Tensor<E> {
        let (n, c, h, w) = self.shape.nchw();
        let [top, bottom, left, right] = pad;
        let (oh, ow) = (h + top + bottom, w + left + right);
        let mut out = vec![E::zero(); n * c * oh * ow];
        for p in 0..n * c {
            for y in 0..h {
                let src = &self.data[(p * h + y) * w..(p * h + y + 1) * w];
                let dst = (p * oh + y + top) * ow + left;
                out[dst..dst + w].copy_from_slice(src);
            }
        }
        Tensor::from_vec([n, c, oh, ow], out)
    }

    /// Spatial window starting at `(top, left)` of size `height × width`.
    pub fn crop2d(&self, top: usize, left: usize, height: usize, width: usize) -> Tensor<E> {
        let (n, c, h, w) = self.shape.nchw();
        assert!(
            top + height <= h && left + width <= w,
            "crop window exceeds {h}x{w}"
        );
        let mut out = Vec::with_capacity(n * c * height * width);
        for p in 0..n * c {
            for y in 0..height {
                let row = (p * h + top + y) * w + left;
                out.extend_from_slice(&self.data[row..row + width]);
            }
        }
        Tensor::from_vec([n, c, height, width], out)
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        write!(f, "Tensor{:?} {:?}", self.shape, preview)?;
        if self.numel() > 8 {
            write!(f, "…")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_then_crop_is_identity() {
        let t = Tensor::<f64>::from_vec([1, 2, 2, 3], (0..12).map(f64::from).collect());
        let p = t.pad2d([1, 2, 3, 0]);
        assert_eq!(p.dims(), [1, 2, 5, 6]);
        assert!(p.crop2d(1, 3, 2, 3).bitwise_eq(&t));
        assert_eq!(p.sum(), t.sum());
    }

    #[test]
    fn channel_sum_and_expand_are_adjoint() {
        let shape = Shape::new([2, 3, 2, 2]);
        let x = Tensor::<f64>::from_vec(shape.clone(), (0..24).map(f64::from).collect());
        let v = Tensor::<f64>::from_vec([3], vec![1.0, -2.0, 0.5]);
        let lhs: f64 = x
            .data()
            .iter()
            .zip(v.channel_expand(&shape).data())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x
            .channel_sum()
            .data()
            .iter()
            .zip(v.data())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
