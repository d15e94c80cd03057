//! The coarse-to-fine generation chain shared by training, sampling and the
//! applications.

use singan_autodiff::Tensor;

use crate::error::Result;
use crate::imaging::{resize, ImageField};
use crate::netspec::{generator_forward, Generator, NoiseMap, PaddingMode};

/// Bicubic resize of a `[1, C, H, W]` image tensor.
pub(crate) fn resize_tensor(t: &Tensor<f32>, dims: (usize, usize)) -> Result<Tensor<f32>> {
    let d = t.dims();
    if (d[2], d[3]) == dims {
        return Ok(t.clone());
    }
    Ok(resize(&ImageField::from_tensor_clamped(t)?, dims)?.tensor().clone())
}

/// Center-crops or zero-pads a noise tensor to `dims`.
pub(crate) fn fit_noise(z: &Tensor<f32>, dims: (usize, usize)) -> Tensor<f32> {
    let d = z.dims();
    let (h, w) = (d[2], d[3]);
    if (h, w) == dims {
        return z.clone();
    }
    if h >= dims.0 && w >= dims.1 {
        let (dy, dx) = ((h - dims.0) / 2, (w - dims.1) / 2);
        return z.crop2d(dy, dx, dims.0, dims.1);
    }
    let (py, px) = (dims.0.saturating_sub(h), dims.1.saturating_sub(w));
    let padded = z.pad2d([py / 2, py - py / 2, px / 2, px - px / 2]);
    fit_noise(&padded, dims)
}

/// The inputs one chain run needs besides the generators.
pub(crate) struct Chain<'a> {
    /// Generators for scales `offset ..`.
    pub generators: &'a [Generator],
    pub offset: usize,
    /// Image dims per scale, finest first.
    pub levels: &'a [(usize, usize)],
    pub channels: usize,
    pub mode: PaddingMode,
}

impl Chain<'_> {
    /// Runs `G_from, …, G_to`. `prev_in` (resized to level `from`) feeds
    /// `G_from`; without it the input is the all-zero image. `noise(n, dims)`
    /// supplies noise for scale `n` whose image dims are `dims`.
    pub fn run(
        &self,
        from: usize,
        to: usize,
        prev_in: Option<&Tensor<f32>>,
        noise: &mut dyn FnMut(usize, (usize, usize)) -> Result<NoiseMap>,
        mut on_scale: Option<&mut dyn FnMut(usize, &Tensor<f32>)>,
    ) -> Result<Tensor<f32>> {
        assert!(to <= from && to >= self.offset && from < self.offset + self.generators.len());
        let mut current: Option<Tensor<f32>> = None;
        for n in (to..=from).rev() {
            let dims = self.levels[n];
            let prev = match (&current, prev_in) {
                (Some(c), _) => resize_tensor(c, dims)?,
                (None, Some(p)) => resize_tensor(p, dims)?,
                (None, None) => Tensor::zeros([1, self.channels, dims.0, dims.1]),
            };
            let z = noise(n, dims)?;
            let out = generator_forward(&self.generators[n - self.offset], &z, &prev, self.mode)?;
            if let Some(cb) = on_scale.as_mut() {
                cb(n, &out);
            }
            current = Some(out);
        }
        Ok(current.expect("at least one scale"))
    }
}
