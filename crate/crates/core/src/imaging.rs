//! Image values, scale schedules and bicubic resampling.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use singan_autodiff::Tensor;

use crate::error::{invalid, Error, Result};

/// An image with samples in `[-1, 1]`, stored as a `[1, C, H, W]` tensor.
#[derive(Clone, Debug)]
pub struct ImageField {
    tensor: Tensor<f32>,
}

impl ImageField {
    /// Builds an image from channel-major values, validating every invariant.
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(invalid(format!("images have 1 or 3 channels, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(invalid(format!("image dims must be positive, got {height}x{width}")));
        }
        if values.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} image",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(invalid(format!("image value {v} outside [-1, 1]")));
        }
        Ok(Self {
            tensor: Tensor::from_vec([1, channels, height, width], values),
        })
    }

    /// Wraps a `[1, C, H, W]` tensor, clamping values into `[-1, 1]`.
    pub fn from_tensor_clamped(tensor: &Tensor<f32>) -> Result<Self> {
        let dims = tensor.dims();
        if dims.len() != 4 || dims[0] != 1 {
            return Err(Error::Shape(format!("expected [1, C, H, W], got {dims:?}")));
        }
        if !tensor.all_finite() {
            return Err(Error::Numerical("image tensor has non-finite values".into()));
        }
        Self::new(
            dims[1],
            dims[2],
            dims[3],
            tensor.data().iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
        )
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.tensor.dims()[1]
    }

    pub fn height(&self) -> usize {
        self.tensor.dims()[2]
    }

    pub fn width(&self) -> usize {
        self.tensor.dims()[3]
    }

    /// `(height, width)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn values(&self) -> &[f32] {
        self.tensor.data()
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values()[(c * self.height() + y) * self.width() + x]
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.tensor.bitwise_eq(&other.tensor)
    }

    /// Population standard deviation of all samples.
    pub fn std(&self) -> f32 {
        let v = self.values();
        let n = v.len() as f64;
        let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
        (v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n).sqrt() as f32
    }

    pub fn from_dynamic(img: &DynamicImage) -> Result<Self> {
        let to_unit = |p: u8| p as f32 / 127.5 - 1.0;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if img.color().has_color() {
            let rgb = img.to_rgb8();
            let mut values = vec![0.0; 3 * h * w];
            for (x, y, p) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    values[(c * h + y as usize) * w + x as usize] = to_unit(p[c]);
                }
            }
            Self::new(3, h, w, values)
        } else {
            let gray = img.to_luma8();
            Self::new(1, h, w, gray.pixels().map(|p| to_unit(p[0])).collect())
        }
    }

    pub fn to_dynamic(&self) -> DynamicImage {
        let to_byte = |v: f32| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
        let (h, w) = self.dims();
        if self.channels() == 3 {
            let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let px = |c| to_byte(self.get(c, y as usize, x as usize));
                image::Rgb([px(0), px(1), px(2)])
            });
            DynamicImage::ImageRgb8(img)
        } else {
            let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
                image::Luma([to_byte(self.get(0, y as usize, x as usize))])
            });
            DynamicImage::ImageLuma8(img)
        }
    }

    /// 8-bit samples as they would be written to disk, channel-interleaved.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_dynamic().into_bytes()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_dynamic(&image::open(path)?)
    }

    /// Writes PNG or JPEG depending on the extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_dynamic().save(path)?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_dynamic().write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::from_dynamic(&image::load_from_memory(bytes)?)
    }
}

/// Per-level image dimensions of a pyramid, finest (index 0) to coarsest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    pub levels: Vec<(usize, usize)>,
    pub r: f64,
}

impl ScaleSchedule {
    /// Index of the coarsest level (`N`).
    pub fn coarsest(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn num_scales(&self) -> usize {
        self.levels.len()
    }

    pub fn dims(&self, n: usize) -> (usize, usize) {
        self.levels[n]
    }

    pub fn finest(&self) -> (usize, usize) {
        self.levels[0]
    }

    /// Level dims for a different finest-level size, `round(dims / rⁿ)`.
    pub fn levels_for(&self, finest: (usize, usize)) -> Vec<(usize, usize)> {
        (0..self.num_scales())
            .map(|n| level_dims(finest, self.r, n))
            .collect()
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(1.0) as usize
}

fn level_dims(finest: (usize, usize), r: f64, n: usize) -> (usize, usize) {
    let f = r.powi(n as i32);
    (
        round_half_up(finest.0 as f64 / f),
        round_half_up(finest.1 as f64 / f),
    )
}

/// Knobs of [`build_scale_schedule`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOptions {
    pub min_coarse_dim: usize,
    /// Resize so the larger side is at most this; `None` keeps the source size.
    pub max_fine_dim: Option<usize>,
    pub target_r: f64,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self {
            min_coarse_dim: 25,
            max_fine_dim: Some(250),
            target_r: 4.0 / 3.0,
        }
    }
}

/// Finest-level dims after the max-dimension resize.
pub fn fine_dims(source: (usize, usize), max_fine_dim: Option<usize>) -> Result<(usize, usize)> {
    let (h, w) = source;
    if h == 0 || w == 0 {
        return Err(invalid(format!("source dims must be positive, got {h}x{w}")));
    }
    Ok(match max_fine_dim {
        Some(max) if h.max(w) > max => {
            let s = max as f64 / h.max(w) as f64;
            (round_half_up(h as f64 * s), round_half_up(w as f64 * s))
        }
        _ => (h, w),
    })
}

/// Number of downsampling steps whose factor `(min_dim / min_coarse)^(1/N)`
/// lies closest to `target_r`.
pub fn choose_num_steps(min_dim: usize, min_coarse_dim: usize, target_r: f64) -> usize {
    if min_dim <= min_coarse_dim {
        return 0;
    }
    let ratio = min_dim as f64 / min_coarse_dim as f64;
    let mut best = (1, f64::INFINITY);
    // The factor decreases monotonically with N; stop once past the target.
    for n in 1..=256 {
        let r = ratio.powf(1.0 / n as f64);
        let err = (r - target_r).abs();
        if err < best.1 {
            best = (n, err);
        }
        if r < target_r {
            break;
        }
    }
    best.0
}

/// Pyramid for an image of `source` dims.
pub fn build_scale_schedule(source: (usize, usize), opts: &ScheduleOptions) -> Result<ScaleSchedule> {
    if opts.min_coarse_dim == 0 || !(opts.target_r > 1.0) {
        return Err(invalid("min_coarse_dim must be positive and target_r > 1"));
    }
    let finest = fine_dims(source, opts.max_fine_dim)?;
    let min_dim = finest.0.min(finest.1);
    let n = choose_num_steps(min_dim, opts.min_coarse_dim, opts.target_r);
    if n == 0 {
        return Ok(ScaleSchedule {
            levels: vec![finest],
            r: 1.0,
        });
    }
    let r = (min_dim as f64 / opts.min_coarse_dim as f64).powf(1.0 / n as f64);
    Ok(ScaleSchedule {
        levels: (0..=n).map(|k| level_dims(finest, r, k)).collect(),
        r,
    })
}

/// Pyramid with a prescribed factor `r`, as many levels as keep the smaller
/// side at or above `min_coarse_dim`.
pub fn build_scale_schedule_with_factor(
    source: (usize, usize),
    r: f64,
    min_coarse_dim: usize,
    max_fine_dim: Option<usize>,
) -> Result<ScaleSchedule> {
    if !(r > 1.0) || !r.is_finite() {
        return Err(invalid(format!("scale factor must be > 1, got {r}")));
    }
    let finest = fine_dims(source, max_fine_dim)?;
    let min_dim = finest.0.min(finest.1);
    let mut n = 0;
    while level_dims(finest, r, n + 1).0.min(level_dims(finest, r, n + 1).1) >= min_coarse_dim {
        n += 1;
    }
    Ok(ScaleSchedule {
        levels: (0..=n).map(|k| level_dims(finest, r, k)).collect(),
        r: if n == 0 && min_dim <= min_coarse_dim { 1.0 } else { r },
    })
}

// ---------------------------------------------------------------------------
// Resampling

/// Keys cubic convolution kernel with `a = -0.5`.
pub(crate) fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Normalized taps `(source index, weight)` of one output sample.
struct Taps {
    taps: Vec<Vec<(usize, f64)>>,
}

impl Taps {
    /// Antialiased when shrinking: the kernel is stretched by the scale factor.
    fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let support = scale.max(1.0);
        let taps = (0..dst)
            .map(|o| {
                let center = (o as f64 + 0.5) * scale - 0.5;
                let lo = (center - 2.0 * support).floor() as isize;
                let hi = (center + 2.0 * support).ceil() as isize;
                let mut row: Vec<(usize, f64)> = Vec::new();
                let mut total = 0.0;
                for j in lo..=hi {
                    let w = cubic((j as f64 - center) / support);
                    if w == 0.0 {
                        continue;
                    }
                    let idx = j.clamp(0, src as isize - 1) as usize;
                    total += w;
                    match row.iter_mut().find(|(i, _)| *i == idx) {
                        Some(entry) => entry.1 += w,
                        None => row.push((idx, w)),
                    }
                }
                row.iter_mut().for_each(|t| t.1 /= total);
                row
            })
            .collect();
        Self { taps }
    }
}

/// Separable bicubic resize to arbitrary dims; values are clamped to `[-1, 1]`.
pub fn resize(img: &ImageField, target: (usize, usize)) -> Result<ImageField> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(invalid(format!("target dims must be positive, got {th}x{tw}")));
    }
    if img.dims() == target {
        return Ok(img.clone());
    }
    let (c, (h, w)) = (img.channels(), img.dims());
    let rows = Taps::new(h, th);
    let cols = Taps::new(w, tw);
    let src = img.values();
    let mut out = Vec::with_capacity(c * th * tw);
    let mut horizontal = vec![0.0f64; h * tw];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for (x, taps) in cols.taps.iter().enumerate() {
                horizontal[y * tw + x] = taps
                    .iter()
                    .map(|&(i, wt)| plane[y * w + i] as f64 * wt)
                    .sum();
            }
        }
        for taps in &rows.taps {
            for x in 0..tw {
                let v: f64 = taps.iter().map(|&(i, wt)| horizontal[i * tw + x] * wt).sum();
                out.push((v as f32).clamp(-1.0, 1.0));
            }
        }
    }
    ImageField::new(c, th, tw, out)
}

/// Shrinks `img` to `target`; rejects any axis that would grow.
pub fn downsample(img: &ImageField, target: (usize, usize)) -> Result<ImageField> {
    let (h, w) = img.dims();
    if target.0 > h || target.1 > w {
        return Err(invalid(format!(
            "downsample from {h}x{w} to larger {}x{}",
            target.0, target.1
        )));
    }
    resize(img, target)
}

/// Enlarges `img` to `target`; rejects any axis that would shrink.
pub fn upsample(img: &ImageField, target: (usize, usize)) -> Result<ImageField> {
    let (h, w) = img.dims();
    if target.0 < h || target.1 < w {
        return Err(invalid(format!(
            "upsample from {h}x{w} to smaller {}x{}",
            target.0, target.1
        )));
    }
    resize(img, target)
}

/// Downsampled copies of `img` at every level of `schedule`.
pub fn build_pyramid(img: &ImageField, schedule: &ScaleSchedule) -> Result<Vec<ImageField>> {
    let finest = resize(img, schedule.finest())?;
    schedule
        .levels
        .iter()
        .map(|&dims| resize(&finest, dims))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> ImageField {
        let values = (0..c * h * w)
            .map(|i| ((i * 37 % 101) as f32 / 50.0 - 1.0).clamp(-1.0, 1.0))
            .collect();
        ImageField::new(c, h, w, values).unwrap()
    }

    #[test]
    fn schedule_for_250x188() {
        let s = build_scale_schedule((188, 250), &ScheduleOptions::default()).unwrap();
        assert_eq!(s.coarsest(), 7);
        assert_eq!(s.num_scales(), 8);
        assert!((s.r - 1.334).abs() < 1e-3, "r = {}", s.r);
        assert_eq!(s.levels[0], (188, 250));
        assert_eq!(s.levels[7].0, 25);
    }

    #[test]
    fn schedule_for_min_dim_25_is_single_level() {
        let s = build_scale_schedule((25, 40), &ScheduleOptions::default()).unwrap();
        assert_eq!(s.coarsest(), 0);
        assert_eq!(s.r, 1.0);
    }

    #[test]
    fn schedule_for_min_dim_100() {
        let s = build_scale_schedule((100, 100), &ScheduleOptions::default()).unwrap();
        assert_eq!(s.coarsest(), 5);
        assert!((s.r - 4f64.powf(0.2)).abs() < 1e-12);
    }

    #[test]
    fn schedule_resizes_large_inputs() {
        let s = build_scale_schedule((600, 800), &ScheduleOptions::default()).unwrap();
        assert_eq!(s.finest(), (188, 250));
        let keep = ScheduleOptions {
            max_fine_dim: None,
            ..Default::default()
        };
        assert_eq!(build_scale_schedule((600, 800), &keep).unwrap().finest(), (600, 800));
    }

    #[test]
    fn schedule_rejects_zero_dims() {
        assert!(matches!(
            build_scale_schedule((0, 10), &ScheduleOptions::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn factor_schedule_for_super_resolution() {
        let r = 4f64.powf(0.2);
        let s = build_scale_schedule_with_factor((50, 50), r, 25, None).unwrap();
        assert_eq!(s.levels, vec![(50, 50), (38, 38), (29, 29)]);
    }

    #[test]
    fn identity_resize_is_bitwise() {
        let img = ramp(3, 7, 9);
        assert!(downsample(&img, (7, 9)).unwrap().bitwise_eq(&img));
        assert!(upsample(&img, (7, 9)).unwrap().bitwise_eq(&img));
    }

    #[test]
    fn constants_survive_resampling() {
        let img = ImageField::constant(3, 13, 17, 0.37).unwrap();
        for dims in [(5, 6), (13, 3), (1, 1)] {
            let d = downsample(&img, dims).unwrap();
            assert!(d.values().iter().all(|v| (v - 0.37).abs() < 1e-6));
        }
        let u = upsample(&img, (40, 31)).unwrap();
        assert!(u.values().iter().all(|v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn wrong_direction_is_rejected() {
        let img = ramp(1, 8, 8);
        assert!(downsample(&img, (9, 4)).is_err());
        assert!(upsample(&img, (9, 4)).is_err());
    }

    #[test]
    fn image_rejects_bad_values() {
        assert!(ImageField::new(2, 1, 1, vec![0.0, 0.0]).is_err());
        assert!(ImageField::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ImageField::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(ImageField::new(1, 0, 1, vec![]).is_err());
    }

    #[test]
    fn byte_round_trip() {
        let img = ramp(3, 4, 5);
        let back = ImageField::decode(&img.encode_png().unwrap()).unwrap();
        for (a, b) in img.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 1.0 / 127.5);
        }
    }
}
