//! Manipulation through injection: an external image enters the pyramid at
//! scale `n` and is refined by `G_n … G_0`. Harmonization, editing,
//! paint-to-image, super-resolution and animation are built on it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, Frame};
use serde::{Deserialize, Serialize};
use singan_autodiff::Tensor;

use crate::error::{invalid, Error, Result};
use crate::imaging::{resize, ImageField};
use crate::netspec::{generator_forward, NoiseMap, PaddingMode};
use crate::rng::{self, Purpose};
use crate::training::{train_pyramid, GeneratorStack, TrainConfig};

/// Binary mask at finest dims, `1` where the generated image is kept.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl Mask {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!("{} mask values for {height}x{width}", values.len())));
        }
        Ok(Self {
            height,
            width,
            values: values.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect(),
        })
    }

    pub fn full(height: usize, width: usize, on: bool) -> Self {
        Self::new(height, width, vec![on; height * width]).expect("sizes match")
    }

    /// Pixels whose mean over channels exceeds 0 (mid-gray in 8-bit terms).
    pub fn from_image(img: &ImageField) -> Self {
        let (h, w) = img.dims();
        let c = img.channels();
        let values = (0..h * w)
            .map(|i| (0..c).map(|ch| img.values()[ch * h * w + i]).sum::<f32>() / c as f32 > 0.0)
            .collect();
        Self::new(h, w, values).expect("sizes match")
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn weights(&self) -> &[f32] {
        &self.values
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Gaussian-softened copy; `radius` 0 leaves the mask unchanged.
    pub fn feathered(&self, radius: usize) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let sigma = radius as f32 / 2.0;
        let taps: Vec<f32> = (-(radius as i64)..=radius as i64)
            .map(|d| (-(d * d) as f32 / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f32 = taps.iter().sum();
        let (h, w) = (self.height as i64, self.width as i64);
        let blur = |src: &[f32], horizontal: bool| -> Vec<f32> {
            let mut out = vec![0.0; src.len()];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (t, wt) in taps.iter().enumerate() {
                        let d = t as i64 - radius as i64;
                        let (yy, xx) = if horizontal { (y, (x + d).clamp(0, w - 1)) } else { ((y + d).clamp(0, h - 1), x) };
                        acc += wt * src[(yy * w + xx) as usize];
                    }
                    out[(y * w + x) as usize] = acc / total;
                }
            }
            out
        };
        let values = blur(&blur(&self.values, true), false);
        Self {
            values,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct InjectionRequest {
    pub input: ImageField,
    pub scale_n: usize,
    /// Adds `σₙ` noise at every traversed scale; off gives the
    /// reconstruction-style deterministic path.
    pub add_noise: bool,
    pub blend_mask: Option<Mask>,
    pub seed: u64,
}

impl InjectionRequest {
    pub fn new(input: ImageField, scale_n: usize) -> Self {
        Self {
            input,
            scale_n,
            add_noise: true,
            blend_mask: None,
            seed: 0,
        }
    }
}

/// `mask·generated + (1 − mask)·original`, per pixel and channel.
pub fn blend(generated: &ImageField, original: &ImageField, mask: &Mask) -> Result<ImageField> {
    if generated.dims() != original.dims() || generated.channels() != original.channels() {
        return Err(Error::Shape("blend inputs differ in shape".into()));
    }
    if mask.dims() != generated.dims() {
        return Err(Error::Shape(format!(
            "mask is {:?}, image is {:?}",
            mask.dims(),
            generated.dims()
        )));
    }
    let plane = mask.values.len();
    let values = generated
        .values()
        .iter()
        .zip(original.values())
        .enumerate()
        .map(|(i, (&g, &o))| {
            let m = mask.values[i % plane];
            if m == 1.0 {
                g
            } else if m == 0.0 {
                o
            } else {
                m * g + (1.0 - m) * o
            }
        })
        .collect();
    ImageField::new(generated.channels(), generated.dims().0, generated.dims().1, values)
}

/// Feeds `req.input`, resized to level `n`, to `G_n` and runs down to the
/// finest scale. With a mask, the result is composited over the input at
/// finest resolution.
pub fn inject(stack: &GeneratorStack, req: &InjectionRequest) -> Result<ImageField> {
    let n = req.scale_n;
    if n >= stack.coarsest() {
        return Err(invalid(format!(
            "injection scale {n} must be below the coarsest scale {}",
            stack.coarsest()
        )));
    }
    if req.input.channels() != stack.channels() {
        return Err(Error::Shape(format!(
            "{}-channel input for a {}-channel model",
            req.input.channels(),
            stack.channels()
        )));
    }
    let levels = stack.schedule.levels.clone();
    if let Some(mask) = &req.blend_mask {
        if mask.dims() != levels[0] {
            return Err(Error::Shape(format!(
                "mask is {:?}, finest scale is {:?}",
                mask.dims(),
                levels[0]
            )));
        }
    }
    let mode = stack.config.padding_mode;
    let start = resize(&req.input, levels[n])?;
    let out = stack.chain(&levels, mode).run(
        n,
        0,
        Some(start.tensor()),
        &mut |k, dims| {
            let nd = mode.noise_dims(dims);
            Ok(if req.add_noise {
                NoiseMap::gaussian(stack.channels(), nd, stack.sigmas[k], &mut rng::stream(req.seed, Purpose::Injection, 0, k))
            } else {
                NoiseMap::zeros(stack.channels(), nd)
            })
        },
        None,
    )?;
    let out = ImageField::from_tensor_clamped(&out)?;
    match &req.blend_mask {
        None => Ok(out),
        Some(mask) => blend(&out, &resize(&req.input, levels[0])?, mask),
    }
}

/// Injection with a blend mask around the pasted object.
pub fn harmonize(stack: &GeneratorStack, composite: &ImageField, mask: &Mask, scale: usize, seed: u64) -> Result<ImageField> {
    inject(
        stack,
        &InjectionRequest {
            blend_mask: Some(mask.clone()),
            seed,
            ..InjectionRequest::new(composite.clone(), scale)
        },
    )
}

/// Same mechanics as [`harmonize`], for copy-pasted edits.
pub fn edit(stack: &GeneratorStack, composite: &ImageField, mask: &Mask, scale: usize, seed: u64) -> Result<ImageField> {
    harmonize(stack, composite, mask, scale, seed)
}

/// Injection of a clipart painting without blending.
pub fn paint_to_image(stack: &GeneratorStack, clipart: &ImageField, scale: usize, seed: u64) -> Result<ImageField> {
    inject(
        stack,
        &InjectionRequest {
            seed,
            ..InjectionRequest::new(clipart.clone(), scale)
        },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperResConfig {
    pub s: u32,
    pub k: usize,
    pub alpha_rec: f64,
}

/// `k` minimizing `|s^(1/k) − 4/3|`, ties toward the smaller `k`.
pub fn choose_sr_steps(s: u32) -> Result<usize> {
    if s < 1 {
        return Err(invalid("upscale factor must be at least 1"));
    }
    let err = |k: usize| ((s as f64).powf(1.0 / k as f64) - 4.0 / 3.0).abs();
    Ok((1..=64).fold(1, |best, k| if err(k) < err(best) { k } else { best }))
}

impl SuperResConfig {
    pub fn new(s: u32) -> Result<Self> {
        Ok(Self {
            s,
            k: choose_sr_steps(s)?,
            alpha_rec: crate::training::TrainMode::SuperResolution.alpha_rec(),
        })
    }

    pub fn r(&self) -> f64 {
        (self.s as f64).powf(1.0 / self.k as f64)
    }

    /// Dims after each round: `round(dims · rⁱ)`, the last forced to `s·dims`.
    pub fn round_dims(&self, dims: (usize, usize)) -> Vec<(usize, usize)> {
        let r = self.r();
        (1..=self.k)
            .map(|i| {
                if i == self.k {
                    (dims.0 * self.s as usize, dims.1 * self.s as usize)
                } else {
                    let f = r.powi(i as i32);
                    ((dims.0 as f64 * f).round() as usize, (dims.1 as f64 * f).round() as usize)
                }
            })
            .collect()
    }

    /// Training config for the low-resolution image: `α = 100` and pyramid
    /// factor `r` (the default search when `s = 1`).
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = TrainConfig::super_resolution(self.r());
        if self.s == 1 {
            cfg.scale_factor = None;
        }
        TrainConfig {
            iters_per_scale: base.iters_per_scale,
            lr_decay_at: base.lr_decay_at,
            seed: base.seed,
            schedule: base.schedule.clone(),
            padding_mode: base.padding_mode,
            base_kernels: base.base_kernels,
            ..cfg
        }
    }
}

/// Trains a super-resolution stack on the low-resolution image itself.
pub fn train_super_resolution(lr_image: &ImageField, cfg: &SuperResConfig, base: &TrainConfig) -> Result<GeneratorStack> {
    train_pyramid(lr_image, &cfg.train_config(base))
}

/// `k` rounds of: upsample by `r`, refine with `G_0` plus `σ_0` noise.
pub fn super_resolve(lr_image: &ImageField, cfg: &SuperResConfig, stack: &GeneratorStack, seed: u64) -> Result<ImageField> {
    if cfg.s < 1 || cfg.k < 1 {
        return Err(invalid("super-resolution needs s >= 1 and k >= 1"));
    }
    if stack.config.alpha_rec != cfg.alpha_rec {
        return Err(Error::Config(format!(
            "stack was trained with alpha_rec {}, super-resolution needs {}",
            stack.config.alpha_rec, cfg.alpha_rec
        )));
    }
    if lr_image.channels() != stack.channels() {
        return Err(Error::Shape("image and model channel counts differ".into()));
    }
    let mode = stack.config.padding_mode;
    let g0 = &stack.generators[0];
    let mut x = lr_image.clone();
    let dims = if cfg.s == 1 { vec![lr_image.dims()] } else { cfg.round_dims(lr_image.dims()) };
    for (i, &d) in dims.iter().enumerate() {
        let up = resize(&x, d)?;
        let z = NoiseMap::gaussian(
            stack.channels(),
            mode.noise_dims(d),
            stack.sigmas[0],
            &mut rng::stream(seed, Purpose::SuperResolution, 0, i),
        );
        x = ImageField::from_tensor_clamped(&generator_forward(g0, &z, up.tensor(), mode)?)?;
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnimationParams {
    /// Pull toward `z_rec`.
    pub alpha: f64,
    /// Velocity smoothing.
    pub beta: f64,
    pub start_scale: usize,
    pub frames: usize,
    pub fps: u32,
    pub seed: u64,
}

impl AnimationParams {
    pub fn validate(&self, stack: &GeneratorStack) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(invalid(format!(
                "alpha {} and beta {} must lie in [0, 1]",
                self.alpha, self.beta
            )));
        }
        if self.start_scale > stack.coarsest() {
            return Err(invalid(format!(
                "start scale {} outside 0..={}",
                self.start_scale,
                stack.coarsest()
            )));
        }
        if self.frames == 0 || self.fps == 0 {
            return Err(invalid("frames and fps must be positive"));
        }
        Ok(())
    }
}

/// The noise walk of one scale:
/// `z(t+1) = α z_rec + (1 − α)(z(t) + d(t+1))`, `d(t+1) = β(z(t) − z(t−1)) + (1 − β)u(t)`
/// with `z(0) = z(−1) = z_rec`.
#[derive(Clone, Debug)]
pub struct NoiseWalk {
    z_rec: Vec<f32>,
    z: Vec<f32>,
    z_prev: Vec<f32>,
    alpha: f32,
    beta: f32,
}

impl NoiseWalk {
    pub fn new(z_rec: Vec<f32>, alpha: f64, beta: f64) -> Self {
        Self {
            z: z_rec.clone(),
            z_prev: z_rec.clone(),
            z_rec,
            alpha: alpha as f32,
            beta: beta as f32,
        }
    }

    pub fn current(&self) -> &[f32] {
        &self.z
    }

    /// Advances one step with innovation `u`.
    pub fn step(&mut self, u: &[f32]) {
        let (a, b) = (self.alpha, self.beta);
        let next: Vec<f32> = (0..self.z.len())
            .map(|i| {
                let diff = b * (self.z[i] - self.z_prev[i]) + (1.0 - b) * u[i];
                a * self.z_rec[i] + (1.0 - a) * (self.z[i] + diff)
            })
            .collect();
        self.z_prev = std::mem::replace(&mut self.z, next);
    }
}

/// Frames from random walks in noise space at scales `≤ start_scale`;
/// coarser scales keep `z_rec`. Runs in noise-padding mode. Frame 0 is the
/// reconstruction.
pub fn animate(stack: &GeneratorStack, p: &AnimationParams) -> Result<Vec<ImageField>> {
    p.validate(stack)?;
    let mode = PaddingMode::NoisePad;
    let levels = stack.schedule.levels.clone();
    let c = stack.channels();
    let mut walks: Vec<Option<NoiseWalk>> = (0..stack.num_scales())
        .map(|n| {
            (n <= p.start_scale).then(|| {
                let z_rec = stack.reconstruction_noise(n, levels[n], mode).values.into_vec();
                NoiseWalk::new(z_rec, p.alpha, p.beta)
            })
        })
        .collect();
    let chain = stack.chain(&levels, mode);
    let mut frames = Vec::with_capacity(p.frames);
    for t in 0..p.frames {
        if t > 0 {
            for (n, walk) in walks.iter_mut().enumerate() {
                if let Some(w) = walk {
                    let nd = mode.noise_dims(levels[n]);
                    let u = NoiseMap::gaussian(c, nd, stack.sigmas[n], &mut rng::stream(p.seed, Purpose::Animation, t as u64, n));
                    w.step(u.values.data());
                }
            }
        }
        let out = chain.run(
            stack.coarsest(),
            0,
            None,
            &mut |n, dims| {
                Ok(match &walks[n] {
                    Some(w) => {
                        let nd = mode.noise_dims(dims);
                        NoiseMap {
                            values: Tensor::from_vec([1, c, nd.0, nd.1], w.current().to_vec()),
                            std: stack.sigmas[n],
                        }
                    }
                    None => stack.reconstruction_noise(n, dims, mode),
                })
            },
            None,
        )?;
        frames.push(ImageField::from_tensor_clamped(&out)?);
    }
    Ok(frames)
}

/// Writes `prefix_0000.png, …` into `dir`.
pub fn write_png_sequence(frames: &[ImageField], dir: impl AsRef<Path>, prefix: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir.as_ref())?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.as_ref().join(format!("{prefix}_{i:04}.png"));
            f.save(&path)?;
            Ok(path)
        })
        .collect()
}

/// Encodes the frames as a looping GIF.
pub fn encode_gif(frames: &[ImageField], fps: u32) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut enc = GifEncoder::new(&mut buf);
        enc.set_repeat(Repeat::Infinite)?;
        let delay = Delay::from_numer_denom_ms(1000, fps.max(1));
        for f in frames {
            enc.encode_frame(Frame::from_parts(f.to_dynamic().to_rgba8(), 0, 0, delay))?;
        }
    }
    Ok(buf)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionPreset {
    pub injection_scale: usize,
    /// Index of the coarsest scale `N` of the published model.
    pub total_scales: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnimationPreset {
    pub start_scale: usize,
    /// Coarsest scale index `N`, as for [`InjectionPreset`].
    pub total_scales: usize,
    pub alpha: f64,
    pub beta: f64,
}

/// Per-image settings of the published results, keyed by task then image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetRegistry {
    pub harmonization: BTreeMap<String, InjectionPreset>,
    pub editing: BTreeMap<String, InjectionPreset>,
    pub paint_to_image: BTreeMap<String, InjectionPreset>,
    pub animation: BTreeMap<String, AnimationPreset>,
}

pub const PRESETS_JSON: &str = include_str!("../presets/presets.json");

pub fn presets() -> &'static PresetRegistry {
    static REGISTRY: OnceLock<PresetRegistry> = OnceLock::new();
    REGISTRY.get_or_init(|| serde_json::from_str(PRESETS_JSON).expect("bundled presets parse"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(c: usize, h: usize, w: usize, seed: usize) -> ImageField {
        ImageField::new(c, h, w, (0..c * h * w).map(|i| (((i * 31 + seed * 17) % 97) as f32 / 48.5) - 1.0).collect()).unwrap()
    }

    #[test]
    fn blend_respects_mask_exactly() {
        let (g, o) = (field(3, 4, 5, 1), field(3, 4, 5, 2));
        let bits: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
        let out = blend(&g, &o, &Mask::new(4, 5, bits.clone()).unwrap()).unwrap();
        for c in 0..3 {
            for i in 0..20 {
                let v = out.values()[c * 20 + i];
                let want = if bits[i] { g.values()[c * 20 + i] } else { o.values()[c * 20 + i] };
                assert_eq!(v.to_bits(), want.to_bits());
            }
        }
        assert!(blend(&g, &o, &Mask::full(4, 5, false)).unwrap().bitwise_eq(&o));
        assert!(blend(&g, &o, &Mask::full(4, 5, true)).unwrap().bitwise_eq(&g));
    }

    #[test]
    fn feathering_softens_edges_only() {
        let bits: Vec<bool> = (0..100).map(|i| i % 10 >= 5).collect();
        let m = Mask::new(10, 10, bits).unwrap();
        assert_eq!(m.feathered(0), m);
        let f = m.feathered(2);
        assert!(f.weights()[0] < 1e-3 && f.weights()[9] > 0.999);
        assert!(f.weights()[5] > 0.5 && f.weights()[5] < 1.0);
    }

    #[test]
    fn sr_step_choice() {
        assert_eq!(choose_sr_steps(1).unwrap(), 1);
        assert_eq!(choose_sr_steps(2).unwrap(), 3);
        assert_eq!(choose_sr_steps(4).unwrap(), 5);
        assert!(choose_sr_steps(0).is_err());
        let cfg = SuperResConfig::new(4).unwrap();
        assert!((cfg.r() - 1.3195).abs() < 1e-4);
        assert_eq!(cfg.alpha_rec, 100.0);
        assert_eq!(*cfg.round_dims((50, 50)).last().unwrap(), (200, 200));
        assert!((SuperResConfig::new(2).unwrap().r() - 1.2599).abs() < 1e-4);
    }

    #[test]
    fn sr_dims_are_exact_multiples() {
        for s in [2u32, 3, 4] {
            let cfg = SuperResConfig::new(s).unwrap();
            for d in [(50, 50), (33, 47), (17, 80)] {
                let rounds = cfg.round_dims(d);
                assert_eq!(rounds.len(), cfg.k);
                assert_eq!(*rounds.last().unwrap(), (d.0 * s as usize, d.1 * s as usize));
            }
        }
    }

    #[test]
    fn walk_with_full_pull_stays_at_rec() {
        let z_rec = vec![0.3, -0.2, 0.0];
        let mut w = NoiseWalk::new(z_rec.clone(), 1.0, 0.5);
        for _ in 0..10 {
            w.step(&[5.0, -5.0, 1.0]);
            assert_eq!(w.current(), &z_rec[..]);
        }
    }

    #[test]
    fn walk_without_innovation_weight_is_frozen() {
        // α = 0, β = 1: d(t+1) = z(t) − z(t−1) = 0 from z(−1) = z(0).
        let z_rec = vec![0.7, -0.1];
        let mut w = NoiseWalk::new(z_rec.clone(), 0.0, 1.0);
        for _ in 0..50 {
            w.step(&[1.0, 1.0]);
        }
        assert_eq!(w.current(), &z_rec[..]);
    }

    #[test]
    fn walk_mean_is_pulled_to_rec() {
        // Constant innovation 0 from an offset start: the drift from z_rec
        // must contract for every α in (0, 1].
        for alpha in [0.02, 0.1, 0.2, 0.5, 1.0] {
            let mut w = NoiseWalk::new(vec![0.0], alpha, 0.6);
            w.z = vec![1.0];
            w.z_prev = vec![1.0];
            let early = w.current()[0].abs();
            for _ in 0..200 {
                w.step(&[0.0]);
            }
            assert!(w.current()[0].abs() < early * 0.5, "alpha {alpha}");
        }
    }

    #[test]
    fn presets_mirror_tables() {
        let p = presets();
        assert_eq!(p.harmonization.len(), 11);
        assert_eq!(p.editing.len(), 7);
        assert_eq!(p.paint_to_image.len(), 9);
        assert_eq!(p.animation.len(), 10);
        assert_eq!(p.harmonization["Tree"], InjectionPreset { injection_scale: 1, total_scales: 9 });
        assert_eq!(p.editing["Rock3"], InjectionPreset { injection_scale: 5, total_scales: 7 });
        assert_eq!(p.paint_to_image["Balloons1"], InjectionPreset { injection_scale: 7, total_scales: 9 });
        let fire = p.animation["Fire1"];
        assert_eq!((fire.start_scale, fire.total_scales, fire.alpha, fire.beta), (8, 8, 0.2, 0.6));
        for table in [&p.harmonization, &p.editing, &p.paint_to_image] {
            assert!(table.values().all(|e| e.injection_scale < e.total_scales));
        }
        assert!(p.animation.values().all(|a| a.start_scale <= a.total_scales));
    }

    #[test]
    fn gif_has_every_frame() {
        let frames = vec![field(3, 6, 6, 1), field(3, 6, 6, 2), field(3, 6, 6, 3)];
        let bytes = encode_gif(&frames, 10).unwrap();
        assert_eq!(&bytes[..6], b"GIF89a");
        use image::AnimationDecoder;
        let dec = image::codecs::gif::GifDecoder::new(std::io::Cursor::new(bytes)).unwrap();
        assert_eq!(dec.into_frames().count(), 3);
    }
}
