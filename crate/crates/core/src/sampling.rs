//! Generation from a trained stack: random samples from any start scale,
//! arbitrary output dims, the reconstruction path and diversity statistics.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::imaging::{resize, ImageField};
use crate::netspec::{receptive_field, NoiseMap, NoiseMapSet, PaddingMode, KERNEL, NUM_LAYERS};
use crate::rng::{self, Purpose};
use crate::training::GeneratorStack;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    /// Scale at which randomness starts; `N` samples from scratch.
    pub start_scale: usize,
    /// Finest-level `(height, width)`; `None` keeps the training dims.
    pub output_dims: Option<(usize, usize)>,
    pub padding_mode: PaddingMode,
    pub seed: u64,
    pub count: usize,
}

impl SampleRequest {
    /// One sample from the coarsest scale at training dims.
    pub fn from_coarsest(stack: &GeneratorStack) -> Self {
        Self {
            start_scale: stack.coarsest(),
            output_dims: None,
            padding_mode: PaddingMode::InputZero,
            seed: 0,
            count: 1,
        }
    }
}

/// Per-level dims for a finest-level size, `round(dims / rⁿ)`, each at
/// least the receptive field.
pub fn level_dims(stack: &GeneratorStack, output_dims: Option<(usize, usize)>) -> Result<Vec<(usize, usize)>> {
    let levels = match output_dims {
        None => stack.schedule.levels.clone(),
        Some(d) => {
            if d.0 == 0 || d.1 == 0 {
                return Err(invalid(format!("output dims must be positive, got {}x{}", d.0, d.1)));
            }
            stack.schedule.levels_for(d)
        }
    };
    let rf = receptive_field(NUM_LAYERS, KERNEL);
    if let Some((n, d)) = levels.iter().enumerate().find(|(_, d)| d.0 < rf || d.1 < rf) {
        return Err(invalid(format!(
            "scale {n} would be {}x{}, below the {rf}x{rf} receptive field",
            d.0, d.1
        )));
    }
    Ok(levels)
}

fn check_start(stack: &GeneratorStack, start_scale: usize) -> Result<()> {
    if start_scale > stack.coarsest() {
        return Err(invalid(format!(
            "start scale {start_scale} outside 0..={}",
            stack.coarsest()
        )));
    }
    Ok(())
}

/// Random draws for scales `≤ start_scale`. Below `N`, the pipeline starts
/// from the downsampled training image at scale `start_scale + 1`.
pub fn generate(stack: &GeneratorStack, req: &SampleRequest) -> Result<Vec<ImageField>> {
    check_start(stack, req.start_scale)?;
    if req.count == 0 {
        return Err(invalid("count must be at least 1"));
    }
    let levels = level_dims(stack, req.output_dims)?;
    let chain = stack.chain(&levels, req.padding_mode);
    let start = req.start_scale;
    let seeded = if start < stack.coarsest() {
        Some(resize(stack.training_image(), levels[start + 1])?.tensor().clone())
    } else {
        None
    };
    (0..req.count)
        .map(|k| {
            let out = chain.run(
                start,
                0,
                seeded.as_ref(),
                &mut |n, dims| {
                    let mut r = rng::stream(req.seed, Purpose::Sampling, k as u64, n);
                    Ok(NoiseMap::gaussian(
                        stack.channels(),
                        req.padding_mode.noise_dims(dims),
                        stack.sigmas[n],
                        &mut r,
                    ))
                },
                None,
            )?;
            ImageField::from_tensor_clamped(&out)
        })
        .collect()
}

/// The set `{z*, 0, …, 0}` for the given level dims.
pub fn reconstruction_noise(stack: &GeneratorStack, levels: &[(usize, usize)], mode: PaddingMode) -> NoiseMapSet {
    NoiseMapSet {
        maps: levels
            .iter()
            .enumerate()
            .map(|(n, &d)| stack.reconstruction_noise(n, d, mode))
            .collect(),
        reconstruction: true,
    }
}

/// Runs the full pyramid with explicit noise maps, one per scale.
pub fn generate_with_noise(stack: &GeneratorStack, noise: &NoiseMapSet, mode: PaddingMode) -> Result<ImageField> {
    if noise.maps.len() != stack.num_scales() {
        return Err(Error::Shape(format!(
            "{} noise maps for {} scales",
            noise.maps.len(),
            stack.num_scales()
        )));
    }
    let levels: Vec<(usize, usize)> = noise
        .maps
        .iter()
        .map(|m| {
            let (h, w) = m.dims();
            let (nh, nw) = mode.noise_dims((0, 0));
            (h - nh, w - nw)
        })
        .collect();
    let chain = stack.chain(&levels, mode);
    let out = chain.run(
        stack.coarsest(),
        0,
        None,
        &mut |n, _| Ok(noise.maps[n].clone()),
        None,
    )?;
    ImageField::from_tensor_clamped(&out)
}

/// The reconstruction path in the stack's training padding mode.
pub fn reconstruct(stack: &GeneratorStack) -> Result<ImageField> {
    let mode = stack.config.padding_mode;
    generate_with_noise(stack, &reconstruction_noise(stack, &stack.schedule.levels, mode), mode)
}

/// Population std of each sample position over `samples`.
pub fn pixel_std_map(samples: &[ImageField]) -> Result<Vec<f64>> {
    let first = samples.first().ok_or_else(|| invalid("no samples"))?;
    if samples.iter().any(|s| s.dims() != first.dims() || s.channels() != first.channels()) {
        return Err(Error::Shape("samples differ in shape".into()));
    }
    let count = samples.len() as f64;
    Ok((0..first.values().len())
        .map(|i| {
            let mean = samples.iter().map(|s| s.values()[i] as f64).sum::<f64>() / count;
            let var = samples
                .iter()
                .map(|s| (s.values()[i] as f64 - mean).powi(2))
                .sum::<f64>()
                / count;
            var.sqrt()
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct DiversityMap {
    /// `C × H × W` per-pixel std, channel-major.
    pub std_map: Vec<f64>,
    pub channels: usize,
    pub dims: (usize, usize),
    /// Mean of the map over the std of the training image.
    pub normalized: f64,
}

/// Per-pixel std over `count` samples from `start_scale`.
pub fn diversity_map(
    stack: &GeneratorStack,
    start_scale: usize,
    count: usize,
    seed: u64,
    mode: PaddingMode,
) -> Result<DiversityMap> {
    if count < 2 {
        return Err(invalid("diversity needs at least 2 samples"));
    }
    let samples = generate(
        stack,
        &SampleRequest {
            start_scale,
            output_dims: None,
            padding_mode: mode,
            seed,
            count,
        },
    )?;
    let std_map = pixel_std_map(&samples)?;
    let mean = std_map.iter().sum::<f64>() / std_map.len() as f64;
    let train_std = stack.training_image().std() as f64;
    Ok(DiversityMap {
        std_map,
        channels: samples[0].channels(),
        dims: samples[0].dims(),
        normalized: if train_std > 0.0 { mean / train_std } else { 0.0 },
    })
}

/// Mean per-pixel std over the four 5×5 corner windows of `count` samples
/// drawn from the coarsest scale.
pub fn corner_variability(stack: &GeneratorStack, mode: PaddingMode, count: usize, seed: u64) -> Result<f64> {
    let d = diversity_map(stack, stack.coarsest(), count, seed, mode)?;
    Ok(corner_mean(&d.std_map, d.channels, d.dims, 5))
}

pub(crate) fn corner_mean(map: &[f64], channels: usize, (h, w): (usize, usize), k: usize) -> f64 {
    let k = k.min(h).min(w);
    let (mut sum, mut n) = (0.0, 0usize);
    for c in 0..channels {
        for &(y0, x0) in &[(0, 0), (0, w - k), (h - k, 0), (h - k, w - k)] {
            for y in y0..y0 + k {
                for x in x0..x0 + k {
                    sum += map[(c * h + y) * w + x];
                    n += 1;
                }
            }
        }
    }
    sum / n as f64
}

/// SHA-256 of the 8-bit encodings of `images`, in order.
pub fn samples_digest(images: &[ImageField]) -> String {
    let mut h = Sha256::new();
    for img in images {
        h.update((img.height() as u32).to_le_bytes());
        h.update((img.width() as u32).to_le_bytes());
        h.update(img.to_bytes());
    }
    hex::encode(h.finalize())
}
