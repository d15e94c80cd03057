//! Generator and discriminator architectures and their forward passes.
//!
//! Both nets are a chain of five 3×3 stride-1 convolutions: four
//! Conv-BatchNorm-LeakyReLU blocks followed by a head convolution. The
//! generator's head maps to image channels through `tanh` and its output is a
//! residual added to the upsampled coarser image; the discriminator's head
//! maps to one channel with no activation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use singan_autodiff::ops::{self, BatchStats};
use singan_autodiff::{no_grad, Conv2dGeometry, Element, Tensor, Var};

use crate::error::{invalid, Error, Result};
use crate::imaging::ImageField;

pub const KERNEL: usize = 3;
pub const NUM_LAYERS: usize = 5;
pub const NEGATIVE_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BASE_KERNELS: usize = 32;
pub const MAX_KERNELS: usize = 128;

/// Side length of the input patch that influences one output unit.
pub fn receptive_field(num_layers: usize, kernel: usize) -> usize {
    1 + num_layers * (kernel - 1)
}

/// Zero padding per side that keeps a full net's output at input size.
pub fn half_receptive_field() -> usize {
    receptive_field(NUM_LAYERS, KERNEL) / 2
}

/// Kernels per block at scale `i` counted from the coarsest scale.
pub fn kernels_for_scale(i: usize, base: usize) -> usize {
    let doubled = base.saturating_mul(1usize.checked_shl((i / 4) as u32).unwrap_or(usize::MAX));
    doubled.min(base * (MAX_KERNELS / BASE_KERNELS))
}

/// How a generator deals with image borders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingMode {
    /// Zero padding inside every convolution.
    LayerZero,
    /// Image and noise zero-padded once by half the receptive field.
    InputZero,
    /// Image zero-padded, noise drawn larger to cover the margin.
    NoisePad,
}

impl PaddingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PaddingMode::LayerZero => "layer_zero",
            PaddingMode::InputZero => "input_zero",
            PaddingMode::NoisePad => "noise_pad",
        }
    }

    /// Noise map dims for an image level of `dims`.
    pub fn noise_dims(&self, dims: (usize, usize)) -> (usize, usize) {
        match self {
            PaddingMode::NoisePad => {
                let p = 2 * half_receptive_field();
                (dims.0 + p, dims.1 + p)
            }
            _ => dims,
        }
    }

    fn conv_pad(&self) -> usize {
        match self {
            PaddingMode::LayerZero => KERNEL / 2,
            _ => 0,
        }
    }
}

impl std::str::FromStr for PaddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layer" | "layer_zero" => Ok(PaddingMode::LayerZero),
            "input" | "input_zero" => Ok(PaddingMode::InputZero),
            "noise" | "noise_pad" => Ok(PaddingMode::NoisePad),
            other => Err(Error::Config(format!("unknown padding mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Tanh,
    Linear,
}

/// Shape of a plain conv chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernels: usize,
    /// Convolutions including the head.
    pub num_layers: usize,
    pub head: Head,
}

#[derive(Clone, Debug)]
pub struct Norm<E: Element> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    /// Statistics used in inference mode.
    pub stats: BatchStats<E>,
}

#[derive(Clone, Debug)]
pub struct ConvLayer<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
    pub norm: Option<Norm<E>>,
}

/// Which statistics batch normalization uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Statistics of the current input.
    Batch,
    /// Stored statistics.
    Frozen,
}

/// Weights of a conv chain; the last layer is the head.
#[derive(Clone, Debug)]
pub struct Net<E: Element> {
    pub spec: NetSpec,
    pub layers: Vec<ConvLayer<E>>,
}

impl<E: Element> Net<E> {
    /// Conv weights `N(0, 0.02)`, biases zero, BN scales `N(1, 0.02)`.
    pub fn random(spec: NetSpec, rng: &mut impl Rng) -> Self {
        assert!(spec.num_layers >= 1, "a net needs at least one layer");
        let normal = Normal::new(0.0f64, 0.02).expect("valid normal");
        let mut draw = |n: usize, offset: f64| -> Vec<E> {
            (0..n).map(|_| E::of(offset + normal.sample(rng))).collect()
        };
        let layers = (0..spec.num_layers)
            .map(|i| {
                let is_head = i + 1 == spec.num_layers;
                let cin = if i == 0 { spec.in_channels } else { spec.kernels };
                let cout = if is_head { spec.out_channels } else { spec.kernels };
                let weight = Tensor::from_vec([cout, cin, KERNEL, KERNEL], draw(cout * cin * KERNEL * KERNEL, 0.0));
                let norm = (!is_head).then(|| Norm {
                    gamma: Tensor::from_vec([cout], draw(cout, 1.0)),
                    beta: Tensor::zeros([cout]),
                    stats: BatchStats {
                        mean: Tensor::zeros([cout]),
                        var: Tensor::ones([cout]),
                    },
                });
                ConvLayer {
                    weight,
                    bias: Tensor::zeros([cout]),
                    norm,
                }
            })
            .collect();
        Net { spec, layers }
    }

    pub fn params(&self) -> Vec<&Tensor<E>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
            if let Some(n) = &l.norm {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<E>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(n) = &mut l.norm {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out
    }

    /// Leaf variables for every parameter, in [`Net::params`] order.
    pub fn param_vars(&self, trainable: bool) -> Vec<Var<E>> {
        self.params()
            .into_iter()
            .map(|t| if trainable { Var::param(t.clone()) } else { Var::constant(t.clone()) })
            .collect()
    }

    pub fn set_norm_stats(&mut self, stats: Vec<BatchStats<E>>) {
        let norms = self.layers.iter_mut().filter_map(|l| l.norm.as_mut());
        for (n, s) in norms.zip(stats) {
            n.stats = s;
        }
    }

    pub fn cast<F: Element>(&self) -> Net<F> {
        Net {
            spec: self.spec,
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                    norm: l.norm.as_ref().map(|n| Norm {
                        gamma: n.gamma.cast(),
                        beta: n.beta.cast(),
                        stats: BatchStats {
                            mean: n.stats.mean.cast(),
                            var: n.stats.var.cast(),
                        },
                    }),
                })
                .collect(),
        }
    }

    /// Sets every weight of the chain to zero, keeping shapes.
    pub fn zero_weights(&mut self) {
        for p in self.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = E::zero());
        }
    }

    /// Runs the chain on `x` with parameters `vars` (from [`Net::param_vars`]).
    /// Returns the head output and the batch statistics of each normalized layer.
    pub fn forward(
        &self,
        x: &Var<E>,
        vars: &[Var<E>],
        norm_mode: NormMode,
        conv_pad: usize,
    ) -> (Var<E>, Vec<BatchStats<E>>) {
        let geom = Conv2dGeometry::new(conv_pad, 1);
        let eps = E::of(BN_EPS);
        let slope = E::of(NEGATIVE_SLOPE);
        let mut vars = vars.iter();
        let mut next = || vars.next().expect("parameter list too short").clone();
        let mut h = x.clone();
        let mut stats = Vec::new();
        for layer in &self.layers {
            let (w, b) = (next(), next());
            h = ops::add_bias(&ops::conv2d(&h, &w, geom), &b);
            match &layer.norm {
                Some(norm) => {
                    let (gamma, beta) = (next(), next());
                    h = match norm_mode {
                        NormMode::Batch => {
                            let (y, s) = ops::batch_norm_train(&h, &gamma, &beta, eps);
                            stats.push(s);
                            y
                        }
                        NormMode::Frozen => ops::batch_norm_eval(&h, &gamma, &beta, &norm.stats, eps),
                    };
                    h = ops::leaky_relu(&h, slope);
                }
                None => {
                    if self.spec.head == Head::Tanh {
                        h = ops::tanh(&h);
                    }
                }
            }
        }
        (h, stats)
    }

    /// Inference-mode forward with constant parameters.
    pub fn infer(&self, x: &Tensor<E>, conv_pad: usize) -> Tensor<E> {
        no_grad(|| {
            let vars = self.param_vars(false);
            self.forward(&Var::constant(x.clone()), &vars, NormMode::Frozen, conv_pad)
                .0
                .value()
                .clone()
        })
    }
}

impl Net<f32> {
    /// Every tensor that defines the net's output: parameters, then the
    /// stored normalization statistics.
    pub fn state_tensors(&self) -> Vec<&Tensor<f32>> {
        let mut out = self.params();
        for n in self.layers.iter().filter_map(|l| l.norm.as_ref()) {
            out.push(&n.stats.mean);
            out.push(&n.stats.var);
        }
        out
    }

    /// Names matching [`Net::state_tensors`].
    pub fn state_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push(format!("layers.{i}.weight"));
            out.push(format!("layers.{i}.bias"));
            if l.norm.is_some() {
                out.push(format!("layers.{i}.gamma"));
                out.push(format!("layers.{i}.beta"));
            }
        }
        for (i, _) in self.layers.iter().enumerate().filter(|(_, l)| l.norm.is_some()) {
            out.push(format!("layers.{i}.running_mean"));
            out.push(format!("layers.{i}.running_var"));
        }
        out
    }

    /// Replaces every state tensor, in [`Net::state_tensors`] order; shapes
    /// must match.
    pub fn load_state(&mut self, tensors: Vec<Tensor<f32>>) -> Result<()> {
        let expected: Vec<Vec<usize>> = self.state_tensors().iter().map(|t| t.dims().to_vec()).collect();
        if tensors.len() != expected.len() {
            return Err(Error::Shape(format!("{} state tensors for a net with {}", tensors.len(), expected.len())));
        }
        if let Some((i, t)) = tensors.iter().enumerate().find(|(i, t)| t.dims() != expected[*i].as_slice()) {
            return Err(Error::Shape(format!("state tensor {i} has shape {:?}, expected {:?}", t.dims(), expected[i])));
        }
        let mut it = tensors.into_iter();
        for p in self.params_mut() {
            *p = it.next().expect("counted");
        }
        for n in self.layers.iter_mut().filter_map(|l| l.norm.as_mut()) {
            n.stats.mean = it.next().expect("counted");
            n.stats.var = it.next().expect("counted");
        }
        Ok(())
    }

    /// SHA-256 of [`Net::state_tensors`] as little-endian bytes.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for t in self.state_tensors() {
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Architecture of the generator at one scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub scale_index_from_coarse: usize,
    pub kernels_per_block: usize,
    pub channels: usize,
    pub padding_mode: PaddingMode,
}

impl GeneratorSpec {
    pub fn new(scale_index_from_coarse: usize, base_kernels: usize, channels: usize, padding_mode: PaddingMode) -> Self {
        Self {
            scale_index_from_coarse,
            kernels_per_block: kernels_for_scale(scale_index_from_coarse, base_kernels),
            channels,
            padding_mode,
        }
    }

    pub fn net_spec(&self) -> NetSpec {
        NetSpec {
            in_channels: self.channels,
            out_channels: self.channels,
            kernels: self.kernels_per_block,
            num_layers: NUM_LAYERS,
            head: Head::Tanh,
        }
    }
}

/// Architecture of the patch discriminator at one scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub kernels_per_block: usize,
    pub channels: usize,
}

impl DiscriminatorSpec {
    pub fn net_spec(&self) -> NetSpec {
        NetSpec {
            in_channels: self.channels,
            out_channels: 1,
            kernels: self.kernels_per_block,
            num_layers: NUM_LAYERS,
            head: Head::Linear,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub spec: GeneratorSpec,
    pub net: Net<f32>,
}

impl Generator {
    pub fn random(spec: GeneratorSpec, rng: &mut impl Rng) -> Self {
        Self {
            spec,
            net: Net::random(spec.net_spec(), rng),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    pub net: Net<f32>,
}

impl Discriminator {
    pub fn random(spec: DiscriminatorSpec, rng: &mut impl Rng) -> Self {
        Self {
            spec,
            net: Net::random(spec.net_spec(), rng),
        }
    }
}

/// A spatial noise field for one scale.
#[derive(Clone, Debug)]
pub struct NoiseMap {
    /// `[1, C, H, W]`.
    pub values: Tensor<f32>,
    pub std: f32,
}

impl NoiseMap {
    pub fn zeros(channels: usize, dims: (usize, usize)) -> Self {
        Self {
            values: Tensor::zeros([1, channels, dims.0, dims.1]),
            std: 0.0,
        }
    }

    /// I.i.d. `N(0, std²)` entries.
    pub fn gaussian(channels: usize, dims: (usize, usize), std: f32, rng: &mut impl Rng) -> Self {
        let standard = crate::rng::std_normal_vec(rng, channels * dims.0 * dims.1);
        Self {
            values: Tensor::from_vec([1, channels, dims.0, dims.1], standard.into_iter().map(|v| v * std).collect()),
            std,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        let d = self.values.dims();
        (d[2], d[3])
    }

    pub fn is_zero(&self) -> bool {
        self.values.data().iter().all(|&v| v == 0.0)
    }
}

/// One noise map per scale, indexed from the finest (0).
#[derive(Clone, Debug)]
pub struct NoiseMapSet {
    pub maps: Vec<NoiseMap>,
    /// True for the reconstruction set `{z*, 0, …, 0}`.
    pub reconstruction: bool,
}

/// Pads the prepared image and noise so the generator input covers the
/// output with valid convolutions.
pub fn apply_padding<E: Element>(prev: &Tensor<E>, z: &Tensor<E>, mode: PaddingMode) -> (Tensor<E>, Tensor<E>) {
    let p = half_receptive_field();
    match mode {
        PaddingMode::LayerZero => (prev.clone(), z.clone()),
        PaddingMode::InputZero => (prev.pad2d([p; 4]), z.pad2d([p; 4])),
        PaddingMode::NoisePad => (prev.pad2d([p; 4]), z.clone()),
    }
}

fn check_generator_inputs<E: Element>(channels: usize, z: &Tensor<E>, prev: &Tensor<E>, mode: PaddingMode) -> Result<()> {
    let pd = prev.dims();
    if pd.len() != 4 || pd[0] != 1 || pd[1] != channels {
        return Err(Error::Shape(format!("previous image has shape {pd:?}, generator expects {channels} channels")));
    }
    let expected = mode.noise_dims((pd[2], pd[3]));
    let zd = z.dims();
    if zd.len() != 4 || zd[1] != channels || (zd[2], zd[3]) != expected {
        return Err(Error::Shape(format!(
            "noise has shape {zd:?}, expected [1, {channels}, {}, {}] for {} padding",
            expected.0,
            expected.1,
            mode.as_str()
        )));
    }
    let rf = receptive_field(NUM_LAYERS, KERNEL);
    if pd[2] < rf || pd[3] < rf {
        return Err(invalid(format!("image {}x{} is smaller than the {rf}x{rf} receptive field", pd[2], pd[3])));
    }
    Ok(())
}

/// Differentiable generator pass: `prev + ψ(z + prev)` without clamping.
pub fn generator_net_forward<E: Element>(
    net: &Net<E>,
    vars: &[Var<E>],
    z: &Tensor<E>,
    prev: &Tensor<E>,
    mode: PaddingMode,
    norm_mode: NormMode,
) -> Result<(Var<E>, Vec<BatchStats<E>>)> {
    check_generator_inputs(net.spec.in_channels, z, prev, mode)?;
    let (prev_p, z_p) = apply_padding(prev, z, mode);
    let input = prev_p.zip_map(&z_p, |a, b| a + b);
    let (residual, stats) = net.forward(&Var::constant(input), vars, norm_mode, mode.conv_pad());
    Ok((ops::add(&Var::constant(prev.clone()), &residual), stats))
}

/// One generator step at inference: `prev_up + ψ(z + prev_up)`, clamped to `[-1, 1]`.
pub fn generator_forward(gen: &Generator, z: &NoiseMap, prev_up: &Tensor<f32>, mode: PaddingMode) -> Result<Tensor<f32>> {
    no_grad(|| {
        let vars = gen.net.param_vars(false);
        let (out, _) = generator_net_forward(&gen.net, &vars, &z.values, prev_up, mode, NormMode::Frozen)?;
        Ok(out.value().map(|v| v.clamp(-1.0, 1.0)))
    })
}

/// Patch score map of `img`. The net uses valid convolutions, so the map is
/// `(H - 10) × (W - 10)`.
pub fn discriminator_forward(disc: &Discriminator, img: &ImageField) -> Result<Tensor<f32>> {
    check_discriminator_input(img.tensor())?;
    Ok(disc.net.infer(img.tensor(), 0))
}

/// Mean of the patch score map.
pub fn discriminator_score(disc: &Discriminator, img: &ImageField) -> Result<f32> {
    Ok(discriminator_forward(disc, img)?.mean())
}

pub(crate) fn check_discriminator_input<E: Element>(x: &Tensor<E>) -> Result<()> {
    let rf = receptive_field(NUM_LAYERS, KERNEL);
    let d = x.dims();
    if d[2] < rf || d[3] < rf {
        return Err(invalid(format!("image {}x{} is smaller than the {rf}x{rf} patch", d[2], d[3])));
    }
    Ok(())
}
