//! Coarse-to-fine adversarial training of the generator pyramid.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use singan_autodiff::ops;
use singan_autodiff::{grad, no_grad, Adam, AdamConfig, Conv2dGeometry, Element, Tensor, Var};

use crate::error::{Error, Result};
use crate::imaging::{
    build_pyramid, build_scale_schedule, build_scale_schedule_with_factor, ImageField, ScaleSchedule,
    ScheduleOptions,
};
use crate::metrics::rmse;
use crate::netspec::{
    generator_net_forward, kernels_for_scale, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, Net,
    NoiseMap, NormMode, PaddingMode,
};
use crate::pipeline::{fit_noise, resize_tensor, Chain};
use crate::rng::{self, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Standard,
    SuperResolution,
}

impl TrainMode {
    /// Reconstruction weight this mode trains with.
    pub fn alpha_rec(&self) -> f64 {
        match self {
            TrainMode::Standard => 10.0,
            TrainMode::SuperResolution => 100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iters_per_scale: usize,
    pub g_steps: usize,
    pub d_steps: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    /// Iteration at which both learning rates are multiplied by `lr_decay_factor`.
    pub lr_decay_at: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub alpha_rec: f64,
    pub lambda_gp: f64,
    pub sigma_scale: f64,
    pub sigma_coarsest: f64,
    pub padding_mode: PaddingMode,
    pub seed: u64,
    pub mode: TrainMode,
    pub schedule: ScheduleOptions,
    /// Fixed pyramid factor; `None` searches for the one closest to `schedule.target_r`.
    pub scale_factor: Option<f64>,
    /// Kernels at the coarsest scale; doubled every 4 scales up to 4×.
    pub base_kernels: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters_per_scale: 2000,
            g_steps: 3,
            d_steps: 3,
            lr: 5e-4,
            lr_decay_factor: 0.1,
            lr_decay_at: 1600,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            alpha_rec: TrainMode::Standard.alpha_rec(),
            lambda_gp: 0.1,
            sigma_scale: 0.1,
            sigma_coarsest: 1.0,
            padding_mode: PaddingMode::InputZero,
            seed: 0,
            mode: TrainMode::Standard,
            schedule: ScheduleOptions::default(),
            scale_factor: None,
            base_kernels: 32,
        }
    }
}

impl TrainConfig {
    /// Configuration for a super-resolution pyramid with factor `r`.
    pub fn super_resolution(r: f64) -> Self {
        Self {
            mode: TrainMode::SuperResolution,
            alpha_rec: TrainMode::SuperResolution.alpha_rec(),
            scale_factor: Some(r),
            ..Self::default()
        }
    }

    /// The in-repo regression fixture: 33×33 image, 3 scales, 400 iterations.
    pub fn toy() -> Self {
        Self {
            iters_per_scale: 400,
            lr_decay_at: 320,
            seed: 1234,
            schedule: ScheduleOptions {
                min_coarse_dim: 19,
                max_fine_dim: None,
                target_r: 4.0 / 3.0,
            },
            ..Self::default()
        }
    }

    /// Shortens training to `iters`, keeping the decay point at 80%.
    pub fn with_iters(mut self, iters: usize) -> Self {
        self.iters_per_scale = iters;
        self.lr_decay_at = iters * 4 / 5;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.iters_per_scale == 0 || self.g_steps == 0 || self.d_steps == 0 {
            return bad("iteration and step counts must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay_factor > 0.0) {
            return bad("learning rate and decay factor must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.alpha_rec != self.mode.alpha_rec() {
            return Err(Error::Config(format!(
                "alpha_rec {} does not match {:?} mode ({})",
                self.alpha_rec,
                self.mode,
                self.mode.alpha_rec()
            )));
        }
        if !(self.lambda_gp >= 0.0) || !(self.sigma_scale >= 0.0) || !(self.sigma_coarsest > 0.0) {
            return bad("lambda_gp and sigma_scale must be non-negative, sigma_coarsest positive");
        }
        if self.base_kernels == 0 {
            return bad("base_kernels must be positive");
        }
        if let Some(r) = self.scale_factor {
            if !(r > 1.0) {
                return bad("scale_factor must exceed 1");
            }
        }
        Ok(())
    }

    /// Scale schedule for a training image of `dims`.
    pub fn schedule_for(&self, dims: (usize, usize)) -> Result<ScaleSchedule> {
        match self.scale_factor {
            Some(r) => build_scale_schedule_with_factor(dims, r, self.schedule.min_coarse_dim, self.schedule.max_fine_dim),
            None => build_scale_schedule(dims, &self.schedule),
        }
    }
}

/// A trained pyramid. Per-scale vectors are indexed by scale `n`, finest
/// (0) to coarsest (`N`).
#[derive(Clone, Debug)]
pub struct GeneratorStack {
    pub schedule: ScaleSchedule,
    pub generators: Vec<Generator>,
    pub sigmas: Vec<f32>,
    /// Fixed coarsest-scale reconstruction noise, at the noise dims of the
    /// training padding mode.
    pub z_star: Tensor<f32>,
    /// Reconstruction-path output per scale.
    pub recon_images: Vec<Tensor<f32>>,
    /// The training pyramid `x_0 … x_N`.
    pub reals: Vec<ImageField>,
    pub config: TrainConfig,
}

impl GeneratorStack {
    /// Rebuilds a stack from trained generators, recomputing the training
    /// pyramid and the reconstruction path.
    pub fn from_parts(
        schedule: ScaleSchedule,
        generators: Vec<Generator>,
        sigmas: Vec<f32>,
        z_star: Tensor<f32>,
        training_image: &ImageField,
        config: TrainConfig,
    ) -> Result<Self> {
        let k = schedule.num_scales();
        if generators.len() != k || sigmas.len() != k {
            return Err(Error::Shape(format!(
                "{} generators and {} sigmas for {k} scales",
                generators.len(),
                sigmas.len()
            )));
        }
        if training_image.dims() != schedule.finest() {
            return Err(Error::Shape(format!(
                "training image is {:?}, schedule starts at {:?}",
                training_image.dims(),
                schedule.finest()
            )));
        }
        let reals = build_pyramid(training_image, &schedule)?;
        let mut stack = Self {
            schedule,
            generators,
            sigmas,
            z_star,
            recon_images: Vec::new(),
            reals,
            config,
        };
        let mode = stack.config.padding_mode;
        let levels = stack.schedule.levels.clone();
        let mut recon = vec![Tensor::zeros([1]); k];
        stack.chain(&levels, mode).run(
            stack.coarsest(),
            0,
            None,
            &mut |n, dims| Ok(stack.reconstruction_noise(n, dims, mode)),
            Some(&mut |n, t: &Tensor<f32>| recon[n] = t.clone()),
        )?;
        stack.recon_images = recon;
        Ok(stack)
    }

    pub fn coarsest(&self) -> usize {
        self.schedule.coarsest()
    }

    pub fn num_scales(&self) -> usize {
        self.schedule.num_scales()
    }

    pub fn channels(&self) -> usize {
        self.reals[0].channels()
    }

    pub fn training_image(&self) -> &ImageField {
        &self.reals[0]
    }

    pub fn recon_image(&self, n: usize) -> ImageField {
        ImageField::from_tensor_clamped(&self.recon_images[n]).expect("reconstructions are finite")
    }

    /// The reconstruction map `z_rec` at scale `n` for a level of `dims`:
    /// `z*` at the coarsest scale, zeros elsewhere.
    pub fn reconstruction_noise(&self, n: usize, dims: (usize, usize), mode: PaddingMode) -> NoiseMap {
        let nd = mode.noise_dims(dims);
        if n == self.coarsest() {
            NoiseMap {
                values: fit_noise(&self.z_star, nd),
                std: self.sigmas[n],
            }
        } else {
            NoiseMap::zeros(self.channels(), nd)
        }
    }

    pub(crate) fn chain<'a>(&'a self, levels: &'a [(usize, usize)], mode: PaddingMode) -> Chain<'a> {
        Chain {
            generators: &self.generators,
            offset: 0,
            levels,
            channels: self.channels(),
            mode,
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub scale: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_rec: f64,
    pub sigma: f64,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "iteration,scale,d_loss,g_adv,g_rec,sigma";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iteration, self.scale, self.d_loss, self.g_adv, self.g_rec, self.sigma
        )
    }
}

/// Progress notifications emitted by [`train_pyramid_observed`].
#[derive(Clone, Debug, PartialEq)]
pub enum TrainEvent {
    ScaleStarted {
        scale: usize,
        kernels: usize,
        /// Whether weights were copied from the previous scale.
        transferred: bool,
    },
    Iteration(LogRow),
    ScaleFinished {
        scale: usize,
        /// Digest of the frozen generator.
        digest: String,
        sigma: f32,
        recon_rmse: f64,
    },
}

/// `mean(d_fake) − d_real + λ·gp`, minimized by the discriminator.
pub fn adversarial_loss_d(d_real: f64, d_fake: &[f64], gp: f64, lambda_gp: f64) -> f64 {
    let mean_fake = d_fake.iter().sum::<f64>() / d_fake.len().max(1) as f64;
    mean_fake - d_real + lambda_gp * gp
}

/// `(‖∇ critic(x̄)‖₂ − 1)²` at `x̄ = γ·real + (1 − γ)·fake`, as a
/// differentiable function of whatever parameters the critic closes over.
pub fn gradient_penalty<E: Element>(
    critic: impl Fn(&Var<E>) -> Var<E>,
    real: &Tensor<E>,
    fake: &Tensor<E>,
    gamma: E,
) -> Var<E> {
    let interp = real.zip_map(fake, |r, f| gamma * r + (E::one() - gamma) * f);
    let x_bar = Var::param(interp);
    let score = critic(&x_bar);
    let g = grad(&score, &[&x_bar], true).remove(0);
    ops::square(&ops::add_scalar(&ops::l2_norm(&g), -E::one()))
}

/// Patch-wise penalty used in training: the critic returns a patch map and
/// the gradient of its sum is normed over channels at every pixel, giving
/// `mean_pixels (‖∇_c Σ critic(x̄)‖₂ − 1)²`.
pub fn patch_gradient_penalty<E: Element>(
    critic: impl Fn(&Var<E>) -> Var<E>,
    real: &Tensor<E>,
    fake: &Tensor<E>,
    gamma: E,
) -> Var<E> {
    let interp = real.zip_map(fake, |r, f| gamma * r + (E::one() - gamma) * f);
    let x_bar = Var::param(interp);
    let score = ops::sum_all(&critic(&x_bar));
    let g = grad(&score, &[&x_bar], true).remove(0);
    let c = g.value().dims()[1];
    let ones = Var::constant(Tensor::ones([1, c, 1, 1]));
    let norms = ops::sqrt(&ops::conv2d(&ops::square(&g), &ones, Conv2dGeometry::new(0, 1)));
    ops::mean_all(&ops::square(&ops::add_scalar(&norms, -E::one())))
}

/// Scalar critic score: the mean of the patch map.
pub fn critic_score<E: Element>(net: &Net<E>, vars: &[Var<E>], x: &Var<E>, norm_mode: NormMode) -> Var<E> {
    ops::mean_all(&net.forward(x, vars, norm_mode, 0).0)
}

/// Penalty term of a discriminator, with batch statistics as in training.
pub fn discriminator_penalty(disc: &Discriminator, real: &ImageField, fake: &ImageField, gamma: f32) -> Result<f32> {
    if real.dims() != fake.dims() || real.channels() != fake.channels() {
        return Err(Error::Shape("real and fake images differ in shape".into()));
    }
    crate::netspec::check_discriminator_input(real.tensor())?;
    let vars = disc.net.param_vars(false);
    let gp = patch_gradient_penalty(
        |x| disc.net.forward(x, &vars, NormMode::Batch, 0).0,
        real.tensor(),
        fake.tensor(),
        gamma,
    );
    Ok(gp.item())
}

/// `MSE(G(z_rec, prev_rec_up), x_n)` with the generator in inference mode.
pub fn reconstruction_loss(
    gen: &Generator,
    z_rec: &NoiseMap,
    prev_rec_up: &Tensor<f32>,
    real: &ImageField,
    mode: PaddingMode,
) -> Result<f32> {
    no_grad(|| {
        let vars = gen.net.param_vars(false);
        let (out, _) = generator_net_forward(&gen.net, &vars, &z_rec.values, prev_rec_up, mode, NormMode::Frozen)?;
        if out.shape() != real.tensor().shape() {
            return Err(Error::Shape("reconstruction and target differ in shape".into()));
        }
        Ok(ops::mse(&out, &Var::constant(real.tensor().clone())).item())
    })
}

/// Noise amplitude of a scale: `sigma_scale · RMSE(x_rec_up, x_n)`, or
/// `sigma_coarsest` at the coarsest scale.
pub fn compute_noise_std(
    x_rec_up: &ImageField,
    x_n: &ImageField,
    sigma_scale: f64,
    is_coarsest: bool,
    sigma_coarsest: f64,
) -> Result<f32> {
    if is_coarsest {
        return Ok(sigma_coarsest as f32);
    }
    Ok((sigma_scale * rmse(x_rec_up, x_n)?) as f32)
}

pub fn train_pyramid(x: &ImageField, cfg: &TrainConfig) -> Result<GeneratorStack> {
    train_pyramid_observed(x, cfg, &mut |_| {})
}

/// Trains `G_N … G_0` in sequence, reporting progress to `observer`.
pub fn train_pyramid_observed(
    x: &ImageField,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&TrainEvent),
) -> Result<GeneratorStack> {
    cfg.validate()?;
    let schedule = cfg.schedule_for(x.dims())?;
    let reals = build_pyramid(x, &schedule)?;
    let big_n = schedule.coarsest();
    let channels = x.channels();
    let mode = cfg.padding_mode;

    let z_star = {
        let mut r = rng::stream(cfg.seed, Purpose::Training, 1, big_n);
        NoiseMap::gaussian(channels, mode.noise_dims(schedule.dims(big_n)), cfg.sigma_coarsest as f32, &mut r).values
    };

    // Trained scales n+1..=N, finest first.
    let mut done: Vec<Generator> = Vec::new();
    let mut done_sigmas: Vec<f32> = Vec::new();
    let mut recon: Vec<Tensor<f32>> = Vec::new();
    let mut last: Option<(Generator, Discriminator)> = None;

    for n in (0..=big_n).rev() {
        let dims = schedule.dims(n);
        let real = reals[n].tensor().clone();
        let is_coarsest = n == big_n;
        let prev_rec = if is_coarsest {
            Tensor::zeros([1, channels, dims.0, dims.1])
        } else {
            resize_tensor(&recon[0], dims)?
        };
        let sigma = compute_noise_std(
            &ImageField::from_tensor_clamped(&prev_rec)?,
            &reals[n],
            cfg.sigma_scale,
            is_coarsest,
            cfg.sigma_coarsest,
        )?;
        let z_rec = if is_coarsest {
            z_star.clone()
        } else {
            Tensor::zeros({
                let nd = mode.noise_dims(dims);
                [1, channels, nd.0, nd.1]
            })
        };

        let kernels = kernels_for_scale(big_n - n, cfg.base_kernels);
        let (mut g, mut d, transferred) = match &last {
            Some((g, d)) if g.spec.kernels_per_block == kernels => {
                let mut g = g.clone();
                g.spec = GeneratorSpec::new(big_n - n, cfg.base_kernels, channels, mode);
                (g, d.clone(), true)
            }
            _ => {
                let mut init = rng::stream(cfg.seed, Purpose::Init, 0, n);
                let g = Generator::random(GeneratorSpec::new(big_n - n, cfg.base_kernels, channels, mode), &mut init);
                let d = Discriminator::random(
                    DiscriminatorSpec {
                        kernels_per_block: kernels,
                        channels,
                    },
                    &mut init,
                );
                (g, d, false)
            }
        };
        observer(&TrainEvent::ScaleStarted {
            scale: n,
            kernels,
            transferred,
        });

        let levels = schedule.levels.clone();
        let coarser = Chain {
            generators: &done,
            offset: n + 1,
            levels: &levels,
            channels,
            mode,
        };
        let mut scale = ScaleTrainer {
            cfg,
            n,
            real: &real,
            prev_rec: &prev_rec,
            z_rec: &z_rec,
            sigma,
            coarser: &coarser,
            coarser_sigmas: &done_sigmas,
            rng: rng::stream(cfg.seed, Purpose::Training, 0, n),
        };
        scale.run(&mut g, &mut d, observer)?;

        // Freeze normalization statistics to the reconstruction pass.
        let g_stats = no_grad(|| {
            let vars = g.net.param_vars(false);
            generator_net_forward(&g.net, &vars, &z_rec, &prev_rec, mode, NormMode::Batch).map(|r| r.1)
        })?;
        g.net.set_norm_stats(g_stats);
        let d_stats = no_grad(|| {
            let vars = d.net.param_vars(false);
            d.net.forward(&Var::constant(real.clone()), &vars, NormMode::Batch, 0).1
        });
        d.net.set_norm_stats(d_stats);

        let z_map = NoiseMap {
            values: z_rec.clone(),
            std: sigma,
        };
        let rec = crate::netspec::generator_forward(&g, &z_map, &prev_rec, mode)?;
        let recon_rmse = rmse(&ImageField::from_tensor_clamped(&rec)?, &reals[n])?;
        observer(&TrainEvent::ScaleFinished {
            scale: n,
            digest: g.net.digest(),
            sigma,
            recon_rmse,
        });
        recon.insert(0, rec);
        done.insert(0, g.clone());
        done_sigmas.insert(0, sigma);
        last = Some((g, d));
    }

    Ok(GeneratorStack {
        schedule,
        generators: done,
        sigmas: done_sigmas,
        z_star,
        recon_images: recon,
        reals,
        config: cfg.clone(),
    })
}

struct ScaleTrainer<'a> {
    cfg: &'a TrainConfig,
    n: usize,
    real: &'a Tensor<f32>,
    prev_rec: &'a Tensor<f32>,
    z_rec: &'a Tensor<f32>,
    sigma: f32,
    /// Frozen scales `n+1 ..= N`.
    coarser: &'a Chain<'a>,
    coarser_sigmas: &'a [f32],
    rng: ChaCha8Rng,
}

impl ScaleTrainer<'_> {
    fn channels(&self) -> usize {
        self.real.dims()[1]
    }

    fn dims(&self) -> (usize, usize) {
        (self.real.dims()[2], self.real.dims()[3])
    }

    /// A fresh random image from the frozen coarser scales, upsampled to this scale.
    fn draw_prev(&mut self) -> Result<Tensor<f32>> {
        let dims = self.dims();
        if self.coarser.generators.is_empty() {
            return Ok(Tensor::zeros([1, self.channels(), dims.0, dims.1]));
        }
        let (c, mode, sigmas, offset) = (self.channels(), self.coarser.mode, self.coarser_sigmas, self.coarser.offset);
        let top = offset + self.coarser.generators.len() - 1;
        let rng = &mut self.rng;
        let out = self.coarser.run(
            top,
            offset,
            None,
            &mut |m, d| Ok(NoiseMap::gaussian(c, mode.noise_dims(d), sigmas[m - offset], rng)),
            None,
        )?;
        resize_tensor(&out, dims)
    }

    fn draw_noise(&mut self) -> Tensor<f32> {
        let nd = self.cfg.padding_mode.noise_dims(self.dims());
        NoiseMap::gaussian(self.channels(), nd, self.sigma, &mut self.rng).values
    }

    fn run(&mut self, g: &mut Generator, d: &mut Discriminator, observer: &mut dyn FnMut(&TrainEvent)) -> Result<()> {
        let cfg = self.cfg;
        let mode = cfg.padding_mode;
        let adam = |lr| AdamConfig {
            lr,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: 1e-8,
        };
        let mut opt_g = Adam::new(adam(cfg.lr), &g.net.params());
        let mut opt_d = Adam::new(adam(cfg.lr), &d.net.params());
        let real_var = Var::constant(self.real.clone());

        for iter in 0..cfg.iters_per_scale {
            if iter == cfg.lr_decay_at {
                opt_g.set_lr(cfg.lr * cfg.lr_decay_factor);
                opt_d.set_lr(cfg.lr * cfg.lr_decay_factor);
            }

            let mut d_loss = 0.0;
            let mut z = Tensor::zeros([1]);
            let mut prev = Tensor::zeros([1]);
            for _ in 0..cfg.d_steps {
                prev = self.draw_prev()?;
                z = self.draw_noise();
                let fake = no_grad(|| {
                    let vars = g.net.param_vars(false);
                    generator_net_forward(&g.net, &vars, &z, &prev, mode, NormMode::Batch).map(|r| r.0.value().clone())
                })?;
                let gamma: f32 = self.rng.random();
                let vars = d.net.param_vars(true);
                let d_real = critic_score(&d.net, &vars, &real_var, NormMode::Batch);
                let d_fake = critic_score(&d.net, &vars, &Var::constant(fake.clone()), NormMode::Batch);
                let gp = patch_gradient_penalty(
                    |x| d.net.forward(x, &vars, NormMode::Batch, 0).0,
                    self.real,
                    &fake,
                    gamma,
                );
                let loss = ops::add(&ops::sub(&d_fake, &d_real), &ops::scale(&gp, cfg.lambda_gp as f32));
                d_loss = loss.item() as f64;
                let refs: Vec<&Var<f32>> = vars.iter().collect();
                let grads: Vec<Tensor<f32>> = grad(&loss, &refs, false).iter().map(|v| v.value().clone()).collect();
                opt_d.step(&mut d.net.params_mut(), &grads);
            }

            let mut g_adv = 0.0;
            let mut g_rec = 0.0;
            for _ in 0..cfg.g_steps {
                let vars = g.net.param_vars(true);
                let d_vars = d.net.param_vars(false);
                let (fake, _) = generator_net_forward(&g.net, &vars, &z, &prev, mode, NormMode::Batch)?;
                let adv = ops::neg(&critic_score(&d.net, &d_vars, &fake, NormMode::Batch));
                let (rec, _) = generator_net_forward(&g.net, &vars, self.z_rec, self.prev_rec, mode, NormMode::Batch)?;
                let rec_loss = ops::mse(&rec, &real_var);
                let loss = ops::add(&adv, &ops::scale(&rec_loss, cfg.alpha_rec as f32));
                g_adv = adv.item() as f64;
                g_rec = rec_loss.item() as f64;
                let refs: Vec<&Var<f32>> = vars.iter().collect();
                let grads: Vec<Tensor<f32>> = grad(&loss, &refs, false).iter().map(|v| v.value().clone()).collect();
                opt_g.step(&mut g.net.params_mut(), &grads);
            }

            let row = LogRow {
                iteration: iter,
                scale: self.n,
                d_loss,
                g_adv,
                g_rec,
                sigma: self.sigma as f64,
            };
            if ![d_loss, g_adv, g_rec].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    scale: self.n,
                    iteration: iter,
                    snapshot: serde_json::to_string(&row).unwrap_or_default(),
                });
            }
            observer(&TrainEvent::Iteration(row));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_echo() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.alpha_rec, c.lambda_gp, c.iters_per_scale), (5e-4, 10.0, 0.1, 2000));
        assert_eq!((c.g_steps, c.d_steps, c.lr_decay_at), (3, 3, 1600));
        assert_eq!((c.adam_beta1, c.adam_beta2, c.lr_decay_factor), (0.5, 0.999, 0.1));
        assert_eq!(TrainConfig::super_resolution(1.3).alpha_rec, 100.0);
        c.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.alpha_rec = 100.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = TrainConfig {
            iters_per_scale: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    fn tiny_critic(seed: u64) -> Net<f64> {
        use rand::SeedableRng;
        let spec = crate::netspec::NetSpec {
            in_channels: 1,
            out_channels: 1,
            kernels: 3,
            num_layers: 2,
            head: crate::netspec::Head::Linear,
        };
        let mut net = Net::<f64>::random(spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        // Larger weights so the penalty is far from its minimum.
        for p in net.params_mut() {
            p.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = *v * 20.0 + 0.05 * (i % 5) as f64);
        }
        net
    }

    fn field(seed: u64) -> Tensor<f64> {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec([1, 1, 8, 8], (0..64).map(|_| r.random_range(-1.0..1.0)).collect())
    }

    fn penalty_var(net: &Net<f64>, vars: &[Var<f64>], gamma: f64, mode: NormMode, patch: bool) -> Var<f64> {
        if patch {
            patch_gradient_penalty(|x| net.forward(x, vars, mode, 0).0, &field(1), &field(2), gamma)
        } else {
            gradient_penalty(|x| critic_score(net, vars, x, mode), &field(1), &field(2), gamma)
        }
    }

    #[test]
    fn penalty_weight_gradient_matches_finite_differences() {
        for (mode, patch) in [
            (NormMode::Batch, false),
            (NormMode::Frozen, false),
            (NormMode::Batch, true),
            (NormMode::Frozen, true),
        ] {
            let net = tiny_critic(3);
            let vars = net.param_vars(true);
            let gp = penalty_var(&net, &vars, 0.3, mode, patch);
            let refs: Vec<&Var<f64>> = vars.iter().collect();
            let grads = grad(&gp, &refs, false);
            let h = 1e-4;
            for (pi, g) in grads.iter().enumerate() {
                for j in 0..g.value().numel() {
                    let bump = |delta: f64| {
                        let mut n = net.clone();
                        n.params_mut()[pi].data_mut()[j] += delta;
                        let v = n.param_vars(false);
                        penalty_var(&n, &v, 0.3, mode, patch).item()
                    };
                    let fd = (bump(h) - bump(-h)) / (2.0 * h);
                    let an = g.value().data()[j];
                    let tol = 1e-3 * fd.abs().max(an.abs()).max(1e-3);
                    assert!((fd - an).abs() <= tol, "{mode:?} param {pi}[{j}]: fd {fd} vs autodiff {an}");
                }
            }
        }
    }

    #[test]
    fn generator_loss_gradient_matches_finite_differences() {
        use crate::netspec::{generator_net_forward, Head, NetSpec, PaddingMode};
        use rand::SeedableRng;
        let spec = |head| NetSpec {
            in_channels: 1,
            out_channels: 1,
            kernels: 2,
            num_layers: 5,
            head,
        };
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut g = Net::<f64>::random(spec(Head::Tanh), &mut r);
        for p in g.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v *= 15.0);
        }
        let mut d = Net::<f64>::random(spec(Head::Linear), &mut r);
        for p in d.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v *= 15.0);
        }
        let big = |seed| {
            let f = field(seed);
            f.pad2d([2, 2, 2, 2]).zip_map(&field(seed + 10).pad2d([0, 4, 4, 0]), |a, b| a + b * 0.5)
        };
        let (z, prev, real) = (big(5), big(6).map(|v| v.clamp(-1.0, 1.0)), big(7).map(|v| v.clamp(-1.0, 1.0)));
        let loss_of = |g: &Net<f64>, vars: &[Var<f64>]| {
            let dv = d.param_vars(false);
            let (fake, _) = generator_net_forward(g, vars, &z, &prev, PaddingMode::LayerZero, NormMode::Batch).unwrap();
            let adv = ops::neg(&ops::mean_all(&d.forward(&fake, &dv, NormMode::Batch, 1).0));
            let (rec, _) = generator_net_forward(g, vars, &prev.map(|_| 0.0), &prev, PaddingMode::LayerZero, NormMode::Batch).unwrap();
            ops::add(&adv, &ops::scale(&ops::mse(&rec, &Var::constant(real.clone())), 10.0))
        };
        let vars = g.param_vars(true);
        let loss = loss_of(&g, &vars);
        let refs: Vec<&Var<f64>> = vars.iter().collect();
        let grads = grad(&loss, &refs, false);
        let h = 1e-5;
        for (pi, gr) in grads.iter().enumerate() {
            for j in 0..gr.value().numel() {
                let bump = |delta: f64| {
                    let mut n = g.clone();
                    n.params_mut()[pi].data_mut()[j] += delta;
                    let v = n.param_vars(false);
                    loss_of(&n, &v).item()
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let an = gr.value().data()[j];
                assert!((fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-3), "param {pi}[{j}]: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn constant_critic_loss() {
        let real = Tensor::<f64>::from_vec([1, 1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]);
        let fake = Tensor::<f64>::zeros([1, 1, 2, 2]);
        let c = 0.7;
        let gp = gradient_penalty(
            |x| ops::add_scalar(&ops::scale(&ops::sum_all(x), 0.0), c),
            &real,
            &fake,
            0.3,
        );
        assert_eq!(gp.item(), 1.0);
        assert!((adversarial_loss_d(c, &[c, c], gp.item(), 0.1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn linear_critic_penalties() {
        let real = Tensor::<f64>::from_vec([1, 1, 2, 2], vec![0.5, -0.2, 0.3, 0.9]);
        let fake = Tensor::<f64>::from_vec([1, 1, 2, 2], vec![-0.5, 0.1, 0.0, 0.2]);
        let unit = gradient_penalty(|x| ops::scale(&ops::sum_all(x), 0.5), &real, &fake, 0.4);
        assert!(unit.item().abs() < 1e-15);
        let doubled = gradient_penalty(|x| ops::scale(&ops::sum_all(x), 2.0), &real, &fake, 0.4);
        assert!((doubled.item() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn patch_penalty_norms_each_pixel() {
        let real = Tensor::<f64>::from_vec([1, 2, 1, 2], vec![0.5, -0.2, 0.3, 0.9]);
        let fake = Tensor::<f64>::zeros([1, 2, 1, 2]);
        let linear = |w: [f64; 2]| {
            let k = Var::constant(Tensor::from_vec([1, 2, 1, 1], w.to_vec()));
            move |x: &Var<f64>| ops::conv2d(x, &k, Conv2dGeometry::new(0, 1))
        };
        let unit = patch_gradient_penalty(linear([0.6, 0.8]), &real, &fake, 0.5);
        assert!(unit.item().abs() < 1e-12);
        let doubled = patch_gradient_penalty(linear([2.0, 0.0]), &real, &fake, 0.5);
        assert!((doubled.item() - 1.0).abs() < 1e-12);
        let flat = patch_gradient_penalty(|x: &Var<f64>| ops::scale(&ops::sum_all(x), 0.0), &real, &fake, 0.5);
        assert_eq!(flat.item(), 1.0);
    }

    #[test]
    fn interpolate_at_gamma_one_is_real() {
        let real = Tensor::<f64>::from_vec([1, 1, 1, 3], vec![0.5, -0.2, 0.3]);
        let fake = Tensor::<f64>::from_vec([1, 1, 1, 3], vec![9.0, 9.0, 9.0]);
        let seen = std::cell::RefCell::new(None);
        gradient_penalty(
            |x| {
                *seen.borrow_mut() = Some(x.value().clone());
                ops::sum_all(x)
            },
            &real,
            &fake,
            1.0,
        );
        assert!(seen.into_inner().unwrap().bitwise_eq(&real));
    }

    #[test]
    fn noise_std_rule() {
        let a = ImageField::constant(1, 4, 4, 0.2).unwrap();
        let b = ImageField::constant(1, 4, 4, 0.0).unwrap();
        assert!((compute_noise_std(&a, &b, 0.1, false, 1.0).unwrap() - 0.02).abs() < 1e-7);
        assert_eq!(compute_noise_std(&a, &a, 0.1, false, 1.0).unwrap(), 0.0);
        assert_eq!(compute_noise_std(&a, &b, 0.1, true, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn log_row_csv() {
        let row = LogRow {
            iteration: 3,
            scale: 1,
            d_loss: -0.5,
            g_adv: 0.25,
            g_rec: 0.125,
            sigma: 0.1,
        };
        assert_eq!(row.to_csv(), "3,1,-0.5,0.25,0.125,0.1");
        assert_eq!(LogRow::CSV_HEADER.split(',').count(), 6);
    }

    #[test]
    fn single_level_trains_only_coarsest() {
        let img = ImageField::new(1, 12, 12, (0..144).map(|i| (i % 12) as f32 / 6.0 - 1.0).collect()).unwrap();
        let cfg = TrainConfig {
            base_kernels: 4,
            schedule: ScheduleOptions {
                min_coarse_dim: 25,
                max_fine_dim: None,
                target_r: 4.0 / 3.0,
            },
            ..TrainConfig::default().with_iters(2)
        };
        let stack = train_pyramid(&img, &cfg).unwrap();
        assert_eq!(stack.num_scales(), 1);
        assert_eq!(stack.sigmas, vec![1.0]);
        assert_eq!(stack.recon_images[0].dims(), [1, 1, 12, 12]);
    }
}
