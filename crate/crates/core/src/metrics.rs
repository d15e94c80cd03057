//! RMSE, Fréchet distance over feature statistics, SIFID and reports.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imaging::ImageField;
use crate::netspec::PaddingMode;
use crate::rng::{self, Purpose};
use crate::sampling::{diversity_map, generate, reconstruct, SampleRequest};
use crate::training::GeneratorStack;

/// Diagonal loading applied when a covariance is rank deficient.
pub const COV_EPS: f64 = 1e-6;
const PSD_TOL: f64 = 1e-8;

/// Root mean squared difference of two same-shape images.
pub fn rmse(a: &ImageField, b: &ImageField) -> Result<f64> {
    if a.channels() != b.channels() || a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "rmse of {}x{:?} and {}x{:?}",
            a.channels(),
            a.dims(),
            b.channels(),
            b.dims()
        )));
    }
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok((sum / a.values().len() as f64).sqrt())
}

/// Mean and covariance of per-location feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub dim: usize,
    pub n_locations: usize,
}

impl FeatureStats {
    /// Statistics of a `dim × n` channel-major feature map. The covariance
    /// uses the unbiased estimator and gets `COV_EPS·I` when `n ≤ dim`.
    pub fn from_features(features: &[f64], dim: usize, n: usize) -> Result<Self> {
        if dim == 0 || n < 2 || features.len() != dim * n {
            return Err(invalid(format!(
                "feature map of {} values is not {dim} channels x {n} locations (n >= 2)",
                features.len()
            )));
        }
        let m = DMatrix::from_row_slice(dim, n, features);
        let mu = m.column_mean();
        let centered = DMatrix::from_fn(dim, n, |i, j| m[(i, j)] - mu[i]);
        let mut sigma = (&centered * centered.transpose()) / (n - 1) as f64;
        if n <= dim {
            sigma += DMatrix::identity(dim, dim) * COV_EPS;
        }
        Ok(Self {
            mu,
            sigma,
            dim,
            n_locations: n,
        })
    }

    /// Stats from a known mean and covariance.
    pub fn from_moments(mu: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let dim = mu.len();
        if sigma.nrows() != dim || sigma.ncols() != dim {
            return Err(Error::Shape(format!("{dim}-d mean with {}x{} covariance", sigma.nrows(), sigma.ncols())));
        }
        Ok(Self {
            mu: DVector::from_vec(mu),
            sigma,
            dim,
            n_locations: 0,
        })
    }
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Square root of a symmetric PSD matrix via its eigendecomposition; small
/// negative eigenvalues from round-off are clamped to zero.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym(m).symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if let Some(v) = eig.eigenvalues.iter().find(|&&v| v < -PSD_TOL * scale || !v.is_finite()) {
        return Err(Error::Numerical(format!("matrix is not positive semidefinite (eigenvalue {v})")));
    }
    let roots = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    Ok(sym(&(&eig.eigenvectors * roots * eig.eigenvectors.transpose())))
}

/// `(AB)^{1/2}` for SPD `A` and PSD `B`, as `S M S⁻¹` with `S = A^{1/2}`
/// and `M = (S B S)^{1/2}`.
pub fn sqrtm_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = sqrtm_psd(a)?;
    let m = sqrtm_psd(&(&s * b * &s))?;
    let s_inv = s
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("matrix square root is singular".into()))?;
    Ok(s * m * s_inv)
}

/// `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})`, clamped at 0.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::Shape(format!("feature dims {} and {}", a.dim, b.dim)));
    }
    let mean_term = (&a.mu - &b.mu).norm_squared();
    let s = sqrtm_psd(&a.sigma)?;
    sqrtm_psd(&b.sigma)?;
    let cross = sqrtm_psd(&(&s * &b.sigma * &s))?.trace();
    let d = mean_term + a.sigma.trace() + b.sigma.trace() - 2.0 * cross;
    if !d.is_finite() {
        return Err(Error::Numerical("Fréchet distance is not finite".into()));
    }
    Ok(d.max(0.0))
}

/// Per-location deep features of an image.
pub trait FeatureExtractor: Send + Sync {
    fn id(&self) -> &str;
    /// Smallest height and width the extractor accepts.
    fn min_input(&self) -> usize;
    /// `(values, dim, n_locations)`, channel-major.
    fn features(&self, img: &ImageField) -> Result<(Vec<f64>, usize, usize)>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureLayer {
    /// Valid 3×3-style convolution; `weights` is `[out][in][k][k]` flattened.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu,
    /// 2×2 max pool, stride 2.
    MaxPool,
}

/// A plain feed-forward conv stack. The fallback is a fixed random network;
/// pretrained weights can be loaded from a JSON asset of the same shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvExtractor {
    pub id: String,
    /// The feature map is the output of the last layer.
    pub layers: Vec<FeatureLayer>,
}

impl ConvExtractor {
    /// conv(3→8)·relu·conv(8→8)·relu·pool·conv(8→16)·relu, He-initialized
    /// from the extractor stream of `seed`.
    pub fn fallback(seed: u64) -> Self {
        let mut rng = rng::stream(seed, Purpose::Extractor, 0, 0);
        let mut conv = |cin: usize, cout: usize| {
            let normal = Normal::new(0.0, (2.0 / (9 * cin) as f64).sqrt()).expect("valid std");
            FeatureLayer::Conv {
                in_channels: cin,
                out_channels: cout,
                kernel: 3,
                weights: (0..cout * cin * 9).map(|_| normal.sample(&mut rng)).collect(),
                bias: vec![0.0; cout],
            }
        };
        let layers = vec![
            conv(3, 8),
            FeatureLayer::Relu,
            conv(8, 8),
            FeatureLayer::Relu,
            FeatureLayer::MaxPool,
            conv(8, 16),
            FeatureLayer::Relu,
        ];
        Self {
            id: format!("random-conv-v1/seed-{seed}"),
            layers,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let fx: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        fx.validate()?;
        Ok(fx)
    }

    fn validate(&self) -> Result<()> {
        let mut channels: Option<usize> = None;
        for layer in &self.layers {
            if let FeatureLayer::Conv {
                in_channels,
                out_channels,
                kernel,
                weights,
                bias,
            } = layer
            {
                if channels.is_some_and(|c| c != *in_channels)
                    || weights.len() != out_channels * in_channels * kernel * kernel
                    || bias.len() != *out_channels
                    || *kernel == 0
                {
                    return Err(invalid(format!("extractor {}: inconsistent conv layer", self.id)));
                }
                channels = Some(*out_channels);
            }
        }
        if channels.is_none() {
            return Err(invalid(format!("extractor {} has no conv layer", self.id)));
        }
        Ok(())
    }

    fn input_channels(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match l {
                FeatureLayer::Conv { in_channels, .. } => Some(*in_channels),
                _ => None,
            })
            .unwrap_or(3)
    }
}

fn conv_valid(x: &[f64], (c, h, w): (usize, usize, usize), cout: usize, k: usize, wt: &[f64], b: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut out = vec![0.0; cout * oh * ow];
    for o in 0..cout {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = b[o];
                for i in 0..c {
                    for dy in 0..k {
                        let row = &x[(i * h + y + dy) * w + xx..];
                        let wrow = &wt[((o * c + i) * k + dy) * k..];
                        for dx in 0..k {
                            acc += wrow[dx] * row[dx];
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = acc;
            }
        }
    }
    out
}

fn max_pool(x: &[f64], (c, h, w): (usize, usize, usize)) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for i in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let at = |dy: usize, dx: usize| x[(i * h + 2 * y + dy) * w + 2 * xx + dx];
                out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    out
}

impl FeatureExtractor for ConvExtractor {
    fn id(&self) -> &str {
        &self.id
    }

    fn min_input(&self) -> usize {
        // Walk the size back from a 2×2 output map.
        let mut size = 2;
        for layer in self.layers.iter().rev() {
            match layer {
                FeatureLayer::Conv { kernel, .. } => size += kernel - 1,
                FeatureLayer::MaxPool => size *= 2,
                FeatureLayer::Relu => {}
            }
        }
        size
    }

    fn features(&self, img: &ImageField) -> Result<(Vec<f64>, usize, usize)> {
        let (h, w) = img.dims();
        if h.min(w) < self.min_input() {
            return Err(invalid(format!(
                "{h}x{w} image is below the extractor's {0}x{0} minimum",
                self.min_input()
            )));
        }
        let mut x: Vec<f64> = img.values().iter().map(|&v| v as f64).collect();
        let mut shape = (img.channels(), h, w);
        let want = self.input_channels();
        if shape.0 != want {
            if shape.0 != 1 {
                return Err(Error::Shape(format!("{}-channel image for a {want}-channel extractor", shape.0)));
            }
            x = x.repeat(want);
            shape.0 = want;
        }
        for layer in &self.layers {
            match layer {
                FeatureLayer::Conv {
                    out_channels,
                    kernel,
                    weights,
                    bias,
                    ..
                } => {
                    x = conv_valid(&x, shape, *out_channels, *kernel, weights, bias);
                    shape = (*out_channels, shape.1 + 1 - kernel, shape.2 + 1 - kernel);
                }
                FeatureLayer::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
                FeatureLayer::MaxPool => {
                    x = max_pool(&x, shape);
                    shape = (shape.0, shape.1 / 2, shape.2 / 2);
                }
            }
        }
        Ok((x, shape.0, shape.1 * shape.2))
    }
}

pub fn feature_stats(img: &ImageField, fx: &dyn FeatureExtractor) -> Result<FeatureStats> {
    let (values, dim, n) = fx.features(img)?;
    FeatureStats::from_features(&values, dim, n)
}

/// Fréchet distance between the per-location feature statistics of two
/// single images.
pub fn sifid(real: &ImageField, fake: &ImageField, fx: &dyn FeatureExtractor) -> Result<f64> {
    frechet_distance(&feature_stats(real, fx)?, &feature_stats(fake, fx)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SifidSummary {
    pub per_image: Vec<f64>,
    pub mean: f64,
    pub extractor: String,
}

/// SIFID of every fake against `real`, and their mean.
pub fn sifid_set(real: &ImageField, fakes: &[ImageField], fx: &dyn FeatureExtractor) -> Result<SifidSummary> {
    if fakes.is_empty() {
        return Err(invalid("no samples to score"));
    }
    let real_stats = feature_stats(real, fx)?;
    let per_image = fakes
        .iter()
        .map(|f| frechet_distance(&real_stats, &feature_stats(f, fx)?))
        .collect::<Result<Vec<_>>>()?;
    let mean = per_image.iter().sum::<f64>() / per_image.len() as f64;
    Ok(SifidSummary {
        per_image,
        mean,
        extractor: fx.id().to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub image_id: String,
    pub start_scale: usize,
    pub sifid: f64,
    pub diversity: f64,
    pub rmse: f64,
}

impl ReportRow {
    pub const CSV_HEADER: &'static str = "image_id,start_scale,sifid,diversity,rmse";

    pub fn to_csv(&self) -> String {
        let id = if self.image_id.contains([',', '"', '\n']) {
            format!("\"{}\"", self.image_id.replace('"', "\"\""))
        } else {
            self.image_id.clone()
        };
        format!("{id},{},{},{},{}", self.start_scale, self.sifid, self.diversity, self.rmse)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub extractor: String,
    pub rows: Vec<ReportRow>,
}

impl Report {
    /// CSV with a leading `# extractor=<id>` comment line.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "# extractor={}", self.extractor)?;
        writeln!(out, "{}", ReportRow::CSV_HEADER)?;
        for row in &self.rows {
            writeln!(out, "{}", row.to_csv())?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 csv")
    }
}

/// SIFID and diversity of `count` samples from `start_scale`, plus the
/// reconstruction RMSE of the stack.
pub fn evaluate(
    stack: &GeneratorStack,
    image_id: &str,
    start_scale: usize,
    count: usize,
    seed: u64,
    fx: &dyn FeatureExtractor,
) -> Result<ReportRow> {
    let mode = PaddingMode::InputZero;
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
    let sifid = sifid_set(stack.training_image(), &samples, fx)?.mean;
    let diversity = diversity_map(stack, start_scale, count.max(2), seed, mode)?.normalized;
    let rmse = rmse(&reconstruct(stack)?, stack.training_image())?;
    Ok(ReportRow {
        image_id: image_id.to_string(),
        start_scale,
        sifid,
        diversity,
        rmse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats_1d(mu: f64, sd: f64) -> FeatureStats {
        FeatureStats::from_moments(vec![mu], DMatrix::from_element(1, 1, sd * sd)).unwrap()
    }

    fn random_spd(seed: u64, d: usize) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.1
    }

    #[test]
    fn one_d_closed_forms() {
        assert!((frechet_distance(&stats_1d(0.0, 1.0), &stats_1d(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-9);
        assert!((frechet_distance(&stats_1d(0.3, 1.0), &stats_1d(0.3, 2.0)).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(frechet_distance(&stats_1d(0.3, 1.5), &stats_1d(0.3, 1.5)).unwrap(), 0.0);
    }

    #[test]
    fn dim_mismatch_is_an_error() {
        let b = FeatureStats::from_moments(vec![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(frechet_distance(&stats_1d(0.0, 1.0), &b), Err(Error::Shape(_))));
    }

    #[test]
    fn non_psd_is_an_error() {
        let bad = FeatureStats::from_moments(vec![0.0, 0.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).unwrap();
        assert!(matches!(frechet_distance(&bad, &bad), Err(Error::Numerical(_))));
    }

    #[test]
    fn product_square_root_squares_back() {
        for seed in 0..20 {
            let (a, b) = (random_spd(seed, 6), random_spd(seed + 100, 6));
            let x = sqrtm_product(&a, &b).unwrap();
            assert!((&x * &x - &a * &b).norm() < 1e-5, "seed {seed}");
        }
    }

    #[test]
    fn stats_match_brute_force() {
        // Two channels over five locations.
        let f = [1.0, 2.0, 0.0, -1.0, 3.0, 0.5, 0.5, 1.5, -0.5, 2.0];
        let s = FeatureStats::from_features(&f, 2, 5).unwrap();
        let (a, b) = (&f[..5], &f[5..]);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / 5.0;
        let cov = |u: &[f64], v: &[f64]| {
            let (mu, mv) = (mean(u), mean(v));
            u.iter().zip(v).map(|(x, y)| (x - mu) * (y - mv)).sum::<f64>() / 4.0
        };
        assert!((s.mu[0] - mean(a)).abs() < 1e-12 && (s.mu[1] - mean(b)).abs() < 1e-12);
        assert!((s.sigma[(0, 0)] - cov(a, a)).abs() < 1e-12);
        assert!((s.sigma[(0, 1)] - cov(a, b)).abs() < 1e-12);
        assert!((s.sigma[(1, 0)] - cov(a, b)).abs() < 1e-12);
        assert!((s.sigma[(1, 1)] - cov(b, b)).abs() < 1e-12);
    }

    #[test]
    fn synthetic_two_channel_extractor_matches_brute_force() {
        // 1×1 conv picking channels 0 and 2: features are those raw pixel
        // values, so stats equal their mean/covariance.
        let fx = ConvExtractor {
            id: "pick".into(),
            layers: vec![FeatureLayer::Conv {
                in_channels: 3,
                out_channels: 2,
                kernel: 1,
                weights: vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
                bias: vec![0.0, 0.0],
            }],
        };
        let px: Vec<f32> = (0..27).map(|i| ((i * 7 % 11) as f32 / 5.5) - 1.0).collect();
        let img = ImageField::new(3, 3, 3, px.clone()).unwrap();
        let (values, dim, n) = fx.features(&img).unwrap();
        assert_eq!((dim, n), (2, 9));
        let s = FeatureStats::from_features(&values, dim, n).unwrap();
        let v: Vec<f64> = px.iter().map(|&x| x as f64).collect();
        let (c0, c2) = (&v[..9], &v[18..]);
        let m0 = c0.iter().sum::<f64>() / 9.0;
        let m2 = c2.iter().sum::<f64>() / 9.0;
        let c02 = (0..9).map(|i| (c0[i] - m0) * (c2[i] - m2)).sum::<f64>() / 8.0;
        assert!((s.mu[0] - m0).abs() < 1e-9 && (s.mu[1] - m2).abs() < 1e-9);
        assert!((s.sigma[(0, 1)] - c02).abs() < 1e-9);
    }

    #[test]
    fn sifid_of_identical_images_is_zero() {
        let fx = ConvExtractor::fallback(0);
        let img = ImageField::new(3, 20, 20, (0..1200).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect()).unwrap();
        assert!(sifid(&img, &img, &fx).unwrap() <= 1e-6);
    }

    #[test]
    fn small_inputs_are_rejected() {
        let fx = ConvExtractor::fallback(0);
        assert_eq!(fx.min_input(), 12);
        let img = ImageField::constant(3, 11, 11, 0.0).unwrap();
        assert!(sifid(&img, &img, &fx).is_err());
    }

    #[test]
    fn fallback_is_deterministic() {
        assert_eq!(ConvExtractor::fallback(5), ConvExtractor::fallback(5));
        assert_ne!(ConvExtractor::fallback(5), ConvExtractor::fallback(6));
    }

    #[test]
    fn extractor_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.json");
        let fx = ConvExtractor::fallback(2);
        std::fs::write(&path, serde_json::to_vec(&fx).unwrap()).unwrap();
        assert_eq!(ConvExtractor::load(&path).unwrap(), fx);
        let mut broken = fx.clone();
        broken.layers.truncate(0);
        std::fs::write(&path, serde_json::to_vec(&broken).unwrap()).unwrap();
        assert!(ConvExtractor::load(&path).is_err());
    }

    #[test]
    fn rmse_cases() {
        let a = ImageField::constant(3, 4, 5, 0.25).unwrap();
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b = ImageField::constant(3, 4, 5, -0.25).unwrap();
        assert!((rmse(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        let x = ImageField::new(1, 1, 3, vec![0.1, -0.4, 0.9]).unwrap();
        let y = ImageField::new(1, 1, 3, vec![0.3, 0.2, -0.1]).unwrap();
        let brute = ((0.2f64.powi(2) + 0.6f64.powi(2) + 1.0f64.powi(2)) / 3.0).sqrt();
        assert!((rmse(&x, &y).unwrap() - brute).abs() < 1e-6);
    }

    #[test]
    fn report_csv_layout() {
        let report = Report {
            extractor: "random-conv-v1/seed-0".into(),
            rows: vec![ReportRow {
                image_id: "a,b".into(),
                start_scale: 2,
                sifid: 0.5,
                diversity: 0.25,
                rmse: 0.125,
            }],
        };
        assert_eq!(
            report.to_csv_string(),
            "# extractor=random-conv-v1/seed-0\nimage_id,start_scale,sifid,diversity,rmse\n\"a,b\",2,0.5,0.25,0.125\n"
        );
    }

    proptest! {
        #[test]
        fn frechet_is_symmetric_and_nonnegative(seed in 0u64..1000, d in 1usize..6, shift in -2.0f64..2.0) {
            let a = FeatureStats::from_moments(vec![0.0; d], random_spd(seed, d)).unwrap();
            let b = FeatureStats::from_moments(vec![shift; d], random_spd(seed + 7, d)).unwrap();
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-8 * ab.max(1.0));
            prop_assert!(frechet_distance(&a, &a).unwrap() <= 1e-9);
            if shift.abs() > 1e-3 {
                prop_assert!(ab > 0.0);
            }
        }

        #[test]
        fn regularization_is_negligible(seed in 0u64..1000, d in 1usize..6) {
            let a = FeatureStats::from_moments(vec![0.5; d], random_spd(seed, d)).unwrap();
            let b = FeatureStats::from_moments(vec![0.0; d], random_spd(seed + 3, d)).unwrap();
            let load = |s: &FeatureStats| FeatureStats {
                sigma: &s.sigma + DMatrix::identity(d, d) * COV_EPS,
                ..s.clone()
            };
            let plain = frechet_distance(&a, &b).unwrap();
            let loaded = frechet_distance(&load(&a), &load(&b)).unwrap();
            prop_assert!((plain - loaded).abs() < 1e-4);
        }
    }
}
