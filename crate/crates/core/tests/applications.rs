use singan_core::applications::{
    animate, blend, edit, encode_gif, harmonize, inject, paint_to_image, super_resolve, AnimationParams, InjectionRequest,
    Mask, SuperResConfig,
};
use singan_core::error::Error;
use singan_core::imaging::{downsample, resize, ImageField};
use singan_core::metrics::rmse;
use singan_core::netspec::PaddingMode;
use singan_core::sampling::{generate_with_noise, reconstruction_noise};
use singan_core::store;
use singan_core::training::GeneratorStack;

fn golden() -> GeneratorStack {
    store::load(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/toy_ckpt")).unwrap()
}

fn toy() -> ImageField {
    ImageField::load(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/toy.png")).unwrap()
}

/// Flat-colour "clipart": the toy image quantized to three levels per channel.
fn clipart() -> ImageField {
    let t = toy();
    let v = t.values().iter().map(|&x| ((x + 1.0) * 1.5).round().min(3.0) / 1.5 - 1.0).collect();
    ImageField::new(t.channels(), t.height(), t.width(), v).unwrap()
}

fn low_pass(img: &ImageField) -> ImageField {
    downsample(img, (6, 6)).unwrap()
}

#[test]
fn finest_injection_keeps_global_structure() {
    let stack = golden();
    let input = clipart();
    let fine = paint_to_image(&stack, &input, 0, 1).unwrap();
    let coarse = paint_to_image(&stack, &input, stack.coarsest() - 1, 1).unwrap();
    assert_eq!(fine.dims(), input.dims());
    let fine_low = rmse(&low_pass(&fine), &low_pass(&input)).unwrap();
    let coarse_low = rmse(&low_pass(&coarse), &low_pass(&input)).unwrap();
    assert!(fine_low < 0.1, "finest injection moved the low band by {fine_low}");
    assert!(fine_low <= coarse_low, "fine {fine_low} vs coarse {coarse_low}");
}

#[test]
fn masked_results_keep_the_outside_exactly() {
    let stack = golden();
    let input = clipart();
    let (h, w) = input.dims();
    let bits: Vec<bool> = (0..h * w).map(|i| (i / w) >= 10 && (i / w) < 22 && (i % w) >= 8 && (i % w) < 24).collect();
    let mask = Mask::new(h, w, bits.clone()).unwrap();
    for out in [harmonize(&stack, &input, &mask, 1, 2).unwrap(), edit(&stack, &input, &mask, 1, 2).unwrap()] {
        for c in 0..input.channels() {
            for (i, &inside) in bits.iter().enumerate() {
                if !inside {
                    assert_eq!(out.get(c, i / w, i % w), input.get(c, i / w, i % w));
                }
            }
        }
    }
}

#[test]
fn injection_resizes_input_and_checks_scale() {
    let stack = golden();
    let other = resize(&clipart(), (40, 29)).unwrap();
    let out = inject(&stack, &InjectionRequest::new(other.clone(), 1)).unwrap();
    assert_eq!(out.dims(), stack.schedule.finest());
    assert!(inject(&stack, &InjectionRequest::new(other, stack.coarsest())).is_err());
}

#[test]
fn noiseless_injection_is_deterministic_across_seeds() {
    let stack = golden();
    let mut req = InjectionRequest::new(clipart(), 1);
    req.add_noise = false;
    let a = inject(&stack, &req).unwrap();
    req.seed = 99;
    assert!(a.bitwise_eq(&inject(&stack, &req).unwrap()));
    req.add_noise = true;
    assert!(!a.bitwise_eq(&inject(&stack, &req).unwrap()));
}

#[test]
fn feathered_blend_stays_between_inputs() {
    let a = ImageField::constant(3, 12, 12, -0.5).unwrap();
    let b = ImageField::constant(3, 12, 12, 0.5).unwrap();
    let bits: Vec<bool> = (0..144).map(|i| i % 12 < 6).collect();
    let soft = Mask::new(12, 12, bits).unwrap().feathered(3);
    let out = blend(&a, &b, &soft).unwrap();
    assert!(out.values().iter().all(|&v| (-0.5..=0.5).contains(&v)));
    assert!(soft.weights().iter().any(|&m| m > 0.0 && m < 1.0));
}

#[test]
fn animation_starts_at_the_reconstruction_and_moves() {
    let stack = golden();
    let p = AnimationParams {
        alpha: 0.1,
        beta: 0.9,
        start_scale: stack.coarsest(),
        frames: 5,
        fps: 10,
        seed: 3,
    };
    let frames = animate(&stack, &p).unwrap();
    assert_eq!(frames.len(), 5);
    let recon = generate_with_noise(
        &stack,
        &reconstruction_noise(&stack, &stack.schedule.levels, PaddingMode::NoisePad),
        PaddingMode::NoisePad,
    )
    .unwrap();
    assert!(frames[0].bitwise_eq(&recon));
    assert!(!frames[4].bitwise_eq(&recon));
    // Consecutive frames are closer than distant ones.
    let near = rmse(&frames[1], &frames[2]).unwrap();
    assert!(near < 0.5, "{near}");
    let gif = encode_gif(&frames, 10).unwrap();
    assert!(gif.starts_with(b"GIF89a") || gif.starts_with(b"GIF87a"));
}

#[test]
fn animation_rejects_out_of_range_parameters() {
    let stack = golden();
    let ok = AnimationParams {
        alpha: 0.1,
        beta: 0.9,
        start_scale: 1,
        frames: 2,
        fps: 10,
        seed: 0,
    };
    for bad in [
        AnimationParams { alpha: 1.5, ..ok.clone() },
        AnimationParams { beta: -0.1, ..ok.clone() },
        AnimationParams { start_scale: 3, ..ok.clone() },
        AnimationParams { frames: 0, ..ok.clone() },
    ] {
        assert!(matches!(animate(&stack, &bad), Err(Error::InvalidInput(_))), "{bad:?}");
    }
}

#[test]
fn super_resolution_needs_an_sr_trained_stack() {
    let stack = golden();
    let cfg = SuperResConfig::new(2).unwrap();
    assert!(matches!(super_resolve(&toy(), &cfg, &stack, 0), Err(Error::Config(_))));
}

#[test]
fn sr_round_dims_end_at_the_factor() {
    for s in [2u32, 3, 4, 8] {
        let cfg = SuperResConfig::new(s).unwrap();
        let dims = cfg.round_dims((50, 37));
        assert_eq!(dims.len(), cfg.k);
        assert_eq!(*dims.last().unwrap(), (50 * s as usize, 37 * s as usize));
        assert!(dims.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
    }
}
