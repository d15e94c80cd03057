use singan_core::error::{CheckpointError, Error};
use singan_core::imaging::ImageField;
use singan_core::sampling::{generate, samples_digest, SampleRequest};
use singan_core::store::{load, read_manifest, save};
use singan_core::training::{train_pyramid, GeneratorStack, TrainConfig};

fn quick_stack() -> GeneratorStack {
    let img = ImageField::load(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/toy.png")).unwrap();
    let small = singan_core::imaging::resize(&img, (25, 25)).unwrap();
    train_pyramid(&small, &TrainConfig::toy().with_iters(3)).unwrap()
}

fn sample_hash(stack: &GeneratorStack) -> String {
    let req = SampleRequest {
        count: 3,
        seed: 9,
        ..SampleRequest::from_coarsest(stack)
    };
    samples_digest(&generate(stack, &req).unwrap())
}

fn read_dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn round_trip_reproduces_samples_and_bytes() {
    let stack = quick_stack();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let manifest = save(&stack, &a).unwrap();
    assert_eq!(manifest.blobs.len(), stack.num_scales());
    let loaded = load(&a).unwrap();
    assert_eq!(sample_hash(&loaded), sample_hash(&stack));
    for (x, y) in loaded.recon_images.iter().zip(&stack.recon_images) {
        assert!(x.bitwise_eq(y));
    }
    save(&loaded, &b).unwrap();
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b));
    // Overwriting an existing checkpoint leaves only the new files.
    save(&loaded, &a).unwrap();
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn faults_are_typed_errors() {
    let stack = quick_stack();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt");
    save(&stack, &ckpt).unwrap();
    let blob = ckpt.join("scale_0.weights");
    let good = std::fs::read(&blob).unwrap();

    let mut flipped = good.clone();
    flipped[40] ^= 0x10;
    std::fs::write(&blob, &flipped).unwrap();
    assert!(matches!(load(&ckpt), Err(Error::Checkpoint(CheckpointError::DigestMismatch(_)))));

    std::fs::write(&blob, &good[..good.len() - 7]).unwrap();
    assert!(matches!(load(&ckpt), Err(Error::Checkpoint(CheckpointError::Truncated(_)))));
    std::fs::write(&blob, &good).unwrap();
    assert!(load(&ckpt).is_ok());

    let manifest_path = ckpt.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).unwrap();
    std::fs::write(&manifest_path, text.replace("\"format_version\": 1", "\"format_version\": 7")).unwrap();
    assert!(matches!(
        load(&ckpt),
        Err(Error::Checkpoint(CheckpointError::VersionMismatch { found: 7, expected: 1 }))
    ));
    std::fs::write(&manifest_path, text.replace("\"padding_mode\": \"input_zero\",\n  \"kernels\"", "\"padding_mode\": \"sideways\",\n  \"kernels\"")).unwrap();
    assert!(matches!(load(&ckpt), Err(Error::Checkpoint(CheckpointError::Manifest(_)))));
    std::fs::write(&manifest_path, &text).unwrap();
    assert!(read_manifest(&ckpt).is_ok());
}

#[test]
fn loading_does_not_touch_files() {
    let stack = quick_stack();
    let dir = tempfile::tempdir().unwrap();
    save(&stack, dir.path().join("c")).unwrap();
    let before = read_dir_bytes(&dir.path().join("c"));
    load(dir.path().join("c")).unwrap();
    assert_eq!(read_dir_bytes(&dir.path().join("c")), before);
}
