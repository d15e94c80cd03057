//! Checkpoints: a JSON manifest plus one raw float blob per scale.
//!
//! Layout of a checkpoint directory:
//!
//! ```text
//! manifest.json
//! scale_{n}.weights     one per scale, n = 0 (finest) ..= N
//! image.weights         the training image
//! presets.json
//! ```
//!
//! A blob is a 16-byte header (`"SGW1"`, scale index, tensor count, zero
//! padding; all little-endian `u32`) followed by the tensors as
//! little-endian `f32`, in the order of the manifest's shape index.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use singan_autodiff::Tensor;

use crate::error::{CheckpointError, Error, Result};
use crate::imaging::{ImageField, ScaleSchedule};
use crate::netspec::{Generator, GeneratorSpec, Net, PaddingMode};
use crate::training::{GeneratorStack, TrainConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const MAGIC: &[u8; 4] = b"SGW1";
pub const HEADER_LEN: usize = 16;
/// Scale index recorded in the training-image blob header.
pub const IMAGE_BLOB_SCALE: u32 = u32::MAX;
pub const MANIFEST_SCHEMA: &str = include_str!("../schema/manifest.schema.json");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobEntry {
    pub file: String,
    pub scale: u32,
    pub bytes: u64,
    pub sha256: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub coarsest_scale: usize,
    pub r: f64,
    pub levels: Vec<(usize, usize)>,
    pub sigmas: Vec<f32>,
    pub padding_mode: PaddingMode,
    pub kernels: Vec<usize>,
    pub channels: usize,
    pub value_range: (i32, i32),
    pub seed: u64,
    pub z_star_digest: String,
    pub config: TrainConfig,
    pub extractor_id: Option<String>,
    /// One per scale, finest first.
    pub blobs: Vec<BlobEntry>,
    pub training_image: BlobEntry,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of a tensor's little-endian `f32` bytes.
pub fn tensor_digest(t: &Tensor<f32>) -> String {
    let mut h = Sha256::new();
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn encode_blob(scale: u32, tensors: &[&Tensor<f32>]) -> Vec<u8> {
    let total: usize = tensors.iter().map(|t| t.numel()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&scale.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for t in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn blob_entry(file: String, scale: u32, names: Vec<String>, tensors: &[&Tensor<f32>], bytes: &[u8]) -> BlobEntry {
    BlobEntry {
        file,
        scale,
        bytes: bytes.len() as u64,
        sha256: sha256_hex(bytes),
        tensors: names
            .into_iter()
            .zip(tensors)
            .map(|(name, t)| TensorEntry {
                name,
                shape: t.dims().to_vec(),
            })
            .collect(),
    }
}

/// Everything `save` writes, keyed by file name.
fn render(stack: &GeneratorStack, extractor_id: Option<&str>) -> Result<(Manifest, Vec<(String, Vec<u8>)>)> {
    let big_n = stack.coarsest();
    let mut files = Vec::new();
    let mut blobs = Vec::new();
    for (n, g) in stack.generators.iter().enumerate() {
        let mut tensors = g.net.state_tensors();
        let mut names = g.net.state_names();
        if n == big_n {
            tensors.push(&stack.z_star);
            names.push("z_star".into());
        }
        let file = format!("scale_{n}.weights");
        let bytes = encode_blob(n as u32, &tensors);
        blobs.push(blob_entry(file.clone(), n as u32, names, &tensors, &bytes));
        files.push((file, bytes));
    }
    let image = stack.training_image().tensor();
    let image_bytes = encode_blob(IMAGE_BLOB_SCALE, &[image]);
    let training_image = blob_entry("image.weights".into(), IMAGE_BLOB_SCALE, vec!["image".into()], &[image], &image_bytes);
    files.push(("image.weights".into(), image_bytes));

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        coarsest_scale: big_n,
        r: stack.schedule.r,
        levels: stack.schedule.levels.clone(),
        sigmas: stack.sigmas.clone(),
        padding_mode: stack.config.padding_mode,
        kernels: stack.generators.iter().map(|g| g.spec.kernels_per_block).collect(),
        channels: stack.channels(),
        value_range: (-1, 1),
        seed: stack.config.seed,
        z_star_digest: tensor_digest(&stack.z_star),
        config: stack.config.clone(),
        extractor_id: extractor_id.map(str::to_string),
        blobs,
        training_image,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    files.insert(0, ("manifest.json".into(), json));
    files.push(("presets.json".into(), crate::applications::PRESETS_JSON.as_bytes().to_vec()));
    Ok((manifest, files))
}

/// Writes the checkpoint to a temporary sibling directory, then renames it
/// over `path`.
pub fn save(stack: &GeneratorStack, path: impl AsRef<Path>) -> Result<Manifest> {
    save_with_extractor(stack, path, None)
}

pub fn save_with_extractor(stack: &GeneratorStack, path: impl AsRef<Path>, extractor_id: Option<&str>) -> Result<Manifest> {
    let path = path.as_ref();
    let (manifest, files) = render(stack, extractor_id)?;
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    let tmp = tempfile::Builder::new().prefix(".ckpt-").tempdir_in(&parent)?;
    for (name, bytes) in &files {
        let mut f = fs::File::create(tmp.path().join(name))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    let staged = tmp.keep();
    if path.exists() {
        let old = tempfile::Builder::new().prefix(".ckpt-old-").tempdir_in(&parent)?.keep();
        fs::rename(path, old.join("ckpt"))?;
        fs::rename(&staged, path)?;
        fs::remove_dir_all(old)?;
    } else {
        fs::rename(&staged, path)?;
    }
    Ok(manifest)
}

fn schema() -> &'static jsonschema::Validator {
    static VALIDATOR: OnceLock<jsonschema::Validator> = OnceLock::new();
    VALIDATOR.get_or_init(|| {
        let schema: serde_json::Value = serde_json::from_str(MANIFEST_SCHEMA).expect("bundled schema parses");
        jsonschema::validator_for(&schema).expect("bundled schema compiles")
    })
}

/// Parses and validates `manifest.json`.
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let raw: serde_json::Value = serde_json::from_slice(&fs::read(dir.as_ref().join("manifest.json"))?)?;
    if let Some(v) = raw.get("format_version").and_then(|v| v.as_u64()) {
        if v != FORMAT_VERSION as u64 {
            return Err(CheckpointError::VersionMismatch {
                found: v as u32,
                expected: FORMAT_VERSION,
            }
            .into());
        }
    }
    let errors: Vec<String> = schema().iter_errors(&raw).map(|e| format!("{}: {e}", e.instance_path())).collect();
    if !errors.is_empty() {
        return Err(CheckpointError::Manifest(errors.join("; ")).into());
    }
    let m: Manifest = serde_json::from_value(raw).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let k = m.coarsest_scale + 1;
    if m.blobs.len() != k || m.levels.len() != k || m.sigmas.len() != k || m.kernels.len() != k {
        return Err(CheckpointError::Manifest(format!(
            "{} blobs, {} levels, {} sigmas and {} kernel counts for {k} scales",
            m.blobs.len(),
            m.levels.len(),
            m.sigmas.len(),
            m.kernels.len()
        ))
        .into());
    }
    Ok(m)
}

/// Reads one blob, checking length, digest and header before decoding.
fn read_blob(dir: &Path, entry: &BlobEntry) -> Result<Vec<Tensor<f32>>> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path)?;
    if (bytes.len() as u64) < entry.bytes || bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Truncated(path).into());
    }
    if bytes.len() as u64 != entry.bytes || sha256_hex(&bytes) != entry.sha256 {
        return Err(CheckpointError::DigestMismatch(path).into());
    }
    let bad = |reason: String| -> Error {
        CheckpointError::BadHeader {
            path: path.clone(),
            reason,
        }
        .into()
    };
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    if &bytes[..4] != MAGIC {
        return Err(bad("missing SGW1 magic".into()));
    }
    if word(1) != entry.scale {
        return Err(bad(format!("scale {} where the manifest says {}", word(1), entry.scale)));
    }
    if word(2) as usize != entry.tensors.len() {
        return Err(bad(format!("{} tensors where the manifest lists {}", word(2), entry.tensors.len())));
    }
    let total: usize = entry.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if bytes.len() != HEADER_LEN + 4 * total {
        return Err(bad(format!("{} payload bytes for {total} floats", bytes.len() - HEADER_LEN)));
    }
    let mut floats = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    Ok(entry
        .tensors
        .iter()
        .map(|t| {
            let n = t.shape.iter().product();
            Tensor::from_vec(t.shape.clone(), floats.by_ref().take(n).collect())
        })
        .collect())
}

/// Loads a checkpoint; nothing is returned unless every blob verifies.
pub fn load(path: impl AsRef<Path>) -> Result<GeneratorStack> {
    let dir = path.as_ref();
    let m = read_manifest(dir)?;
    let manifest_err = |msg: String| -> Error { CheckpointError::Manifest(msg).into() };
    let big_n = m.coarsest_scale;
    let mut generators = Vec::with_capacity(m.blobs.len());
    let mut z_star = None;
    for (n, entry) in m.blobs.iter().enumerate() {
        if entry.scale as usize != n {
            return Err(manifest_err(format!("blob {} is listed for scale {n}", entry.file)));
        }
        let mut tensors = read_blob(dir, entry)?;
        if n == big_n {
            if entry.tensors.last().map(|t| t.name.as_str()) != Some("z_star") {
                return Err(manifest_err("coarsest blob lacks z_star".into()));
            }
            let z = tensors.pop().expect("checked");
            if tensor_digest(&z) != m.z_star_digest {
                return Err(CheckpointError::DigestMismatch(dir.join(&entry.file)).into());
            }
            z_star = Some(z);
        }
        let spec = GeneratorSpec {
            scale_index_from_coarse: big_n - n,
            kernels_per_block: m.kernels[n],
            channels: m.channels,
            padding_mode: m.padding_mode,
        };
        let mut net = Net::<f32>::random(spec.net_spec(), &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0));
        net.load_state(tensors).map_err(|e| manifest_err(format!("scale {n}: {e}")))?;
        generators.push(Generator { spec, net });
    }
    let image = read_blob(dir, &m.training_image)?
        .pop()
        .ok_or_else(|| manifest_err("training image blob is empty".into()))?;
    let image = ImageField::from_tensor_clamped(&image)?;
    let schedule = ScaleSchedule {
        levels: m.levels.clone(),
        r: m.r,
    };
    GeneratorStack::from_parts(
        schedule,
        generators,
        m.sigmas.clone(),
        z_star.expect("coarsest blob read"),
        &image,
        m.config.clone(),
    )
}
