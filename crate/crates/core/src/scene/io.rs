//! Dataset directory: `manifest.json` plus one binary file per scene holding
//! the `f32` LE image `[C,H,W]`, the `u8` label vector and the `u8` masks `[L,H,W]`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, Scene, SceneConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DATASET_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: SceneConfig,
    base_seed: u64,
    count: usize,
    samples: Vec<SampleEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleEntry {
    id: u64,
    file: String,
    sha256: String,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encode_scene(scene: &Scene) -> Vec<u8> {
    let l = scene.num_classes();
    let mut out = Vec::with_capacity(scene.image.len() * 4 + l * (1 + scene.class_map.len()));
    for &v in scene.image.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend(scene.labels.iter().map(|&b| u8::from(b)));
    for c in 0..l {
        out.extend(scene.class_map.iter().map(|&k| u8::from(usize::from(k) == c)));
    }
    out
}

fn decode_scene(bytes: &[u8], config: &SceneConfig, id: u64, path: &Path) -> Result<Scene> {
    let (c, h, w, l) = (config.channels, config.height, config.width, config.num_classes);
    let corrupt = |reason: String| Error::CorruptManifest {
        path: path.to_path_buf(),
        reason,
    };
    let image_bytes = 4 * c * h * w;
    let expected = image_bytes + l + l * h * w;
    if bytes.len() != expected {
        return Err(corrupt(format!("sample holds {} bytes, expected {expected}", bytes.len())));
    }
    let image: Vec<f64> = bytes[..image_bytes]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    let labels: Vec<bool> = bytes[image_bytes..image_bytes + l].iter().map(|&b| b != 0).collect();
    let masks = &bytes[image_bytes + l..];
    let plane = h * w;
    let mut class_map = vec![0u8; plane];
    for (p, slot) in class_map.iter_mut().enumerate() {
        let owners: Vec<usize> = (0..l).filter(|&k| masks[k * plane + p] != 0).collect();
        match owners[..] {
            [k] => *slot = k as u8,
            _ => return Err(corrupt(format!("pixel {p} belongs to {} classes", owners.len()))),
        }
    }
    for (k, &lab) in labels.iter().enumerate() {
        if lab != class_map.iter().any(|&m| usize::from(m) == k) {
            return Err(corrupt(format!("label {k} disagrees with its mask")));
        }
    }
    Ok(Scene {
        id,
        image: Tensor::new(vec![c, h, w], image)?,
        labels,
        class_map,
        height: h,
        width: w,
    })
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut samples = Vec::with_capacity(dataset.len());
    for (k, scene) in dataset.scenes.iter().enumerate() {
        let file = format!("sample_{k:06}.bin");
        let bytes = encode_scene(scene);
        fs::write(dir.join(&file), &bytes)?;
        samples.push(SampleEntry {
            id: scene.id,
            file,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        format_version: DATASET_FORMAT_VERSION,
        config: dataset.config.clone(),
        base_seed: dataset.base_seed,
        count: dataset.len(),
        samples,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST);
    let corrupt = |path: PathBuf, reason: String| Error::CorruptManifest { path, reason };
    let raw = fs::read(&manifest_path).map_err(|e| corrupt(manifest_path.clone(), e.to_string()))?;
    let manifest: Manifest =
        serde_json::from_slice(&raw).map_err(|e| corrupt(manifest_path.clone(), e.to_string()))?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(corrupt(
            manifest_path,
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    if manifest.count != manifest.samples.len() {
        return Err(corrupt(
            manifest_path,
            format!("count {} but {} samples listed", manifest.count, manifest.samples.len()),
        ));
    }
    manifest
        .config
        .validate()
        .map_err(|e| corrupt(manifest_path.clone(), e.to_string()))?;
    let mut scenes = Vec::with_capacity(manifest.count);
    for entry in &manifest.samples {
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path)
            .map_err(|e| corrupt(manifest_path.clone(), format!("sample {}: {e}", entry.file)))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::ChecksumMismatch { path });
        }
        scenes.push(decode_scene(&bytes, &manifest.config, entry.id, &path)?);
    }
    Ok(Dataset {
        config: manifest.config,
        base_seed: manifest.base_seed,
        scenes,
    })
}
