//! Attribution directory: `manifest.json` plus one `f64` LE blob per method
//! holding its `[H,W]` maps back to back in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AttributionMap;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scene::sha256_hex;

pub const ARCHIVE_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub sample_id: u64,
    pub map: AttributionMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionArchive {
    pub height: usize,
    pub width: usize,
    pub entries: Vec<ArchiveEntry>,
}

impl AttributionArchive {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, sample_id: u64, map: AttributionMap) -> Result<()> {
        if map.values.shape() != [self.height, self.width] {
            return Err(Error::ShapeMismatch(format!(
                "map shape {:?} in a {}x{} archive",
                map.values.shape(),
                self.height,
                self.width
            )));
        }
        self.entries.push(ArchiveEntry { sample_id, map });
        Ok(())
    }

    pub fn get(&self, sample_id: u64, class_index: usize, method_id: &str) -> Option<&AttributionMap> {
        self.entries
            .iter()
            .find(|e| e.sample_id == sample_id && e.map.class_index == class_index && e.map.method_id == method_id)
            .map(|e| &e.map)
    }

    /// Method ids in order of first appearance.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.map.method_id) {
                out.push(e.map.method_id.clone());
            }
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    height: usize,
    width: usize,
    methods: Vec<MethodBlob>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MethodBlob {
    method_id: String,
    file: String,
    sha256: String,
    maps: Vec<MapEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MapEntry {
    sample_id: u64,
    class_index: usize,
    normalized: bool,
}

fn file_name(method: &str) -> String {
    let safe: String = method
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("attributions_{safe}.bin")
}

pub fn save_archive(archive: &AttributionArchive, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut groups: BTreeMap<&str, Vec<&ArchiveEntry>> = BTreeMap::new();
    for e in &archive.entries {
        groups.entry(e.map.method_id.as_str()).or_default().push(e);
    }
    let mut methods = Vec::with_capacity(groups.len());
    for (method, entries) in groups {
        let file = file_name(method);
        let mut bytes = Vec::with_capacity(entries.len() * archive.height * archive.width * 8);
        for e in &entries {
            for v in e.map.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(dir.join(&file), &bytes)?;
        methods.push(MethodBlob {
            method_id: method.to_string(),
            sha256: sha256_hex(&bytes),
            file,
            maps: entries
                .iter()
                .map(|e| MapEntry {
                    sample_id: e.sample_id,
                    class_index: e.map.class_index,
                    normalized: e.map.normalized,
                })
                .collect(),
        });
    }
    let manifest = Manifest {
        format_version: ARCHIVE_FORMAT_VERSION,
        height: archive.height,
        width: archive.width,
        methods,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

/// Loads an archive; entries come back grouped by method in id order.
pub fn load_archive(dir: &Path) -> Result<AttributionArchive> {
    let manifest_path = dir.join(MANIFEST);
    let corrupt = |reason: String| Error::CorruptManifest {
        path: manifest_path.clone(),
        reason,
    };
    let raw = fs::read(&manifest_path).map_err(|e| corrupt(e.to_string()))?;
    let manifest: Manifest = serde_json::from_slice(&raw).map_err(|e| corrupt(e.to_string()))?;
    if manifest.format_version != ARCHIVE_FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {}", manifest.format_version)));
    }
    let plane = manifest.height * manifest.width;
    if plane == 0 {
        return Err(corrupt("empty map shape".into()));
    }
    let mut archive = AttributionArchive::new(manifest.height, manifest.width);
    for blob in &manifest.methods {
        let path = dir.join(&blob.file);
        let bytes = fs::read(&path).map_err(|e| corrupt(format!("{}: {e}", blob.file)))?;
        if sha256_hex(&bytes) != blob.sha256 {
            return Err(Error::ChecksumMismatch { path });
        }
        if bytes.len() != blob.maps.len() * plane * 8 {
            return Err(corrupt(format!(
                "{} holds {} bytes for {} maps",
                blob.file,
                bytes.len(),
                blob.maps.len()
            )));
        }
        for (entry, chunk) in blob.maps.iter().zip(bytes.chunks_exact(plane * 8)) {
            let values = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            let mut map = AttributionMap::new(
                Tensor::new(vec![manifest.height, manifest.width], values)?,
                entry.class_index,
                blob.method_id.clone(),
            );
            map.normalized = entry.normalized;
            archive.push(entry.sample_id, map)?;
        }
    }
    Ok(archive)
}
