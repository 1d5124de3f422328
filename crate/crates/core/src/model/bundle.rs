//! Model bundles: a directory holding `manifest.toml` (format version, input
//! shape and box, layer list, tensor index) and `params.bin`, a single blob of
//! little-endian `f32` values addressed by byte offset.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, Network};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const BUNDLE_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.toml";
const BLOB: &str = "params.bin";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    input_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_box: Option<[f64; 2]>,
    layers: Vec<LayerSpec>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    offset: usize,
    shape: Vec<usize>,
}

fn owner(tensor: &str) -> String {
    tensor.split('.').next().unwrap_or(tensor).to_string()
}

/// Writes the bundle into a fresh sibling directory and moves it into place.
pub fn save_bundle(net: &Network, dir: &Path) -> Result<()> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in net.params() {
        tensors.push(TensorEntry {
            name: name.clone(),
            offset: blob.len(),
            shape: t.shape().to_vec(),
        });
        for &v in t.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: BUNDLE_VERSION,
        input_shape: net.input_shape().to_vec(),
        input_box: net.input_box(),
        layers: net.layers().to_vec(),
        tensors,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::MalformedManifest(e.to_string()))?;

    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".bundle-")
        .tempdir_in(parent)
        .map_err(|e| Error::io(parent, e))?;
    fs::write(staging.path().join(MANIFEST), text).map_err(|e| Error::io(dir, e))?;
    fs::write(staging.path().join(BLOB), blob).map_err(|e| Error::io(dir, e))?;
    if dir.exists() {
        if !dir.join(MANIFEST).exists() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::AlreadyExists, "refusing to replace a non-bundle path"),
            ));
        }
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let staged = staging.keep();
    fs::rename(&staged, dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<Network> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::MalformedManifest(e.to_string()))?;
    if manifest.version != BUNDLE_VERSION {
        return Err(Error::MalformedManifest(format!(
            "unsupported version {} (expected {BUNDLE_VERSION})",
            manifest.version
        )));
    }
    let bpath = dir.join(BLOB);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let mut params = BTreeMap::new();
    for entry in manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset.checked_add(4 * n);
        let bytes = match end {
            Some(end) if end <= blob.len() && entry.offset % 4 == 0 => &blob[entry.offset..end],
            _ => {
                return Err(Error::MissingTensor {
                    layer: owner(&entry.name),
                    tensor: entry.name,
                })
            }
        };
        let data = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let t = Tensor::new(entry.shape, data).map_err(|e| Error::MalformedManifest(format!("{}: {e}", entry.name)))?;
        if params.insert(entry.name.clone(), t).is_some() {
            return Err(Error::MalformedManifest(format!("tensor `{}` listed twice", entry.name)));
        }
    }
    Network::new(manifest.input_shape, manifest.layers, params)?.with_input_box(manifest.input_box)
}
