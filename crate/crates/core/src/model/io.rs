//! Model file: a UTF-8 JSON header, a NUL byte, then every parameter as a
//! little-endian `f32` in layer declaration order (weights before bias).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::ModelGraph;
use super::layer::{ConvLayer, DenseLayer, Layer, LayerKind};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    input_shape: [usize; 3],
    num_classes: usize,
    seed: u64,
    layers: Vec<LayerHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerHeader {
    kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pad: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    params: Vec<Vec<usize>>,
}

fn corrupt(layer: Option<usize>, reason: impl Into<String>) -> Error {
    Error::CorruptModel {
        layer,
        reason: reason.into(),
    }
}

pub fn to_bytes(model: &ModelGraph) -> Vec<u8> {
    let layers = model
        .layers()
        .iter()
        .map(|l| {
            let params = l.params().iter().map(|t| t.shape().to_vec()).collect();
            let (window, stride, pad) = match l {
                Layer::Conv(c) => (None, Some(c.stride), Some(c.pad)),
                Layer::MaxPool { window, stride } | Layer::AvgPool { window, stride } => {
                    (Some(*window), Some(*stride), None)
                }
                _ => (None, None, None),
            };
            LayerHeader {
                kind: l.kind(),
                window,
                stride,
                pad,
                params,
            }
        })
        .collect();
    let header = Header {
        format_version: MODEL_FORMAT_VERSION,
        input_shape: model.input_shape(),
        num_classes: model.num_classes(),
        seed: model.seed(),
        layers,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(0);
    for t in model.layers().iter().flat_map(|l| l.params()) {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelGraph> {
    let split = bytes
        .iter()
        .position(|&b| b == 0)
        .ok_or_else(|| corrupt(None, "missing header separator"))?;
    let header: Header = serde_json::from_slice(&bytes[..split])
        .map_err(|e| corrupt(None, format!("bad header: {e}")))?;
    if header.format_version != MODEL_FORMAT_VERSION {
        return Err(corrupt(
            None,
            format!("unsupported format version {}", header.format_version),
        ));
    }
    let mut blob = &bytes[split + 1..];
    let mut shape = header.input_shape.to_vec();
    let mut layers = Vec::with_capacity(header.layers.len());
    for (i, lh) in header.layers.iter().enumerate() {
        let need = |v: Option<usize>, what: &str| v.ok_or_else(|| corrupt(Some(i), format!("missing {what}")));
        let expected_params = match lh.kind {
            LayerKind::Conv => 4,
            LayerKind::Dense => 2,
            _ => 0,
        };
        if lh.params.len() != if expected_params > 0 { 2 } else { 0 } {
            return Err(corrupt(Some(i), format!("{} parameter tensors for {}", lh.params.len(), lh.kind)));
        }
        let mut tensors = Vec::new();
        for (k, dims) in lh.params.iter().enumerate() {
            let rank = if k == 0 { expected_params } else { 1 };
            if dims.len() != rank || dims.contains(&0) {
                return Err(corrupt(Some(i), format!("bad parameter shape {dims:?}")));
            }
            let n: usize = dims.iter().product();
            if blob.len() < 4 * n {
                return Err(corrupt(
                    Some(i),
                    format!("blob truncated: need {} bytes, {} left", 4 * n, blob.len()),
                ));
            }
            let data = blob[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            blob = &blob[4 * n..];
            tensors.push(Tensor::new(dims.clone(), data).map_err(|e| corrupt(Some(i), e.to_string()))?);
        }
        let layer = match lh.kind {
            LayerKind::Conv => {
                let bias = tensors.pop().expect("two tensors");
                let weights = tensors.pop().expect("two tensors");
                Layer::Conv(ConvLayer {
                    weights,
                    bias,
                    stride: need(lh.stride, "stride")?,
                    pad: need(lh.pad, "pad")?,
                })
            }
            LayerKind::Dense => {
                let bias = tensors.pop().expect("two tensors");
                let weights = tensors.pop().expect("two tensors");
                Layer::Dense(DenseLayer { weights, bias })
            }
            LayerKind::Relu => Layer::Relu,
            LayerKind::Flatten => Layer::Flatten,
            LayerKind::GlobalAvgpool => Layer::GlobalAvgPool,
            LayerKind::Maxpool => Layer::MaxPool {
                window: need(lh.window, "window")?,
                stride: need(lh.stride, "stride")?,
            },
            LayerKind::Avgpool => Layer::AvgPool {
                window: need(lh.window, "window")?,
                stride: need(lh.stride, "stride")?,
            },
        };
        shape = layer
            .output_shape(&shape)
            .map_err(|e| corrupt(Some(i), e.to_string()))?;
        layers.push(layer);
    }
    if !blob.is_empty() {
        return Err(corrupt(None, format!("{} trailing bytes after parameters", blob.len())));
    }
    if shape != [header.num_classes] {
        return Err(corrupt(
            None,
            format!("output shape {shape:?} does not match {} classes", header.num_classes),
        ));
    }
    ModelGraph::new(header.input_shape, layers, header.seed).map_err(|e| corrupt(None, e.to_string()))
}

pub fn save_model(model: &ModelGraph, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelGraph> {
    from_bytes(&fs::read(path)?)
}
