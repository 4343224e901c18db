//! Input perturbations: baselines, masking, pixel orderings, segmentation
//! and additive noise.

mod segment;

use rand::Rng as _;
use rand_distr::{Normal, StandardUniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::seed;

pub use segment::{segment_grid, segment_slic_like, Segmentation, SlicParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Black,
    Mean,
    UniformRandom,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl BaselineSpec {
    pub const fn black() -> Self {
        Self { kind: BaselineKind::Black, constant_value: None, seed: None }
    }

    pub const fn mean() -> Self {
        Self { kind: BaselineKind::Mean, constant_value: None, seed: None }
    }

    pub const fn uniform_random(seed: u64) -> Self {
        Self { kind: BaselineKind::UniformRandom, constant_value: None, seed: Some(seed) }
    }

    pub const fn constant(value: f64) -> Self {
        Self { kind: BaselineKind::Constant, constant_value: Some(value), seed: None }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            BaselineKind::Black => "black",
            BaselineKind::Mean => "mean",
            BaselineKind::UniformRandom => "uniform",
            BaselineKind::Constant => "constant",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.constant_value) {
            (BaselineKind::Constant, None) => Err(Error::InvalidArgument(
                "constant baseline needs a value".into(),
            )),
            (BaselineKind::Constant, Some(_)) | (_, None) => Ok(()),
            (_, Some(_)) => Err(Error::InvalidArgument(
                "only the constant baseline takes a value".into(),
            )),
        }
    }
}

/// Replacement values for masked pixels.
#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    PerChannel(Vec<f64>),
    /// `[C,H,W]`
    Field(Tensor),
}

impl Baseline {
    #[inline]
    pub fn value(&self, channel: usize, plane_len: usize, pixel: usize) -> f64 {
        match self {
            Baseline::PerChannel(v) => v[channel],
            Baseline::Field(t) => t.data()[channel * plane_len + pixel],
        }
    }
}

pub fn resolve_baseline(spec: &BaselineSpec, x: &Tensor) -> Result<Baseline> {
    spec.validate()?;
    let (c, h, w) = x.dims3()?;
    let plane = h * w;
    Ok(match spec.kind {
        BaselineKind::Black => Baseline::PerChannel(vec![0.0; c]),
        BaselineKind::Constant => Baseline::PerChannel(vec![spec.constant_value.expect("validated"); c]),
        BaselineKind::Mean => Baseline::PerChannel(
            x.data()
                .chunks_exact(plane)
                // Shifted by the first value so constant channels come out exact.
                .map(|ch| ch[0] + ch.iter().map(|v| v - ch[0]).sum::<f64>() / plane as f64)
                .collect(),
        ),
        BaselineKind::UniformRandom => {
            let mut rng = seed::derived_rng(spec.seed.unwrap_or(0), "uniform-baseline", &[]);
            Baseline::Field(Tensor::from_fn(&[c, h, w], |_| rng.sample(StandardUniform)))
        }
    })
}

/// Replaces the pixels where `mask` is set, across all channels.
pub fn apply_mask(x: &Tensor, mask: &[bool], baseline: &Baseline) -> Result<Tensor> {
    let mut out = x.clone();
    apply_mask_in_place(&mut out, mask, baseline)?;
    Ok(out)
}

pub fn apply_mask_in_place(x: &mut Tensor, mask: &[bool], baseline: &Baseline) -> Result<()> {
    let (c, h, w) = x.dims3()?;
    let plane = h * w;
    if mask.len() != plane {
        return Err(Error::ShapeMismatch(format!(
            "mask of {} pixels for a {h}x{w} image",
            mask.len()
        )));
    }
    if let Baseline::Field(t) = baseline {
        x.expect_same_shape(t)?;
    }
    let data = x.data_mut();
    for ch in 0..c {
        for p in (0..plane).filter(|&p| mask[p]) {
            data[ch * plane + p] = baseline.value(ch, plane, p);
        }
    }
    Ok(())
}

/// Binary mask from a `[H,W]` tensor (non-zero = masked).
pub fn mask_from_tensor(m: &Tensor) -> Result<Vec<bool>> {
    m.dims2()?;
    Ok(m.data().iter().map(|&v| v != 0.0).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Most relevant first.
    Morf,
    /// Least relevant first.
    Lerf,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Morf => "morf",
            Strategy::Lerf => "lerf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelOrdering {
    /// Flat row-major pixel indices.
    pub order: Vec<usize>,
    pub strategy: Strategy,
}

/// Sorts pixels by attribution (descending for MoRF, ascending for LeRF);
/// ties keep row-major order.
pub fn rank_pixels(values: &[f64], strategy: Strategy) -> PixelOrdering {
    let mut order: Vec<usize> = (0..values.len()).collect();
    match strategy {
        Strategy::Morf => order.sort_by(|&a, &b| values[b].total_cmp(&values[a])),
        Strategy::Lerf => order.sort_by(|&a, &b| values[a].total_cmp(&values[b])),
    }
    PixelOrdering { order, strategy }
}

/// `x + N(0, std²)` per element, clamped to `[0,1]`.
pub fn gaussian_input_noise(x: &Tensor, std: f64, seed: u64) -> Result<Tensor> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise std must be >= 0, got {std}")));
    }
    if std == 0.0 {
        return Ok(x.clone());
    }
    let dist = Normal::new(0.0, std).expect("valid std");
    let mut rng = seed::derived_rng(seed, "input-noise", &[]);
    let data = x.data();
    Ok(Tensor::from_fn(x.shape(), |i| (data[i] + rng.sample(dist)).clamp(0.0, 1.0)))
}
