use serde::{Deserialize, Serialize};

use super::{AttributionMap, MethodId};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::numerics::Tensor;
use crate::perturb::{apply_mask_in_place, resolve_baseline, BaselineSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionConfig {
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub baseline: BaselineSpec,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            window: (25, 25),
            stride: (5, 5),
            baseline: BaselineSpec::black(),
        }
    }
}

/// Window starts `0, s, 2s, …` up to and including the first window that
/// reaches the border; that last window is clipped.
pub fn window_starts(len: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut starts = vec![0];
    while starts.last().expect("non-empty") + window < len {
        starts.push(starts.last().expect("non-empty") + stride);
    }
    starts
}

/// Sliding-window occlusion: every pixel gets the mean probability drop over
/// the windows covering it.
pub fn occlusion(model: &ModelGraph, x: &Tensor, classes: &[usize], cfg: &OcclusionConfig) -> Result<Vec<AttributionMap>> {
    let (_, h, w) = x.dims3()?;
    let ((wh, ww), (sh, sw)) = (cfg.window, cfg.stride);
    if wh == 0 || ww == 0 || sh == 0 || sw == 0 {
        return Err(Error::InvalidArgument("occlusion window and stride must be positive".into()));
    }
    if wh > h || ww > w {
        return Err(Error::InvalidArgument(format!(
            "occlusion window {wh}x{ww} exceeds the {h}x{w} image"
        )));
    }
    let baseline = resolve_baseline(&cfg.baseline, x)?;
    let base = model.probabilities(x)?;
    let mut sums = vec![vec![0.0; h * w]; classes.len()];
    let mut counts = vec![0u32; h * w];
    let mut mask = vec![false; h * w];
    for &top in &window_starts(h, wh, sh) {
        for &left in &window_starts(w, ww, sw) {
            let rows = top..(top + wh).min(h);
            let cols = left..(left + ww).min(w);
            mask.fill(false);
            for i in rows.clone() {
                mask[i * w + cols.start..i * w + cols.end].fill(true);
            }
            let mut perturbed = x.clone();
            apply_mask_in_place(&mut perturbed, &mask, &baseline)?;
            let probs = model.probabilities(&perturbed)?;
            for i in rows {
                for j in cols.clone() {
                    counts[i * w + j] += 1;
                }
            }
            for (sum, &c) in sums.iter_mut().zip(classes) {
                let delta = base[c] - probs[c];
                for (p, s) in sum.iter_mut().enumerate() {
                    if mask[p] {
                        *s += delta;
                    }
                }
            }
        }
    }
    classes
        .iter()
        .zip(sums)
        .map(|(&c, sum)| {
            let values = sum.iter().zip(&counts).map(|(s, &n)| s / f64::from(n)).collect();
            Ok(AttributionMap::new(Tensor::new(vec![h, w], values)?, c, MethodId::Occlusion.as_str()))
        })
        .collect()
}
