use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Partition of an `H×W` frame into `count` labelled segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub height: usize,
    pub width: usize,
    /// Segment of every pixel, row-major, each in `0..count`.
    pub ids: Vec<usize>,
    pub count: usize,
}

impl Segmentation {
    pub fn segment_id(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width],
            self.ids.iter().map(|&i| i as f64).collect(),
        )
        .expect("segmentation shape")
    }

    /// Pixels of every segment in row-major order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (p, &id) in self.ids.iter().enumerate() {
            out[id].push(p);
        }
        out
    }

    /// Pixel mask covering the segments flagged in `selected`.
    pub fn mask_of(&self, selected: &[bool]) -> Vec<bool> {
        self.ids.iter().map(|&id| selected[id]).collect()
    }
}

/// `gh × gw` rectangular tiles; the last tile row and column absorb the remainder.
pub fn segment_grid(h: usize, w: usize, gh: usize, gw: usize) -> Result<Segmentation> {
    if gh == 0 || gw == 0 || gh > h || gw > w {
        return Err(Error::InvalidArgument(format!(
            "grid {gh}x{gw} does not fit a {h}x{w} frame"
        )));
    }
    let (th, tw) = (h / gh, w / gw);
    let ids = (0..h * w)
        .map(|p| {
            let (i, j) = (p / w, p % w);
            (i / th).min(gh - 1) * gw + (j / tw).min(gw - 1)
        })
        .collect();
    Ok(Segmentation {
        height: h,
        width: w,
        ids,
        count: gh * gw,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlicParams {
    pub segments: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            segments: 15,
            compactness: 10.0,
            iterations: 10,
        }
    }
}

/// Colour values are compared on a 0..100 scale so that `compactness`
/// keeps its usual meaning for images in `[0,1]`.
const COLOR_SCALE: f64 = 100.0;

/// Grid-seeded k-means over position and colour, searching `2S` around each
/// centre (`S = √(HW/M)`). Segment ids are renumbered by first occurrence in
/// row-major order; clusters that empty out are dropped.
pub fn segment_slic_like(x: &Tensor, params: &SlicParams) -> Result<Segmentation> {
    let (c, h, w) = x.dims3()?;
    let m = params.segments;
    if m == 0 || m > h * w {
        return Err(Error::InvalidArgument(format!(
            "cannot make {m} segments from {} pixels",
            h * w
        )));
    }
    let plane = h * w;
    let step = ((plane as f64) / m as f64).sqrt();
    let spatial_weight = (params.compactness / step).powi(2);
    let data = x.data();
    let color = |p: usize, ch: usize| data[ch * plane + p] * COLOR_SCALE;
    let dist = |p: usize, (cy, cx, col): &(f64, f64, Vec<f64>)| -> f64 {
        let dc: f64 = col.iter().enumerate().map(|(ch, v)| (color(p, ch) - v).powi(2)).sum();
        let ds = ((p / w) as f64 - cy).powi(2) + ((p % w) as f64 - cx).powi(2);
        dc + spatial_weight * ds
    };

    // Centre layout: `rows` rows with the seeds spread as evenly as possible.
    let rows = ((m as f64 * h as f64 / w as f64).sqrt().round() as usize).clamp(1, m.min(h));
    let mut centers: Vec<(f64, f64, Vec<f64>)> = Vec::with_capacity(m);
    for r in 0..rows {
        let in_row = m / rows + usize::from(r < m % rows);
        // Pixel-index coordinates: the centre of a block of rows [a, b) is (a + b - 1) / 2.
        let y = (r as f64 + 0.5) * h as f64 / rows as f64 - 0.5;
        for k in 0..in_row {
            let xx = (k as f64 + 0.5) * w as f64 / in_row as f64 - 0.5;
            let p = (y.round() as usize).min(h - 1) * w + (xx.round() as usize).min(w - 1);
            centers.push((y, xx, (0..c).map(|ch| color(p, ch)).collect()));
        }
    }

    let reach = (2.0 * step).ceil() as isize;
    let mut labels = vec![usize::MAX; plane];
    let mut best = vec![f64::INFINITY; plane];
    for _ in 0..params.iterations.max(1) {
        labels.fill(usize::MAX);
        best.fill(f64::INFINITY);
        for (k, center) in centers.iter().enumerate() {
            let (y0, x0) = (center.0.round() as isize, center.1.round() as isize);
            let ys = (y0 - reach).max(0) as usize..((y0 + reach + 1).min(h as isize)) as usize;
            for i in ys {
                let xs = (x0 - reach).max(0) as usize..((x0 + reach + 1).min(w as isize)) as usize;
                for j in xs {
                    let p = i * w + j;
                    let d = dist(p, center);
                    if d < best[p] {
                        best[p] = d;
                        labels[p] = k;
                    }
                }
            }
        }
        // Anything outside every search window goes to its nearest centre.
        for p in 0..plane {
            if labels[p] == usize::MAX {
                let mut nearest = (f64::INFINITY, 0);
                for (k, center) in centers.iter().enumerate() {
                    let d = dist(p, center);
                    if d < nearest.0 {
                        nearest = (d, k);
                    }
                }
                labels[p] = nearest.1;
            }
        }
        let mut sums = vec![(0.0, 0.0, vec![0.0; c], 0usize); centers.len()];
        for (p, &k) in labels.iter().enumerate() {
            let s = &mut sums[k];
            s.0 += (p / w) as f64;
            s.1 += (p % w) as f64;
            for ch in 0..c {
                s.2[ch] += color(p, ch);
            }
            s.3 += 1;
        }
        for (center, s) in centers.iter_mut().zip(&sums) {
            if s.3 > 0 {
                let n = s.3 as f64;
                *center = (s.0 / n, s.1 / n, s.2.iter().map(|v| v / n).collect());
            }
        }
    }

    let mut remap = vec![usize::MAX; centers.len()];
    let mut count = 0;
    let ids = labels
        .iter()
        .map(|&k| {
            if remap[k] == usize::MAX {
                remap[k] = count;
                count += 1;
            }
            remap[k]
        })
        .collect();
    if count < m {
        log::warn!("superpixel segmentation produced {count} of {m} requested segments");
    }
    Ok(Segmentation {
        height: h,
        width: w,
        ids,
        count,
    })
}
