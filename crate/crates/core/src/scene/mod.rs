//! Synthetic multi-label scenes: rectangular land-cover regions with a
//! per-class spectral signature, Gaussian texture and exact class masks.

mod io;

use rand::Rng as _;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::seed;

pub use io::{load_dataset, save_dataset, DATASET_FORMAT_VERSION};
pub(crate) use io::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionShape {
    Rectangle,
    /// Rectangles whose borders are rounded off by majority smoothing.
    Blob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSignature {
    /// Mean value per channel.
    pub mean: Vec<f64>,
    /// Multiplier on `noise_std` for this class's texture.
    pub texture: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
    /// Empty means "derive from the class count", see [`default_signatures`].
    pub signatures: Vec<ClassSignature>,
    pub min_regions: usize,
    pub max_regions: usize,
    pub region_shape: RegionShape,
    pub noise_std: f64,
    /// Share of dataset scenes made of a single class covering every pixel.
    pub single_class_fraction: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 3,
            num_classes: 5,
            signatures: Vec::new(),
            min_regions: 1,
            max_regions: 4,
            region_shape: RegionShape::Rectangle,
            noise_std: 0.05,
            single_class_fraction: 0.2,
        }
    }
}

/// Signatures on a regular grid inside `[0.15, 0.85]^C`: class `c` takes the
/// base-`k` digits of `c` as grid coordinates, `k` the smallest base that fits.
pub fn default_signatures(num_classes: usize, channels: usize) -> Vec<ClassSignature> {
    let mut k = 2usize;
    while k.pow(channels as u32) < num_classes {
        k += 1;
    }
    let level = |d: usize| 0.15 + 0.7 * d as f64 / (k - 1) as f64;
    (0..num_classes)
        .map(|c| {
            let mut rest = c;
            let mean = (0..channels)
                .map(|_| {
                    let d = rest % k;
                    rest /= k;
                    level(d)
                })
                .collect();
            ClassSignature { mean, texture: 1.0 }
        })
        .collect()
}

impl SceneConfig {
    pub fn signatures(&self) -> Vec<ClassSignature> {
        if self.signatures.is_empty() {
            default_signatures(self.num_classes, self.channels)
        } else {
            self.signatures.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_classes < 2 || self.num_classes > 255 {
            return bad(format!("need 2..=255 classes, got {}", self.num_classes));
        }
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return bad("scene dimensions must be positive".into());
        }
        if self.min_regions == 0 || self.min_regions > self.max_regions {
            return bad(format!("bad region range {}..={}", self.min_regions, self.max_regions));
        }
        if !(self.noise_std >= 0.0) || !(0.0..=1.0).contains(&self.single_class_fraction) {
            return bad("noise_std must be >= 0 and the single-class fraction in [0,1]".into());
        }
        let sigs = self.signatures();
        if sigs.len() != self.num_classes || sigs.iter().any(|s| s.mean.len() != self.channels) {
            return bad("one signature of length C per class required".into());
        }
        for a in 0..sigs.len() {
            for b in a + 1..sigs.len() {
                let d: f64 = sigs[a]
                    .mean
                    .iter()
                    .zip(&sigs[b].mean)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if d <= 4.0 * self.noise_std {
                    return bad(format!(
                        "signatures {a} and {b} are {d:.3} apart, need more than 4·noise_std"
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: u64,
    /// `[C,H,W]` in `[0,1]`.
    pub image: Tensor,
    pub labels: Vec<bool>,
    /// Class of every pixel, row-major.
    pub class_map: Vec<u8>,
    pub height: usize,
    pub width: usize,
}

impl Scene {
    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Binary `[H,W]` reference mask of class `c`.
    pub fn mask(&self, c: usize) -> Tensor {
        Tensor::new(
            vec![self.height, self.width],
            self.class_map.iter().map(|&k| f64::from(usize::from(k) == c)).collect(),
        )
        .expect("mask shape")
    }

    pub fn masks(&self) -> Vec<Tensor> {
        (0..self.num_classes()).map(|c| self.mask(c)).collect()
    }

    pub fn mask_area(&self, c: usize) -> usize {
        self.class_map.iter().filter(|&&k| usize::from(k) == c).count()
    }

    pub fn is_single_class(&self) -> bool {
        self.labels.iter().filter(|&&l| l).count() == 1
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    top: usize,
    left: usize,
    h: usize,
    w: usize,
}

/// One scene, deterministic in `(config, scene_seed)`.
pub fn generate_scene(config: &SceneConfig, scene_seed: u64) -> Result<Scene> {
    config.validate()?;
    Ok(build_scene(config, scene_seed, false))
}

/// A scene where one class covers every pixel.
pub fn generate_single_class_scene(config: &SceneConfig, scene_seed: u64) -> Result<Scene> {
    config.validate()?;
    Ok(build_scene(config, scene_seed, true))
}

fn build_scene(config: &SceneConfig, scene_seed: u64, single: bool) -> Scene {
    let (h, w, l) = (config.height, config.width, config.num_classes);
    let mut rng = seed::derived_rng(scene_seed, "scene-layout", &[]);
    let class_map = if single {
        vec![rng.random_range(0..l) as u8; h * w]
    } else {
        let regions = rng.random_range(config.min_regions..=config.max_regions);
        let mut map = vec![0u8; h * w];
        for rect in guillotine(h, w, regions, &mut rng) {
            let class = rng.random_range(0..l) as u8;
            for i in rect.top..rect.top + rect.h {
                map[i * w + rect.left..i * w + rect.left + rect.w].fill(class);
            }
        }
        if config.region_shape == RegionShape::Blob {
            map = majority_smooth(&map, h, w, l, 2);
        }
        map
    };
    let mut labels = vec![false; l];
    for &k in &class_map {
        labels[usize::from(k)] = true;
    }
    let sigs = config.signatures();
    let mut noise_rng = seed::derived_rng(scene_seed, "scene-noise", &[]);
    let plane = h * w;
    let mut image = vec![0.0; config.channels * plane];
    for ch in 0..config.channels {
        for p in 0..plane {
            let s = &sigs[usize::from(class_map[p])];
            let std = config.noise_std * s.texture;
            let noise = if std > 0.0 {
                noise_rng.sample(Normal::new(0.0, std).expect("finite std"))
            } else {
                0.0
            };
            // Stored at single precision so datasets round-trip exactly.
            image[ch * plane + p] = (s.mean[ch] + noise).clamp(0.0, 1.0) as f32 as f64;
        }
    }
    Scene {
        id: scene_seed,
        image: Tensor::new(vec![config.channels, h, w], image).expect("image shape"),
        labels,
        class_map,
        height: h,
        width: w,
    }
}

/// Splits the frame into up to `n` rectangles by recursive straight cuts of
/// the largest remaining piece.
fn guillotine(h: usize, w: usize, n: usize, rng: &mut seed::Rng) -> Vec<Rect> {
    const MIN_SIDE: usize = 4;
    let mut rects = vec![Rect { top: 0, left: 0, h, w }];
    while rects.len() < n {
        let Some(idx) = (0..rects.len())
            .filter(|&i| rects[i].h >= 2 * MIN_SIDE || rects[i].w >= 2 * MIN_SIDE)
            .max_by_key(|&i| (rects[i].h * rects[i].w, usize::MAX - i))
        else {
            break;
        };
        let r = rects.swap_remove(idx);
        let horizontal = if r.h >= 2 * MIN_SIDE && r.w >= 2 * MIN_SIDE {
            rng.random_bool(0.5)
        } else {
            r.h >= 2 * MIN_SIDE
        };
        if horizontal {
            let cut = rng.random_range(MIN_SIDE..=r.h - MIN_SIDE);
            rects.push(Rect { h: cut, ..r });
            rects.push(Rect { top: r.top + cut, h: r.h - cut, ..r });
        } else {
            let cut = rng.random_range(MIN_SIDE..=r.w - MIN_SIDE);
            rects.push(Rect { w: cut, ..r });
            rects.push(Rect { left: r.left + cut, w: r.w - cut, ..r });
        }
    }
    rects
}

/// Replaces every pixel by the most frequent class of its 5×5 neighbourhood
/// (ties keep the current class), `passes` times.
fn majority_smooth(map: &[u8], h: usize, w: usize, l: usize, passes: usize) -> Vec<u8> {
    let mut cur = map.to_vec();
    let mut counts = vec![0usize; l];
    for _ in 0..passes {
        let prev = cur.clone();
        for i in 0..h {
            for j in 0..w {
                counts.fill(0);
                for y in i.saturating_sub(2)..(i + 3).min(h) {
                    for x in j.saturating_sub(2)..(j + 3).min(w) {
                        counts[usize::from(prev[y * w + x])] += 1;
                    }
                }
                let own = usize::from(prev[i * w + j]);
                let mut best = own;
                for (c, &n) in counts.iter().enumerate() {
                    if n > counts[best] {
                        best = c;
                    }
                }
                cur[i * w + j] = best as u8;
            }
        }
    }
    cur
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SceneConfig,
    pub base_seed: u64,
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// Stable identifier derived from the configuration and seed range.
    pub fn id(&self) -> u64 {
        let cfg = serde_json::to_string(&self.config).expect("config serializes");
        seed::derive(self.base_seed, &cfg, &[self.scenes.len() as u64])
    }

    pub fn images(&self) -> Vec<Tensor> {
        self.scenes.iter().map(|s| s.image.clone()).collect()
    }

    pub fn labels(&self) -> Vec<Vec<bool>> {
        self.scenes.iter().map(|s| s.labels.clone()).collect()
    }
}

/// Whether the `k`-th scene of a dataset is a single-class full-coverage
/// scene; spreads the configured fraction evenly over the sequence.
pub fn is_single_class_slot(k: usize, fraction: f64) -> bool {
    ((k + 1) as f64 * fraction).floor() > (k as f64 * fraction).floor()
}

/// Scenes with seeds `base_seed..base_seed + n`.
pub fn generate_dataset(config: &SceneConfig, n: usize, base_seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be >= 1".into()));
    }
    config.validate()?;
    let scenes = (0..n)
        .into_par_iter()
        .map(|k| {
            let single = is_single_class_slot(k, config.single_class_fraction);
            build_scene(config, base_seed.wrapping_add(k as u64), single)
        })
        .collect();
    Ok(Dataset {
        config: config.clone(),
        base_seed,
        scenes,
    })
}
