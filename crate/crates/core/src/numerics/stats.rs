//! Statistical kernels shared by the metrics and the meta-evaluation.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::Tensor;
use crate::error::{Error, Result};

/// Test statistic with its p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Sample Pearson correlation. Errors when either series is constant.
pub fn pearson_corr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: a.len() });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Which null distribution the signed-rank test uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WilcoxonMethod {
    /// Exact for at most [`WILCOXON_EXACT_MAX`] non-zero differences, normal otherwise.
    Auto,
    Exact,
    Normal,
}

pub const WILCOXON_EXACT_MAX: usize = 25;
pub const WILCOXON_MIN_SAMPLES: usize = 5;

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped and tied magnitudes get average ranks. The
/// statistic is `min(W+, W-)`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<StatResult> {
    wilcoxon_with(a, b, WilcoxonMethod::Auto)
}

pub fn wilcoxon_with(a: &[f64], b: &[f64], method: WilcoxonMethod) -> Result<StatResult> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.len() < WILCOXON_MIN_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: WILCOXON_MIN_SAMPLES,
            got: diffs.len(),
        });
    }
    Ok(signed_rank_test(&diffs, method))
}

/// Signed-rank test on non-zero differences with no minimum count.
pub(crate) fn signed_rank_test(diffs: &[f64], method: WilcoxonMethod) -> StatResult {
    let n = diffs.len();
    let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w = w_plus.min(total - w_plus);
    let exact = match method {
        WilcoxonMethod::Auto => n <= WILCOXON_EXACT_MAX,
        WilcoxonMethod::Exact => true,
        WilcoxonMethod::Normal => false,
    };
    let p_value = if exact {
        exact_lower_tail(&ranks, w)
    } else {
        normal_two_sided(&ranks, w)
    };
    StatResult {
        statistic: w,
        p_value: p_value.clamp(0.0, 1.0),
    }
}

/// `2 · P(W+ <= w)` by enumerating the sign distribution over doubled ranks.
fn exact_lower_tail(ranks: &[f64], w: f64) -> f64 {
    // Average ranks are multiples of 1/2, so doubled ranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max_sum + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let threshold = (2.0 * w).round() as usize;
    let below: f64 = counts[..=threshold].iter().sum();
    let total = 2f64.powi(ranks.len() as i32);
    (2.0 * below / total).min(1.0)
}

fn normal_two_sided(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    // Continuity-corrected; the lower-tail statistic never exceeds the mean.
    let z = ((mean - w) - 0.5).max(0.0) / var.sqrt();
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// 1-based ranks with ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub const SSIM_WINDOW: usize = 7;

/// Mean structural similarity over all 7×7 windows (stride 1, uniform weights,
/// population moments) with `C1 = (0.01·range)²`, `C2 = (0.03·range)²`.
pub fn ssim(a: &Tensor, b: &Tensor, data_range: f64) -> Result<f64> {
    a.expect_same_shape(b)?;
    let (h, w) = a.dims2()?;
    let win = SSIM_WINDOW;
    if h < win || w < win {
        return Err(Error::ShapeMismatch(format!(
            "ssim needs at least {win}x{win}, got {h}x{w}"
        )));
    }
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let (x, y) = (a.data(), b.data());
    let sx = SummedArea::new(h, w, |i| x[i]);
    let sy = SummedArea::new(h, w, |i| y[i]);
    let sxx = SummedArea::new(h, w, |i| x[i] * x[i]);
    let syy = SummedArea::new(h, w, |i| y[i] * y[i]);
    let sxy = SummedArea::new(h, w, |i| x[i] * y[i]);
    let n = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - win {
        for j in 0..=w - win {
            let mx = sx.window(i, j, win) / n;
            let my = sy.window(i, j, win) / n;
            let vx = (sxx.window(i, j, win) / n - mx * mx).max(0.0);
            let vy = (syy.window(i, j, win) / n - my * my).max(0.0);
            let cxy = sxy.window(i, j, win) / n - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

struct SummedArea {
    w: usize,
    table: Vec<f64>,
}

impl SummedArea {
    fn new(h: usize, w: usize, value: impl Fn(usize) -> f64) -> Self {
        let mut table = vec![0.0; (h + 1) * (w + 1)];
        for i in 0..h {
            let mut row = 0.0;
            for j in 0..w {
                row += value(i * w + j);
                table[(i + 1) * (w + 1) + j + 1] = table[i * (w + 1) + j + 1] + row;
            }
        }
        Self { w, table }
    }

    fn window(&self, i: usize, j: usize, size: usize) -> f64 {
        let p = self.w + 1;
        self.table[(i + size) * p + j + size] - self.table[i * p + j + size]
            - self.table[(i + size) * p + j]
            + self.table[i * p + j]
    }
}

pub const DEFAULT_HISTOGRAM_BINS: usize = 100;

/// Shannon entropy (nats) of a histogram with `bins` equal-width bins spanning
/// `[min, max]` of the values. All-equal input has entropy 0.
pub fn histogram_entropy(values: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    if values.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(0.0);
    }
    let mut counts = vec![0usize; bins];
    let scale = bins as f64 / (hi - lo);
    for &v in values {
        let idx = (((v - lo) * scale) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let n = values.len() as f64;
    Ok(-counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>())
}

/// Gini index of non-negative values: `Σ(2ρ − D − 1)·v_ρ / (D·Σv)` over the
/// ascending order, in `[0, 1)`.
pub fn gini_index(values: &[f64]) -> Result<f64> {
    if values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument("gini index needs finite non-negative values".into()));
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroAttribution);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let d = sorted.len() as f64;
    let numerator: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, v)| (2.0 * (i as f64 + 1.0) - d - 1.0) * v)
        .sum();
    Ok(numerator / (d * total))
}
