use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::perturb::{rank_pixels, Strategy};

fn check(attr: &Tensor, mask: &[bool]) -> Result<usize> {
    if attr.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!("{} attributions for a {}-pixel mask", attr.len(), mask.len())));
    }
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::EmptyMask),
        n => Ok(n),
    }
}

fn hits(attr: &Tensor, mask: &[bool], k: usize) -> usize {
    rank_pixels(attr.data(), Strategy::Morf).order[..k]
        .iter()
        .filter(|&&p| mask[p])
        .count()
}

/// Fraction of the `k` highest attributions that fall inside the mask;
/// `k` defaults to the mask size.
pub fn top_k_intersection(attr: &Tensor, mask: &[bool], k: Option<usize>) -> Result<f64> {
    let n = check(attr, mask)?;
    let k = k.unwrap_or(n);
    if k == 0 || k > mask.len() {
        return Err(Error::InvalidArgument(format!("K must be in 1..={}, got {k}", mask.len())));
    }
    Ok(hits(attr, mask, k) as f64 / k as f64)
}

/// Share of mask pixels among the top-|mask| attributions.
pub fn relevance_rank_accuracy(attr: &Tensor, mask: &[bool]) -> Result<f64> {
    let n = check(attr, mask)?;
    Ok(hits(attr, mask, n) as f64 / n as f64)
}
