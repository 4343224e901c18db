use crate::error::{Error, Result};
use crate::numerics::{gini_index, Tensor};

/// Gini index of the absolute attributions.
pub fn sparseness(attr: &Tensor) -> Result<f64> {
    let abs: Vec<f64> = attr.data().iter().map(|v| v.abs()).collect();
    gini_index(&abs)
}

/// Shannon entropy of the absolute attributions read as a distribution.
pub fn complexity(attr: &Tensor) -> Result<f64> {
    let total: f64 = attr.data().iter().map(|v| v.abs()).sum();
    if !(total > 0.0) {
        return Err(Error::AllZeroAttribution);
    }
    Ok(-attr
        .data()
        .iter()
        .map(|v| v.abs() / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>())
}
