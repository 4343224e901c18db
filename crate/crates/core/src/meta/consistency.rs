use super::Mode;
use crate::error::{Error, Result};
use crate::numerics::stats::{average_ranks, signed_rank_test, WilcoxonMethod, WILCOXON_MIN_SAMPLES};

/// Signed-rank p-value with the conventions the consistency scores need:
/// identical vectors give 1, and fewer than five non-zero differences use the
/// exact null on what remains.
fn paired_p_value(a: &[f64], b: &[f64]) -> f64 {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return 1.0;
    }
    signed_rank_test(&diffs, WilcoxonMethod::Auto).p_value
}

/// Intra-consistency of one method's scores across `K` perturbations.
/// Minor mode rewards unchanged distributions (mean p), disruptive mode
/// rewards detectable shifts (mean 1 − p).
pub fn iac(unperturbed: &[f64], perturbed: &[Vec<f64>], mode: Mode) -> Result<f64> {
    if perturbed.is_empty() {
        return Err(Error::InvalidArgument("no perturbed score sets".into()));
    }
    if unperturbed.len() < WILCOXON_MIN_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: WILCOXON_MIN_SAMPLES,
            got: unperturbed.len(),
        });
    }
    let mut total = 0.0;
    for q in perturbed {
        if q.len() != unperturbed.len() {
            return Err(Error::ShapeMismatch(format!("{} vs {} scores", unperturbed.len(), q.len())));
        }
        let p = paired_p_value(unperturbed, q);
        total += match mode {
            Mode::Minor => p,
            Mode::Disruptive => 1.0 - p,
        };
    }
    Ok(total / perturbed.len() as f64)
}

/// Inter-consistency over an `N×L` score matrix (rows are samples, columns
/// methods). Minor mode counts cells whose within-row rank is unchanged;
/// disruptive mode counts cells whose score strictly drops.
pub fn iec(unperturbed: &[Vec<f64>], perturbed: &[Vec<Vec<f64>>], mode: Mode) -> Result<f64> {
    if perturbed.is_empty() {
        return Err(Error::InvalidArgument("no perturbed score sets".into()));
    }
    if unperturbed.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let methods = unperturbed[0].len();
    if methods < 2 {
        return Err(Error::Precondition(format!("need at least 2 methods, got {methods}")));
    }
    let mut hits = 0usize;
    let mut cells = 0usize;
    for q in perturbed {
        if q.len() != unperturbed.len() {
            return Err(Error::ShapeMismatch(format!("{} vs {} rows", unperturbed.len(), q.len())));
        }
        for (before, after) in unperturbed.iter().zip(q) {
            if before.len() != methods || after.len() != methods {
                return Err(Error::ShapeMismatch(format!("rows must have {methods} methods")));
            }
            hits += match mode {
                Mode::Minor => {
                    let (rb, ra) = (average_ranks(before), average_ranks(after));
                    rb.iter().zip(&ra).filter(|(a, b)| a == b).count()
                }
                Mode::Disruptive => before.iter().zip(after).filter(|(a, b)| a > b).count(),
            };
            cells += methods;
        }
    }
    Ok(hits as f64 / cells as f64)
}

/// Mean of the four consistency components; an ideal metric scores 1.
pub fn mc_score(iac_nr: f64, iac_ar: f64, iec_nr: f64, iec_ar: f64) -> f64 {
    (iac_nr + iac_ar + iec_nr + iec_ar) / 4.0
}
