use crate::error::{Error, Result};

/// `(1/A) Σ|r_a − y| − (1/(2A²)) ΣΣ|r_a − r_l|`, the pair sum evaluated on sorted
/// samples as `(1/A²) Σ_i (2i − A − 1) r_(i)`.
pub fn crps_empirical(samples: &[f64], y: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("CRPS needs at least one sample".into()));
    }
    let a = samples.len() as f64;
    let abs_term = samples.iter().map(|r| (r - y).abs()).sum::<f64>() / a;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pair: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, r)| (2.0 * (i + 1) as f64 - a - 1.0) * r)
        .sum::<f64>()
        / (a * a);
    Ok((abs_term - pair).max(0.0))
}

/// Same score by the quadratic double sum.
pub fn crps_naive(samples: &[f64], y: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("CRPS needs at least one sample".into()));
    }
    let a = samples.len() as f64;
    let abs_term = samples.iter().map(|r| (r - y).abs()).sum::<f64>() / a;
    let mut pair = 0.0;
    for r in samples {
        for l in samples {
            pair += (r - l).abs();
        }
    }
    Ok(abs_term - pair / (2.0 * a * a))
}
