use crate::error::{Error, Result};
use crate::geodata::PointPattern;
use crate::rng::{derive_seed, label_hash};

/// Fold mark of every observed point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    /// Mark in `1..=k` per point, in pattern order.
    pub marks: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

impl FoldAssignment {
    /// Points per fold, index `k - 1`.
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.k];
        for &m in &self.marks {
            out[m - 1] += 1;
        }
        out
    }
}

/// Independent uniform marks on `1..=k`; the mark of point `i` depends only on `(seed, i)`.
pub fn assign_folds(pattern: &PointPattern, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(Error::Usage("fold count must be at least 1".into()));
    }
    let salt = label_hash("fold marks");
    let marks = (0..pattern.len())
        .map(|i| {
            let u = derive_seed(seed, &[salt, i as u64]);
            ((u as u128 * k as u128) >> 64) as usize + 1
        })
        .collect();
    Ok(FoldAssignment { marks, k, seed })
}

/// `(train, validation)` for fold `k`: points marked `k` validate, the rest train.
pub fn split(pattern: &PointPattern, assignment: &FoldAssignment, k: usize) -> Result<(PointPattern, PointPattern)> {
    if assignment.marks.len() != pattern.len() {
        return Err(Error::InvalidInput(format!(
            "{} fold marks for {} points",
            assignment.marks.len(),
            pattern.len()
        )));
    }
    if k == 0 || k > assignment.k {
        return Err(Error::Usage(format!("fold {k} outside 1..={}", assignment.k)));
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (p, &m) in pattern.points.iter().zip(&assignment.marks) {
        if m == k {
            val.push(*p);
        } else {
            train.push(*p);
        }
    }
    Ok((
        PointPattern::new(train, pattern.n_campaigns)?,
        PointPattern::new(val, pattern.n_campaigns)?,
    ))
}

/// `((K−1)/K · λ, λ/K)`; the validation part equals the training part over `K − 1`.
pub fn thin_intensity(lambda: &[f64], k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if k < 2 {
        return Err(Error::Usage(format!("thinning needs at least 2 folds, got {k}")));
    }
    if let Some(v) = lambda.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidInput(format!("intensity {v} is negative or undefined")));
    }
    let kf = k as f64;
    let (train, val) = lambda
        .iter()
        .map(|&l| {
            let v = l / kf;
            let t = l - v;
            // l − t is exact for t ≥ l/2; used when rounding broke t + v == l
            if t + v == l {
                (t, v)
            } else {
                (t, l - t)
            }
        })
        .unzip();
    Ok((train, val))
}
