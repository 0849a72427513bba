use crate::error::{Error, Result};
use crate::geodata::{PartitionScheme, PointPattern, QuadratureScheme};
use crate::inference::PosteriorDraws;

use super::crps::crps_empirical;

/// Validation residuals of one campaign, indexed `(draw a, fold k, subset g)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTensor {
    pub campaign: usize,
    pub n_draws: usize,
    pub n_folds: usize,
    pub n_subsets: usize,
    pub values: Vec<f64>,
}

impl ResidualTensor {
    pub fn zeros(campaign: usize, n_draws: usize, n_folds: usize, n_subsets: usize) -> Self {
        Self {
            campaign,
            n_draws,
            n_folds,
            n_subsets,
            values: vec![0.0; n_draws * n_folds * n_subsets],
        }
    }

    fn offset(&self, a: usize, k: usize, g: usize) -> usize {
        (a * self.n_folds + k) * self.n_subsets + g
    }

    /// `k` is 0-based here.
    pub fn get(&self, a: usize, k: usize, g: usize) -> f64 {
        self.values[self.offset(a, k, g)]
    }

    /// Stores an `A × G` fold slice (row-major by draw) at fold `k` (0-based).
    pub fn set_fold(&mut self, k: usize, slice: &[f64]) {
        assert_eq!(slice.len(), self.n_draws * self.n_subsets);
        for a in 0..self.n_draws {
            let o = self.offset(a, k, 0);
            self.values[o..o + self.n_subsets].copy_from_slice(&slice[a * self.n_subsets..(a + 1) * self.n_subsets]);
        }
    }

    /// Residuals of subset `g` at fold `k` across draws.
    pub fn draws_at(&self, k: usize, g: usize) -> Vec<f64> {
        (0..self.n_draws).map(|a| self.get(a, k, g)).collect()
    }

    /// Mean and sd (n − 1) over draws and folds for subset `g`.
    pub fn subset_moments(&self, g: usize) -> (f64, f64) {
        let vals: Vec<f64> = (0..self.n_folds).flat_map(|k| self.draws_at(k, g)).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = if vals.len() > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        (mean, var.sqrt())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `CRPS_CV` of every subset: the fold mean of the CRPS of its residual draws at 0.
    pub fn crps_by_subset(&self) -> Result<Vec<f64>> {
        (0..self.n_subsets)
            .map(|g| {
                let mut acc = 0.0;
                for k in 0..self.n_folds {
                    acc += crps_empirical(&self.draws_at(k, g), 0.0)?;
                }
                Ok(acc / self.n_folds as f64)
            })
            .collect()
    }
}

/// `N_val − (1/(K−1)) ∫ λ_train` for one subset.
pub fn validation_residual(observed: f64, train_integral: f64, k_folds: usize) -> f64 {
    observed - train_integral / (k_folds - 1) as f64
}

/// Residuals `N_val(B_g) − (1/(K−1)) Σ_{q∈B_g} α_q λ_train^{(a)}(v_q)` of campaign
/// `campaign` for every draw, as an `A × G` row-major slice.
pub fn campaign_residuals(
    validation: &PointPattern,
    draws: &PosteriorDraws,
    quadrature: &QuadratureScheme,
    partition: &PartitionScheme,
    campaign: usize,
    k_folds: usize,
) -> Result<Vec<f64>> {
    if k_folds < 2 {
        return Err(Error::Usage(format!("validation residuals need at least 2 folds, got {k_folds}")));
    }
    let g = &quadrature.domain.geometry;
    if !partition.domain.geometry.same_lattice(g) {
        return Err(Error::InvalidInput(format!("partition grid of campaign {campaign} differs from its quadrature grid")));
    }
    let lookup = partition.cell_lookup();
    let subset_of_node: Vec<Option<usize>> = quadrature.cells.iter().map(|&c| lookup[c]).collect();
    let n_g = partition.len();
    let mut observed = vec![0.0; n_g];
    for p in validation.points.iter().filter(|p| p.campaign == campaign) {
        let cell = g.cell_of(p.x, p.y).and_then(|c| lookup[c]);
        match cell {
            Some(s) => observed[s] += 1.0,
            None => {
                return Err(Error::InvalidInput(format!(
                    "validation point ({}, {}) of campaign {campaign} lies outside the partition",
                    p.x, p.y
                )))
            }
        }
    }
    let mut out = Vec::with_capacity(draws.n_draws() * n_g);
    for a in 0..draws.n_draws() {
        let eta = draws.eta(a, campaign);
        if eta.len() != quadrature.len() {
            return Err(Error::InvalidInput(format!(
                "fitted campaign {campaign} has {} quadrature nodes, scheme has {}",
                eta.len(),
                quadrature.len()
            )));
        }
        let mut expected = vec![0.0; n_g];
        for ((e, w), s) in eta.iter().zip(&quadrature.weights).zip(&subset_of_node) {
            if let Some(s) = s {
                expected[*s] += w * e.exp();
            }
        }
        out.extend(observed.iter().zip(&expected).map(|(&n, &m)| validation_residual(n, m, k_folds)));
    }
    Ok(out)
}

/// Residual slices of every campaign for one fold.
pub fn validation_residuals(
    validation: &PointPattern,
    draws: &PosteriorDraws,
    quadratures: &[QuadratureScheme],
    partitions: &[PartitionScheme],
    k_folds: usize,
) -> Result<Vec<Vec<f64>>> {
    if quadratures.len() != validation.n_campaigns || partitions.len() != validation.n_campaigns {
        return Err(Error::InvalidInput("one quadrature scheme and one partition per campaign are required".into()));
    }
    (1..=validation.n_campaigns)
        .map(|t| campaign_residuals(validation, draws, &quadratures[t - 1], &partitions[t - 1], t, k_folds))
        .collect()
}
