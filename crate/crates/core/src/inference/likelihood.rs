use crate::error::{Error, Result};
use crate::geodata::{PointPattern, QuadratureScheme};

/// Counts-in-cells data of one campaign over its quadrature scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignCounts {
    pub cells: Vec<usize>,
    pub weights: Vec<f64>,
    pub counts: Vec<u32>,
}

impl CampaignCounts {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&n| n as u64).sum()
    }

    pub fn area(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `Σ_q [N_q log(α_q λ_q) − α_q λ_q − log N_q!]` with `λ_q = exp(eta[q])`,
    /// `λ` floored at 1e-300 inside the logarithm.
    pub fn log_likelihood(&self, eta: &[f64]) -> f64 {
        assert_eq!(eta.len(), self.counts.len());
        let mut acc = 0.0;
        for ((&n, &a), &e) in self.counts.iter().zip(&self.weights).zip(eta) {
            let lambda = e.exp();
            acc -= a * lambda;
            if n > 0 {
                let nf = n as f64;
                acc += nf * (a.ln() + lambda.max(1e-300).ln()) - ln_factorial(n);
            }
        }
        acc
    }
}

pub(crate) fn ln_factorial(n: u32) -> f64 {
    statrs::function::factorial::ln_factorial(n as u64)
}

/// Per-campaign point counts on the quadrature cells of each campaign domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedLikelihood {
    pub campaigns: Vec<CampaignCounts>,
}

impl GriddedLikelihood {
    pub fn n_campaigns(&self) -> usize {
        self.campaigns.len()
    }

    pub fn total_count(&self) -> u64 {
        self.campaigns.iter().map(CampaignCounts::total).sum()
    }

    /// Full Poisson log-likelihood for per-campaign linear predictors.
    pub fn log_likelihood(&self, eta: &[Vec<f64>]) -> f64 {
        self.campaigns.iter().zip(eta).map(|(c, e)| c.log_likelihood(e)).sum()
    }
}

/// Bins points into the cells of their campaign's quadrature scheme
/// (`quadratures[t - 1]` for campaign `t`).
pub fn bin_points(pattern: &PointPattern, quadratures: &[QuadratureScheme]) -> Result<GriddedLikelihood> {
    if quadratures.len() != pattern.n_campaigns {
        return Err(Error::InvalidInput(format!(
            "{} quadrature schemes for {} campaigns",
            quadratures.len(),
            pattern.n_campaigns
        )));
    }
    let mut campaigns: Vec<CampaignCounts> = quadratures
        .iter()
        .map(|q| CampaignCounts {
            cells: q.cells.clone(),
            weights: q.weights.clone(),
            counts: vec![0; q.len()],
        })
        .collect();
    let lookups: Vec<Vec<Option<usize>>> = quadratures
        .iter()
        .map(|q| {
            let mut l = vec![None; q.domain.geometry.n_cells()];
            for (k, &c) in q.cells.iter().enumerate() {
                l[c] = Some(k);
            }
            l
        })
        .collect();
    let mut outside = Vec::new();
    for (row, p) in pattern.points.iter().enumerate() {
        let t = p.campaign - 1;
        let slot = quadratures[t].domain.geometry.cell_of(p.x, p.y).and_then(|c| lookups[t][c]);
        match slot {
            Some(k) => campaigns[t].counts[k] += 1,
            None => outside.push(row),
        }
    }
    if !outside.is_empty() {
        return Err(Error::PointsOutsideDomain { rows: outside });
    }
    Ok(GriddedLikelihood { campaigns })
}
