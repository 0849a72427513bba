//! K-fold cross-validation of point-process models by independent thinning,
//! scored with the CRPS of partitioned validation residuals.

mod crps;
mod folds;
mod residuals;
mod sweep;

pub use crps::{crps_empirical, crps_naive};
pub use folds::{assign_folds, split, thin_intensity, FoldAssignment};
pub use residuals::{campaign_residuals, validation_residual, validation_residuals, ResidualTensor};
pub use sweep::{run_sweep, CvData, CvOptions, ModelOutcome, SweepResult, TaskFailure};

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geodata::PartitionScheme;

/// How per-(subset, campaign) scores are pooled into one model score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    #[default]
    Unweighted,
    /// Proportional to subset area.
    Area,
}

/// Cross-validated CRPS of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct CrpsTable {
    pub model_id: String,
    /// `CRPS_CV` per campaign (outer, index `t - 1`) and subset.
    pub by_subset: Vec<Vec<f64>>,
    /// Pooling weight of every entry of `by_subset`; sums to 1.
    pub weights: Vec<Vec<f64>>,
    pub aggregate: f64,
}

/// Pools the fold-averaged subset scores of every campaign.
pub fn aggregate_crps(
    model_id: &str,
    tensors: &[ResidualTensor],
    partitions: &[PartitionScheme],
    weighting: Weighting,
) -> Result<CrpsTable> {
    if tensors.len() != partitions.len() {
        return Err(Error::InvalidInput(format!("{} residual tensors for {} partitions", tensors.len(), partitions.len())));
    }
    let mut by_subset = Vec::with_capacity(tensors.len());
    let mut raw_weights = Vec::with_capacity(tensors.len());
    for (r, p) in tensors.iter().zip(partitions) {
        if r.n_subsets != p.len() {
            return Err(Error::InvalidInput(format!(
                "campaign {} tensor has {} subsets, partition {}",
                r.campaign,
                r.n_subsets,
                p.len()
            )));
        }
        if p.n_empty > 0 {
            log::debug!("campaign {}: {} empty lattice cells excluded", r.campaign, p.n_empty);
        }
        by_subset.push(r.crps_by_subset()?);
        raw_weights.push(match weighting {
            Weighting::Unweighted => vec![1.0; p.len()],
            Weighting::Area => p.subsets.iter().map(|s| s.area).collect(),
        });
    }
    let total: f64 = raw_weights.iter().flatten().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("no subsets to score".into()));
    }
    let weights: Vec<Vec<f64>> = raw_weights.iter().map(|w| w.iter().map(|v| v / total).collect()).collect();
    let aggregate = by_subset.iter().flatten().zip(weights.iter().flatten()).map(|(s, w)| s * w).sum();
    Ok(CrpsTable {
        model_id: model_id.to_string(),
        by_subset,
        weights,
        aggregate,
    })
}

/// Indices of `tables` by ascending aggregate CRPS, ties broken by `model_id`.
pub fn rank_models(tables: &[CrpsTable]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..tables.len()).collect();
    idx.sort_by(|&a, &b| {
        tables[a]
            .aggregate
            .total_cmp(&tables[b].aggregate)
            .then_with(|| tables[a].model_id.cmp(&tables[b].model_id))
    });
    idx
}

/// `g,xmin,ymin,xmax,ymax,mean,sd` of the residuals of one campaign over draws and folds.
pub fn residual_map_csv(tensor: &ResidualTensor, partition: &PartitionScheme) -> String {
    let mut out = String::from("g,xmin,ymin,xmax,ymax,residual_mean,residual_sd\n");
    for (g, s) in partition.subsets.iter().enumerate() {
        let (m, sd) = tensor.subset_moments(g);
        let (x0, y0, x1, y1) = s.bbox;
        writeln!(out, "{},{x0},{y0},{x1},{y1},{m},{sd}", g + 1).unwrap();
    }
    out
}

/// `g,crps` for one campaign (`t` 1-based).
pub fn crps_map_csv(table: &CrpsTable, t: usize) -> String {
    let mut out = String::from("g,crps\n");
    for (g, v) in table.by_subset[t - 1].iter().enumerate() {
        writeln!(out, "{},{v}", g + 1).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{build_partition, DomainMask, GridGeometry};

    fn table(id: &str, v: f64) -> CrpsTable {
        CrpsTable {
            model_id: id.into(),
            by_subset: vec![vec![v]],
            weights: vec![vec![1.0]],
            aggregate: v,
        }
    }

    #[test]
    fn ranking_order_and_ties() {
        let t = vec![table("M2", 0.4544), table("M1", 0.4543), table("M0", 0.4544)];
        assert_eq!(rank_models(&t), vec![1, 2, 0]);
        assert_eq!(rank_models(&t[..1]), vec![0]);
    }

    #[test]
    fn fold_mean_of_point_masses() {
        // residual draws constant per fold: CRPS is |r|, so folds {0.4, 0.6} average 0.5
        let p = build_partition(&DomainMask::full(GridGeometry::square(2, 2, 1.0)), 1, 1).unwrap();
        let mut r = ResidualTensor::zeros(1, 3, 2, 1);
        r.set_fold(0, &[0.4; 3]);
        r.set_fold(1, &[-0.6; 3]);
        let t = aggregate_crps("m", &[r], &[p], Weighting::Unweighted).unwrap();
        assert!((t.aggregate - 0.5).abs() < 1e-15);
    }

    #[test]
    fn area_weights_sum_to_one() {
        let d = DomainMask::from_predicate(GridGeometry::square(4, 4, 1.0), |c| c != 0);
        let p = build_partition(&d, 2, 2).unwrap();
        let r = ResidualTensor::zeros(1, 2, 2, p.len());
        let t = aggregate_crps("m", &[r.clone(), r], &[p.clone(), p], Weighting::Area).unwrap();
        let s: f64 = t.weights.iter().flatten().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(t.aggregate, 0.0);
    }
}
