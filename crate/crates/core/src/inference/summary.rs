use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geodata::{CovariateStack, RasterGrid, RasterKind};
use crate::model::{raw_scale_coefficients, EFFORT_LABEL};

use super::fit::PosteriorDraws;

/// Posterior mean, sd and 2.5/50/97.5% quantiles of one quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub model_id: String,
    pub rows: Vec<ParameterSummary>,
    pub dic: f64,
    pub effective_parameters: f64,
}

impl FitSummary {
    pub fn row(&self, name: &str) -> Option<&ParameterSummary> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("parameter,mean,sd,q2.5,q50,q97.5\n");
        for r in &self.rows {
            let name = if r.name.contains(',') || r.name.contains('"') {
                format!("\"{}\"", r.name.replace('"', "\"\""))
            } else {
                r.name.clone()
            };
            writeln!(out, "{name},{},{},{},{},{}", r.mean, r.sd, r.q025, r.q50, r.q975).unwrap();
        }
        out
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// (`h = (n − 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize_values(name: impl Into<String>, values: &[f64]) -> ParameterSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    ParameterSummary {
        name: name.into(),
        mean,
        sd,
        q025: quantile_sorted(&sorted, 0.025),
        q50: quantile_sorted(&sorted, 0.5),
        q975: quantile_sorted(&sorted, 0.975),
    }
}

/// `D̄ + p_D` with `D = −2 log p(y | x)` and `p_D = D̄ − D(x̄)`; returns `(DIC, p_D)`.
pub fn compute_dic(draws: &PosteriorDraws) -> Result<(f64, f64)> {
    if draws.n_draws() < 2 {
        return Err(Error::InvalidInput("DIC needs at least two posterior draws".into()));
    }
    let m = &draws.model;
    let mut dbar = 0.0;
    for (k, x) in draws.latent.iter().enumerate() {
        dbar += (-2.0 * m.log_likelihood(x) - dbar) / (k + 1) as f64;
    }
    let d_at_mean = -2.0 * m.log_likelihood(&draws.mean_latent());
    let pd = dbar - d_at_mean;
    Ok((dbar + pd, pd))
}

/// Posterior summary table: intercept, effort, covariates, campaign effects
/// and hyperparameters, then raw-scale coefficients of standardized covariates.
pub fn summarize(draws: &PosteriorDraws, covariates: &CovariateStack) -> Result<FitSummary> {
    if draws.n_draws() < 2 {
        return Err(Error::InvalidInput("a summary needs at least two posterior draws".into()));
    }
    let m = &draws.model;
    let spec = &m.spec;
    let column = |idx: usize| -> Vec<f64> { draws.latent.iter().map(|x| x[idx]).collect() };
    let mut rows = vec![summarize_values("Intercept", &column(m.index_mu0()))];
    if spec.includes_effort() {
        rows.push(summarize_values(EFFORT_LABEL, &column(m.index_gamma())));
    }
    for (j, name) in spec.covariate_names.iter().enumerate() {
        rows.push(summarize_values(name.clone(), &column(m.index_beta(j))));
    }
    for t in 1..=spec.n_campaigns {
        rows.push(summarize_values(format!("Campaign {t}"), &column(m.index_campaign(t))));
    }
    let hyper: Vec<_> = (0..draws.n_draws()).map(|a| draws.hyper(a)).collect();
    let prec: Vec<f64> = hyper.iter().map(|h| h.campaign_precision).collect();
    rows.push(summarize_values("Precision for campaign effect", &prec));
    if spec.spatial_field {
        let range: Vec<f64> = hyper.iter().map(|h| h.field.map_or(f64::NAN, |f| f.rho)).collect();
        let sd: Vec<f64> = hyper.iter().map(|h| h.field.map_or(f64::NAN, |f| f.sigma)).collect();
        rows.push(summarize_values("Range for GP", &range));
        rows.push(summarize_values("Std. for GP", &sd));
    }
    let standardized = spec
        .covariate_names
        .iter()
        .any(|n| covariates.column(n).is_some_and(|c| c.center != 0.0 || c.scale != 1.0));
    if standardized {
        let p = spec.n_covariates();
        let mut raw_mu0 = Vec::with_capacity(draws.n_draws());
        let mut raw_beta = vec![Vec::with_capacity(draws.n_draws()); p];
        for x in &draws.latent {
            let beta: Vec<f64> = (0..p).map(|j| x[m.index_beta(j)]).collect();
            let (a, b) = raw_scale_coefficients(spec, covariates, x[m.index_mu0()], &beta)?;
            raw_mu0.push(a);
            for (acc, v) in raw_beta.iter_mut().zip(b) {
                acc.push(v);
            }
        }
        rows.push(summarize_values("Intercept (raw scale)", &raw_mu0));
        for (name, vals) in spec.covariate_names.iter().zip(&raw_beta) {
            rows.push(summarize_values(format!("{name} (raw scale)"), vals));
        }
    }
    let (dic, pd) = compute_dic(draws)?;
    Ok(FitSummary {
        model_id: spec.model_id.clone(),
        rows,
        dic,
        effective_parameters: pd,
    })
}

/// Posterior mean of the field at every grid cell; `None` without a field.
pub fn field_posterior_mean(draws: &PosteriorDraws) -> Option<RasterGrid> {
    let mesh = draws.model.mesh.as_ref()?;
    let mean = draws.mean_latent();
    let g = mesh.geometry;
    let values = (0..g.n_cells()).map(|c| Some(mean[mesh.node_of_cell(c)])).collect();
    Some(RasterGrid::new(g, values, RasterKind::Continuous).expect("mesh grid matches its geometry"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn small_draws() {
        let s = summarize_values("a", &[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.q50, 2.0);
        assert_eq!(s.sd, 1.0);
    }

    #[test]
    fn constant_draws() {
        let s = summarize_values("a", &[4.5; 17]);
        assert_eq!(s.sd, 0.0);
        assert!(s.q025 == 4.5 && s.q50 == 4.5 && s.q975 == 4.5);
    }

    #[test]
    fn normal_upper_quantile() {
        let mut rng = crate::rng::Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = summarize_values("z", &v);
        assert!((s.q975 - 1.959964).abs() < 0.03, "{}", s.q975);
    }

    #[test]
    fn interpolated_quantiles() {
        let sorted = [0.0, 10.0, 20.0, 30.0, 40.0];
        assert_eq!(quantile_sorted(&sorted, 0.025), 1.0);
        assert_eq!(quantile_sorted(&sorted, 0.975), 39.0);
        assert_eq!(quantile_sorted(&sorted, 1.0), 40.0);
    }

    #[test]
    fn csv_quotes_names() {
        let f = FitSummary {
            model_id: "m".into(),
            rows: vec![summarize_values("a,b", &[1.0, 1.0])],
            dic: 0.0,
            effective_parameters: 0.0,
        };
        assert_eq!(f.to_csv().lines().nth(1).unwrap(), "\"a,b\",1,0,1,1,1");
    }
}
