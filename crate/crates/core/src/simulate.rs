//! Synthetic log-Gaussian Cox process realisations on the grid.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::geodata::{CovariateStack, DomainMask, Point, PointPattern};
use crate::gmrf::{sample_field, MaternHyper, SparsePrecision, SpdeMesh};
use crate::model::{log_intensity_at_cells, EffectVector, ModelSpec, EFFORT_LABEL};
use crate::rng::{label_hash, stream};

/// Expected total count above which simulation refuses to run.
pub const MAX_EXPECTED_TOTAL: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub enum CampaignEffects {
    Fixed(Vec<f64>),
    /// Drawn iid `N(0, τ²)`.
    Random { tau2: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldSource {
    None,
    /// Known field value at every grid cell.
    Fixed(Vec<f64>),
    /// Drawn from the Matérn GMRF on a mesh whose halo spans one range.
    Matern(MaternHyper),
}

/// Generating model of a synthetic data set.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// Covariates entering the generating model and the number of campaigns.
    pub spec: ModelSpec,
    pub covariates: Arc<CovariateStack>,
    /// Observation domain of each campaign.
    pub domains: Vec<DomainMask>,
    pub mu0: f64,
    pub beta: Vec<f64>,
    pub gamma: f64,
    pub campaign_effects: CampaignEffects,
    pub field: FieldSource,
    pub seed: u64,
}

impl Scenario {
    /// Intercept-only scenario with constant intensity `lambda` in every campaign.
    pub fn homogeneous(covariates: Arc<CovariateStack>, domains: Vec<DomainMask>, lambda: f64, seed: u64) -> Result<Self> {
        let spec = ModelSpec::new("truth", Vec::new(), domains.len(), Default::default())?;
        Ok(Self {
            spec,
            covariates,
            mu0: lambda.ln(),
            beta: Vec::new(),
            gamma: 0.0,
            campaign_effects: CampaignEffects::Fixed(vec![0.0; domains.len()]),
            field: FieldSource::None,
            domains,
            seed,
        })
    }

    pub fn n_campaigns(&self) -> usize {
        self.spec.n_campaigns
    }

    fn validate(&self) -> Result<()> {
        let t = self.n_campaigns();
        if self.domains.len() != t {
            return Err(Error::InvalidInput(format!("{} campaign domains for {t} campaigns", self.domains.len())));
        }
        if self.beta.len() != self.spec.n_covariates() {
            return Err(Error::InvalidInput(format!(
                "{} coefficients for {} covariates",
                self.beta.len(),
                self.spec.n_covariates()
            )));
        }
        let g = self.covariates.geometry;
        if let Some(d) = self.domains.iter().find(|d| !d.geometry.same_lattice(&g)) {
            return Err(Error::InvalidInput(format!("campaign domain grid {:?} differs from the covariate grid", d.geometry)));
        }
        match &self.campaign_effects {
            CampaignEffects::Fixed(v) if v.len() != t => {
                return Err(Error::InvalidInput(format!("{} campaign effects for {t} campaigns", v.len())))
            }
            CampaignEffects::Random { tau2 } if !(*tau2 >= 0.0 && tau2.is_finite()) => {
                return Err(Error::InvalidInput("campaign-effect variance must be finite and non-negative".into()))
            }
            _ => {}
        }
        if let FieldSource::Fixed(w) = &self.field {
            if w.len() != g.n_cells() {
                return Err(Error::InvalidInput(format!("fixed field has {} values for {} cells", w.len(), g.n_cells())));
            }
        }
        self.spec.validate(&self.covariates)
    }

    /// Draws the stochastic effects (campaign effects and field) from the scenario seed.
    pub fn realize(&self) -> Result<Realization> {
        self.validate()?;
        let t = self.n_campaigns();
        let mut effects = EffectVector::zeros(self.spec.n_covariates(), t);
        effects.mu0 = self.mu0;
        effects.beta.clone_from(&self.beta);
        effects.gamma = self.gamma;
        match &self.campaign_effects {
            CampaignEffects::Fixed(v) => {
                effects.mu_t.clone_from(v);
                let var = v.iter().map(|m| m * m).sum::<f64>() / t as f64;
                effects.tau2 = if var > 0.0 { var } else { 1.0 };
            }
            CampaignEffects::Random { tau2 } => {
                let mut rng = stream(self.seed, &[label_hash("campaign effects")]);
                let sd = tau2.sqrt();
                effects.mu_t = (0..t).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
                effects.tau2 = if *tau2 > 0.0 { *tau2 } else { 1.0 };
            }
        }
        let mut fixed_field = None;
        match &self.field {
            FieldSource::None => {}
            FieldSource::Fixed(w) => fixed_field = Some(w.clone()),
            FieldSource::Matern(h) => {
                let h = MaternHyper::new(h.sigma, h.rho)?;
                let mesh = SpdeMesh::for_range(self.covariates.geometry, h.rho);
                let q = SparsePrecision::on_mesh(Arc::clone(&mesh), h);
                let w = sample_field(&q, crate::rng::derive_seed(self.seed, &[label_hash("field")]))?;
                effects = effects.with_field(mesh, h, w);
            }
        }
        let realization = Realization {
            scenario: self.clone(),
            effects,
            fixed_field,
        };
        let total: f64 = (1..=t)
            .map(|c| realization.expected_count(c, self.domains[c - 1].cells()))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .sum();
        if !(total <= MAX_EXPECTED_TOTAL) {
            return Err(Error::IntensityOverflow(total));
        }
        Ok(realization)
    }
}

/// A scenario with its stochastic effects drawn.
#[derive(Debug, Clone)]
pub struct Realization {
    pub scenario: Scenario,
    pub effects: EffectVector,
    fixed_field: Option<Vec<f64>>,
}

impl Realization {
    /// `log λ_t` at the given grid cells.
    pub fn log_intensity(&self, campaign: usize, cells: &[usize]) -> Result<Vec<f64>> {
        let s = &self.scenario;
        let mut eta = log_intensity_at_cells(&self.effects, &s.spec, cells, &s.covariates, campaign)?;
        if let Some(w) = &self.fixed_field {
            eta.iter_mut().zip(cells).for_each(|(e, &c)| *e += w[c]);
        }
        Ok(eta)
    }

    /// `λ_t` at every grid cell of the campaign domain, zero elsewhere.
    pub fn intensity_grid(&self, campaign: usize) -> Result<Vec<f64>> {
        let d = self.domain(campaign)?;
        let eta = self.log_intensity(campaign, d.cells())?;
        let mut out = vec![0.0; d.geometry.n_cells()];
        for (&c, e) in d.cells().iter().zip(eta) {
            out[c] = e.exp();
        }
        Ok(out)
    }

    fn domain(&self, campaign: usize) -> Result<&DomainMask> {
        if campaign == 0 || campaign > self.scenario.n_campaigns() {
            return Err(Error::InvalidInput(format!("campaign {campaign} outside 1..={}", self.scenario.n_campaigns())));
        }
        Ok(&self.scenario.domains[campaign - 1])
    }

    /// `Σ_q α_q λ_t(v_q)` over `region`, which must lie inside the campaign domain.
    pub fn expected_count(&self, campaign: usize, region: &[usize]) -> Result<f64> {
        let d = self.domain(campaign)?;
        if let Some(&c) = region.iter().find(|&&c| !d.contains_cell(c)) {
            return Err(Error::InvalidInput(format!("cell {c} lies outside the domain of campaign {campaign}")));
        }
        let area = d.geometry.cell_area();
        let eta = self.log_intensity(campaign, region)?;
        let total: f64 = eta.iter().map(|e| area * e.exp()).sum();
        if !total.is_finite() {
            return Err(Error::IntensityOverflow(total));
        }
        Ok(total)
    }

    /// Poisson counts per domain cell with points placed uniformly inside each cell.
    pub fn sample_points(&self) -> Result<PointPattern> {
        let s = &self.scenario;
        let g = s.covariates.geometry;
        let area = g.cell_area();
        let mut points = Vec::new();
        for t in 1..=s.n_campaigns() {
            let d = &s.domains[t - 1];
            let eta = self.log_intensity(t, d.cells())?;
            let mut rng = stream(s.seed, &[label_hash("points"), t as u64]);
            for (&c, e) in d.cells().iter().zip(eta) {
                let mean = area * e.exp();
                if !(mean > 0.0) {
                    continue;
                }
                let n = Poisson::new(mean).map_err(|_| Error::IntensityOverflow(mean))?.sample(&mut rng) as u64;
                let (x0, y0, _, _) = g.cell_bounds(c);
                for _ in 0..n {
                    loop {
                        let x = x0 + rng.random::<f64>() * g.cell_dx;
                        let y = y0 + rng.random::<f64>() * g.cell_dy;
                        if g.cell_of(x, y) == Some(c) {
                            points.push(Point { x, y, campaign: t });
                            break;
                        }
                    }
                }
            }
        }
        PointPattern::new(points, s.n_campaigns())
    }

    /// `parameter,value` table of the generating values, named like the posterior summary.
    pub fn truth_csv(&self) -> String {
        let e = &self.effects;
        let s = &self.scenario;
        let mut out = String::from("parameter,value\n");
        writeln!(out, "Intercept,{}", e.mu0).unwrap();
        writeln!(out, "{EFFORT_LABEL},{}", e.gamma).unwrap();
        for (n, b) in s.spec.covariate_names.iter().zip(&e.beta) {
            writeln!(out, "{n},{b}").unwrap();
        }
        for (t, m) in e.mu_t.iter().enumerate() {
            writeln!(out, "Campaign {},{m}", t + 1).unwrap();
        }
        if let CampaignEffects::Random { tau2 } = s.campaign_effects {
            writeln!(out, "Precision for campaign effect,{}", 1.0 / tau2).unwrap();
        }
        if let FieldSource::Matern(h) = s.field {
            writeln!(out, "Range for GP,{}", h.rho).unwrap();
            writeln!(out, "Std. for GP,{}", h.sigma).unwrap();
        }
        out
    }
}

/// One synthetic point pattern of `scenario`.
pub fn simulate_lgcp(scenario: &Scenario) -> Result<PointPattern> {
    scenario.realize()?.sample_points()
}

/// Expected count of `scenario`'s realisation over `region` in `campaign`.
pub fn expected_count(scenario: &Scenario, campaign: usize, region: &[usize]) -> Result<f64> {
    scenario.realize()?.expected_count(campaign, region)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::GridGeometry;

    fn unit_square(n: usize) -> (Arc<CovariateStack>, DomainMask) {
        let g = GridGeometry::square(n, n, 1.0 / n as f64);
        (Arc::new(CovariateStack::new(g)), DomainMask::full(g))
    }

    #[test]
    fn constant_intensity_expected_count() {
        let g = GridGeometry::square(3, 3, 1.0);
        let s = Scenario::homogeneous(Arc::new(CovariateStack::new(g)), vec![DomainMask::full(g)], 2.0, 1).unwrap();
        let e = expected_count(&s, 1, &[0, 4, 8]).unwrap();
        assert!((e - 6.0).abs() < 1e-12);
    }

    #[test]
    fn zero_intensity_is_empty() {
        let (c, d) = unit_square(4);
        let s = Scenario::homogeneous(c, vec![d], 0.0, 5).unwrap();
        assert!(simulate_lgcp(&s).unwrap().is_empty());
    }

    #[test]
    fn overflow_rejected() {
        let (c, d) = unit_square(2);
        let s = Scenario::homogeneous(c, vec![d], 1e9, 5).unwrap();
        assert!(matches!(simulate_lgcp(&s), Err(Error::IntensityOverflow(_))));
    }

    #[test]
    fn region_outside_domain_rejected() {
        let g = GridGeometry::square(2, 2, 1.0);
        let d = DomainMask::from_predicate(g, |c| c < 2);
        let s = Scenario::homogeneous(Arc::new(CovariateStack::new(g)), vec![d], 1.0, 0).unwrap();
        assert!(expected_count(&s, 1, &[3]).is_err());
    }

    #[test]
    fn points_stay_in_their_cells_and_domain() {
        let g = GridGeometry::square(6, 6, 2.0);
        let d = DomainMask::from_predicate(g, |c| c % 2 == 0);
        let s = Scenario::homogeneous(Arc::new(CovariateStack::new(g)), vec![d.clone()], 3.0, 9).unwrap();
        let p = simulate_lgcp(&s).unwrap();
        assert!(!p.is_empty());
        assert!(p.points.iter().all(|pt| d.contains_point(pt.x, pt.y)));
    }

    #[test]
    fn truth_rows_match_summary_names() {
        let (c, d) = unit_square(3);
        let mut s = Scenario::homogeneous(c, vec![d.clone(), d], 1.0, 0).unwrap();
        s.campaign_effects = CampaignEffects::Random { tau2: 0.5 };
        let csv = s.realize().unwrap().truth_csv();
        let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(names, ["Intercept", EFFORT_LABEL, "Campaign 1", "Campaign 2", "Precision for campaign effect"]);
    }
}
