//! Candidate model specifications and evaluation of the log-intensity
//! `μ0 + μ_t + γ z(s) + x(s)ᵀβ + w(s)`.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geodata::{ColumnKind, CovariateStack, QuadratureScheme};
use crate::gmrf::{pc_prior_logdensity, MaternHyper, PcPriorSpec, SparsePrecision, SpdeMesh};

/// Label used for the effort coefficient in reports.
pub const EFFORT_LABEL: &str = "P. oceanica";

/// Prior settings shared by every model of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub pc: PcPriorSpec,
    /// Precision of the zero-mean Gaussian priors on `μ0`, `β`, `γ`.
    pub fixed_precision: f64,
    /// Gamma(shape, rate) prior on the campaign-effect precision `1/τ²`.
    pub campaign_shape: f64,
    pub campaign_rate: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            pc: PcPriorSpec::default(),
            fixed_precision: 0.001,
            campaign_shape: 1.0,
            campaign_rate: 0.01,
        }
    }
}

impl PriorSpec {
    /// Gamma log density of the campaign precision on its natural scale.
    pub fn log_density_campaign_precision(&self, precision: f64) -> f64 {
        let (a, b) = (self.campaign_shape, self.campaign_rate);
        a * b.ln() - statrs::function::gamma::ln_gamma(a) + (a - 1.0) * precision.ln() - b * precision
    }
}

/// One candidate model: which covariates enter the log-intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub model_id: String,
    pub covariate_names: Vec<String>,
    pub n_campaigns: usize,
    pub priors: PriorSpec,
    /// Whether the latent Matérn field `w` is part of the model.
    pub spatial_field: bool,
    /// Whether the effort term `γ z(s)` is part of the model.
    pub effort: bool,
}

impl ModelSpec {
    pub fn new(model_id: impl Into<String>, covariate_names: Vec<String>, n_campaigns: usize, priors: PriorSpec) -> Result<Self> {
        let model_id = model_id.into();
        let mut seen = BTreeSet::new();
        for name in &covariate_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidInput(format!("model {model_id}: covariate `{name}` listed twice")));
            }
            if name == EFFORT_LABEL {
                return Err(Error::InvalidInput(format!(
                    "model {model_id}: `{EFFORT_LABEL}` is the effort term, not a covariate"
                )));
            }
        }
        if n_campaigns == 0 {
            return Err(Error::InvalidInput(format!("model {model_id}: at least one campaign is required")));
        }
        Ok(Self {
            model_id,
            covariate_names,
            n_campaigns,
            priors,
            spatial_field: true,
            effort: true,
        })
    }

    pub fn without_field(mut self) -> Self {
        self.spatial_field = false;
        self
    }

    pub fn without_effort(mut self) -> Self {
        self.effort = false;
        self
    }

    pub fn includes_effort(&self) -> bool {
        self.effort
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    /// Checks the covariates against a stack: every name must exist, and the
    /// included habitat indicators together with `z` must not add up to one
    /// everywhere, which would make them collinear with the intercept.
    pub fn validate(&self, stack: &CovariateStack) -> Result<()> {
        let mut indicators = Vec::new();
        for name in &self.covariate_names {
            let col = stack
                .column(name)
                .ok_or_else(|| Error::InvalidInput(format!("model {}: unknown covariate `{name}`", self.model_id)))?;
            if col.kind == ColumnKind::Indicator {
                indicators.push(col);
            }
        }
        if indicators.is_empty() {
            return Ok(());
        }
        let mut any_cell = false;
        let saturated = (0..stack.geometry.n_cells()).all(|c| {
            let vals: Option<Vec<f64>> = indicators.iter().map(|col| col.values[c]).collect();
            match vals {
                Some(v) => {
                    any_cell = true;
                    let z = if self.effort { stack.effort[c] } else { 0.0 };
                    (v.iter().sum::<f64>() + z - 1.0).abs() < 1e-12
                }
                None => true,
            }
        });
        if saturated && any_cell {
            return Err(Error::InvalidInput(format!(
                "model {}: habitat indicators must leave out a reference class",
                self.model_id
            )));
        }
        Ok(())
    }
}

/// Candidate models plus the covariate columns of the sweep file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSweep {
    pub columns: Vec<String>,
    pub models: Vec<ModelSpec>,
}

impl ModelSweep {
    /// 1/0 inclusion flag of every sweep column for one model.
    pub fn flags(&self, model: &ModelSpec) -> Vec<u8> {
        self.columns.iter().map(|c| flag(model, c)).collect()
    }
}

/// Reads a model sweep: one row per model, one 1/0 column per covariate and an
/// optional `model_id` column. Models without an id are named `M001`, `M002`, ...
pub fn parse_model_sweep(text: &str, source: &str, n_campaigns: usize, priors: PriorSpec) -> Result<ModelSweep> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse(source, 1, e.to_string()))?.clone();
    let id_col = headers.iter().position(|h| h == "model_id");
    let mut models = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(source, line, e.to_string()))?;
        let mut names = Vec::new();
        let mut effort = true;
        for (k, h) in headers.iter().enumerate() {
            if Some(k) == id_col {
                continue;
            }
            match &rec[k] {
                "1" if h == EFFORT_LABEL => {}
                "0" if h == EFFORT_LABEL => effort = false,
                "1" => names.push(h.to_string()),
                "0" => {}
                other => {
                    return Err(Error::parse(source, line, format!("flag for `{h}` must be 1 or 0, found `{other}`")));
                }
            }
        }
        let id = match id_col {
            Some(k) if !rec[k].is_empty() => rec[k].to_string(),
            _ => format!("M{:03}", i + 1),
        };
        if !ids.insert(id.clone()) {
            return Err(Error::parse(source, line, format!("duplicate model id `{id}`")));
        }
        let spec = ModelSpec::new(id, names, n_campaigns, priors).map_err(|e| Error::parse(source, line, e.to_string()))?;
        models.push(if effort { spec } else { spec.without_effort() });
    }
    let columns = headers
        .iter()
        .enumerate()
        .filter(|(k, _)| Some(*k) != id_col)
        .map(|(_, h)| h.to_string())
        .collect();
    Ok(ModelSweep { columns, models })
}

pub fn load_model_sweep(path: impl AsRef<Path>, n_campaigns: usize, priors: PriorSpec) -> Result<ModelSweep> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model_sweep(&text, &path.display().to_string(), n_campaigns, priors)
}

/// Values of every effect in one model realisation.
#[derive(Debug, Clone)]
pub struct EffectVector {
    pub mu0: f64,
    pub beta: Vec<f64>,
    pub gamma: f64,
    /// Campaign effects, index `t - 1`.
    pub mu_t: Vec<f64>,
    /// Field values at mesh nodes; empty when the model has no field.
    pub w: Vec<f64>,
    pub mesh: Option<Arc<SpdeMesh>>,
    pub hyper: Option<MaternHyper>,
    /// Campaign-effect variance.
    pub tau2: f64,
}

impl EffectVector {
    /// All effects zero, unit `τ²`, no field.
    pub fn zeros(n_covariates: usize, n_campaigns: usize) -> Self {
        Self {
            mu0: 0.0,
            beta: vec![0.0; n_covariates],
            gamma: 0.0,
            mu_t: vec![0.0; n_campaigns],
            w: Vec::new(),
            mesh: None,
            hyper: None,
            tau2: 1.0,
        }
    }

    pub fn with_field(mut self, mesh: Arc<SpdeMesh>, hyper: MaternHyper, w: Vec<f64>) -> Self {
        assert_eq!(w.len(), mesh.n_nodes());
        self.mesh = Some(mesh);
        self.hyper = Some(hyper);
        self.w = w;
        self
    }

    /// `w` at a grid cell, zero without a field.
    pub fn field_at(&self, cell: usize) -> f64 {
        self.mesh.as_ref().map_or(0.0, |m| self.w[m.node_of_cell(cell)])
    }

    fn check(&self, spec: &ModelSpec, campaign: usize) -> Result<()> {
        if self.beta.len() != spec.n_covariates() || self.mu_t.len() != spec.n_campaigns {
            return Err(Error::InvalidInput(format!(
                "effect vector does not match model {} ({} coefficients, {} campaigns)",
                spec.model_id,
                spec.n_covariates(),
                spec.n_campaigns
            )));
        }
        if campaign == 0 || campaign > spec.n_campaigns {
            return Err(Error::InvalidInput(format!("campaign {campaign} outside 1..={}", spec.n_campaigns)));
        }
        if !(self.tau2 > 0.0) {
            return Err(Error::InvalidInput("campaign-effect variance must be positive".into()));
        }
        Ok(())
    }
}

/// `log λ_t` at every quadrature node.
pub fn log_intensity(
    effects: &EffectVector,
    spec: &ModelSpec,
    nodes: &QuadratureScheme,
    covariates: &CovariateStack,
    campaign: usize,
) -> Result<Vec<f64>> {
    log_intensity_at_cells(effects, spec, &nodes.cells, covariates, campaign)
}

pub fn log_intensity_at_cells(
    effects: &EffectVector,
    spec: &ModelSpec,
    cells: &[usize],
    covariates: &CovariateStack,
    campaign: usize,
) -> Result<Vec<f64>> {
    effects.check(spec, campaign)?;
    let design = covariates.design(&spec.covariate_names, cells)?;
    let base = effects.mu0 + effects.mu_t[campaign - 1];
    Ok(cells
        .iter()
        .enumerate()
        .map(|(q, &c)| {
            let xb: f64 = design.iter().zip(&effects.beta).map(|(col, b)| col[q] * b).sum();
            base + effects.gamma * effort_at(spec, covariates, c) + xb + effects.field_at(c)
        })
        .collect())
}

/// `(exp(μ0 + xᵀβ + w), exp(μ_t), exp(γz))` at one grid cell.
pub fn decompose_intensity(
    effects: &EffectVector,
    spec: &ModelSpec,
    covariates: &CovariateStack,
    cell: usize,
    campaign: usize,
) -> Result<(f64, f64, f64)> {
    effects.check(spec, campaign)?;
    let design = covariates.design(&spec.covariate_names, &[cell])?;
    let xb: f64 = design.iter().zip(&effects.beta).map(|(col, b)| col[0] * b).sum();
    Ok((
        (effects.mu0 + xb + effects.field_at(cell)).exp(),
        effects.mu_t[campaign - 1].exp(),
        (effects.gamma * effort_at(spec, covariates, cell)).exp(),
    ))
}

fn effort_at(spec: &ModelSpec, covariates: &CovariateStack, cell: usize) -> f64 {
    if spec.effort {
        covariates.effort[cell]
    } else {
        0.0
    }
}

/// 0/1 flag of a sweep column for one model.
pub fn flag(model: &ModelSpec, column: &str) -> u8 {
    if column == EFFORT_LABEL {
        u8::from(model.effort)
    } else {
        u8::from(model.covariate_names.iter().any(|n| n == column))
    }
}

fn gaussian_log_density(x: f64, precision: f64) -> f64 {
    0.5 * (precision / (2.0 * PI)).ln() - 0.5 * precision * x * x
}

/// Joint prior log density of an effect vector.
///
/// The campaign-precision term is the Gamma density of `1/τ²` on its natural
/// scale; callers working in `log(1/τ²)` add the Jacobian `log(1/τ²)` themselves.
/// The field terms (PC prior and GMRF density) enter only when the effects carry a field.
pub fn log_prior(effects: &EffectVector, spec: &ModelSpec) -> f64 {
    let p = &spec.priors;
    let mut lp = gaussian_log_density(effects.mu0, p.fixed_precision) + gaussian_log_density(effects.gamma, p.fixed_precision);
    lp += effects.beta.iter().map(|&b| gaussian_log_density(b, p.fixed_precision)).sum::<f64>();
    let prec = 1.0 / effects.tau2;
    lp += effects.mu_t.iter().map(|&m| gaussian_log_density(m, prec)).sum::<f64>();
    lp += p.log_density_campaign_precision(prec);
    if let (Some(mesh), Some(hyper)) = (&effects.mesh, &effects.hyper) {
        lp += pc_prior_logdensity(hyper, &p.pc);
        lp += SparsePrecision::on_mesh(Arc::clone(mesh), *hyper).log_density(&effects.w);
    }
    lp
}

/// Converts coefficients fitted on standardized covariates back to raw units:
/// `β_raw = β / scale`, `μ0_raw = μ0 − Σ β center / scale`.
pub fn raw_scale_coefficients(spec: &ModelSpec, stack: &CovariateStack, mu0: f64, beta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut intercept = mu0;
    let mut raw = Vec::with_capacity(beta.len());
    for (name, &b) in spec.covariate_names.iter().zip(beta) {
        let col = stack
            .column(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown covariate `{name}`")))?;
        raw.push(b / col.scale);
        intercept -= b * col.center / col.scale;
    }
    Ok((intercept, raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{build_quadrature, DomainMask, GridGeometry};

    fn stack() -> CovariateStack {
        let g = GridGeometry::square(2, 2, 1.0);
        let mut s = CovariateStack::new(g);
        s.effort = vec![1.0, 0.0, 1.0, 0.0];
        s.add_values("depth", ColumnKind::Continuous, vec![Some(0.5), Some(-1.0), Some(2.0), Some(0.0)]).unwrap();
        s
    }

    fn spec(names: &[&str]) -> ModelSpec {
        ModelSpec::new("m", names.iter().map(|s| s.to_string()).collect(), 3, PriorSpec::default()).unwrap()
    }

    #[test]
    fn reported_intercept_and_effort() {
        let s = stack();
        let m = spec(&[]);
        let mut e = EffectVector::zeros(0, 3);
        e.mu0 = -4.718;
        e.gamma = -0.388;
        let q = build_quadrature(&DomainMask::full(s.geometry)).unwrap();
        let li = log_intensity(&e, &m, &q, &s, 1).unwrap();
        assert!((li[0] - (-5.106)).abs() < 1e-12);
        assert!((li[0].exp() - 6.06e-3).abs() < 1e-5);
        assert!((li[1] - (-4.718)).abs() < 1e-12);
    }

    #[test]
    fn zero_effects_give_unit_intensity_and_campaign_shift() {
        let s = stack();
        let m = spec(&["depth"]);
        let mut e = EffectVector::zeros(1, 3);
        let q = build_quadrature(&DomainMask::full(s.geometry)).unwrap();
        assert!(log_intensity(&e, &m, &q, &s, 2).unwrap().iter().all(|&v| v == 0.0));
        e.beta[0] = 0.3;
        let before = log_intensity(&e, &m, &q, &s, 2).unwrap();
        e.mu_t[1] = 1.116;
        let after = log_intensity(&e, &m, &q, &s, 2).unwrap();
        for (a, b) in after.iter().zip(&before) {
            assert!(((a - b).exp() - 3.0526).abs() < 1e-4);
        }
    }

    #[test]
    fn decomposition_factors() {
        let s = stack();
        let m = spec(&[]);
        let mut e = EffectVector::zeros(0, 3);
        e.mu_t[2] = 2f64.ln();
        e.gamma = 3f64.ln();
        let (a, b, c) = decompose_intensity(&e, &m, &s, 0, 3).unwrap();
        assert!((a - 1.0).abs() < 1e-15 && (b - 2.0).abs() < 1e-15 && (c - 3.0).abs() < 1e-15);
        assert!((a * b * c - 6.0).abs() < 1e-14);
        let (_, _, off) = decompose_intensity(&e, &m, &s, 1, 3).unwrap();
        assert_eq!(off, 1.0);
    }

    #[test]
    fn prior_terms() {
        let m = spec(&["depth"]);
        let e = EffectVector::zeros(1, 3);
        let p = m.priors;
        let fixed = 3.0 * 0.5 * (0.001 / (2.0 * PI)).ln();
        let campaign = 3.0 * -0.5 * (2.0 * PI).ln();
        let gamma = 0.01f64.ln() - 0.01;
        assert!((p.log_density_campaign_precision(1.0) - gamma).abs() < 1e-14);
        assert!((log_prior(&e, &m) - (fixed + campaign + gamma)).abs() < 1e-12);
        let mut e2 = e.clone();
        e2.beta[0] = 2.0;
        let mut e4 = e.clone();
        e4.beta[0] = 4.0;
        let drop = log_prior(&e2, &m) - log_prior(&e4, &m);
        assert!((drop - 0.5 * 0.001 * (16.0 - 4.0)).abs() < 1e-12);
    }

    #[test]
    fn spec_invariants() {
        let p = PriorSpec::default();
        assert!(ModelSpec::new("a", vec!["x".into(), "x".into()], 2, p).is_err());
        assert!(ModelSpec::new("a", vec![EFFORT_LABEL.into()], 2, p).is_err());
        assert!(spec(&[]).includes_effort());
    }

    #[test]
    fn saturated_habitat_indicators_are_rejected() {
        let g = GridGeometry::square(1, 3, 1.0);
        let mut s = CovariateStack::new(g);
        s.effort = vec![1.0, 0.0, 0.0];
        s.add_values("Sandy Bottom", ColumnKind::Indicator, vec![Some(0.0), Some(1.0), Some(0.0)]).unwrap();
        s.add_values("Hard Bottom", ColumnKind::Indicator, vec![Some(0.0), Some(0.0), Some(1.0)]).unwrap();
        assert!(spec(&["Sandy Bottom", "Hard Bottom"]).validate(&s).is_err());
        assert!(spec(&["Sandy Bottom"]).validate(&s).is_ok());
        assert!(spec(&["nope"]).validate(&s).is_err());
    }

    #[test]
    fn sweep_file() {
        let text = "depth,Sandy Bottom\n1,0\n1,1\n0,0\n";
        let sweep = parse_model_sweep(text, "s.csv", 9, PriorSpec::default()).unwrap();
        let models = &sweep.models;
        assert_eq!(models.len(), 3);
        assert_eq!(models[1].model_id, "M002");
        assert_eq!(models[1].covariate_names, vec!["depth", "Sandy Bottom"]);
        assert!(models[2].covariate_names.is_empty());
        let named = parse_model_sweep("model_id,depth\nfull,1\nnull,0\n", "s", 9, PriorSpec::default()).unwrap();
        assert_eq!(named.models[0].model_id, "full");
        assert_eq!(named.columns, vec!["depth"]);
        let err = parse_model_sweep("depth\n2\n", "s.csv", 9, PriorSpec::default()).unwrap_err();
        assert!(err.to_string().starts_with("s.csv:2:"));
        assert_eq!(sweep.columns, vec!["depth", "Sandy Bottom"]);
        assert_eq!(sweep.flags(&models[0]), vec![1, 0]);
        let with_effort = parse_model_sweep("depth,P. oceanica\n1,1\n1,0\n", "s", 2, PriorSpec::default()).unwrap();
        assert!(with_effort.models[0].includes_effort());
        assert!(!with_effort.models[1].includes_effort());
        assert_eq!(with_effort.models[1].covariate_names, vec!["depth"]);
        assert_eq!(with_effort.flags(&with_effort.models[1]), vec![1, 0]);
    }

    #[test]
    fn raw_scale_round_trip() {
        let mut s = stack();
        let dom = DomainMask::full(s.geometry);
        let m = spec(&["depth"]);
        let raw_before = s.column("depth").unwrap().values.clone();
        s.standardize(&dom).unwrap();
        let (mu0, beta) = (0.2, vec![0.7]);
        let (mu0_raw, beta_raw) = raw_scale_coefficients(&m, &s, mu0, &beta).unwrap();
        let std_vals = &s.column("depth").unwrap().values;
        for (r, z) in raw_before.iter().zip(std_vals) {
            let a = mu0 + beta[0] * z.unwrap();
            let b = mu0_raw + beta_raw[0] * r.unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }
}
