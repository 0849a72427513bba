use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geodata::CovariateStack;
use crate::gmrf::{MaternHyper, SpdeMesh};
use crate::model::ModelSpec;
use crate::sparse::{grid_nested_dissection, CholeskyFactor, Ordering, SymbolicCholesky, SymmetricCsc};

use super::likelihood::{ln_factorial, GriddedLikelihood};

const NO_NODE: usize = usize::MAX;
const LAMBDA_FLOOR: f64 = 1e-300;

/// Hyperparameters on the optimisation scale: `(log σ, log ρ, log 1/τ²)` with
/// a field, `(log 1/τ²)` without.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperPoint {
    pub field: Option<MaternHyper>,
    /// Campaign-effect precision `1/τ²`.
    pub campaign_precision: f64,
}

impl HyperPoint {
    pub fn from_theta(theta: &[f64]) -> Self {
        match theta.len() {
            1 => Self {
                field: None,
                campaign_precision: theta[0].exp(),
            },
            3 => Self {
                field: Some(MaternHyper {
                    sigma: theta[0].exp(),
                    rho: theta[1].exp(),
                }),
                campaign_precision: theta[2].exp(),
            },
            n => panic!("hyperparameter vector of length {n}"),
        }
    }

    pub fn to_theta(&self) -> Vec<f64> {
        match self.field {
            Some(h) => vec![h.sigma.ln(), h.rho.ln(), self.campaign_precision.ln()],
            None => vec![self.campaign_precision.ln()],
        }
    }
}

#[derive(Clone)]
struct CampaignDesign {
    nodes: Vec<usize>,
    /// Row-major `n_q × p` covariate values.
    x: Vec<f64>,
    z: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    counts: Vec<f64>,
    log_count_factorial: f64,
}

/// Latent Gaussian model of one fit: layout `[w, μ0, β, γ, μ_1..μ_T]`, the data
/// and the sparsity structure of the posterior precision.
pub struct LatentModel {
    pub spec: ModelSpec,
    pub mesh: Option<Arc<SpdeMesh>>,
    n_w: usize,
    p: usize,
    t: usize,
    campaigns: Vec<CampaignDesign>,
    pattern: SymmetricCsc,
    symbolic: Arc<SymbolicCholesky>,
    /// Slot in `pattern` of each stored entry of the mesh precision pattern.
    field_slots: Vec<usize>,
    /// Slot of `(fixed 0, w node i)`; the other fixed rows follow contiguously.
    fixed_base: Vec<usize>,
    fixed_diag: Vec<usize>,
}

/// Result of the inner optimisation at one hyperparameter point.
pub struct InnerMode {
    pub x: Vec<f64>,
    /// `log p(y | x*) − ½ x*ᵀ Q x*`
    pub objective: f64,
    pub factor: CholeskyFactor,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl LatentModel {
    pub fn new(
        spec: &ModelSpec,
        likelihood: &GriddedLikelihood,
        covariates: &CovariateStack,
        mesh: Option<Arc<SpdeMesh>>,
    ) -> Result<Self> {
        if likelihood.n_campaigns() != spec.n_campaigns {
            return Err(Error::InvalidInput(format!(
                "model {} expects {} campaigns, data has {}",
                spec.model_id,
                spec.n_campaigns,
                likelihood.n_campaigns()
            )));
        }
        let mesh = if spec.spatial_field { mesh } else { None };
        if spec.spatial_field && mesh.is_none() {
            return Err(Error::InvalidInput(format!("model {} needs a field mesh", spec.model_id)));
        }
        if let Some(m) = &mesh {
            if !m.geometry.same_lattice(&covariates.geometry) {
                return Err(Error::InvalidInput("field mesh and covariates use different grids".into()));
            }
        }
        let p = spec.n_covariates();
        let t = spec.n_campaigns;
        let n_w = mesh.as_ref().map_or(0, |m| m.n_nodes());
        let n_fixed = 2 + p + t;
        let n = n_w + n_fixed;

        let mut campaigns = Vec::with_capacity(t);
        let mut data_node = vec![false; n_w];
        for c in &likelihood.campaigns {
            let design = covariates.design(&spec.covariate_names, &c.cells)?;
            let nq = c.cells.len();
            let mut x = vec![0.0; nq * p];
            for (j, col) in design.iter().enumerate() {
                for q in 0..nq {
                    x[q * p + j] = col[q];
                }
            }
            let nodes: Vec<usize> = match &mesh {
                Some(m) => c.cells.iter().map(|&cell| m.node_of_cell(cell)).collect(),
                None => vec![NO_NODE; nq],
            };
            for &nd in &nodes {
                if nd != NO_NODE {
                    data_node[nd] = true;
                }
            }
            campaigns.push(CampaignDesign {
                nodes,
                x,
                z: if spec.includes_effort() { covariates.effort_at(&c.cells) } else { vec![0.0; nq] },
                weights: c.weights.clone(),
                log_weights: c.weights.iter().map(|a| a.ln()).collect(),
                counts: c.counts.iter().map(|&k| k as f64).collect(),
                log_count_factorial: c.counts.iter().map(|&k| ln_factorial(k)).sum(),
            });
        }

        let mut triplets = Vec::new();
        if let Some(m) = &mesh {
            triplets.extend(m.pattern().triplets());
            for (i, &used) in data_node.iter().enumerate() {
                if used {
                    for k in 0..n_fixed {
                        triplets.push((n_w + k, i, 0.0));
                    }
                }
            }
        }
        for k in 0..n_fixed {
            for l in 0..=k {
                triplets.push((n_w + k, n_w + l, 0.0));
            }
        }
        let pattern = SymmetricCsc::from_triplets(n, &triplets);
        let field_slots = match &mesh {
            Some(m) => m
                .pattern()
                .triplets()
                .iter()
                .map(|&(i, j, _)| pattern.slot(i, j).expect("field entry in pattern"))
                .collect(),
            None => Vec::new(),
        };
        let fixed_base = (0..n_w)
            .map(|i| if data_node[i] { pattern.col_ptr()[i + 1] - n_fixed } else { NO_NODE })
            .collect();
        let fixed_diag = (0..n_fixed).map(|k| pattern.slot(n_w + k, n_w + k).unwrap()).collect();
        let mut perm = match &mesh {
            Some(m) => grid_nested_dissection(m.nx, m.ny, 2),
            None => Vec::new(),
        };
        perm.extend(n_w..n);
        let symbolic = SymbolicCholesky::analyze(&pattern, Ordering::Custom(perm));
        Ok(Self {
            spec: spec.clone(),
            mesh,
            n_w,
            p,
            t,
            campaigns,
            pattern,
            symbolic,
            field_slots,
            fixed_base,
            fixed_diag,
        })
    }

    /// Posterior variance of every linear predictor under the Gaussian approximation
    /// whose precision is factored in `factor`, indexed `[t - 1][q]`.
    pub fn eta_variances(&self, factor: &CholeskyFactor) -> Vec<Vec<f64>> {
        let sel = factor.selected_inverse();
        let nf = 2 + self.p + self.t;
        let fixed: Vec<usize> = (0..nf).map(|k| self.n_w + k).collect();
        let mut cov_fixed = vec![0.0; nf * nf];
        for k in 0..nf {
            for l in 0..nf {
                cov_fixed[k * nf + l] = sel.get(fixed[k], fixed[l]).expect("fixed block is dense");
            }
        }
        let mut a = vec![0.0; nf];
        (1..=self.t)
            .map(|t| {
                let c = &self.campaigns[t - 1];
                (0..c.counts.len())
                    .map(|q| {
                        a.iter_mut().for_each(|v| *v = 0.0);
                        a[0] = 1.0;
                        a[1..1 + self.p].copy_from_slice(&c.x[q * self.p..(q + 1) * self.p]);
                        a[1 + self.p] = c.z[q];
                        a[1 + self.p + t] = 1.0;
                        let mut v = 0.0;
                        for k in 0..nf {
                            if a[k] != 0.0 {
                                for l in 0..nf {
                                    v += a[k] * a[l] * cov_fixed[k * nf + l];
                                }
                            }
                        }
                        let node = c.nodes[q];
                        if node != NO_NODE {
                            v += sel.get(node, node).unwrap();
                            for k in 0..nf {
                                if a[k] != 0.0 {
                                    v += 2.0 * a[k] * sel.get(node, fixed[k]).expect("data nodes couple to fixed effects");
                                }
                            }
                        }
                        v
                    })
                    .collect()
            })
            .collect()
    }

    /// Copy of the model with every cell weight `α_q` multiplied by `exp(shifts[t - 1][q])`.
    pub fn with_weight_shifts(&self, shifts: &[Vec<f64>]) -> Self {
        assert_eq!(shifts.len(), self.t);
        let campaigns = self
            .campaigns
            .iter()
            .zip(shifts)
            .map(|(c, s)| {
                assert_eq!(s.len(), c.weights.len());
                let mut c = c.clone();
                for ((w, lw), d) in c.weights.iter_mut().zip(c.log_weights.iter_mut()).zip(s) {
                    *w *= d.exp();
                    *lw += d;
                }
                c
            })
            .collect();
        Self {
            spec: self.spec.clone(),
            mesh: self.mesh.clone(),
            n_w: self.n_w,
            p: self.p,
            t: self.t,
            campaigns,
            pattern: self.pattern.clone(),
            symbolic: Arc::clone(&self.symbolic),
            field_slots: self.field_slots.clone(),
            fixed_base: self.fixed_base.clone(),
            fixed_diag: self.fixed_diag.clone(),
        }
    }

    pub fn n_latent(&self) -> usize {
        self.n_w + 2 + self.p + self.t
    }

    pub fn n_field(&self) -> usize {
        self.n_w
    }

    pub fn n_theta(&self) -> usize {
        if self.mesh.is_some() {
            3
        } else {
            1
        }
    }

    pub fn index_mu0(&self) -> usize {
        self.n_w
    }

    pub fn index_beta(&self, j: usize) -> usize {
        self.n_w + 1 + j
    }

    pub fn index_gamma(&self) -> usize {
        self.n_w + 1 + self.p
    }

    /// Index of `μ_t`, `t` 1-based.
    pub fn index_campaign(&self, t: usize) -> usize {
        self.n_w + 1 + self.p + t
    }

    /// Linear predictor of campaign `t` (1-based) at its quadrature cells.
    pub fn eta(&self, x: &[f64], t: usize) -> Vec<f64> {
        let c = &self.campaigns[t - 1];
        let base = x[self.index_mu0()] + x[self.index_campaign(t)];
        let gamma = x[self.index_gamma()];
        let beta = &x[self.index_beta(0)..self.index_beta(0) + self.p];
        (0..c.counts.len())
            .map(|q| {
                let mut e = base + gamma * c.z[q];
                let row = &c.x[q * self.p..(q + 1) * self.p];
                for (v, b) in row.iter().zip(beta) {
                    e += v * b;
                }
                if c.nodes[q] != NO_NODE {
                    e += x[c.nodes[q]];
                }
                e
            })
            .collect()
    }

    /// Full Poisson log-likelihood `Σ [N log(αλ) − αλ − log N!]`.
    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for t in 1..=self.t {
            acc += self.campaign_log_likelihood(x, t);
        }
        acc
    }

    fn campaign_log_likelihood(&self, x: &[f64], t: usize) -> f64 {
        let c = &self.campaigns[t - 1];
        let eta = self.eta(x, t);
        let mut acc = -c.log_count_factorial;
        for q in 0..eta.len() {
            let lambda = eta[q].exp();
            acc -= c.weights[q] * lambda;
            if c.counts[q] > 0.0 {
                acc += c.counts[q] * (c.log_weights[q] + lambda.max(LAMBDA_FLOOR).ln());
            }
        }
        acc
    }

    fn prior_diag(&self, hp: &HyperPoint) -> Vec<f64> {
        let fp = self.spec.priors.fixed_precision;
        let mut d = vec![fp; 2 + self.p];
        d.extend(std::iter::repeat_n(hp.campaign_precision, self.t));
        d
    }

    fn field_precision(&self, hp: &HyperPoint) -> Option<SymmetricCsc> {
        match (&self.mesh, hp.field) {
            (Some(m), Some(h)) => Some(m.precision(&h)),
            (None, None) => None,
            _ => panic!("hyperparameter point does not match the model"),
        }
    }

    /// `x ↦ Q x` for the prior precision.
    fn prior_mul(&self, q_field: Option<&SymmetricCsc>, diag: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = match q_field {
            Some(q) => q.mul_vec(&x[..self.n_w]),
            None => Vec::new(),
        };
        out.extend(x[self.n_w..].iter().zip(diag).map(|(v, d)| v * d));
        out
    }

    /// Inner objective `log p(y | x) − ½ xᵀ Q(θ) x`.
    pub fn objective(&self, hp: &HyperPoint, x: &[f64]) -> f64 {
        let q = self.field_precision(hp);
        let diag = self.prior_diag(hp);
        self.objective_with(q.as_ref(), &diag, x)
    }

    fn objective_with(&self, q: Option<&SymmetricCsc>, diag: &[f64], x: &[f64]) -> f64 {
        let qx = self.prior_mul(q, diag, x);
        let quad: f64 = qx.iter().zip(x).map(|(a, b)| a * b).sum();
        self.log_likelihood(x) - 0.5 * quad
    }

    /// Analytic gradient of [`objective`](Self::objective).
    pub fn gradient(&self, hp: &HyperPoint, x: &[f64]) -> Vec<f64> {
        let q = self.field_precision(hp);
        let diag = self.prior_diag(hp);
        self.gradient_with(q.as_ref(), &diag, x)
    }

    fn gradient_with(&self, q: Option<&SymmetricCsc>, diag: &[f64], x: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = self.prior_mul(q, diag, x).into_iter().map(|v| -v).collect();
        for t in 1..=self.t {
            let c = &self.campaigns[t - 1];
            let eta = self.eta(x, t);
            let (i0, ib, ig, it) = (self.index_mu0(), self.index_beta(0), self.index_gamma(), self.index_campaign(t));
            for q in 0..eta.len() {
                let r = c.counts[q] - c.weights[q] * eta[q].exp();
                g[i0] += r;
                g[it] += r;
                g[ig] += r * c.z[q];
                for j in 0..self.p {
                    g[ib + j] += r * c.x[q * self.p + j];
                }
                if c.nodes[q] != NO_NODE {
                    g[c.nodes[q]] += r;
                }
            }
        }
        g
    }

    /// Negative Hessian `Q(θ) + Aᵀ diag(α e^η) A` on the fixed pattern.
    fn hessian(&self, q: Option<&SymmetricCsc>, diag: &[f64], x: &[f64]) -> SymmetricCsc {
        let mut h = self.pattern.clone();
        let nf = 2 + self.p + self.t;
        {
            let vals = h.values_mut();
            if let Some(q) = q {
                for (&slot, &v) in self.field_slots.iter().zip(q.values()) {
                    vals[slot] += v;
                }
            }
            for (k, &d) in diag.iter().enumerate() {
                vals[self.fixed_diag[k]] += d;
            }
            let mut a = vec![0.0; nf];
            let mut dense = vec![0.0; nf * nf];
            for t in 1..=self.t {
                let c = &self.campaigns[t - 1];
                let eta = self.eta(x, t);
                for q in 0..eta.len() {
                    let d = c.weights[q] * eta[q].exp();
                    a.iter_mut().for_each(|v| *v = 0.0);
                    a[0] = 1.0;
                    a[1..1 + self.p].copy_from_slice(&c.x[q * self.p..(q + 1) * self.p]);
                    a[1 + self.p] = c.z[q];
                    a[1 + self.p + t] = 1.0;
                    for k in 0..nf {
                        if a[k] != 0.0 {
                            let dk = d * a[k];
                            for l in 0..=k {
                                dense[k * nf + l] += dk * a[l];
                            }
                        }
                    }
                    let node = c.nodes[q];
                    if node != NO_NODE {
                        vals[self.pattern.col_ptr()[node]] += d;
                        let base = self.fixed_base[node];
                        for k in 0..nf {
                            vals[base + k] += d * a[k];
                        }
                    }
                }
            }
            for k in 0..nf {
                for l in 0..=k {
                    let slot = self.pattern.slot(self.n_w + k, self.n_w + l).unwrap();
                    vals[slot] += dense[k * nf + l];
                }
            }
        }
        h
    }

    /// Starting point: everything zero except `μ0 = log(n / area)`.
    pub fn initial_latent(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n_latent()];
        let n: f64 = self.campaigns.iter().map(|c| c.counts.iter().sum::<f64>()).sum();
        let area: f64 = self.campaigns.iter().map(|c| c.weights.iter().sum::<f64>()).sum();
        x[self.index_mu0()] = (n.max(0.5) / area).ln();
        x
    }

    /// Newton iterations with step halving from `x0`.
    pub fn find_mode(&self, hp: &HyperPoint, x0: &[f64], max_iter: usize, tol: f64) -> Result<InnerMode> {
        let q = self.field_precision(hp);
        let diag = self.prior_diag(hp);
        let mut x = x0.to_vec();
        let mut f = self.objective_with(q.as_ref(), &diag, &x);
        if !f.is_finite() {
            x = self.initial_latent();
            f = self.objective_with(q.as_ref(), &diag, &x);
        }
        let mut gnorm = f64::INFINITY;
        for it in 0..=max_iter {
            let g = self.gradient_with(q.as_ref(), &diag, &x);
            gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let h = self.hessian(q.as_ref(), &diag, &x);
            let factor = self.symbolic.factor(&h, "posterior precision")?;
            if gnorm < tol {
                return Ok(InnerMode {
                    x,
                    objective: f,
                    factor,
                    iterations: it,
                    gradient_norm: gnorm,
                });
            }
            if it == max_iter {
                break;
            }
            let dir = factor.solve(&g);
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
                let ft = self.objective_with(q.as_ref(), &diag, &trial);
                if ft.is_finite() && ft >= f - 1e-12 * (1.0 + f.abs()) {
                    x = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Err(Error::NonConvergence {
            iterations: max_iter,
            gradient_norm: gnorm,
        })
    }

    /// `log |Q(θ)|` of the full latent prior.
    pub fn prior_log_det(&self, hp: &HyperPoint) -> f64 {
        let fixed = (2 + self.p) as f64 * self.spec.priors.fixed_precision.ln();
        let campaign = self.t as f64 * hp.campaign_precision.ln();
        let field = match (&self.mesh, hp.field) {
            (Some(m), Some(h)) => m.log_det(&h),
            _ => 0.0,
        };
        fixed + campaign + field
    }

    /// Hyperprior log density on the optimisation scale, Jacobians included.
    pub fn log_hyperprior(&self, hp: &HyperPoint) -> f64 {
        let priors = &self.spec.priors;
        let prec = hp.campaign_precision;
        let mut lp = priors.log_density_campaign_precision(prec) + prec.ln();
        if let Some(h) = hp.field {
            lp += priors.pc.log_density_sigma(h.sigma) + h.sigma.ln();
            lp += priors.pc.log_density_rho(h.rho) + h.rho.ln();
        }
        lp
    }

    /// Laplace approximation of `log π(θ | y)` up to a constant, given the inner mode.
    pub fn log_marginal(&self, hp: &HyperPoint, mode: &InnerMode) -> f64 {
        mode.objective + 0.5 * self.prior_log_det(hp) - 0.5 * mode.factor.log_det() + self.log_hyperprior(hp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{build_quadrature, DomainMask, GridGeometry, Point, PointPattern};
    use crate::inference::likelihood::bin_points;
    use crate::model::PriorSpec;

    fn small_model(field: bool) -> LatentModel {
        let g = GridGeometry::square(6, 6, 1.0);
        let q = build_quadrature(&DomainMask::full(g)).unwrap();
        let pts: Vec<Point> = (0..40)
            .map(|i| Point {
                x: (i as f64 * 0.37) % 6.0,
                y: (i as f64 * 0.71) % 6.0,
                campaign: 1 + i % 2,
            })
            .collect();
        let lik = bin_points(&PointPattern::new(pts, 2).unwrap(), &[q.clone(), q]).unwrap();
        let mut stack = CovariateStack::new(g);
        stack.effort = (0..36).map(|c| if c % 5 == 0 { 1.0 } else { 0.0 }).collect();
        stack
            .add_values("depth", crate::geodata::ColumnKind::Continuous, (0..36).map(|c| Some((c as f64 * 0.3).sin())).collect())
            .unwrap();
        let mut spec = ModelSpec::new("m", vec!["depth".into()], 2, PriorSpec::default()).unwrap();
        if !field {
            spec = spec.without_field();
        }
        let mesh = SpdeMesh::new(g, 2);
        LatentModel::new(&spec, &lik, &stack, Some(mesh)).unwrap()
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let m = small_model(true);
        let hp = HyperPoint::from_theta(&[-0.5, 1.0, 1.0]);
        let x: Vec<f64> = (0..m.n_latent()).map(|i| 0.1 * ((i * 7) as f64).sin()).collect();
        let q = m.field_precision(&hp);
        let diag = m.prior_diag(&hp);
        let h = m.hessian(q.as_ref(), &diag, &x);
        let eps = 1e-6;
        for j in [0, 17, m.index_mu0(), m.index_beta(0), m.index_gamma(), m.index_campaign(2)] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += eps;
            xm[j] -= eps;
            let gp = m.gradient(&hp, &xp);
            let gm = m.gradient(&hp, &xm);
            for i in 0..m.n_latent() {
                let fd = -(gp[i] - gm[i]) / (2.0 * eps);
                assert!((fd - h.get(i, j)).abs() < 1e-5 * (1.0 + fd.abs()), "({i},{j}) {fd} vs {}", h.get(i, j));
            }
        }
    }

    #[test]
    fn newton_reaches_zero_gradient() {
        for field in [true, false] {
            let m = small_model(field);
            let theta = if field { vec![-1.0, 1.0, 2.0] } else { vec![2.0] };
            let hp = HyperPoint::from_theta(&theta);
            let mode = m.find_mode(&hp, &m.initial_latent(), 50, 1e-6).unwrap();
            assert!(mode.gradient_norm < 1e-6);
            assert!(m.log_marginal(&hp, &mode).is_finite());
        }
    }

    #[test]
    fn theta_round_trip() {
        let hp = HyperPoint::from_theta(&[0.1, 2.0, -1.0]);
        let back = hp.to_theta();
        assert!((back[0] - 0.1).abs() < 1e-15 && (back[1] - 2.0).abs() < 1e-15 && (back[2] + 1.0).abs() < 1e-15);
    }
}
