use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geodata::CovariateStack;
use crate::gmrf::SpdeMesh;
use crate::model::{EffectVector, ModelSpec};
use crate::rng::Rng;

use super::laplace::{HyperPoint, InnerMode, LatentModel};
use super::likelihood::GriddedLikelihood;

/// Knobs of the Laplace engine.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Posterior draws `A`.
    pub n_draws: usize,
    pub max_newton_iter: usize,
    /// Convergence threshold on the max-norm of the inner gradient.
    pub newton_tol: f64,
    /// Mesh halo in cells; defaults to one prior range `rho0`.
    pub halo: Option<usize>,
    /// Finite-difference step on the log hyperparameters.
    pub fd_step: f64,
    /// Integrate hyperparameters over a 3-point-per-axis grid; otherwise plug in the mode.
    pub integrate_hyper: bool,
    pub max_outer_iter: usize,
    /// Centre each Gaussian so that expected cell intensities `E[e^η]`, not `e^{E η}`,
    /// balance the counts.
    pub mean_correction: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_draws: 1000,
            max_newton_iter: 50,
            newton_tol: 1e-6,
            halo: None,
            fd_step: 0.05,
            integrate_hyper: true,
            max_outer_iter: 30,
            mean_correction: true,
        }
    }
}

/// One evaluated hyperparameter point of the integration grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGridPoint {
    pub theta: Vec<f64>,
    pub log_marginal: f64,
    pub weight: f64,
    pub newton_iterations: usize,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitDiagnostics {
    pub outer_iterations: usize,
    pub laplace_evaluations: usize,
    pub newton_iterations: usize,
    pub max_gradient_norm: f64,
    pub theta_mode: Vec<f64>,
    /// Eigenvalues of the negative log-marginal Hessian at the mode.
    pub curvature: Vec<f64>,
}

/// Joint posterior draws of the latent vector and hyperparameters.
pub struct PosteriorDraws {
    pub model: Arc<LatentModel>,
    /// `A` latent vectors in the layout of [`LatentModel`].
    pub latent: Vec<Vec<f64>>,
    /// Hyperparameter vector used for each draw.
    pub theta: Vec<Vec<f64>>,
    pub hyper_grid: Vec<HyperGridPoint>,
    pub diagnostics: FitDiagnostics,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.latent.len()
    }

    pub fn hyper(&self, a: usize) -> HyperPoint {
        HyperPoint::from_theta(&self.theta[a])
    }

    /// Linear predictor of draw `a` at campaign `t`'s quadrature cells.
    pub fn eta(&self, a: usize, t: usize) -> Vec<f64> {
        self.model.eta(&self.latent[a], t)
    }

    pub fn effects(&self, a: usize) -> EffectVector {
        let m = &self.model;
        let x = &self.latent[a];
        let hp = self.hyper(a);
        let p = m.spec.n_covariates();
        let mut e = EffectVector::zeros(p, m.spec.n_campaigns);
        e.mu0 = x[m.index_mu0()];
        e.beta = (0..p).map(|j| x[m.index_beta(j)]).collect();
        e.gamma = x[m.index_gamma()];
        e.mu_t = (1..=m.spec.n_campaigns).map(|t| x[m.index_campaign(t)]).collect();
        e.tau2 = 1.0 / hp.campaign_precision;
        if let (Some(mesh), Some(h)) = (&m.mesh, hp.field) {
            e = e.with_field(Arc::clone(mesh), h, x[..m.n_field()].to_vec());
        }
        e
    }

    /// Posterior mean latent vector.
    pub fn mean_latent(&self) -> Vec<f64> {
        // running mean, exact when all draws agree
        let mut acc = self.latent[0].clone();
        for (k, x) in self.latent.iter().enumerate().skip(1) {
            let w = 1.0 / (k + 1) as f64;
            for (m, v) in acc.iter_mut().zip(x) {
                *m += (v - *m) * w;
            }
        }
        acc
    }
}

struct Evaluator<'a> {
    model: &'a LatentModel,
    options: &'a FitOptions,
    warm: Vec<f64>,
    evaluations: usize,
    newton_iterations: usize,
    max_gradient: f64,
}

impl Evaluator<'_> {
    fn eval(&mut self, theta: &[f64]) -> Result<(f64, InnerMode)> {
        let hp = HyperPoint::from_theta(theta);
        let mode = match self.model.find_mode(&hp, &self.warm, self.options.max_newton_iter, self.options.newton_tol) {
            Ok(m) => m,
            Err(Error::NonConvergence { .. }) => self.model.find_mode(
                &hp,
                &self.model.initial_latent(),
                self.options.max_newton_iter,
                self.options.newton_tol,
            )?,
            Err(e) => return Err(e),
        };
        self.evaluations += 1;
        self.newton_iterations += mode.iterations;
        self.max_gradient = self.max_gradient.max(mode.gradient_norm);
        self.warm.clone_from(&mode.x);
        Ok((self.model.log_marginal(&hp, &mode), mode))
    }

    fn value(&mut self, theta: &[f64]) -> f64 {
        match self.eval(theta) {
            Ok((v, _)) => v,
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Log marginal at `theta ± h e_i` for every axis `i`.
    fn axis_values(&mut self, theta: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
        let center = self.warm.clone();
        let mut fp = Vec::with_capacity(theta.len());
        let mut fm = Vec::with_capacity(theta.len());
        for i in 0..theta.len() {
            let mut t = theta.to_vec();
            t[i] += h;
            fp.push(self.value(&t));
            self.warm.clone_from(&center);
            t[i] -= 2.0 * h;
            fm.push(self.value(&t));
            self.warm.clone_from(&center);
        }
        (fp, fm)
    }

    /// Central-difference Hessian reusing the axis values.
    fn hessian(&mut self, theta: &[f64], f0: f64, fp: &[f64], fm: &[f64], h: f64) -> DMatrix<f64> {
        let n = theta.len();
        let center = self.warm.clone();
        let mut hess = DMatrix::zeros(n, n);
        for i in 0..n {
            hess[(i, i)] = (fp[i] - 2.0 * f0 + fm[i]) / (h * h);
            for j in 0..i {
                let mut t = theta.to_vec();
                t[i] += h;
                t[j] += h;
                let fpp = self.value(&t);
                self.warm.clone_from(&center);
                t[i] -= 2.0 * h;
                t[j] -= 2.0 * h;
                let fmm = self.value(&t);
                self.warm.clone_from(&center);
                let v = (fpp - fp[i] - fp[j] + 2.0 * f0 - fm[i] - fm[j] + fmm) / (2.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        hess
    }
}

fn central_gradient(fp: &[f64], fm: &[f64], h: f64) -> DVector<f64> {
    DVector::from_iterator(fp.len(), fp.iter().zip(fm).map(|(p, m)| (p - m) / (2.0 * h)))
}

struct GridEval {
    theta: Vec<f64>,
    log_marginal: f64,
    raw_weight: f64,
    mode: Option<InnerMode>,
}

const MIN_CURVATURE: f64 = 0.25;
const MAX_OUTER_STEP: f64 = 1.0;
const OUTER_TOL: f64 = 5e-3;
/// Stop once the predicted gain in log marginal, `gᵀ step`, falls below this.
const OUTER_GAIN_TOL: f64 = 2e-3;

/// Starting point: unit field sd, prior median range, campaign precision from the
/// spread of per-campaign log rates.
fn initial_theta(model: &LatentModel, likelihood: &GriddedLikelihood) -> Vec<f64> {
    let rates: Vec<f64> = likelihood
        .campaigns
        .iter()
        .map(|c| ((c.total() as f64 + 0.5) / c.area()).ln())
        .collect();
    let t = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / t;
    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / t;
    let prec = (1.0 / var.max(1e-9)).clamp(1.0, 400.0).ln();
    if model.n_theta() == 3 {
        vec![0.0, model.spec.priors.pc.rho0.ln(), prec]
    } else {
        vec![prec]
    }
}

/// Eigenpairs of a curvature matrix with eigenvalues floored at `MIN_CURVATURE`.
fn floored_eigen(curv: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(curv.clone());
    let vals = eig
        .eigenvalues
        .iter()
        .map(|&v| if v.is_finite() { v.max(MIN_CURVATURE) } else { MIN_CURVATURE })
        .collect();
    (vals, eig.eigenvectors)
}

/// Fits `spec` by the Laplace engine and draws `options.n_draws` joint posterior samples.
pub fn fit_model(
    likelihood: &GriddedLikelihood,
    spec: &ModelSpec,
    covariates: &CovariateStack,
    options: &FitOptions,
    seed: u64,
) -> Result<PosteriorDraws> {
    if likelihood.total_count() == 0 {
        return Err(Error::InvalidInput("cannot fit a model to a pattern without points".into()));
    }
    if options.n_draws == 0 {
        return Err(Error::Usage("at least one posterior draw is required".into()));
    }
    spec.validate(covariates)?;
    let mesh = spec.spatial_field.then(|| match options.halo {
        Some(h) => SpdeMesh::new(covariates.geometry, h),
        None => SpdeMesh::for_range(covariates.geometry, spec.priors.pc.rho0),
    });
    let model = Arc::new(LatentModel::new(spec, likelihood, covariates, mesh)?);
    let mut ev = Evaluator {
        model: &model,
        options,
        warm: model.initial_latent(),
        evaluations: 0,
        newton_iterations: 0,
        max_gradient: 0.0,
    };

    let clock = std::time::Instant::now();
    // quasi-Newton ascent on the Laplace log marginal: finite-difference Hessian
    // at the start, BFGS updates in between, a fresh Hessian at the optimum
    let h = options.fd_step;
    let mut theta = initial_theta(&model, likelihood);
    let (mut f0, mut center) = ev.eval(&theta)?;
    let (mut fp, mut fm) = ev.axis_values(&theta, h);
    let mut grad = central_gradient(&fp, &fm, h);
    let mut curv = -ev.hessian(&theta, f0, &fp, &fm, h);
    let mut outer = 0;
    loop {
        let (vals, vecs) = floored_eigen(&curv);
        let coef = vecs.transpose() * &grad;
        let scaled = DVector::from_iterator(coef.len(), coef.iter().zip(&vals).map(|(c, v)| c / v));
        let mut step = &vecs * scaled;
        let norm = step.amax();
        if norm > MAX_OUTER_STEP {
            step *= MAX_OUTER_STEP / norm;
        }
        log::trace!("outer {outer}: theta {theta:?} log marginal {f0} step {:?}", step.as_slice());
        if step.amax() < OUTER_TOL || grad.dot(&step) < OUTER_GAIN_TOL || outer >= options.max_outer_iter {
            break;
        }
        outer += 1;
        let mut s = 1.0;
        let mut moved = None;
        for _ in 0..12 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, d)| t + s * d).collect();
            if let Ok((ft, mode)) = ev.eval(&trial) {
                if ft > f0 {
                    moved = Some((trial, ft, mode));
                    break;
                }
            }
            s *= 0.5;
        }
        let Some((trial, ft, mode)) = moved else { break };
        let delta = DVector::from_iterator(theta.len(), trial.iter().zip(&theta).map(|(a, b)| a - b));
        theta = trial;
        f0 = ft;
        center = mode;
        ev.warm.clone_from(&center.x);
        (fp, fm) = ev.axis_values(&theta, h);
        let new_grad = central_gradient(&fp, &fm, h);
        let y = &grad - &new_grad;
        let sy = delta.dot(&y);
        if sy > 1e-10 {
            let bs = &curv * &delta;
            let sbs = delta.dot(&bs);
            curv += &y * y.transpose() / sy - &bs * bs.transpose() / sbs;
        }
        grad = new_grad;
    }
    let hess = ev.hessian(&theta, f0, &fp, &fm, h);
    let (vals, vecs) = floored_eigen(&-hess);
    let theta_mode = theta.clone();
    log::debug!("outer optimum after {} evaluations, {:?}", ev.evaluations, clock.elapsed());

    // integration grid: nodes −√3, 0, √3 per eigen-axis
    let n_theta = theta.len();
    let mut grid: Vec<GridEval> = Vec::new();
    if options.integrate_hyper {
        let nodes = [(-3f64.sqrt(), 1.0 / 6.0), (0.0, 2.0 / 3.0), (3f64.sqrt(), 1.0 / 6.0)];
        let n_points = 3usize.pow(n_theta as u32);
        let center_x = center.x.clone();
        let mut center = Some(center);
        for idx in 0..n_points {
            let mut z = vec![0.0; n_theta];
            let mut w = 1.0;
            let mut rest = idx;
            for zi in z.iter_mut() {
                let (node, weight) = nodes[rest % 3];
                *zi = node;
                w *= weight;
                rest /= 3;
            }
            let point: Vec<f64> = (0..n_theta)
                .map(|i| theta[i] + (0..n_theta).map(|k| vecs[(i, k)] * z[k] / vals[k].sqrt()).sum::<f64>())
                .collect();
            let half_sq: f64 = 0.5 * z.iter().map(|v| v * v).sum::<f64>();
            if z.iter().all(|&v| v == 0.0) {
                grid.push(GridEval { theta: point, log_marginal: f0, raw_weight: w, mode: center.take() });
                continue;
            }
            ev.warm.clone_from(&center_x);
            match ev.eval(&point) {
                Ok((lm, mode)) => grid.push(GridEval {
                    theta: point,
                    log_marginal: lm,
                    raw_weight: w * (lm - f0 + half_sq).exp(),
                    mode: Some(mode),
                }),
                Err(_) => grid.push(GridEval { theta: point, log_marginal: f64::NEG_INFINITY, raw_weight: 0.0, mode: None }),
            }
        }
    } else {
        grid.push(GridEval { theta: theta.clone(), log_marginal: f0, raw_weight: 1.0, mode: Some(center) });
    }
    log::debug!("hyperparameter grid done after {} evaluations, {:?}", ev.evaluations, clock.elapsed());
    let total: f64 = grid.iter().map(|g| g.raw_weight).sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::InvalidInput("hyperparameter integration weights degenerate".into()));
    }
    let weights: Vec<f64> = grid.iter().map(|g| g.raw_weight / total).collect();

    // joint draws: θ from the grid weights, then x | θ from the Gaussian approximation
    let mut rng = Rng::seed_from_u64(seed);
    let a_total = options.n_draws;
    let picks: Vec<usize> = (0..a_total)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (k, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    return k;
                }
            }
            weights.iter().rposition(|&w| w > 0.0).unwrap()
        })
        .collect();
    let n = model.n_latent();
    let mut latent = vec![Vec::new(); a_total];
    let mut thetas = vec![Vec::new(); a_total];
    for (k, g) in grid.iter_mut().enumerate() {
        let members: Vec<usize> = (0..a_total).filter(|&a| picks[a] == k).collect();
        if members.is_empty() {
            continue;
        }
        let hp = HyperPoint::from_theta(&g.theta);
        let mut mode = g.mode.take().expect("weighted grid point has a mode");
        let tick = std::time::Instant::now();
        if options.mean_correction {
            let shifts: Vec<Vec<f64>> = model
                .eta_variances(&mode.factor)
                .into_iter()
                .map(|v| v.into_iter().map(|x| 0.5 * x).collect())
                .collect();
            // one Newton step towards the mode of the shifted model, same curvature
            let g = model.with_weight_shifts(&shifts).gradient(&hp, &mode.x);
            let dx = mode.factor.solve(&g);
            mode.x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
        }
        let z: Vec<f64> = (0..n * members.len()).map(|_| rng.sample(StandardNormal)).collect();
        let dx = mode.factor.sample_transform_many(&z, members.len());
        for (m, &a) in members.iter().enumerate() {
            latent[a] = mode.x.iter().zip(&dx[m * n..(m + 1) * n]).map(|(x, d)| x + d).collect();
            thetas[a] = g.theta.clone();
        }
        log::trace!("grid point {k}: {} draws, {:?}", members.len(), tick.elapsed());
        g.mode = Some(mode);
    }

    log::debug!("draws done, {:?}", clock.elapsed());
    let hyper_grid = grid
        .iter()
        .zip(&weights)
        .map(|(g, &w)| HyperGridPoint {
            theta: g.theta.clone(),
            log_marginal: g.log_marginal,
            weight: w,
            newton_iterations: g.mode.as_ref().map_or(0, |m| m.iterations),
            gradient_norm: g.mode.as_ref().map_or(f64::NAN, |m| m.gradient_norm),
        })
        .collect();
    let diagnostics = FitDiagnostics {
        outer_iterations: outer,
        laplace_evaluations: ev.evaluations,
        newton_iterations: ev.newton_iterations,
        max_gradient_norm: ev.max_gradient,
        theta_mode,
        curvature: vals,
    };
    drop(ev);
    Ok(PosteriorDraws {
        model,
        latent,
        theta: thetas,
        hyper_grid,
        diagnostics,
    })
}
