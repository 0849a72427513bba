mod common;

use std::sync::Arc;

use rand::Rng as _;

use lgcp_cv::geodata::{build_quadrature, ColumnKind, CovariateStack, DomainMask, GridGeometry, Point, PointPattern};
use lgcp_cv::gmrf::SpdeMesh;
use lgcp_cv::inference::{bin_points, compute_dic, fit_model, summarize, FitOptions, HyperPoint, LatentModel, PosteriorDraws};
use lgcp_cv::model::{ModelSpec, PriorSpec};
use lgcp_cv::rng::stream;
use lgcp_cv::simulate::{CampaignEffects, FieldSource, Scenario};

fn uniform_points(n: usize, side: f64, campaign: usize, seed: u64) -> Vec<Point> {
    let mut rng = stream(seed, &[]);
    (0..n)
        .map(|_| Point {
            x: side * rng.random::<f64>(),
            y: side * rng.random::<f64>(),
            campaign,
        })
        .collect()
}

fn intercept_only(t: usize) -> ModelSpec {
    ModelSpec::new("intercept", Vec::new(), t, Default::default()).unwrap().without_field()
}

fn options(draws: usize) -> FitOptions {
    FitOptions {
        n_draws: draws,
        ..FitOptions::default()
    }
}

fn column(d: &PosteriorDraws, idx: usize) -> Vec<f64> {
    d.latent.iter().map(|x| x[idx]).collect()
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// 100 m × 100 m square on 5 m cells, `campaigns` campaigns over the whole square.
fn square(campaigns: usize) -> (CovariateStack, Vec<lgcp_cv::geodata::QuadratureScheme>) {
    let g = GridGeometry::square(20, 20, 5.0);
    let q = build_quadrature(&DomainMask::full(g)).unwrap();
    (CovariateStack::new(g), vec![q; campaigns])
}

#[test]
fn homogeneous_intercept_matches_poisson_mle() {
    let (stack, quads) = square(1);
    let pattern = PointPattern::new(uniform_points(400, 100.0, 1, 8), 1).unwrap();
    let lik = bin_points(&pattern, &quads).unwrap();
    let oracle = (400.0f64 / 10_000.0).ln();
    for spec in [intercept_only(1), ModelSpec::new("field", Vec::new(), 1, Default::default()).unwrap()] {
        let draws = fit_model(&lik, &spec, &stack, &options(500), 4).unwrap();
        // the campaign effect and intercept are only identified through their sum
        let m = &draws.model;
        let level: Vec<f64> = draws.latent.iter().map(|x| x[m.index_mu0()] + x[m.index_campaign(1)]).collect();
        let (mu0, _) = mean_sd(&column(&draws, m.index_mu0()));
        let (sum, _) = mean_sd(&level);
        assert!((mu0 - oracle).abs() < 0.15, "{}: {mu0} vs {oracle}", spec.model_id);
        assert!((sum - oracle).abs() < 0.15, "{}: {sum} vs {oracle}", spec.model_id);
    }
}

#[test]
fn inner_gradient_matches_central_differences() {
    let g = GridGeometry::square(16, 16, 1.0);
    let q = build_quadrature(&DomainMask::full(g)).unwrap();
    let pattern = PointPattern::new(
        uniform_points(150, 16.0, 1, 1).into_iter().chain(uniform_points(90, 16.0, 2, 2)).collect(),
        2,
    )
    .unwrap();
    let lik = bin_points(&pattern, &[q.clone(), q]).unwrap();
    let mut stack = CovariateStack::new(g);
    stack.effort = (0..g.n_cells()).map(|c| f64::from(c % 3 == 0)).collect();
    let depth = (0..g.n_cells()).map(|c| Some((c as f64 * 0.21).cos())).collect();
    stack.add_values("depth", ColumnKind::Continuous, depth).unwrap();
    let spec = ModelSpec::new("g", vec!["depth".into()], 2, Default::default()).unwrap();
    let model = LatentModel::new(&spec, &lik, &stack, Some(SpdeMesh::new(g, 3))).unwrap();
    let hp = HyperPoint::from_theta(&[-0.3, 1.2, 1.5]);
    let mut rng = stream(99, &[]);
    let h = 1e-5;
    for _ in 0..10 {
        let x: Vec<f64> = (0..model.n_latent()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let analytic = model.gradient(&hp, &x);
        let mut err2 = 0.0;
        let mut norm2 = 0.0;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (model.objective(&hp, &xp) - model.objective(&hp, &xm)) / (2.0 * h);
            err2 += (fd - analytic[i]).powi(2);
            norm2 += fd * fd;
        }
        let rel = (err2 / norm2).sqrt();
        assert!(rel < 1e-5, "relative gradient error {rel:e}");
    }
}

#[test]
fn doubling_campaigns_contracts_intercept() {
    let (stack, quads) = square(2);
    let base = uniform_points(300, 100.0, 1, 17);
    let one = PointPattern::new(base.clone(), 1).unwrap();
    let two = PointPattern::new(base.iter().flat_map(|p| [*p, Point { campaign: 2, ..*p }]).collect(), 2).unwrap();
    // campaign effects pinned near zero so that the intercept carries the level
    let priors = PriorSpec {
        campaign_shape: 1e4,
        campaign_rate: 1e-2,
        ..PriorSpec::default()
    };
    let fit = |pattern: &PointPattern, t: usize| {
        let lik = bin_points(pattern, &quads[..t]).unwrap();
        let spec = ModelSpec::new("intercept", Vec::new(), t, priors).unwrap().without_field();
        let d = fit_model(&lik, &spec, &stack, &options(2000), 5).unwrap();
        mean_sd(&column(&d, d.model.index_mu0())).1
    };
    let ratio = fit(&two, 2) / fit(&one, 1);
    let expected = std::f64::consts::FRAC_1_SQRT_2;
    assert!((ratio / expected - 1.0).abs() < 0.2, "sd ratio {ratio}");
}

#[test]
fn same_seed_same_draws() {
    let (stack, quads) = square(1);
    let pattern = PointPattern::new(uniform_points(120, 100.0, 1, 3), 1).unwrap();
    let lik = bin_points(&pattern, &quads).unwrap();
    let spec = ModelSpec::new("f", Vec::new(), 1, Default::default()).unwrap();
    let a = fit_model(&lik, &spec, &stack, &options(50), 7).unwrap();
    let b = fit_model(&lik, &spec, &stack, &options(50), 7).unwrap();
    let c = fit_model(&lik, &spec, &stack, &options(50), 8).unwrap();
    assert_eq!(a.latent, b.latent);
    assert_eq!(a.theta, b.theta);
    assert_ne!(a.latent, c.latent);
}

#[test]
fn empty_campaign_gets_low_level() {
    let (stack, quads) = square(2);
    let pattern = PointPattern::new(uniform_points(300, 100.0, 1, 21), 2).unwrap();
    let lik = bin_points(&pattern, &quads).unwrap();
    let d = fit_model(&lik, &intercept_only(2), &stack, &options(1000), 2).unwrap();
    let m = &d.model;
    let (mu1, _) = mean_sd(&column(&d, m.index_campaign(1)));
    let mut mu2 = column(&d, m.index_campaign(2));
    let (mean2, _) = mean_sd(&mu2);
    mu2.sort_by(f64::total_cmp);
    assert!(mean2 < mu1 - 1.0, "{mean2} vs {mu1}");
    assert!(mu2[(0.975 * mu2.len() as f64) as usize] < mu1, "upper tail of the empty campaign reaches the observed one");
}

#[test]
fn degenerate_draws_have_no_effective_parameters() {
    let (stack, quads) = square(1);
    let pattern = PointPattern::new(uniform_points(80, 100.0, 1, 5), 1).unwrap();
    let lik = bin_points(&pattern, &quads).unwrap();
    let d = fit_model(&lik, &intercept_only(1), &stack, &options(20), 1).unwrap();
    let frozen = PosteriorDraws {
        model: Arc::clone(&d.model),
        latent: vec![d.latent[3].clone(); 6],
        theta: vec![d.theta[3].clone(); 6],
        hyper_grid: d.hyper_grid.clone(),
        diagnostics: d.diagnostics.clone(),
    };
    let (dic, pd) = compute_dic(&frozen).unwrap();
    let deviance = -2.0 * d.model.log_likelihood(&d.latent[3]);
    assert_eq!(pd, 0.0);
    assert_eq!(dic, deviance);
    let s = summarize(&d, &stack).unwrap();
    let (dic_d, pd_d) = compute_dic(&d).unwrap();
    assert_eq!((s.dic, s.effective_parameters), (dic_d, pd_d));
    assert!(pd_d > 0.0);
}

#[test]
fn covariate_model_wins_dic_on_covariate_driven_data() {
    let g = GridGeometry::square(20, 20, 5.0);
    let d = DomainMask::full(g);
    let q = build_quadrature(&d).unwrap();
    let mut stack = CovariateStack::new(g);
    let depth = (0..g.n_cells())
        .map(|c| {
            let (r, k) = g.row_col(c);
            Some(r as f64 * 0.8 + (k as f64 * 0.5).sin())
        })
        .collect();
    stack.add_values("depth", ColumnKind::Continuous, depth).unwrap();
    stack.standardize(&d).unwrap();
    let stack = Arc::new(stack);
    let saturated = ModelSpec::new("depth", vec!["depth".into()], 1, Default::default()).unwrap().without_field();
    let mut wins = 0;
    for rep in 0..20 {
        let scenario = Scenario {
            spec: saturated.clone(),
            covariates: Arc::clone(&stack),
            domains: vec![d.clone()],
            mu0: (500.0f64 / 10_000.0).ln(),
            beta: vec![0.3],
            gamma: 0.0,
            campaign_effects: CampaignEffects::Fixed(vec![0.0]),
            field: FieldSource::None,
            seed: 1000 + rep,
        };
        let pattern = scenario.realize().unwrap().sample_points().unwrap();
        let lik = bin_points(&pattern, std::slice::from_ref(&q)).unwrap();
        let dic = |spec: &ModelSpec| compute_dic(&fit_model(&lik, spec, &stack, &options(300), rep).unwrap()).unwrap().0;
        if dic(&saturated) < dic(&intercept_only(1)) {
            wins += 1;
        }
    }
    assert!(wins >= 15, "covariate model had lower DIC in {wins}/20 replicates");
}
