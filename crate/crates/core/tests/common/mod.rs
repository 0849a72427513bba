#![allow(dead_code)]

use std::sync::Arc;

use lgcp_cv::geodata::{build_quadrature, CovariateStack, DomainMask, GridGeometry, QuadratureScheme};
use lgcp_cv::gmrf::MaternHyper;
use lgcp_cv::model::ModelSpec;
use lgcp_cv::simulate::{CampaignEffects, FieldSource, Scenario};

pub struct Fixture {
    pub stack: Arc<CovariateStack>,
    pub domains: Vec<DomainMask>,
    pub quads: Vec<QuadratureScheme>,
}

/// `n × n` grid, every campaign observing the full grid, effort indicator on
/// alternating `block × block` patches.
pub fn patch_grid(n: usize, cell: f64, block: usize, campaigns: usize) -> Fixture {
    let g = GridGeometry::square(n, n, cell);
    let mut stack = CovariateStack::new(g);
    stack.effort = (0..g.n_cells())
        .map(|c| {
            let (r, k) = g.row_col(c);
            ((r / block + k / block) % 2) as f64
        })
        .collect();
    let d = DomainMask::full(g);
    let q = build_quadrature(&d).unwrap();
    Fixture {
        stack: Arc::new(stack),
        domains: vec![d; campaigns],
        quads: vec![q; campaigns],
    }
}

pub struct Truth {
    pub mu0: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub rho: f64,
    pub tau2: f64,
}

pub fn lgcp_scenario(fx: &Fixture, truth: &Truth, seed: u64) -> Scenario {
    let t = fx.domains.len();
    Scenario {
        spec: ModelSpec::new("truth", Vec::new(), t, Default::default()).unwrap(),
        covariates: Arc::clone(&fx.stack),
        domains: fx.domains.clone(),
        mu0: truth.mu0,
        beta: Vec::new(),
        gamma: truth.gamma,
        campaign_effects: CampaignEffects::Random { tau2: truth.tau2 },
        field: if truth.sigma > 0.0 {
            FieldSource::Matern(MaternHyper::new(truth.sigma, truth.rho).unwrap())
        } else {
            FieldSource::None
        },
        seed,
    }
}
