use std::sync::Arc;

use lgcp_cv::geodata::{build_partition, CovariateStack, DomainMask, GridGeometry};
use lgcp_cv::gmrf::MaternHyper;
use lgcp_cv::model::ModelSpec;
use lgcp_cv::simulate::{expected_count, simulate_lgcp, CampaignEffects, FieldSource, Scenario};

fn unit_square() -> (Arc<CovariateStack>, DomainMask) {
    let g = GridGeometry::square(4, 4, 0.25);
    (Arc::new(CovariateStack::new(g)), DomainMask::full(g))
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn constant_intensity_mean_count() {
    let (stack, d) = unit_square();
    let counts: Vec<f64> = (0..1000)
        .map(|seed| {
            let s = Scenario::homogeneous(Arc::clone(&stack), vec![d.clone()], 100.0, seed).unwrap();
            simulate_lgcp(&s).unwrap().len() as f64
        })
        .collect();
    let (m, _) = mean_var(&counts);
    assert!((99.0..=101.0).contains(&m), "mean count {m}");
}

#[test]
fn region_counts_have_standard_z_scores() {
    let g = GridGeometry::square(8, 8, 1.0);
    let stack = Arc::new(CovariateStack::new(g));
    let d = DomainMask::full(g);
    let w: Vec<f64> = (0..g.n_cells()).map(|c| 0.8 * ((c as f64) * 0.37).sin()).collect();
    let region: Vec<usize> = (0..g.n_cells()).filter(|c| c % 8 < 3 && c / 8 >= 2).collect();
    let make = |seed| Scenario {
        spec: ModelSpec::new("truth", Vec::new(), 1, Default::default()).unwrap(),
        covariates: Arc::clone(&stack),
        domains: vec![d.clone()],
        mu0: 0.5,
        beta: Vec::new(),
        gamma: 0.0,
        campaign_effects: CampaignEffects::Fixed(vec![0.2]),
        field: FieldSource::Fixed(w.clone()),
        seed,
    };
    let expected = expected_count(&make(0), 1, &region).unwrap();
    let z: Vec<f64> = (0..1000)
        .map(|seed| {
            let pts = simulate_lgcp(&make(seed)).unwrap();
            let n = pts.points.iter().filter(|p| region.contains(&g.cell_of(p.x, p.y).unwrap())).count() as f64;
            (n - expected) / expected.sqrt()
        })
        .collect();
    let (m, v) = mean_var(&z);
    assert!(m.abs() < 0.1, "mean z {m}");
    assert!((v.sqrt() - 1.0).abs() < 0.1, "sd z {}", v.sqrt());
}

#[test]
fn expected_counts_add_over_a_partition() {
    let g = GridGeometry::square(9, 7, 2.0);
    let stack = Arc::new(CovariateStack::new(g));
    let d = DomainMask::from_predicate(g, |c| c % 5 != 0);
    let w: Vec<f64> = (0..g.n_cells()).map(|c| (c as f64 * 0.11).cos()).collect();
    let s = Scenario {
        field: FieldSource::Fixed(w),
        ..Scenario::homogeneous(stack, vec![d.clone()], 0.3, 1).unwrap()
    };
    let total = expected_count(&s, 1, d.cells()).unwrap();
    let part = build_partition(&d, 3, 4).unwrap();
    let sum: f64 = part.subsets.iter().map(|b| expected_count(&s, 1, &b.cells).unwrap()).sum();
    assert!((sum - total).abs() <= 1e-12 * total);
}

#[test]
fn cell_counts_are_poisson() {
    let g = GridGeometry::square(1, 1, 1.0);
    let stack = Arc::new(CovariateStack::new(g));
    let d = DomainMask::full(g);
    let counts: Vec<f64> = (0..10_000)
        .map(|seed| {
            let s = Scenario::homogeneous(Arc::clone(&stack), vec![d.clone()], 5.0, seed).unwrap();
            simulate_lgcp(&s).unwrap().len() as f64
        })
        .collect();
    let (m, v) = mean_var(&counts);
    assert!((v / m - 1.0).abs() <= 0.05, "variance/mean {}", v / m);
}

#[test]
fn random_field_overdisperses_totals() {
    let g = GridGeometry::square(10, 10, 2.0);
    let stack = Arc::new(CovariateStack::new(g));
    let d = DomainMask::full(g);
    let totals: Vec<f64> = (0..1000)
        .map(|seed| {
            let s = Scenario {
                field: FieldSource::Matern(MaternHyper::new(0.7, 8.0).unwrap()),
                ..Scenario::homogeneous(Arc::clone(&stack), vec![d.clone()], 0.5, seed).unwrap()
            };
            simulate_lgcp(&s).unwrap().len() as f64
        })
        .collect();
    let (m, v) = mean_var(&totals);
    assert!(v > m, "variance {v} vs mean {m}");
}

#[test]
fn fixed_seed_reproduces_pattern() {
    let g = GridGeometry::square(10, 10, 2.0);
    let s = Scenario {
        field: FieldSource::Matern(MaternHyper::new(1.0, 6.0).unwrap()),
        campaign_effects: CampaignEffects::Random { tau2: 0.3 },
        ..Scenario::homogeneous(Arc::new(CovariateStack::new(g)), vec![DomainMask::full(g); 2], 0.4, 77).unwrap()
    };
    assert_eq!(simulate_lgcp(&s).unwrap(), simulate_lgcp(&s).unwrap());
}
