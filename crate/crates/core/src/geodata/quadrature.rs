use super::mask::DomainMask;
use crate::error::{Error, Result};

/// Cell-center quadrature over a domain: one node per included cell with the
/// cell area as weight.
#[derive(Debug, Clone)]
pub struct QuadratureScheme {
    pub nodes: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
    /// Grid cell of each node.
    pub cells: Vec<usize>,
    pub domain: DomainMask,
}

impl QuadratureScheme {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `Σ_q α_q f(v_q)`
    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&(x, y), w)| w * f(x, y)).sum()
    }

    /// `Σ_q α_q values[q]` for values given per node.
    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.len());
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

pub fn build_quadrature(domain: &DomainMask) -> Result<QuadratureScheme> {
    if domain.is_empty() {
        return Err(Error::InvalidInput("quadrature requested for an empty domain".into()));
    }
    let g = &domain.geometry;
    let cells = domain.cells().to_vec();
    Ok(QuadratureScheme {
        nodes: cells.iter().map(|&c| g.cell_center(c)).collect(),
        weights: vec![g.cell_area(); cells.len()],
        cells,
        domain: domain.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::grid::GridGeometry;
    use crate::geodata::partition::build_partition;

    #[test]
    fn unit_square_half_meter_cells() {
        let d = DomainMask::full(GridGeometry::square(2, 2, 0.5));
        let q = build_quadrature(&d).unwrap();
        assert_eq!(q.len(), 4);
        assert!(q.weights.iter().all(|&w| w == 0.25));
        assert_eq!(q.total_weight(), 1.0);
        assert_eq!(q.integrate(|_, _| 2.0), 2.0);
    }

    #[test]
    fn three_cell_domain() {
        let g = GridGeometry::square(2, 2, 1.0);
        let d = DomainMask::new(g, vec![true, true, false, true]).unwrap();
        let q = build_quadrature(&d).unwrap();
        assert_eq!(q.len(), 3);
        assert_eq!(q.total_weight(), 3.0);
        for (&(x, y), &c) in q.nodes.iter().zip(&q.cells) {
            assert!(d.contains_point(x, y));
            assert_eq!(g.cell_of(x, y), Some(c));
        }
    }

    #[test]
    fn weight_sum_matches_area_for_irregular_domain() {
        let g = GridGeometry::new(1.0, 2.0, 0.21, 0.24, 37, 41);
        let d = DomainMask::from_predicate(g, |c| (c * 7919) % 5 != 0);
        let q = build_quadrature(&d).unwrap();
        assert!((q.total_weight() - d.area()).abs() / d.area() < 1e-9);
    }

    #[test]
    fn subset_integrals_add_up() {
        let g = GridGeometry::square(20, 20, 1.0);
        let d = DomainMask::from_predicate(g, |c| c % 3 != 1);
        let q = build_quadrature(&d).unwrap();
        let p = build_partition(&d, 3, 4).unwrap();
        let f = |x: f64, y: f64| (0.1 * x).exp() + y * y;
        let lookup = p.cell_lookup();
        let mut per_subset = vec![0.0; p.len()];
        for ((&(x, y), &w), &c) in q.nodes.iter().zip(&q.weights).zip(&q.cells) {
            per_subset[lookup[c].unwrap()] += w * f(x, y);
        }
        let total: f64 = per_subset.iter().sum();
        assert!((total - q.integrate(f)).abs() <= 1e-9 * total);
    }

    #[test]
    fn empty_domain_is_rejected() {
        let d = DomainMask::new(GridGeometry::square(1, 1, 1.0), vec![false]).unwrap();
        assert!(build_quadrature(&d).is_err());
    }
}
