use super::mask::DomainMask;
use crate::error::{Error, Result};

/// One bounded subset `B_g` of a partitioned campaign domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Subset {
    /// Position in the partition lattice, counted from the north-west corner.
    pub lattice_row: usize,
    pub lattice_col: usize,
    /// Grid cells of the domain assigned to this subset, ascending.
    pub cells: Vec<usize>,
    /// `(xmin, ymin, xmax, ymax)` of the lattice rectangle.
    pub bbox: (f64, f64, f64, f64),
    pub area: f64,
}

/// Regular `rows × cols` lattice over a domain's bounding box; lattice cells
/// that contain no domain cell are dropped and only counted.
#[derive(Debug, Clone)]
pub struct PartitionScheme {
    pub domain: DomainMask,
    pub subsets: Vec<Subset>,
    pub grid_dims: (usize, usize),
    pub n_empty: usize,
}

impl PartitionScheme {
    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    /// `subset_of[cell]` for every grid cell; `None` outside the domain.
    pub fn cell_lookup(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.domain.geometry.n_cells()];
        for (g, s) in self.subsets.iter().enumerate() {
            for &c in &s.cells {
                out[c] = Some(g);
            }
        }
        out
    }
}

/// Assigns each domain cell, by its center, to a rectangle of a `rows × cols`
/// lattice spanning the domain's bounding box (half-open on both axes).
pub fn build_partition(domain: &DomainMask, rows: usize, cols: usize) -> Result<PartitionScheme> {
    if rows == 0 || cols == 0 {
        return Err(Error::Usage("partition needs at least one row and one column".into()));
    }
    let (xmin, ymin, xmax, ymax) = domain
        .bounding_box()
        .ok_or_else(|| Error::InvalidInput("cannot partition an empty domain".into()))?;
    let w = (xmax - xmin) / cols as f64;
    let h = (ymax - ymin) / rows as f64;
    let g = &domain.geometry;

    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); rows * cols];
    for &c in domain.cells() {
        let (x, y) = g.cell_center(c);
        let col = (((x - xmin) / w).floor() as usize).min(cols - 1);
        let from_top = (((ymax - y) / h).floor() as usize).min(rows - 1);
        buckets[from_top * cols + col].push(c);
    }

    let mut subsets = Vec::new();
    let mut n_empty = 0;
    for (k, cells) in buckets.into_iter().enumerate() {
        if cells.is_empty() {
            n_empty += 1;
            continue;
        }
        let (r, c) = (k / cols, k % cols);
        let bbox = (
            xmin + c as f64 * w,
            ymax - (r + 1) as f64 * h,
            xmin + (c + 1) as f64 * w,
            ymax - r as f64 * h,
        );
        let area = cells.len() as f64 * g.cell_area();
        subsets.push(Subset {
            lattice_row: r,
            lattice_col: c,
            cells,
            bbox,
            area,
        });
    }
    if n_empty > 0 {
        log::info!("partition {rows}x{cols}: {n_empty} empty lattice cells dropped");
    }
    Ok(PartitionScheme {
        domain: domain.clone(),
        subsets,
        grid_dims: (rows, cols),
        n_empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::grid::GridGeometry;

    fn assert_set_partition(p: &PartitionScheme) {
        let mut seen = vec![0usize; p.domain.geometry.n_cells()];
        for s in &p.subsets {
            assert!(!s.cells.is_empty());
            for &c in &s.cells {
                seen[c] += 1;
            }
        }
        for c in 0..seen.len() {
            let expect = usize::from(p.domain.contains_cell(c));
            assert_eq!(seen[c], expect, "cell {c}");
        }
    }

    #[test]
    fn eighteen_by_eighteen_on_unit_square() {
        let d = DomainMask::full(GridGeometry::square(36, 36, 1.0 / 36.0));
        let p = build_partition(&d, 18, 18).unwrap();
        assert_eq!(p.len(), 324);
        assert_eq!(p.n_empty, 0);
        assert_set_partition(&p);
        let total: f64 = p.subsets.iter().map(|s| s.area).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_partition() {
        let d = DomainMask::full(GridGeometry::square(5, 7, 1.0));
        let p = build_partition(&d, 1, 1).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.subsets[0].cells, d.cells());
    }

    #[test]
    fn l_shaped_mask() {
        // 4x4 grid, north-east quadrant removed
        let g = GridGeometry::square(4, 4, 1.0);
        let d = DomainMask::from_predicate(g, |c| {
            let (r, col) = g.row_col(c);
            !(r < 2 && col >= 2)
        });
        let p = build_partition(&d, 2, 2).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.n_empty, 1);
        assert_set_partition(&p);
        assert_eq!(p.subsets[0].cells, vec![0, 1, 4, 5]);
        assert_eq!(p.subsets[1].cells, vec![8, 9, 12, 13]);
        assert_eq!(p.subsets[2].cells, vec![10, 11, 14, 15]);
        assert_eq!(p.subsets[0].bbox, (0.0, 2.0, 2.0, 4.0));
    }

    #[test]
    fn empty_domain_is_an_error() {
        let d = DomainMask::new(GridGeometry::square(2, 2, 1.0), vec![false; 4]).unwrap();
        assert!(build_partition(&d, 2, 2).is_err());
    }

    #[test]
    fn uneven_split_covers_everything() {
        let d = DomainMask::full(GridGeometry::square(64, 64, 1.0));
        let p = build_partition(&d, 18, 18).unwrap();
        assert_eq!(p.len(), 324);
        assert_set_partition(&p);
    }
}
