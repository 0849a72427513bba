use std::fmt;
use std::str::FromStr;

use super::grid::GridGeometry;
use super::raster::RasterGrid;
use crate::error::{Error, Result};

/// Cells of a grid that belong to a spatial domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainMask {
    pub geometry: GridGeometry,
    included: Vec<bool>,
    cells: Vec<usize>,
}

impl DomainMask {
    pub fn new(geometry: GridGeometry, included: Vec<bool>) -> Result<Self> {
        if included.len() != geometry.n_cells() {
            return Err(Error::InvalidInput(format!(
                "mask has {} entries for {} cells",
                included.len(),
                geometry.n_cells()
            )));
        }
        let cells = included.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        Ok(Self {
            geometry,
            included,
            cells,
        })
    }

    pub fn full(geometry: GridGeometry) -> Self {
        Self::new(geometry, vec![true; geometry.n_cells()]).unwrap()
    }

    /// Cells holding a value in `raster`.
    pub fn from_valid_cells(raster: &RasterGrid) -> Self {
        Self::new(raster.geometry, raster.values.iter().map(Option::is_some).collect()).unwrap()
    }

    pub fn from_predicate(geometry: GridGeometry, pred: impl Fn(usize) -> bool) -> Self {
        Self::new(geometry, (0..geometry.n_cells()).map(pred).collect()).unwrap()
    }

    pub fn contains_cell(&self, idx: usize) -> bool {
        self.included.get(idx).copied().unwrap_or(false)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.geometry.cell_of(x, y).is_some_and(|c| self.included[c])
    }

    /// Included cell indices in ascending order.
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn included(&self) -> &[bool] {
        &self.included
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn area(&self) -> f64 {
        self.cells.len() as f64 * self.geometry.cell_area()
    }

    /// `(xmin, ymin, xmax, ymax)` of the included cells.
    pub fn bounding_box(&self) -> Option<(f64, f64, f64, f64)> {
        let mut it = self.cells.iter().map(|&c| self.geometry.cell_bounds(c));
        let first = it.next()?;
        Some(it.fold(first, |a, b| (a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3))))
    }

    pub fn intersection(&self, other: &DomainMask) -> DomainMask {
        assert!(self.geometry.same_lattice(&other.geometry));
        let inc = self.included.iter().zip(&other.included).map(|(a, b)| *a && *b).collect();
        DomainMask::new(self.geometry, inc).unwrap()
    }

    pub fn union(&self, other: &DomainMask) -> DomainMask {
        assert!(self.geometry.same_lattice(&other.geometry));
        let inc = self.included.iter().zip(&other.included).map(|(a, b)| *a || *b).collect();
        DomainMask::new(self.geometry, inc).unwrap()
    }
}

/// Which part of the study area a campaign surveyed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DomainKind {
    /// Effort-habitat subdomain (the seagrass meadow).
    D1,
    /// Everything outside the effort habitat.
    D2,
    /// Whole study area.
    D,
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainKind::D1 => "D1",
            DomainKind::D2 => "D2",
            DomainKind::D => "D",
        })
    }
}

impl FromStr for DomainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "D1" => Ok(DomainKind::D1),
            "D2" => Ok(DomainKind::D2),
            "D" => Ok(DomainKind::D),
            other => Err(Error::InvalidInput(format!("unknown domain `{other}` (expected D1, D2 or D)"))),
        }
    }
}

/// The study area `D` split into the disjoint subdomains `D1` and `D2`.
#[derive(Debug, Clone)]
pub struct StudyArea {
    pub d: DomainMask,
    pub d1: DomainMask,
    pub d2: DomainMask,
}

impl StudyArea {
    /// `d1` must be contained in `d`; `d2` is its complement within `d`.
    pub fn new(d: DomainMask, d1: DomainMask) -> Result<Self> {
        if !d.geometry.same_lattice(&d1.geometry) {
            return Err(Error::InvalidInput("D and D1 masks use different grids".into()));
        }
        if d1.cells().iter().any(|&c| !d.contains_cell(c)) {
            return Err(Error::InvalidInput("D1 extends outside the study area D".into()));
        }
        let d2 = DomainMask::from_predicate(d.geometry, |c| d.contains_cell(c) && !d1.contains_cell(c));
        Ok(Self { d, d1, d2 })
    }

    /// Study area from a habitat raster: `D` is every coded cell, `D1` the
    /// cells carrying `effort_code`.
    pub fn from_habitat(habitat: &RasterGrid, effort_code: i64) -> Result<Self> {
        let d = DomainMask::from_valid_cells(habitat);
        let d1 = DomainMask::from_predicate(habitat.geometry, |c| habitat.code(c) == Some(effort_code));
        Self::new(d, d1)
    }

    pub fn mask(&self, kind: DomainKind) -> &DomainMask {
        match kind {
            DomainKind::D1 => &self.d1,
            DomainKind::D2 => &self.d2,
            DomainKind::D => &self.d,
        }
    }

    /// Effort indicator `z` per grid cell (1 inside `D1`).
    pub fn effort_indicator(&self) -> Vec<f64> {
        self.d1.included().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}
