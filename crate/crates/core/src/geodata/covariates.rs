use super::grid::GridGeometry;
use super::mask::{DomainMask, StudyArea};
use super::raster::RasterGrid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Continuous,
    /// 0/1 habitat membership.
    Indicator,
}

/// One covariate on the stack grid. Continuous columns may be stored
/// standardized; `raw = center + scale * stored`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateColumn {
    pub name: String,
    pub kind: ColumnKind,
    pub values: Vec<Option<f64>>,
    pub center: f64,
    pub scale: f64,
}

/// Covariates aligned on one grid, plus the effort indicator `z`.
#[derive(Debug, Clone)]
pub struct CovariateStack {
    pub geometry: GridGeometry,
    pub columns: Vec<CovariateColumn>,
    pub effort: Vec<f64>,
}

impl CovariateStack {
    /// Empty stack with `z = 0` everywhere.
    pub fn new(geometry: GridGeometry) -> Self {
        Self {
            geometry,
            columns: Vec::new(),
            effort: vec![0.0; geometry.n_cells()],
        }
    }

    /// Empty stack whose effort indicator marks the study area's `D1`.
    pub fn for_study_area(area: &StudyArea) -> Self {
        let mut s = Self::new(area.d.geometry);
        s.effort = area.effort_indicator();
        s
    }

    fn push(&mut self, column: CovariateColumn) -> Result<()> {
        if self.index_of(&column.name).is_some() {
            return Err(Error::InvalidInput(format!("duplicate covariate `{}`", column.name)));
        }
        self.columns.push(column);
        Ok(())
    }

    pub fn add_values(&mut self, name: &str, kind: ColumnKind, values: Vec<Option<f64>>) -> Result<()> {
        if values.len() != self.geometry.n_cells() {
            return Err(Error::InvalidInput(format!(
                "covariate `{name}` has {} values for {} cells",
                values.len(),
                self.geometry.n_cells()
            )));
        }
        self.push(CovariateColumn {
            name: name.to_string(),
            kind,
            values,
            center: 0.0,
            scale: 1.0,
        })
    }

    pub fn add_continuous(&mut self, name: &str, raster: &RasterGrid) -> Result<()> {
        if raster.is_categorical() {
            return Err(Error::Usage(format!("covariate `{name}` is categorical; add it as habitat indicators")));
        }
        self.check_lattice(name, raster)?;
        self.add_values(name, ColumnKind::Continuous, raster.values.clone())
    }

    /// One indicator column per legend class, named by its label, skipping `exclude`.
    pub fn add_habitat_indicators(&mut self, habitat: &RasterGrid, exclude: &[i64]) -> Result<()> {
        let legend = habitat
            .legend()
            .ok_or_else(|| Error::Usage("habitat raster must be categorical".into()))?
            .clone();
        self.check_lattice("habitat", habitat)?;
        for (code, label) in legend.iter() {
            if exclude.contains(&code) {
                continue;
            }
            let values = (0..habitat.geometry.n_cells())
                .map(|c| habitat.code(c).map(|h| if h == code { 1.0 } else { 0.0 }))
                .collect();
            self.add_values(label, ColumnKind::Indicator, values)?;
        }
        Ok(())
    }

    fn check_lattice(&self, name: &str, raster: &RasterGrid) -> Result<()> {
        if !self.geometry.same_lattice(&raster.geometry) {
            return Err(Error::InvalidInput(format!("covariate `{name}` is not on the stack grid")));
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&CovariateColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Rescales every continuous column to zero mean and unit sd over `domain`.
    /// Constant columns are only centred.
    pub fn standardize(&mut self, domain: &DomainMask) -> Result<()> {
        for col in self.columns.iter_mut().filter(|c| c.kind == ColumnKind::Continuous) {
            let raw: Vec<f64> = domain
                .cells()
                .iter()
                .map(|&c| {
                    col.values[c]
                        .map(|v| col.center + col.scale * v)
                        .ok_or_else(|| Error::MissingCovariate {
                            name: col.name.clone(),
                            cell: c,
                        })
                })
                .collect::<Result<_>>()?;
            if raw.is_empty() {
                continue;
            }
            let n = raw.len() as f64;
            let mean = raw.iter().sum::<f64>() / n;
            let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            let (old_c, old_s) = (col.center, col.scale);
            for v in col.values.iter_mut().flatten() {
                *v = (old_c + old_s * *v - mean) / sd;
            }
            col.center = mean;
            col.scale = sd;
        }
        Ok(())
    }

    /// Column-major design values of `names` at `cells`.
    pub fn design(&self, names: &[String], cells: &[usize]) -> Result<Vec<Vec<f64>>> {
        names
            .iter()
            .map(|name| {
                let col = self
                    .column(name)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown covariate `{name}`")))?;
                cells
                    .iter()
                    .map(|&c| {
                        col.values[c].ok_or_else(|| Error::MissingCovariate {
                            name: name.clone(),
                            cell: c,
                        })
                    })
                    .collect()
            })
            .collect()
    }

    pub fn effort_at(&self, cells: &[usize]) -> Vec<f64> {
        cells.iter().map(|&c| self.effort[c]).collect()
    }
}
