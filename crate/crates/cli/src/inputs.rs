use std::path::Path;
use std::sync::Arc;

use lgcp_cv::geodata::{
    load_raster, zonal_aggregate, CampaignDomains, CovariateStack, DomainKind, DomainMask, GridGeometry, Legend, PointPattern,
    RasterGrid, RasterKind, Reducer, StudyArea,
};
use lgcp_cv::{Error, Result};

use crate::config::DataConfig;

/// Study area, covariates and campaign domains shared by every subcommand.
pub struct Inputs {
    pub area: StudyArea,
    pub covariates: Arc<CovariateStack>,
    pub campaigns: CampaignDomains,
}

impl Inputs {
    pub fn n_campaigns(&self) -> usize {
        self.campaigns.n_campaigns()
    }

    pub fn domain_masks(&self) -> Vec<DomainMask> {
        (1..=self.n_campaigns()).map(|t| self.campaigns.mask(&self.area, t).clone()).collect()
    }

    pub fn load_points(&self, data: &DataConfig) -> Result<PointPattern> {
        let path = data.points.as_ref().ok_or_else(|| Error::Usage("data.points is required".into()))?;
        let pattern = PointPattern::load(path, self.n_campaigns())?;
        let outside = pattern.outside_rows(&self.campaigns, &self.area);
        if !outside.is_empty() {
            return Err(Error::PointsOutsideDomain { rows: outside });
        }
        Ok(pattern)
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        })
    }
}

fn aggregate(raster: RasterGrid, cell: Option<f64>) -> Result<RasterGrid> {
    match cell {
        Some(c) => {
            let reducer = if raster.is_categorical() { Reducer::Majority } else { Reducer::Mean };
            zonal_aggregate(&raster, c, reducer)
        }
        None => Ok(raster),
    }
}

pub fn load_inputs(data: &DataConfig, covariates: &std::collections::BTreeMap<String, std::path::PathBuf>) -> Result<Inputs> {
    for path in data.habitat.iter().chain(&data.legend).chain(&data.domains).chain(covariates.values()) {
        require_file(path)?;
    }
    let (area, mut stack) = match &data.habitat {
        Some(habitat_path) => {
            let legend_path = data
                .legend
                .as_ref()
                .ok_or_else(|| Error::Usage("data.legend is required with a habitat raster".into()))?;
            let legend = Legend::load(legend_path)?;
            let effort_code = legend.code(&data.effort_class).ok_or_else(|| {
                Error::InvalidInput(format!("effort class `{}` is not in {}", data.effort_class, legend_path.display()))
            })?;
            let mut exclude = vec![effort_code];
            if let Some(r) = &data.reference_class {
                exclude.push(legend.code(r).ok_or_else(|| {
                    Error::InvalidInput(format!("reference class `{r}` is not in {}", legend_path.display()))
                })?);
            }
            let habitat = aggregate(load_raster(habitat_path, RasterKind::Categorical(legend))?, data.aggregate_cell)?;
            let area = StudyArea::from_habitat(&habitat, effort_code)?;
            let mut stack = CovariateStack::for_study_area(&area);
            stack.add_habitat_indicators(&habitat, &exclude)?;
            (area, stack)
        }
        None => {
            let (rows, cols, cell) = match (data.grid_rows, data.grid_cols, data.cell_size) {
                (Some(r), Some(c), Some(s)) => (r, c, s),
                _ => {
                    return Err(Error::Usage(
                        "either data.habitat or data.grid_rows, data.grid_cols and data.cell_size are required".into(),
                    ))
                }
            };
            if rows == 0 || cols == 0 || !(cell > 0.0) {
                return Err(Error::Usage("grid dimensions and cell size must be positive".into()));
            }
            let g = GridGeometry::new(data.origin_x, data.origin_y, cell, cell, rows, cols);
            let d = DomainMask::full(g);
            let area = StudyArea::new(d, DomainMask::from_predicate(g, |_| false))?;
            let stack = CovariateStack::for_study_area(&area);
            (area, stack)
        }
    };
    for (name, path) in covariates {
        let raster = aggregate(load_raster(path, RasterKind::Continuous)?, data.aggregate_cell)?;
        stack.add_continuous(name, &raster)?;
    }
    if data.standardize {
        stack.standardize(&area.d)?;
    }
    let campaigns = match (&data.domains, data.campaigns) {
        (Some(path), n) => {
            let map = CampaignDomains::load(path)?;
            if let Some(n) = n {
                if n != map.n_campaigns() {
                    return Err(Error::InvalidInput(format!(
                        "data.campaigns = {n} but {} lists {} campaigns",
                        path.display(),
                        map.n_campaigns()
                    )));
                }
            }
            map
        }
        (None, Some(n)) if n > 0 => CampaignDomains::new(vec![DomainKind::D; n]),
        _ => return Err(Error::Usage("either data.domains or a positive data.campaigns is required".into())),
    };
    Ok(Inputs {
        area,
        covariates: Arc::new(stack),
        campaigns,
    })
}
