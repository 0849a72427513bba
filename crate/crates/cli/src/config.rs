use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use lgcp_cv::gmrf::PcPriorSpec;
use lgcp_cv::model::{PriorSpec, EFFORT_LABEL};
use lgcp_cv::{Error, Result};

/// Everything a run reads from its config file. Relative paths are resolved
/// against the directory of the config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    /// Continuous covariate rasters by name.
    #[serde(default)]
    pub covariates: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub priors: PriorConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub crossval: CrossvalConfig,
    #[serde(default)]
    pub rank: RankConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Categorical habitat raster; its valid cells form the study area.
    pub habitat: Option<PathBuf>,
    /// `code,label` legend of the habitat raster.
    pub legend: Option<PathBuf>,
    /// Habitat label whose cells form the effort subdomain.
    pub effort_class: String,
    /// Habitat label left out of the indicator columns.
    pub reference_class: Option<String>,
    /// Aggregate every raster to this cell size before use.
    pub aggregate_cell: Option<f64>,
    /// Plain grid used when no habitat raster is given: the whole grid is the
    /// study area and the effort subdomain is empty.
    pub grid_rows: Option<usize>,
    pub grid_cols: Option<usize>,
    pub cell_size: Option<f64>,
    pub origin_x: f64,
    pub origin_y: f64,
    /// `campaign,domain` map; without it every campaign covers the whole area.
    pub domains: Option<PathBuf>,
    pub campaigns: Option<usize>,
    pub points: Option<PathBuf>,
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            habitat: None,
            legend: None,
            effort_class: EFFORT_LABEL.to_string(),
            reference_class: None,
            aggregate_cell: None,
            grid_rows: None,
            grid_cols: None,
            cell_size: None,
            origin_x: 0.0,
            origin_y: 0.0,
            domains: None,
            campaigns: None,
            points: None,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub range0: f64,
    pub range_prob: f64,
    pub sd0: f64,
    pub sd_prob: f64,
    pub fixed_precision: f64,
    pub campaign_shape: f64,
    pub campaign_rate: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        let p = PriorSpec::default();
        Self {
            range0: p.pc.rho0,
            range_prob: p.pc.p_rho,
            sd0: p.pc.sigma0,
            sd_prob: p.pc.p_sigma,
            fixed_precision: p.fixed_precision,
            campaign_shape: p.campaign_shape,
            campaign_rate: p.campaign_rate,
        }
    }
}

impl PriorConfig {
    pub fn to_spec(&self) -> Result<PriorSpec> {
        let pc = PcPriorSpec::new(self.range0, self.range_prob, self.sd0, self.sd_prob)?;
        for (name, v) in [
            ("fixed_precision", self.fixed_precision),
            ("campaign_shape", self.campaign_shape),
            ("campaign_rate", self.campaign_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Usage(format!("priors.{name} must be positive, got {v}")));
            }
        }
        Ok(PriorSpec {
            pc,
            fixed_precision: self.fixed_precision,
            campaign_shape: self.campaign_shape,
            campaign_rate: self.campaign_rate,
        })
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub intercept: Option<f64>,
    /// Constant intensity per m²; alternative to `intercept`.
    pub intensity: Option<f64>,
    pub effort: f64,
    pub campaign_effects: Option<Vec<f64>>,
    pub campaign_variance: Option<f64>,
    pub field_sd: Option<f64>,
    pub field_range: Option<f64>,
    pub coefficients: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub model_id: String,
    pub covariates: Vec<String>,
    pub spatial_field: bool,
    pub effort: bool,
    pub draws: usize,
    pub halo: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            model_id: "model".into(),
            covariates: Vec::new(),
            spatial_field: true,
            effort: true,
            draws: 1000,
            halo: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossvalConfig {
    pub models: Option<PathBuf>,
    pub folds: usize,
    pub draws: usize,
    pub partition_rows: usize,
    pub partition_cols: usize,
    pub weighting: String,
    pub dic: bool,
    pub spatial_field: bool,
    pub halo: Option<usize>,
}

impl Default for CrossvalConfig {
    fn default() -> Self {
        Self {
            models: None,
            folds: 5,
            draws: 1000,
            partition_rows: 18,
            partition_cols: 18,
            weighting: "unweighted".into(),
            dic: false,
            spatial_field: true,
            halo: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankConfig {
    /// Defaults to `crps_by_model.csv` in the output directory.
    pub input: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].lines().count().max(1));
            Error::Parse {
                path: path.display().to_string(),
                line,
                message: e.message().to_string(),
            }
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.data;
        for p in [&mut d.habitat, &mut d.legend, &mut d.domains, &mut d.points, &mut self.crossval.models, &mut self.rank.input]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        self.covariates.values_mut().for_each(fix);
        if let Some(out) = &mut self.out {
            fix(out);
        }
    }
}
