//! Gridded spatial inputs: rasters, domain masks, point patterns, covariates,
//! partitions and quadrature schemes.

pub mod covariates;
pub mod grid;
pub mod mask;
pub mod partition;
pub mod points;
pub mod quadrature;
pub mod raster;

pub use covariates::{ColumnKind, CovariateColumn, CovariateStack};
pub use grid::GridGeometry;
pub use mask::{DomainKind, DomainMask, StudyArea};
pub use partition::{build_partition, PartitionScheme, Subset};
pub use points::{CampaignDomains, Point, PointPattern};
pub use quadrature::{build_quadrature, QuadratureScheme};
pub use raster::{format_ascii_grid, load_raster, parse_ascii_grid, zonal_aggregate, Legend, RasterGrid, RasterKind, Reducer};
