//! Laplace-approximation fitting of the latent Gaussian model.

mod fit;
mod laplace;
mod likelihood;
mod summary;

pub use fit::{fit_model, FitDiagnostics, FitOptions, HyperGridPoint, PosteriorDraws};
pub use laplace::{HyperPoint, InnerMode, LatentModel};
pub use likelihood::{bin_points, CampaignCounts, GriddedLikelihood};
pub use summary::{compute_dic, field_posterior_mean, quantile_sorted, summarize, summarize_values, FitSummary, ParameterSummary};
