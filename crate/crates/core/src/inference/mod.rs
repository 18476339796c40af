//! Exact inference for the warped DLM.

pub mod filter;
pub mod forecast;
pub mod gibbs;
pub mod mle;

pub use filter::{
    constraint_region, filter, filter_compact, joint_smoothing, log_marginal_likelihood, obs_rect, smooth,
    FilterState, SmoothResult,
};
pub use forecast::{
    empirical_pmf, forecast_from_states, forecast_log_prob, forecast_pmf, forecast_sample,
    forecast_sample_smooth, predictive_paths, ForecastPmf,
};
pub use gibbs::{
    draw_uniform_sd_variance, ffbs, gibbs, sample_inverse_wishart, GibbsOptions, GibbsOutput, GibbsPriors, VarianceBlock, VariancePrior, DEFAULT_SD_UPPER,
};
pub use mle::{fit_variances_ml, gibbs_warm_start, MlFit, MlOptions, VarStructure};
