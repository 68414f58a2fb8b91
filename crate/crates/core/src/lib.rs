//! Breathing rate estimation and breathing localization from the received
//! signal strength of many links in a multi-channel wireless network.
//!
//! The rate estimator sums per-link power spectra over a frequency grid,
//! optionally removing piecewise means between detected breakpoints so
//! that motion-induced level shifts do not swamp the breathing tone. The
//! per-link power at the estimated rate then drives a regularized
//! least-squares image whose peak locates the breathing person. A
//! deterministic simulator produces traces with known ground truth.

pub mod ablation;
pub mod breakpoints;
pub mod error;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod rate;
pub mod simulator;
pub mod spectral;
pub mod tomography;

pub use breakpoints::{detect_breakpoints, remove_mean_breakpoint, t_score, BreakpointSet, TTestParams};
pub use error::{Error, Result};
pub use io::{LocationRow, RateRow, RunConfig};
pub use model::{
    enumerate_links, extract_frame, Channel, LinkKey, NodeGeometry, NodeId, Point, RssFrame, RssSeries, Trace,
};
pub use rate::{estimate_rate, EstimatorConfig, Method, RateEstimate, RateEstimator, RateMetrics};
pub use simulator::{generate, GroundTruth, ScenarioConfig, Simulation};
pub use spectral::{psd_at, remove_mean_basic, sum_psd, FrequencyGrid, Spectrum};
pub use tomography::{
    build_covariance, build_projection, build_weights, estimate_image, BreathingImage, ImagingModel, ImagingParams,
    PixelGrid, Projection, WeightMatrix,
};
