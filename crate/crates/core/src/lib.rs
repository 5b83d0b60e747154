//! Uplink spectral-efficiency analysis for space-constrained massive MIMO.
//!
//! A base station packs `M` antennas into a fixed linear aperture of `d0`
//! wavelengths, so growing the array shrinks the element spacing and raises
//! spatial correlation. This crate samples the correlated uplink channels
//! induced by that geometry, estimates ergodic sum spectral efficiency by
//! Monte Carlo for MRC/ZF/MMSE linear receivers, and evaluates the matching
//! closed-form approximation, bounds, and exact expressions so each can be
//! validated against simulation.
//!
//! Module map:
//! - [`model`]: array geometry, steering sets, large-scale fading, channel draws
//! - [`specfun`]: digamma, exponential integrals, Vandermonde-ratio determinants
//! - [`receivers`]: combiner construction, SINR evaluation, the MC estimator
//! - [`analytic`]: closed-form sum-SE expressions and moment formulas

pub mod analytic;
pub mod model;
pub mod receivers;
pub mod specfun;

pub use analytic::AnalyticBundle;
pub use model::{ChannelRealization, LargeScaleProfile, ScenarioConfig, SteeringSet};
pub use receivers::{Receiver, SEEstimate};
pub use specfun::EigenSpectrum;
