//! Numerical laboratory for Adam update-distribution dynamics.
//!
//! The crate dissects how the Adam optimizer's internal state responds to
//! time-correlated gradient estimates: the instrumented recursion itself
//! ([`optimizer`]), synthetic gradient processes with controllable
//! correlation ([`gradient`]), distribution analysis built around the
//! Hartigan dip statistic ([`dip`], [`stats`]), random-matrix spectra for
//! curvature scaling ([`rmt`]), the per-step descent condition and
//! critical learning rates ([`divergence`]), an end-to-end loss-spike
//! process simulator ([`spike`]), and an early-warning monitor with
//! mitigations ([`monitor`]).

pub mod dip;
pub mod divergence;
pub mod gradient;
pub mod monitor;
pub mod optimizer;
pub mod rmt;
pub mod rng;
pub mod spike;
pub mod stats;
