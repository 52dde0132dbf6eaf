//! Numerical laboratory for contracting curvature flows of convex plane curves.
//!
//! The pipeline is: evolve a convex curve by `∂ₜh = -f(κ)^α` ([`flow`]), reconstruct the
//! arrival time `u` on a Cartesian grid ([`arrival`]), then verify that
//! `w = ((1+α)(u-t₀))^{1/(1+α)}` is concave ([`concavity`]) and that the equivalent
//! differential Harnack quantity is nonnegative ([`harnack`]). Speed functions and their
//! inverse-concavity classification live in [`speed`].
//!
//! Everything numerical is generic over [`Real`] (`f32`/`f64`); the `*64` aliases below
//! are what the experiment driver uses.

// `!(a > b)` is deliberate throughout: NaN must land on the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arrival;
pub mod concavity;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod geometry;
pub mod harnack;
pub mod linalg;
pub mod scalar;
pub mod spectral;
pub mod speed;

pub use error::{Error, Result};
pub use scalar::{Point, Real};
pub use speed::Verdict;

pub type SupportCurve64 = geometry::SupportCurve<f64>;
pub type SpeedSpec64 = speed::SpeedSpec<f64>;
pub type FlowSnapshot64 = flow::FlowSnapshot<f64>;
pub type FlowTrajectory64 = flow::FlowTrajectory<f64>;
pub type ArrivalField64 = arrival::ArrivalField<f64>;

pub type SupportCurve32 = geometry::SupportCurve<f32>;
pub type SpeedSpec32 = speed::SpeedSpec<f32>;
