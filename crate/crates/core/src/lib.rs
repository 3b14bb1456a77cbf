//! Beam-tilt aberration estimation for transmission electron microscopy.
//!
//! Deliberately tilting the electron beam turns the microscope's hidden
//! aberration coefficients into measurable image shifts. This crate models
//! that relationship end to end:
//!
//! * [`aberration`]: coefficient indexing, the wave aberration phase, the
//!   tilt-induced coefficient transform, and the exact polynomial expansion
//!   of the tilt-to-shift observation map and its derivatives.
//! * [`model`]: the drift-augmented linear-Gaussian state-space system in
//!   normalized coordinates, built from a JSON-serializable configuration.
//! * [`sim`]: a synthetic measurement generator standing in for the
//!   physical microscope.
//! * [`estimate`]: Kalman filter, fixed-interval smoother, batch N-step
//!   covariance prediction/correction, and the innovation log-likelihood.
//! * [`schedule`]: A-optimal tilt-sequence design: weighted-trace cost,
//!   analytic gradient, projected-gradient solver in polar coordinates,
//!   multi-start and receding-horizon drivers, baseline patterns.
//! * [`em`]: expectation-maximization estimation of the specimen-dependent
//!   measurement-noise covariance from recorded tilt/shift data.
//!
//! Because the estimation error covariance of a linear-Gaussian filter never
//! touches the measurement values, tilt sequences can be scored and
//! optimized entirely offline; the simulator then validates that predicted
//! uncertainties match realized ones.

pub mod aberration;
pub mod em;
pub mod error;
pub mod estimate;
pub mod model;
pub mod schedule;
pub mod sim;

pub use error::{Error, Result};
