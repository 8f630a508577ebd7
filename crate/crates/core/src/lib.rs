//! Quantitative photoacoustic imaging digital twin.
//!
//! The crate simulates the forward chain of a ring-illuminated, arc-detected
//! photoacoustic tomograph and solves the optical inverse problem with
//! non-learned estimators:
//!
//! ```text
//! phantom ──rasterize──▶ labels ──assign──▶ μa, μs, g, n
//!        ──Monte Carlo──▶ φ ──Γ·μa·φ──▶ p0 ──k-space──▶ p(t)
//!        ──bandpass/Hilbert/interp/DAS──▶ image ──Cal. | GT-φ──▶ μ̂a
//! ```
//!
//! plus an adding-doubling slab model for reflectance/transmittance
//! characterisation and the evaluation metrics (relative/absolute error,
//! gCNR, Pearson r, Mann-Whitney U).
//!
//! Units: lengths in mm, time in µs, sound speed in mm/µs, optical
//! coefficients in 1/mm inside the transport code and 1/cm in the
//! quantification layer (where calibration constants live).

pub mod acoustics;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod phantom;
pub mod photon;
pub mod pipeline;
pub mod quant;
pub mod recon;
pub mod rng;
pub mod slab;

pub use error::{QpatError, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
