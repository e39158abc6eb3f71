//! Harmonic map flow from surfaces into 2-sphere targets.
//!
//! The crate evolves maps `u: Σ → N` by their tension field, splits the energy
//! into holomorphic and antiholomorphic parts, monitors the energy scale of
//! concentrating regions and extracts bubble trees at singular times.
//!
//! ```
//! use hmflow::geometry::SurfaceDomain;
//! use hmflow::state::MapState;
//!
//! let domain = SurfaceDomain::polar_disk(128, 128, 1e-3, 1e3, hmflow::geometry::Conformal::Flat).unwrap();
//! let u = MapState::holomorphic(&domain, 1, 1.0);
//! let report = hmflow::fields::energy_report(&u, 2.0).unwrap();
//! assert!((report.kappa / (4.0 * std::f64::consts::PI) - 1.0).abs() < 0.01);
//! ```

pub mod bubble_tree;
pub mod config;
pub mod error;
pub mod fields;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod neck_decay;
pub mod numerics;
pub mod scale_monitor;
pub mod state;

pub use error::{Error, Result};
