//! Robust bi-level co-design of agile fixed-wing UAVs.
//!
//! An evolutionary outer loop searches wing geometry; each candidate is
//! evaluated by planning a time-energy-optimal trajectory on its nominal
//! model and then flying that plan in closed loop under parametric
//! uncertainty and turbulence.

pub mod aero;
pub mod airframe;
pub mod autodiff;
pub mod cmaes;
pub mod config;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod trajopt;
pub mod turbulence;
pub mod tvlqr;

pub use error::{CodesignError, Result};
