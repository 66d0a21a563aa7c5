pub mod cache;
pub mod collision;
pub mod config;
pub mod domain;
pub mod error;
pub mod evolution;
pub mod field;
pub mod krylov;
pub mod landau;
pub mod linalg;
pub mod nonlinear;
pub mod pipeline;
pub mod spectral;
pub mod velocity;

pub use error::{Error, Result};
