pub mod config;
pub mod constants;
pub mod error;
pub mod gronwall;
pub mod integral;
pub mod kernels;
pub mod noise;
pub mod picard;
pub mod quadrature;
pub mod regression;
pub mod regularity;
pub mod report;
pub mod sobolev;

pub use error::{Error, Result};
