pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod demo;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod models;
pub mod scoring;
pub mod svg;
pub mod training;

pub use error::{Error, Result};
