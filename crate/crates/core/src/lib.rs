pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod models;
pub mod network;
pub mod optim;
pub mod search;
pub mod synthetic;
pub mod trainer;
pub mod unify;

pub use error::{Error, Result};
