pub mod arima;
pub mod averaging;
pub mod cli;
pub mod data;
pub mod forecast;
pub mod ftsa;
pub mod harness;
pub mod metrics;
pub mod models;
mod optim;
pub mod smoothing;
pub mod synthetic;
pub mod transform;
