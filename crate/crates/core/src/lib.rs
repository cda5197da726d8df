//! Station-level transit ridership forecasting with a dynamic spatio-temporal
//! graph network: attention-weighted station graph, recurrent temporal
//! encoders, trend/residual decomposition, and an iterative multi-step
//! forecaster, plus the data pipeline, metrics and station clustering around it.

pub mod autodiff;
pub mod cluster;
pub mod data;
pub mod graph;
pub mod layers;
pub mod model;
pub mod train;
pub mod eval;
pub mod forecast;
pub mod io;
