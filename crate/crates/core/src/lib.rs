pub mod bmc;
pub mod chem;
pub mod config;
pub mod data;
pub mod diff;
pub mod featurize;
pub mod model;
pub mod seq;
pub mod train;
