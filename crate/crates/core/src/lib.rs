pub mod poly;
pub mod regression;
pub mod stats;
pub mod linesearch;
pub mod problems;
pub mod seeds;
pub mod log;
pub mod baselines;
pub mod controller;
pub mod cli;
