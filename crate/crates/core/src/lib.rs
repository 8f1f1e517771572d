pub mod calibration;
pub mod dataset;
pub mod device;
pub mod exec;
pub mod experiments;
pub mod network;
pub mod rng;
pub mod tile;
