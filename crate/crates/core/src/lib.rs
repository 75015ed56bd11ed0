pub mod calibration;
pub mod closed_form;
pub mod model;
pub mod montecarlo;
pub mod rng;
pub mod studies;
pub mod verification;
