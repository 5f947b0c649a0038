pub mod autodiff;
pub mod baselines;
pub mod datagen;
pub mod erp;
pub mod metrics;
pub mod model;
pub mod trainer;
