pub mod absorb;
pub mod bounds;
pub mod dist;
pub mod experiment;
pub mod limits;
pub mod models;
pub mod numeric;
pub mod renewal;
pub mod wasserstein;
