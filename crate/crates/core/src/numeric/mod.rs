//! Numerical building blocks shared by the distribution, distance and limit-law code.

pub mod quad;
pub mod roots;
pub mod special;
pub mod sum;

pub use quad::{integrate, integrate_lower_tail, integrate_upper_tail, QuadError, QuadResult};
pub use roots::{brent, RootError};
pub use sum::{neumaier_sum, CompensatedSum};
