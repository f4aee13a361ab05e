//! Two-stage network power minimization for user-centric MIMO cloud RAN:
//! user admission, joint RRH selection and precoding, baselines, and a Monte
//! Carlo harness.

pub mod baselines;
pub mod dual;
pub mod error;
pub mod linalg;
pub mod mmse;
pub mod network;
pub mod precoder;
pub mod stage1;
pub mod stage2;

pub use error::{CoreError, Result};
