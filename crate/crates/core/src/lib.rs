//! Localized orthogonal decomposition for elliptic optimal control with
//! box constraints and rough coefficients.

pub mod assembly;
pub mod coeff;
pub mod experiment;
pub mod grid;
pub mod linalg;
pub mod lod;
pub mod oracle;
pub mod ocp;
