//! Stochastic Landau–Lifshitz–Gilbert dynamics on an interval and on the sphere.

pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod fields;
pub mod measures;
pub mod noise;
pub mod sde_sphere;
pub mod spde;
pub mod vec3;

pub use error::{Error, Result};
pub use fields::{Grid1D, SphereField};
pub use noise::{IncrementStream, NoiseIncrement, NoiseShape};
pub use spde::{AnisotropyParams, AnisotropySign, Scheme, SolverConfig};
pub use vec3::{Mat3, Vec3};
