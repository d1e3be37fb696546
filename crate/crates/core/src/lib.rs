//! Gauge-equivariant message passing on triangle meshes.

pub mod autodiff;
pub mod error;
pub mod features;
pub mod harness;
pub mod layers;
pub mod mesh;
pub mod scalar;
pub mod repr;
pub mod tangent;
pub mod transforms;

pub use error::*;
pub use mesh::Mesh;
pub use scalar::Scalar;
