//! Ray marching, alpha compositing and the trainable radiance field.

pub mod alpha;
pub mod field;
pub mod occupancy;
pub mod ray;
pub mod sampling;

pub use alpha::{
    alpha_shift, composite, density_to_alpha, sigmoid, softplus, Composite, ALPHA_MAX,
    HALT_TRANSMITTANCE,
};
pub use field::{
    mean_weight_entropy, BatchLoss, RadianceField, RayOutput, RenderConfig, RenderOutput,
};
pub use occupancy::{update_occupancy, OccupancyMask};
pub use ray::{ray_aabb_intersect, Ray};
pub use sampling::{RaySamples, Sampler};
