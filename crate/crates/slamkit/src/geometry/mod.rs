//! Quaternions, rigid frames and the pinhole camera, with analytic
//! Jacobians for every mapping used by the filter.

pub mod frame;
pub mod pinhole;
pub mod quaternion;

pub use frame::Frame;
pub use pinhole::{PinholeIntrinsics, Projection, ProjectionError};
pub use quaternion::{rotate_inverse_jacobian_q, rotate_jacobian_q, skew, Quaternion};
