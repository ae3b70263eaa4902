//! Model-generic EKF-SLAM with an inertial/visual front end and a
//! synthetic-world experiment harness.
//!
//! The crate is organized around a single joint Gaussian map
//! ([`ekf_map::StochasticMap`]) indexed through block handles, so robot and
//! landmark models stay independent of storage layout. On top of it sit
//! interchangeable motion models ([`motion`]), inverse-depth landmarks
//! ([`landmarks`]), a pixel-space observation model ([`observation`]) and an
//! active-search data manager with one-point RANSAC ([`data_manager`]).
//! [`vision`] supplies the image-processing kernels and [`sim`] a complete
//! synthetic world for closed-loop evaluation.

pub mod data_manager;
pub mod ekf_map;
pub mod geometry;
pub mod landmarks;
pub mod map_manager;
pub mod motion;
pub mod observation;
pub mod sim;
pub mod stats;
pub mod vision;
