//! Raw-data processing: image buffers, integral images, Harris detection
//! in a region of interest, ZNCC template search with bounded partial
//! correlation, and predicted-appearance warping.

pub mod harris;
pub mod image;
pub mod integral;
pub mod warp;
pub mod zncc;

pub use harris::{harris_best, Corner, HarrisParams, RoiError};
pub use image::{read_pgm, write_pgm, GrayImage, Patch, PixelRect};
pub use integral::IntegralImage;
pub use warp::{predict_appearance, AppearancePrediction};
pub use zncc::{exhaustive_match, search_match, zncc, Match};
