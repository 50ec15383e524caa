//! Privacy, detection-utility and image-quality metrics.

pub mod image;
pub mod privacy;
pub mod utility;
