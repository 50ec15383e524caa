//! Privacy scrubbing for annotated image datasets: remove sensitive objects by
//! mask-constrained inpainting, repair the annotations with an oracle
//! detector, and score what was gained and lost.

pub mod dataset;
pub mod imaging;
pub mod backends;
pub mod cli;
pub mod metrics;
pub mod multiview;
pub mod pipeline;
pub mod reannotation;
