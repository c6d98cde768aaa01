//! Loading label rasters, posterior dumps and count matrices, and
//! accumulating co-occurrence / coincidence statistics.

pub mod cooccurrence;
pub mod posterior;
pub mod raster;

pub use cooccurrence::CooccurrenceMatrix;
pub use posterior::{load_posterior_dump, PosteriorDump, PosteriorEntry, DEFAULT_TOP_K, PAD_CLASS};
pub use raster::{load_raster, LabelRaster};
