//! Metallicity regression pipeline: catalog selection, light-curve
//! preprocessing, inverse-density weighting, and cross-validated training of
//! the `feh-nn` model zoo.

pub mod catalog;
pub mod cv;
pub mod dataset;
pub mod folds;
pub mod grid;
pub mod metrics;
pub mod preprocess;
pub mod report;
pub mod seeds;
pub mod synthetic;
pub mod train;
pub mod weighting;
