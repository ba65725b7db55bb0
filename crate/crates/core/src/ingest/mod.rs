//! External data: rasters, tissue segmentation, feature matrices,
//! coordinates, survival labels and synthetic cohorts.

mod coords;
mod fmat;
mod labels;
mod otsu;
mod raster;
mod segment;
pub mod synthetic;

pub(crate) use coords::check_header as check_csv_header;
pub use coords::{PatchCoord, PatchCoordinateSet, DEFAULT_PATCH_SIZE};
pub use fmat::{read_feature_matrix, write_feature_matrix, FeatureMatrix, FMAT_MAGIC};
pub use labels::{read_labels, write_labels, SurvivalLabel};
pub use otsu::{histogram, otsu_threshold};
pub use raster::{rgb_to_saturation, Raster};
pub use segment::{segment_to_coordinates, SegmentParams};
pub use synthetic::{generate_synthetic_cohort, ContextRule, SyntheticCohort, SyntheticPatient, SyntheticSpec};
