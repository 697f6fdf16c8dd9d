//! Lung ultrasound screening pipeline: frame dataset construction, video-disjoint
//! cross-validation folds, a VGG16 transfer classifier and its evaluation.

pub mod class;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod model;
pub mod provenance;
pub mod splits;

pub use class::{argmax_with_priority, Class, CLASS_ORDER, NUM_CLASSES};
pub use error::{Error, Result};
pub use provenance::Provenance;
