//! File formats, augmentation sampling, batching and the synthetic benchmark.

pub mod annotations;
pub mod batch;
pub mod dataset;
pub mod distractors;
pub mod masks;
pub mod store;
pub mod synth;
pub mod views;

pub use annotations::{parse_annotations, write_annotations, AnnotationRecord, Kind, Split};
pub use batch::{make_batch, Batch, BatchSpec};
pub use dataset::{write_dataset, Dataset};
pub use distractors::extend_distractors;
pub use masks::{sample_masks, MaskSample};
pub use store::{read_feature_store, write_feature_store, FeatureStore};
pub use synth::{bayes_single_object_ceiling, generate_synthetic, SynthConfig, SynthDataset};
pub use views::{subsample_indices, subsample_views};
