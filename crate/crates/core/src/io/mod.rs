//! File formats and the synthetic dataset.

pub mod annotations;
pub mod config;
pub mod formats;
pub mod pnm;
pub mod synth;
pub mod weights;

pub use annotations::{load_annotations, load_dataset, parse_annotations, serialize_annotations, AnnotationEntry, DatasetIndex};
pub use config::{parse_config, render_config};
pub use formats::{format_detections, format_pr, parse_detections};
pub use pnm::{decode_pnm, encode_ppm, load_image, save_ppm};
pub use synth::{render_sample, synth_generate, synth_samples};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights};
