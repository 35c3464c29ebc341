//! Dataset presets, paired linear / nonlinear generation and persistence.
//!
//! A bundle on disk is a directory with `manifest.json`, one
//! `mesh_<id>.json` per design and `design_<id>/{linear,nonlinear}.bin`.

mod build;
mod bundle;
mod config;
mod split;

pub use build::{
    build_dataset, sample_gaussian_centers, DatasetBundle, DesignRecord, GENERATOR_VERSION,
};
pub use bundle::{
    load_bundle, load_manifest, save_bundle, DesignEntry, Manifest, BUNDLE_FORMAT, MANIFEST_FILE,
};
pub use config::{
    a_series_material, b1_material, b2_material, DatasetConfig, LoadSpec, MeshSpec, Role, Scale,
    ShapeDesign, ShapeSpec, A_SERIES_POWER, B1_P_MAX, B2_EVAL_SHAPES, B2_POWER, B2_TRAIN_SHAPES,
    GAUSSIAN_MIN_SEPARATION_FRACTION, GAUSSIAN_SIGMA_FRACTION, PRESET_NAMES, SUBMESH_FRACTION,
};
pub use split::split_frames;

#[cfg(test)]
mod tests;
