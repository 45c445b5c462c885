//! Toy advection-diffusion trajectories and their on-disk formats.

mod dataset;
mod fieldfile;
mod spectral;

pub use dataset::{
    generate_dataset, generate_split, load_dataset, GenerateConfig, Manifest, Trajectory, TrajectoryDataset,
    MANIFEST_FILE,
};
pub use fieldfile::{
    decode_field, encode_field, encode_trajectory, read_field_file, write_field_file, write_trajectory_file,
    FieldData, FIELD_MAGIC,
};
pub use spectral::{evolve, exact_solution, sample_initial, SpectralField};
