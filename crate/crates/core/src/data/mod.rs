//! Dataset files, the synthetic scene generator, the ground-truth chain for
//! classification-map data, and abundance image export.

mod export;
mod file;
pub(crate) mod framed;
mod gtchain;
mod scene;

pub use export::{
    export_abundance_images, pgm_name, read_abundance_csv, to_gray, write_abundance_csv, CSV_NAME,
};
pub use file::{
    read_abundance, read_bundle, read_cube, read_dataset, read_dataset_header, read_endmembers,
    write_dataset, Dataset, DatasetHeader, DatasetKind, Provenance, DATASET_MAGIC,
    DATASET_VERSION,
};
pub use gtchain::{
    classmap_to_abundance, gaussian_blur, gaussian_downsample, gaussian_kernel,
    reference_endmembers_from_pure,
};
pub use scene::{generate_scene, Scene, SceneSpec, IMPULSE_VALUE};
