//! Image/mask ingestion, resizing, augmentation, splitting and batching.

mod augment;
mod dataset;
mod io;
mod synthetic;

pub use augment::{augment, hflip_plane, resize_pair, rot90_plane, rotate_pair, AugmentPolicy, Rotation};
pub use dataset::{
    assemble_batch, batch_plan, list_dir_pairs, load_pairs, make_batches, read_manifest, split_dataset,
    stream_rng, stream_seed, Batch, DatasetSplit,
};
pub use io::{
    load_image, load_mask, load_sample, read_plane, write_gray_png, write_mask_png, RawPlane, SamplePair,
    SourcePaths,
};
pub use synthetic::{synthetic_circles, write_dataset, CirclesConfig};
