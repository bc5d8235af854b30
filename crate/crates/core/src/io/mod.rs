//! File formats, normalization and data streams.

pub mod checkpoint;
pub mod image;
pub mod normalize;
pub mod ply;
pub mod rgbd;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use image::{
    batch_to_image, image_to_batch, patch_stream, read_depth, read_image, write_depth,
    write_image, DepthMap,
};
pub use normalize::{NormalizationMode, NormalizationSpec};
pub use ply::{load_pointcloud, save_pointcloud, PlyFormat};
pub use rgbd::{rgbd_to_pointcloud, RgbdFrame};
