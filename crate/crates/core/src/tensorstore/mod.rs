//! Binary tensor container, dataset manifests, and pixel batch iteration.

mod batches;
mod codec;
mod dataset;
mod manifest;

pub use batches::{iterate_pixel_batches, PixelBatches, PixelPool};
pub use codec::{read_header, Header, Tensor, DTYPE_F32, MAGIC, VERSION};
pub use dataset::{
    binarize_mask, BinaryMask, Concept, ConceptDataset, ConceptDatasetWriter, FeatureDataset,
    FeatureDatasetWriter, ImageRecord, MaskRecord,
};
pub(crate) use manifest::{read_json, write_json};
pub use manifest::{
    ConceptEntry, ConceptImage, ConceptManifest, FeatureImage, FeatureManifest, MaskEntry, Split,
};
