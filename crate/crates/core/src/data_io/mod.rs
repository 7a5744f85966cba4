//! Feature/label files, dataset manifests, class splits and the synthetic
//! dataset generator.

mod format;
mod manifest;
mod split;
mod synthetic;

pub use format::{
    decode_feature_matrix, decode_labels, encode_feature_matrix, encode_labels, read_feature_matrix,
    read_labels, write_feature_matrix, write_labels, FEATURE_MAGIC, FORMAT_VERSION, LABEL_MAGIC,
};
pub(crate) use format::{to_count, ByteReader};
pub use manifest::{ClassEntry, Dataset, DatasetManifest};
pub use split::{make_random_split, ClassSplit, SamplePartition};
pub use synthetic::{
    generate_synthetic, generate_synthetic_dataset, write_dataset, SyntheticDataset, SyntheticSpec,
    SyntheticTruth, MANIFEST_FILE,
};
