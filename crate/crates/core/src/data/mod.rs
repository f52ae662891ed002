//! Dataset definition: manifests, image sources, and resolved splits.

mod manifest;
mod source;
mod split;
pub mod synthetic;

pub use manifest::{imagenet_category_manifest, Category, CategoryManifest, ClassEntry, IMAGENET_CATEGORY_MANIFEST};
pub use source::{ClassPool, DataSource, ImageRef, PoolClass, SourceConfig};
pub use split::{
    random_partition, sample_class_subsets, split_category, split_from_pool, DatasetSpec,
    DatasetSplit, Item,
};
pub use synthetic::SyntheticConfig;
