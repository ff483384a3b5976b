//! Feature ingestion, few-shot splits, feature-space augmentation and
//! synthetic benchmarks.

mod augment;
mod features;
mod split;
mod synthetic;

pub use augment::{augment_view, AugmentConfig};
pub use features::{
    decode_binary, encode_binary, load_features, read_csv, save_features, write_csv, FeatureSet,
    FEATURE_MAGIC, FEATURE_VERSION,
};
pub use split::{
    generate_split, known_class_count, labeled_per_class, DatasetSplit, FEW_SHOT_RATIO_LIMIT,
};
pub use synthetic::{make_synthetic, SyntheticConfig};
