//! Few-shot generalized category discovery in feature space.
//!
//! The crate consumes pre-extracted backbone features and provides:
//!
//! * [`data`]: feature files, few-shot splits, feature-space augmentation and
//!   synthetic Gaussian-mixture benchmarks;
//! * [`encoder`]: a residual bottleneck adapter beside a frozen block, a
//!   projection head and exact analytic gradients;
//! * [`losses`]: triplet, supervised/unsupervised contrastive, knowledge
//!   transfer and affinity objectives;
//! * [`affinity`]: per-epoch nearest-neighbour retrieval and pseudo-labels;
//! * [`trainer`]: the two-stage SGD procedure;
//! * [`eval`]: k-means, Hungarian matching, ALL/OLD/NEW accuracy and the
//!   Calinski-Harabasz index;
//! * [`presets`]: benchmark-shaped split ratios.

pub mod affinity;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod losses;
pub mod presets;
pub mod trainer;

pub use affinity::{build_affinity_index, AffinityIndex};
pub use data::{generate_split, load_features, make_synthetic, save_features, DatasetSplit, FeatureSet};
pub use encoder::{encode, EncoderConfig, EncoderParams, Gradients};
pub use error::{Error, ErrorKind, Result};
pub use eval::{Metrics, EvalOptions};
pub use losses::{Batch, LossConfig};
pub use trainer::{train, TrainConfig, TrainLog, TrainOutcome};
