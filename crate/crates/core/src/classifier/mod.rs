//! Staged VGG-style classifier: topology, training, capture-enabled
//! inference and binary classification metrics.

mod dataset;
mod metrics;
mod spec;
mod train;

pub use dataset::{load_dataset_dir, Sample};
pub use metrics::{classification_metrics, ClassificationMetrics};
pub use spec::{NetworkSpec, StageSpec};
pub use train::{
    classify_with_capture, train, train_with_progress, ClassScores, EpochLog, TrainConfig, TrainOutcome,
};

use serde::{Deserialize, Serialize};

/// The two image-level labels. Damage is the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Damage,
    Background,
}

impl Class {
    pub const COUNT: usize = 2;

    /// Logit index.
    pub fn index(self) -> usize {
        match self {
            Class::Damage => 0,
            Class::Background => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Class> {
        match i {
            0 => Some(Class::Damage),
            1 => Some(Class::Background),
            _ => None,
        }
    }

    /// Directory name in the dataset layout.
    pub fn dir_name(self) -> &'static str {
        match self {
            Class::Damage => "damage",
            Class::Background => "background",
        }
    }
}
