//! Split ratios matching the class counts of common benchmark datasets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: &'static str,
    pub class_count: usize,
    /// Fraction of classes that are known.
    pub class_ratio: f64,
    /// Fraction of each known class that is labeled.
    pub label_ratio: f64,
}

pub const PRESETS: &[Preset] = &[
    Preset { name: "cifar10", class_count: 10, class_ratio: 0.2, label_ratio: 0.1 },
    Preset { name: "cifar100", class_count: 100, class_ratio: 0.05, label_ratio: 0.1 },
    Preset { name: "imagenet100", class_count: 100, class_ratio: 0.1, label_ratio: 0.1 },
    Preset { name: "cub", class_count: 200, class_ratio: 0.05, label_ratio: 0.2 },
    Preset { name: "scars", class_count: 196, class_ratio: 0.05, label_ratio: 0.2 },
    Preset { name: "herbarium19", class_count: 683, class_ratio: 0.0483, label_ratio: 0.1 },
    Preset { name: "synthetic-smoke", class_count: 10, class_ratio: 0.2, label_ratio: 0.1 },
];

pub fn preset(name: &str) -> Result<&'static Preset> {
    PRESETS.iter().find(|p| p.name.eq_ignore_ascii_case(name)).ok_or_else(|| {
        let known: Vec<_> = PRESETS.iter().map(|p| p.name).collect();
        Error::InvalidConfig(format!("unknown preset {name:?}; expected one of {}", known.join(", ")))
    })
}
