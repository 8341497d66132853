//! Conditioning vectors for a downstream generator.
//!
//! Every class gets a label embedding from a seeded lookup table. The
//! `text` and `image` modes append the subcategory's text feature or the
//! feature of its representative frame:
//!
//! ```text
//! base  = label
//! text  = label ++ text_feature(subcategory)
//! image = label ++ image_feature(representative frame)
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::{write_embeddings, EmbeddingSet, FormatError, Modality, SetError};
use crate::matcher::{text_key, DatasetManifest};

pub const DEFAULT_LABEL_DIM: usize = 128;
/// Standard deviation of label table entries.
pub const LABEL_INIT_STD: f64 = 0.02;

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),
    #[error("label dimension must be at least 1")]
    ZeroDim,
    #[error("class {0:?} is not in the label table")]
    UnknownClass(String),
    #[error("mode {0} takes no feature vector")]
    UnexpectedFeature(FusionMode),
    #[error("mode {0} needs a feature vector")]
    MissingFeature(FusionMode),
    #[error("{mode} feature has dim {got}, earlier features had dim {expected}")]
    FeatureDim {
        mode: FusionMode,
        expected: usize,
        got: usize,
    },
    #[error("missing {what} for {key:?}")]
    MissingInput { what: String, key: String },
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Base,
    Text,
    Image,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Base => "base",
            FusionMode::Text => "text",
            FusionMode::Image => "image",
        })
    }
}

impl FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(FusionMode::Base),
            "text" => Ok(FusionMode::Text),
            "image" => Ok(FusionMode::Image),
            other => Err(format!("unknown fusion mode {other:?} (base|text|image)")),
        }
    }
}

/// Seeded class-label embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    label_dim: usize,
    seed: u64,
    entries: IndexMap<String, Vec<f32>>,
}

/// Draw `label_dim` values per class from N(0, 0.02²), consuming the
/// generator in the order the classes are given.
pub fn build_label_table<S: AsRef<str>>(
    class_names: &[S],
    label_dim: usize,
    seed: u64,
) -> Result<LabelTable, FusionError> {
    if label_dim == 0 {
        return Err(FusionError::ZeroDim);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, LABEL_INIT_STD).expect("valid std");
    let mut entries = IndexMap::with_capacity(class_names.len());
    for name in class_names {
        let name = name.as_ref();
        if entries.contains_key(name) {
            return Err(FusionError::DuplicateClass(name.to_string()));
        }
        let v: Vec<f32> = (0..label_dim).map(|_| normal.sample(&mut rng) as f32).collect();
        entries.insert(name.to_string(), v);
    }
    Ok(LabelTable {
        label_dim,
        seed,
        entries,
    })
}

impl LabelTable {
    pub fn label_dim(&self) -> usize {
        self.label_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, class: &str) -> Option<&[f32]> {
        self.entries.get(class).map(Vec::as_slice)
    }

    pub fn class_names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// The table as an embedding set (fused modality), one record per class.
    pub fn to_embedding_set(&self) -> EmbeddingSet {
        EmbeddingSet::from_records(
            Modality::Fused,
            self.label_dim,
            self.entries.iter().map(|(k, v)| (k.clone(), v.clone())),
        )
        .expect("table entries share label_dim and have unique names")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningVector {
    pub key: String,
    pub mode: FusionMode,
    pub values: Vec<f32>,
}

/// Label entry, followed by `feature` for the text and image modes.
pub fn fuse(
    mode: FusionMode,
    class: &str,
    table: &LabelTable,
    feature: Option<&[f32]>,
) -> Result<ConditioningVector, FusionError> {
    let label = table
        .get(class)
        .ok_or_else(|| FusionError::UnknownClass(class.to_string()))?;
    let values = match (mode, feature) {
        (FusionMode::Base, None) => label.to_vec(),
        (FusionMode::Base, Some(_)) => return Err(FusionError::UnexpectedFeature(mode)),
        (_, None) => return Err(FusionError::MissingFeature(mode)),
        (_, Some(f)) => {
            let mut v = Vec::with_capacity(label.len() + f.len());
            v.extend_from_slice(label);
            v.extend_from_slice(f);
            v
        }
    };
    Ok(ConditioningVector {
        key: class.to_string(),
        mode,
        values,
    })
}

/// Stateful [`fuse`] that also enforces one feature dimension per mode.
#[derive(Debug)]
pub struct Fuser<'a> {
    table: &'a LabelTable,
    feature_dims: HashMap<FusionMode, usize>,
}

impl<'a> Fuser<'a> {
    pub fn new(table: &'a LabelTable) -> Self {
        Self {
            table,
            feature_dims: HashMap::new(),
        }
    }

    pub fn fuse(
        &mut self,
        mode: FusionMode,
        class: &str,
        feature: Option<&[f32]>,
    ) -> Result<ConditioningVector, FusionError> {
        if let Some(f) = feature {
            let expected = *self.feature_dims.entry(mode).or_insert(f.len());
            if expected != f.len() {
                return Err(FusionError::FeatureDim {
                    mode,
                    expected,
                    got: f.len(),
                });
            }
        }
        fuse(mode, class, self.table, feature)
    }
}

/// One fused vector per retained clip of the manifest, sorted by clip id.
///
/// `text_set` must hold a vector per retained subcategory, keyed
/// `"{class}/{subcategory}"` (text mode); `image_set` a vector for every
/// representative frame id (image mode).
pub fn conditioning_set(
    manifest: &DatasetManifest,
    table: &LabelTable,
    text_set: Option<&EmbeddingSet>,
    image_set: Option<&EmbeddingSet>,
    mode: FusionMode,
) -> Result<EmbeddingSet, FusionError> {
    let mut fuser = Fuser::new(table);
    // Fuse once per subcategory; clips of a subcategory share its vector.
    let mut per_sub: BTreeMap<(&str, &str), Vec<f32>> = BTreeMap::new();
    for class in &manifest.classes {
        for sub in &class.subcategories {
            if sub.clip_ids.is_empty() {
                continue;
            }
            let feature = match mode {
                FusionMode::Base => None,
                FusionMode::Text => {
                    let key = text_key(&class.class_name, &sub.name);
                    let set = text_set.ok_or_else(|| FusionError::MissingInput {
                        what: "text embedding set".into(),
                        key: key.clone(),
                    })?;
                    Some(set.get(&key).ok_or(FusionError::MissingInput {
                        what: "text feature".into(),
                        key,
                    })?)
                }
                FusionMode::Image => {
                    let key = sub.representative_frame.clone().ok_or_else(|| FusionError::MissingInput {
                        what: "representative frame".into(),
                        key: text_key(&class.class_name, &sub.name),
                    })?;
                    let set = image_set.ok_or_else(|| FusionError::MissingInput {
                        what: "image embedding set".into(),
                        key: key.clone(),
                    })?;
                    Some(set.get(&key).ok_or(FusionError::MissingInput {
                        what: "image feature".into(),
                        key,
                    })?)
                }
            };
            let v = fuser.fuse(mode, &class.class_name, feature)?;
            per_sub.insert((class.class_name.as_str(), sub.name.as_str()), v.values);
        }
    }

    let mut clips: Vec<(&str, &[f32])> = Vec::new();
    let mut seen = HashSet::new();
    for (class, sub, clip) in manifest.retained_clips() {
        if !seen.insert(clip) {
            return Err(FusionError::Set(SetError::DuplicateId(clip.to_string())));
        }
        clips.push((clip, per_sub[&(class, sub.name.as_str())].as_slice()));
    }
    clips.sort_unstable_by(|a, b| a.0.cmp(b.0));
    let dim = clips
        .first()
        .map(|(_, v)| v.len())
        .unwrap_or_else(|| table.label_dim() + fuser.feature_dims.get(&mode).copied().unwrap_or(0));
    let mut set = EmbeddingSet::new(Modality::Fused, dim)?;
    for (id, v) in clips {
        set.push(id, v.to_vec())?;
    }
    Ok(set)
}

/// Write [`conditioning_set`] to `path`; returns the number of vectors.
pub fn export_conditioning(
    manifest: &DatasetManifest,
    table: &LabelTable,
    text_set: Option<&EmbeddingSet>,
    image_set: Option<&EmbeddingSet>,
    mode: FusionMode,
    path: &Path,
) -> Result<usize, FusionError> {
    let set = conditioning_set(manifest, table, text_set, image_set, mode)?;
    write_embeddings(&set, path)?;
    Ok(set.len())
}
