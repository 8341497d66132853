//! Dataset manifest, subclass filtering and the JSON Lines encoding.
//!
//! On disk a manifest is one JSON object per retained class followed by a
//! single summary object, which also carries the dropped subcategories and
//! unmatched clips so the file round-trips.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::taxonomy::round4;

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("I/O error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("manifest has no summary line")]
    MissingSummary,
    #[error("inconsistent manifest: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSubcategory {
    pub name: String,
    pub clip_ids: Vec<String>,
    pub representative_frame: Option<String>,
    pub representative_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestClass {
    pub class_name: String,
    pub subcategories: Vec<ManifestSubcategory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Fewer clips than the minimum.
    BelowMinClips,
    /// Survived the count filter, but its class kept fewer than two subcategories.
    ClassCollapsed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroppedSubcategory {
    pub class: String,
    pub name: String,
    pub clip_count: usize,
    pub clip_ids: Vec<String>,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub taxonomy_version: u32,
    pub classes: Vec<ManifestClass>,
    pub dropped_subcategories: Vec<DroppedSubcategory>,
    pub unmatched_clips: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSummary {
    pub class_count: usize,
    pub mean_subcategories: f64,
    /// Clips in retained subcategories.
    pub total_clips: usize,
    /// Clips in dropped subcategories.
    pub dropped_count: usize,
    pub unmatched_count: usize,
    pub taxonomy_version: u32,
    pub dropped_subcategories: Vec<DroppedSubcategory>,
    pub unmatched_clips: Vec<String>,
}

impl DatasetManifest {
    pub fn retained_clip_count(&self) -> usize {
        self.classes
            .iter()
            .flat_map(|c| &c.subcategories)
            .map(|s| s.clip_ids.len())
            .sum()
    }

    pub fn dropped_clip_count(&self) -> usize {
        self.dropped_subcategories.iter().map(|d| d.clip_count).sum()
    }

    /// retained + dropped + unmatched.
    pub fn total_input_clips(&self) -> usize {
        self.retained_clip_count() + self.dropped_clip_count() + self.unmatched_clips.len()
    }

    pub fn summary(&self) -> ManifestSummary {
        let subs: usize = self.classes.iter().map(|c| c.subcategories.len()).sum();
        ManifestSummary {
            class_count: self.classes.len(),
            mean_subcategories: if self.classes.is_empty() {
                0.0
            } else {
                round4(subs as f64 / self.classes.len() as f64)
            },
            total_clips: self.retained_clip_count(),
            dropped_count: self.dropped_clip_count(),
            unmatched_count: self.unmatched_clips.len(),
            taxonomy_version: self.taxonomy_version,
            dropped_subcategories: self.dropped_subcategories.clone(),
            unmatched_clips: self.unmatched_clips.clone(),
        }
    }

    /// Retained clips as `(class, subcategory, clip_id)` in manifest order.
    pub fn retained_clips(&self) -> impl Iterator<Item = (&str, &ManifestSubcategory, &str)> {
        self.classes.iter().flat_map(|c| {
            c.subcategories.iter().flat_map(move |s| {
                s.clip_ids
                    .iter()
                    .map(move |id| (c.class_name.as_str(), s, id.as_str()))
            })
        })
    }

    /// Check that no clip appears twice and that the summary-level lists are
    /// consistent with the per-subcategory data.
    pub fn check(&self, min_clips: Option<usize>) -> Result<(), ManifestError> {
        let mut seen = HashSet::new();
        let all = self
            .classes
            .iter()
            .flat_map(|c| c.subcategories.iter().flat_map(|s| &s.clip_ids))
            .chain(self.dropped_subcategories.iter().flat_map(|d| &d.clip_ids))
            .chain(&self.unmatched_clips);
        for id in all {
            if !seen.insert(id.as_str()) {
                return Err(ManifestError::Inconsistent(format!("clip {id:?} listed more than once")));
            }
        }
        for d in &self.dropped_subcategories {
            if d.clip_count != d.clip_ids.len() {
                return Err(ManifestError::Inconsistent(format!(
                    "dropped subcategory {}/{} has clip_count {} but {} ids",
                    d.class,
                    d.name,
                    d.clip_count,
                    d.clip_ids.len()
                )));
            }
        }
        if let Some(min) = min_clips {
            for c in &self.classes {
                for s in &c.subcategories {
                    if s.clip_ids.len() < min {
                        return Err(ManifestError::Inconsistent(format!(
                            "retained subcategory {}/{} has {} clips (< {min})",
                            c.class_name,
                            s.name,
                            s.clip_ids.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Drop subcategories with fewer than `min_clips` clips. Unless
/// `keep_singleton_classes` is set, a class left with fewer than two
/// subcategories is removed and its remaining subcategories are dropped too.
///
/// Clip counts are conserved and the operation is idempotent.
pub fn filter_subclasses(
    manifest: &DatasetManifest,
    min_clips: usize,
    keep_singleton_classes: bool,
) -> DatasetManifest {
    let min_clips = min_clips.max(1);
    let mut out = DatasetManifest {
        taxonomy_version: manifest.taxonomy_version,
        classes: Vec::new(),
        dropped_subcategories: manifest.dropped_subcategories.clone(),
        unmatched_clips: manifest.unmatched_clips.clone(),
    };
    for class in &manifest.classes {
        let (kept, small): (Vec<_>, Vec<_>) = class
            .subcategories
            .iter()
            .partition(|s| s.clip_ids.len() >= min_clips);
        let drop = |s: &ManifestSubcategory, reason| DroppedSubcategory {
            class: class.class_name.clone(),
            name: s.name.clone(),
            clip_count: s.clip_ids.len(),
            clip_ids: s.clip_ids.clone(),
            reason,
        };
        out.dropped_subcategories
            .extend(small.iter().map(|s| drop(s, DropReason::BelowMinClips)));
        let collapsed = kept.is_empty() || (!keep_singleton_classes && kept.len() < 2);
        if collapsed {
            out.dropped_subcategories
                .extend(kept.iter().map(|s| drop(s, DropReason::ClassCollapsed)));
        } else {
            out.classes.push(ManifestClass {
                class_name: class.class_name.clone(),
                subcategories: kept.into_iter().cloned().collect(),
            });
        }
    }
    out
}

pub fn manifest_to_jsonl(m: &DatasetManifest) -> String {
    let mut out = String::new();
    for class in &m.classes {
        out.push_str(&serde_json::to_string(class).expect("manifest class serializes"));
        out.push('\n');
    }
    out.push_str(&serde_json::to_string(&m.summary()).expect("summary serializes"));
    out.push('\n');
    out
}

pub fn parse_manifest_jsonl(text: &str) -> Result<DatasetManifest, ManifestError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect();
    let Some((&(summary_line, summary_text), class_lines)) = lines.split_last() else {
        return Err(ManifestError::MissingSummary);
    };
    let parse_err = |line, e: serde_json::Error| ManifestError::Parse {
        line,
        message: e.to_string(),
    };
    let summary: ManifestSummary =
        serde_json::from_str(summary_text).map_err(|e| parse_err(summary_line, e))?;
    let classes = class_lines
        .iter()
        .map(|&(n, l)| serde_json::from_str::<ManifestClass>(l).map_err(|e| parse_err(n, e)))
        .collect::<Result<Vec<_>, _>>()?;
    let m = DatasetManifest {
        taxonomy_version: summary.taxonomy_version,
        classes,
        dropped_subcategories: summary.dropped_subcategories.clone(),
        unmatched_clips: summary.unmatched_clips.clone(),
    };
    let recomputed = m.summary();
    if recomputed != summary {
        return Err(ManifestError::Inconsistent(
            "summary line does not match the class lines".into(),
        ));
    }
    m.check(None)?;
    Ok(m)
}

pub fn write_manifest(m: &DatasetManifest, path: &Path) -> Result<(), ManifestError> {
    let io_err = |source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(manifest_to_jsonl(m).as_bytes()).map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_manifest_jsonl(&text)
}
