use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{filter_subclasses, DatasetManifest, ManifestClass, ManifestSubcategory};
use super::{match_clip, select_representative_image, ClassTexts, ClipBundle, MatchConfig, MatchError, MatchRecord};
use crate::embedding::{EmbeddingSet, FrameRef, Modality};
use crate::parallel;
use crate::taxonomy::Taxonomy;

/// Everything [`build_dataset`] reads. Text vectors are keyed
/// `"{class}/{subcategory}"`; frame vectors `"{clip}#frame{index}"`.
#[derive(Debug, Clone, Copy)]
pub struct DatasetInputs<'a> {
    pub taxonomy: &'a Taxonomy,
    /// clip id -> class name
    pub clip_classes: &'a BTreeMap<String, String>,
    pub audio: &'a EmbeddingSet,
    pub frames: &'a EmbeddingSet,
    /// Plain subcategory names, image-text space.
    pub text: &'a EmbeddingSet,
    /// Adjective-augmented subcategory texts, audio-text space.
    pub augmented_text: &'a EmbeddingSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// No frame embeddings for the clip.
    NoFrames,
    /// The clip's class has fewer than two subcategories to choose from.
    TooFewSubcategories,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedClip {
    pub clip_id: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub manifest: DatasetManifest,
    /// One record per classified clip, in clip-id order.
    pub records: Vec<MatchRecord>,
    /// Clips that could not be classified; they are listed as unmatched.
    pub skipped: Vec<SkippedClip>,
}

pub fn text_key(class: &str, subcategory: &str) -> String {
    format!("{class}/{subcategory}")
}

fn expect_modality(set: &EmbeddingSet, name: &str, expected: Modality) -> Result<(), MatchError> {
    if set.modality() != expected {
        return Err(MatchError::ModalityMismatch {
            set: name.into(),
            expected: expected.to_string(),
            got: set.modality().to_string(),
        });
    }
    Ok(())
}

fn expect_dim(context: &str, expected: usize, got: usize) -> Result<(), MatchError> {
    if expected != got {
        return Err(MatchError::DimMismatch {
            context: context.into(),
            expected,
            got,
        });
    }
    Ok(())
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Keep `k` of the clip's frames, chosen by a generator seeded from
/// `(seed, clip_id)` so the choice is independent of processing order.
fn subsample_frames<'a>(
    clip_id: &str,
    mut frames: Vec<(FrameRef, &'a [f32])>,
    k: usize,
    seed: u64,
) -> Vec<(FrameRef, &'a [f32])> {
    let k = k.max(1);
    if frames.len() <= k {
        return frames;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(clip_id));
    let mut picked = rand::seq::index::sample(&mut rng, frames.len(), k).into_vec();
    picked.sort_unstable();
    let mut keep = vec![false; frames.len()];
    for i in picked {
        keep[i] = true;
    }
    let mut it = keep.into_iter();
    frames.retain(|_| it.next().unwrap());
    frames
}

enum Outcome {
    Matched(MatchRecord),
    Skipped(SkipReason),
}

/// Classify every clip, assign agreeing clips to subcategories, pick a
/// representative frame per subcategory and apply the clip-count filter.
///
/// The result depends only on the inputs: clips are processed in clip-id
/// order and the output does not change with the number of worker threads.
pub fn build_dataset(inputs: DatasetInputs<'_>, cfg: &MatchConfig) -> Result<BuildOutput, MatchError> {
    let DatasetInputs {
        taxonomy,
        clip_classes,
        audio,
        frames,
        text,
        augmented_text,
    } = inputs;
    expect_modality(audio, "audio", Modality::Audio)?;
    expect_modality(frames, "frame", Modality::Image)?;
    expect_modality(text, "text", Modality::Text)?;
    expect_modality(augmented_text, "augmented text", Modality::Text)?;
    expect_dim("frame vs text embeddings", text.dim(), frames.dim())?;
    expect_dim("audio vs augmented text embeddings", augmented_text.dim(), audio.dim())?;
    if !(cfg.softmax_scale > 0.0 && cfg.softmax_scale.is_finite()) {
        return Err(MatchError::InvalidScale(cfg.softmax_scale));
    }

    let mut class_texts: BTreeMap<&str, ClassTexts<'_>> = BTreeMap::new();
    for class in &taxonomy.classes {
        let mut ct = ClassTexts {
            names: Vec::new(),
            plain: Vec::new(),
            augmented: Vec::new(),
        };
        for sub in &class.subcategories {
            let key = text_key(&class.name, &sub.name);
            let missing = |set: &str| MatchError::MissingVector {
                set: set.into(),
                key: key.clone(),
            };
            ct.plain.push(text.get(&key).ok_or_else(|| missing("text"))?);
            ct.augmented
                .push(augmented_text.get(&key).ok_or_else(|| missing("augmented text"))?);
            ct.names.push(sub.name.clone());
        }
        class_texts.insert(class.name.as_str(), ct);
    }

    let mut frames_by_clip: BTreeMap<&str, Vec<(FrameRef, &[f32])>> = BTreeMap::new();
    for (id, v) in frames.iter() {
        let fr = FrameRef::parse(id).ok_or_else(|| MatchError::BadFrameId(id.to_string()))?;
        frames_by_clip
            .entry(id.split_at(fr.clip_id.len()).0)
            .or_default()
            .push((fr, v));
    }

    let mut clip_ids: Vec<&str> = audio.ids().collect();
    clip_ids.sort_unstable();
    let mut bundles = Vec::with_capacity(clip_ids.len());
    for clip_id in clip_ids {
        let class = clip_classes
            .get(clip_id)
            .ok_or_else(|| MatchError::UnlabeledClip(clip_id.into()))?;
        if !class_texts.contains_key(class.as_str()) {
            return Err(MatchError::UnknownClass {
                clip: clip_id.into(),
                class: class.clone(),
            });
        }
        let mut clip_frames = frames_by_clip.remove(clip_id).unwrap_or_default();
        clip_frames.sort_by_key(|(f, _)| f.frame_index);
        if let Some(k) = cfg.frames_per_clip {
            clip_frames = subsample_frames(clip_id, clip_frames, k, cfg.seed);
        }
        bundles.push(ClipBundle {
            clip_id: clip_id.to_string(),
            class_name: class.clone(),
            audio: audio.get(clip_id).expect("id comes from the set"),
            frames: clip_frames,
        });
    }

    let outcomes = parallel::try_map(&bundles, |b| {
        let texts = &class_texts[b.class_name.as_str()];
        if texts.names.len() < 2 {
            return Ok(Outcome::Skipped(SkipReason::TooFewSubcategories));
        }
        if b.frames.is_empty() {
            return Ok(Outcome::Skipped(SkipReason::NoFrames));
        }
        match_clip(b, texts, cfg.softmax_scale, cfg.frame_agg).map(Outcome::Matched)
    })?;

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut unmatched = Vec::new();
    // (class, subcategory) -> indices into `bundles`
    let mut assigned: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Outcome::Skipped(reason) => {
                unmatched.push(bundles[i].clip_id.clone());
                skipped.push(SkippedClip {
                    clip_id: bundles[i].clip_id.clone(),
                    reason,
                });
            }
            Outcome::Matched(rec) => {
                if rec.agreed {
                    let texts = &class_texts[bundles[i].class_name.as_str()];
                    let name = texts.names[rec.image_choice].as_str();
                    assigned
                        .entry((bundles[i].class_name.as_str(), name))
                        .or_default()
                        .push(i);
                } else {
                    unmatched.push(rec.clip_id.clone());
                }
                records.push(rec);
            }
        }
    }

    let mut classes = Vec::new();
    for class in &taxonomy.classes {
        let texts = &class_texts[class.name.as_str()];
        let mut subs = Vec::new();
        for (j, sub) in class.subcategories.iter().enumerate() {
            let members = assigned
                .get(&(class.name.as_str(), sub.name.as_str()))
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let clips: Vec<&ClipBundle<'_>> = members.iter().map(|&i| &bundles[i]).collect();
            let representative = if clips.is_empty() {
                None
            } else {
                Some(select_representative_image(&clips, texts.plain[j])?)
            };
            subs.push(ManifestSubcategory {
                name: sub.name.clone(),
                clip_ids: clips.iter().map(|b| b.clip_id.clone()).collect(),
                representative_frame: representative.as_ref().map(|(f, _)| f.id()),
                representative_similarity: representative.map(|(_, s)| s),
            });
        }
        classes.push(ManifestClass {
            class_name: class.name.clone(),
            subcategories: subs,
        });
    }

    let raw = DatasetManifest {
        taxonomy_version: taxonomy.version,
        classes,
        dropped_subcategories: Vec::new(),
        unmatched_clips: unmatched,
    };
    Ok(BuildOutput {
        manifest: filter_subclasses(&raw, cfg.min_clips, cfg.keep_singleton_classes),
        records,
        skipped,
    })
}
