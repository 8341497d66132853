//! Cross-modal data matching.
//!
//! Each clip is classified twice against the subcategories of its class:
//! its video frames against the plain subcategory texts, and its audio
//! against the adjective-augmented texts. The clip is assigned only when
//! both channels pick the same subcategory. Subcategories that end up with
//! too few clips are dropped, and a class needs at least two surviving
//! subcategories to stay in the dataset.

mod dataset;
mod manifest;

pub use dataset::{build_dataset, text_key, BuildOutput, DatasetInputs, SkipReason, SkippedClip};
pub use manifest::{
    filter_subclasses, manifest_to_jsonl, parse_manifest_jsonl, read_manifest, write_manifest,
    DatasetManifest, DropReason, DroppedSubcategory, ManifestClass, ManifestError,
    ManifestSubcategory, ManifestSummary,
};

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{FrameRef, NORM_EPSILON};
use crate::taxonomy::Subcategory;

pub const DEFAULT_SOFTMAX_SCALE: f64 = 100.0;
pub const DEFAULT_MIN_CLIPS: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatchError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("need at least 2 candidate texts, got {0}")]
    TooFewCandidates(usize),
    #[error("need at least one frame")]
    NoFrames,
    #[error("softmax scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("image and audio candidate lists differ in length ({image} vs {audio})")]
    CandidateCountMismatch { image: usize, audio: usize },
    #[error("no assigned clips to choose a representative frame from")]
    EmptyClipList,
    #[error("missing {set} vector for {key:?}")]
    MissingVector { set: String, key: String },
    #[error("clip {clip:?} has class {class:?}, which is not in the taxonomy")]
    UnknownClass { clip: String, class: String },
    #[error("clip {0:?} has no class label")]
    UnlabeledClip(String),
    #[error("{set} set has modality {got}, expected {expected}")]
    ModalityMismatch {
        set: String,
        expected: String,
        got: String,
    },
    #[error("frame id {0:?} is not of the form <clip>#frame<index>")]
    BadFrameId(String),
}

/// How per-frame probability vectors are pooled into one clip-level vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameAgg {
    #[default]
    Mean,
    /// Element-wise max, renormalized onto the simplex.
    Max,
}

impl FromStr for FrameAgg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(FrameAgg::Mean),
            "max" => Ok(FrameAgg::Max),
            other => Err(format!("unknown frame aggregation {other:?} (mean|max)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub softmax_scale: f64,
    pub frame_agg: FrameAgg,
    pub min_clips: usize,
    pub keep_singleton_classes: bool,
    /// Use at most this many frames per clip, sampled with `seed`. `None` uses all.
    pub frames_per_clip: Option<usize>,
    pub seed: u64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            softmax_scale: DEFAULT_SOFTMAX_SCALE,
            frame_agg: FrameAgg::Mean,
            min_clips: DEFAULT_MIN_CLIPS,
            keep_singleton_classes: false,
            frames_per_clip: None,
            seed: 0,
        }
    }
}

fn check_dims(context: &str, a: &[f32], b: &[f32]) -> Result<(), MatchError> {
    if a.len() != b.len() {
        return Err(MatchError::DimMismatch {
            context: context.to_string(),
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Cosine similarity in f64; 0 when either vector has (near) zero norm.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64, MatchError> {
    check_dims("cosine similarity", a, b)?;
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < NORM_EPSILON || nb < NORM_EPSILON {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `"{name}, {adj1}, {adj2}[, ...]"`, the text embedded for the audio channel.
pub fn augment_subcategory_text(s: &Subcategory) -> String {
    std::iter::once(s.name.as_str())
        .chain(s.adjectives.iter().map(String::as_str))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Index of the maximum; ties go to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameClassification {
    pub probabilities: Vec<f64>,
    pub choice: usize,
}

/// Zero-shot classification of a clip's frames against candidate texts.
///
/// Each frame gets a softmax over `scale × cosine` to every text; the
/// per-frame distributions are pooled with `agg` and the argmax is taken.
pub fn classify_frames<F, T>(
    frames: &[F],
    texts: &[T],
    scale: f64,
    agg: FrameAgg,
) -> Result<FrameClassification, MatchError>
where
    F: AsRef<[f32]>,
    T: AsRef<[f32]>,
{
    if frames.is_empty() {
        return Err(MatchError::NoFrames);
    }
    if texts.len() < 2 {
        return Err(MatchError::TooFewCandidates(texts.len()));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(MatchError::InvalidScale(scale));
    }
    let k = texts.len();
    let mut pooled = vec![
        match agg {
            FrameAgg::Mean => 0.0,
            FrameAgg::Max => f64::NEG_INFINITY,
        };
        k
    ];
    for frame in frames {
        let logits = texts
            .iter()
            .map(|t| cosine_similarity(frame.as_ref(), t.as_ref()).map(|c| scale * c))
            .collect::<Result<Vec<_>, _>>()?;
        for (acc, p) in pooled.iter_mut().zip(softmax(&logits)) {
            match agg {
                FrameAgg::Mean => *acc += p,
                FrameAgg::Max => *acc = acc.max(p),
            }
        }
    }
    let total: f64 = pooled.iter().sum();
    let probabilities: Vec<f64> = pooled.into_iter().map(|p| p / total).collect();
    let choice = argmax(&probabilities);
    Ok(FrameClassification {
        probabilities,
        choice,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioClassification {
    pub choice: usize,
    pub similarities: Vec<f64>,
}

/// Nearest augmented subcategory text to an audio embedding.
pub fn classify_audio<T: AsRef<[f32]>>(
    audio: &[f32],
    texts: &[T],
) -> Result<AudioClassification, MatchError> {
    if texts.len() < 2 {
        return Err(MatchError::TooFewCandidates(texts.len()));
    }
    let similarities = texts
        .iter()
        .map(|t| cosine_similarity(audio, t.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AudioClassification {
        choice: argmax(&similarities),
        similarities,
    })
}

/// One clip with its audio embedding and the embeddings of its frames.
#[derive(Debug, Clone)]
pub struct ClipBundle<'a> {
    pub clip_id: String,
    pub class_name: String,
    pub audio: &'a [f32],
    pub frames: Vec<(FrameRef, &'a [f32])>,
}

/// Candidate texts for one class, all in subcategory order.
#[derive(Debug, Clone)]
pub struct ClassTexts<'a> {
    pub names: Vec<String>,
    /// Plain subcategory names embedded in the image-text space.
    pub plain: Vec<&'a [f32]>,
    /// Adjective-augmented texts embedded in the audio-text space.
    pub augmented: Vec<&'a [f32]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub clip_id: String,
    pub class_name: String,
    pub image_choice: usize,
    pub image_probabilities: Vec<f64>,
    pub audio_choice: usize,
    pub audio_similarities: Vec<f64>,
    pub agreed: bool,
    pub assigned: Option<String>,
}

pub fn match_clip(
    bundle: &ClipBundle<'_>,
    texts: &ClassTexts<'_>,
    scale: f64,
    agg: FrameAgg,
) -> Result<MatchRecord, MatchError> {
    if texts.plain.len() != texts.augmented.len() || texts.plain.len() != texts.names.len() {
        return Err(MatchError::CandidateCountMismatch {
            image: texts.plain.len(),
            audio: texts.augmented.len(),
        });
    }
    let frames: Vec<&[f32]> = bundle.frames.iter().map(|(_, v)| *v).collect();
    let image = classify_frames(&frames, &texts.plain, scale, agg)?;
    let audio = classify_audio(bundle.audio, &texts.augmented)?;
    let agreed = image.choice == audio.choice;
    Ok(MatchRecord {
        clip_id: bundle.clip_id.clone(),
        class_name: bundle.class_name.clone(),
        image_choice: image.choice,
        image_probabilities: image.probabilities,
        audio_choice: audio.choice,
        audio_similarities: audio.similarities,
        agreed,
        assigned: agreed.then(|| texts.names[image.choice].clone()),
    })
}

/// Frame most similar to the subcategory text across all assigned clips.
/// Ties go to the lexicographically smallest frame id.
pub fn select_representative_image(
    clips: &[&ClipBundle<'_>],
    text: &[f32],
) -> Result<(FrameRef, f64), MatchError> {
    let mut best: Option<(String, FrameRef, f64)> = None;
    for clip in clips {
        for (frame, v) in &clip.frames {
            let sim = cosine_similarity(v, text)?;
            let id = frame.id();
            let better = match &best {
                None => true,
                Some((bid, _, bsim)) => sim > *bsim || (sim == *bsim && id < *bid),
            };
            if better {
                best = Some((id, frame.clone(), sim));
            }
        }
    }
    best.map(|(_, f, s)| (f, s)).ok_or(MatchError::EmptyClipList)
}
