use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use divesound::embedding::{EmbeddingSet, Modality};
use divesound::matcher::{build_dataset, write_manifest, DatasetInputs, FrameAgg, ManifestSummary, SkippedClip};
use divesound::taxonomy::{load_taxonomy, Taxonomy};
use serde::Serialize;

use super::{read_emb_as, require_path, Ctx};
use crate::failure::{CmdResult, Failure};

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// CSV of `clip_id,label`; the label is a source label or a class name.
    #[arg(long)]
    clip_labels: PathBuf,
    /// Clip-level audio embeddings (default: <embeddings>/audio.emb).
    #[arg(long)]
    audio: Option<PathBuf>,
    /// Frame embeddings with ids `<clip>#frame<i>` (default: <embeddings>/frames.emb).
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Subcategory name embeddings keyed `class/subcategory` (default: <embeddings>/text.emb).
    #[arg(long)]
    text: Option<PathBuf>,
    /// Adjective-augmented subcategory embeddings (default: <embeddings>/augmented_text.emb).
    #[arg(long)]
    augmented_text: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write one JSON match record per classified clip.
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    min_clips: Option<usize>,
    #[arg(long)]
    softmax_scale: Option<f64>,
    #[arg(long)]
    frame_agg: Option<FrameAgg>,
    /// Frames used per clip; 0 uses all.
    #[arg(long)]
    frames_per_clip: Option<usize>,
    #[arg(long)]
    keep_singleton_classes: bool,
}

#[derive(Serialize)]
struct RunReport {
    manifest: String,
    #[serde(flatten)]
    summary: ManifestSummary,
    skipped_clips: Vec<SkippedClip>,
    /// Audio clips left out because the labels file gives no usable label.
    unlabeled_clips: Vec<String>,
}

fn emb_path(flag: Option<PathBuf>, dir: Option<&Path>, file: &str, name: &str) -> CmdResult<PathBuf> {
    require_path(flag, dir.map(|d| d.join(file)), name)
}

/// Map clip ids to class names. Labels that resolve to no class are
/// reported on standard error and the clip is left out.
fn read_clip_classes(path: &Path, taxonomy: &Taxonomy) -> CmdResult<BTreeMap<String, String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(false)
        .from_path(path)
        .map_err(|e| csv_failure(path, e))?;
    let mut out = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_failure(path, e))?;
        if row.len() != 2 {
            return Err(Failure::validation(format!(
                "{} row {}: expected `clip_id,label`",
                path.display(),
                i + 1
            )));
        }
        let (clip, label) = (&row[0], &row[1]);
        if i == 0 && clip == "clip_id" {
            continue;
        }
        let class = taxonomy
            .class(label)
            .or_else(|| taxonomy.class_for_label(label))
            .map(|c| c.name.clone());
        match class {
            Some(c) => {
                if let Some(prev) = out.insert(clip.to_string(), c.clone()) {
                    if prev != c {
                        return Err(Failure::validation(format!(
                            "clip {clip:?} is labeled with both {prev:?} and {c:?}"
                        )));
                    }
                }
            }
            None => eprintln!("note: clip {clip:?}: label {label:?} is not in the taxonomy, skipping"),
        }
    }
    Ok(out)
}

fn csv_failure(path: &Path, e: csv::Error) -> Failure {
    match e.kind() {
        csv::ErrorKind::Io(_) => Failure::new(crate::failure::EXIT_IO, anyhow::anyhow!("{}: {e}", path.display())),
        _ => Failure::validation(format!("{}: {e}", path.display())),
    }
}

pub fn run(ctx: &mut Ctx, args: RunArgs) -> CmdResult {
    let mut cfg = ctx.cfg.clone();
    if let Some(v) = args.min_clips {
        cfg.matching.min_clips = v;
    }
    if let Some(v) = args.softmax_scale {
        cfg.matching.softmax_scale = v;
    }
    if let Some(v) = args.frame_agg {
        cfg.matching.frame_agg = v;
    }
    if let Some(v) = args.frames_per_clip {
        cfg.matching.frames_per_clip = v;
    }
    if args.keep_singleton_classes {
        cfg.matching.keep_singleton_classes = true;
    }
    cfg.check()?;

    let paths = &cfg.paths;
    let dir = paths.embeddings.as_deref();
    let taxonomy_path = require_path(args.taxonomy, paths.taxonomy.clone(), "--taxonomy")?;
    let out = require_path(args.out, paths.manifest.clone(), "--out")?;
    let taxonomy = load_taxonomy(&taxonomy_path)?;
    let audio = read_emb_as(&emb_path(args.audio, dir, "audio.emb", "--audio")?, Modality::Audio)?;
    let frames = read_emb_as(&emb_path(args.frames, dir, "frames.emb", "--frames")?, Modality::Image)?;
    let text = read_emb_as(&emb_path(args.text, dir, "text.emb", "--text")?, Modality::Text)?;
    let augmented = read_emb_as(
        &emb_path(args.augmented_text, dir, "augmented_text.emb", "--augmented-text")?,
        Modality::Text,
    )?;
    let clip_classes = read_clip_classes(&args.clip_labels, &taxonomy)?;

    let unlabeled: Vec<String> = audio
        .ids()
        .filter(|id| !clip_classes.contains_key(*id))
        .map(str::to_string)
        .collect();
    let labeled_audio;
    let audio = if unlabeled.is_empty() {
        &audio
    } else {
        labeled_audio = EmbeddingSet::from_records(
            audio.modality(),
            audio.dim(),
            audio
                .iter()
                .filter(|(id, _)| clip_classes.contains_key(*id))
                .map(|(id, v)| (id.to_string(), v.to_vec())),
        )
        .expect("subset of a valid set");
        &labeled_audio
    };

    let built = build_dataset(
        DatasetInputs {
            taxonomy: &taxonomy,
            clip_classes: &clip_classes,
            audio,
            frames: &frames,
            text: &text,
            augmented_text: &augmented,
        },
        &cfg.match_config(),
    )?;
    write_manifest(&built.manifest, &out)?;
    if let Some(path) = &args.records {
        let mut body = String::new();
        for r in &built.records {
            body.push_str(&serde_json::to_string(r).expect("record serializes"));
            body.push('\n');
        }
        std::fs::write(path, body).map_err(|e| Failure::io(path, e))?;
    }
    ctx.emit(
        "match_run",
        &RunReport {
            manifest: out.display().to_string(),
            summary: built.manifest.summary(),
            skipped_clips: built.skipped,
            unlabeled_clips: unlabeled,
        },
    )
}
