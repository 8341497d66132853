use std::path::PathBuf;

use clap::Args;
use divesound::embedding::{write_embeddings, Modality};
use divesound::fusion::{build_label_table, conditioning_set, FusionMode};
use divesound::matcher::read_manifest;
use serde::Serialize;

use super::{read_emb_as, require_path, Ctx};
use crate::failure::CmdResult;

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// base | text | image
    #[arg(long)]
    mode: FusionMode,
    #[arg(long)]
    out: PathBuf,
    /// Subcategory text embeddings keyed `class/subcategory` (text mode).
    #[arg(long)]
    text_emb: Option<PathBuf>,
    /// Frame embeddings containing the representative frames (image mode).
    #[arg(long)]
    image_emb: Option<PathBuf>,
    #[arg(long)]
    label_dim: Option<usize>,
    /// Also write the label table, one vector per class.
    #[arg(long)]
    table_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ExportReport {
    out: String,
    mode: FusionMode,
    count: usize,
    dim: usize,
    label_dim: usize,
    classes: usize,
}

pub fn export(ctx: &mut Ctx, args: ExportArgs) -> CmdResult {
    let mut cfg = ctx.cfg.clone();
    if let Some(d) = args.label_dim {
        cfg.fusion.label_dim = d;
    }
    cfg.check()?;
    let manifest = read_manifest(&require_path(args.manifest, cfg.paths.manifest.clone(), "--manifest")?)?;
    let text = args.text_emb.as_deref().map(|p| read_emb_as(p, Modality::Text)).transpose()?;
    let image = args.image_emb.as_deref().map(|p| read_emb_as(p, Modality::Image)).transpose()?;

    let class_names: Vec<&str> = manifest.classes.iter().map(|c| c.class_name.as_str()).collect();
    let table = build_label_table(&class_names, cfg.fusion.label_dim, cfg.fusion.seed)?;
    let set = conditioning_set(&manifest, &table, text.as_ref(), image.as_ref(), args.mode)?;
    write_embeddings(&set, &args.out)?;
    if let Some(path) = &args.table_out {
        write_embeddings(&table.to_embedding_set(), path)?;
    }
    ctx.emit(
        "fuse_export",
        &ExportReport {
            out: args.out.display().to_string(),
            mode: args.mode,
            count: set.len(),
            dim: set.dim(),
            label_dim: table.label_dim(),
            classes: table.len(),
        },
    )
}
