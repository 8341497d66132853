use std::path::{Path, PathBuf};

use clap::Args;
use divesound::embedding::{write_embeddings, EmbedItem, EmbeddingSet, Modality, ProviderClient};
use divesound::matcher::{augment_subcategory_text, text_key};
use divesound::taxonomy::load_taxonomy;
use serde::{Deserialize, Serialize};

use super::{read_emb, read_jsonl, require_path, Ctx};
use crate::failure::{CmdResult, Failure};

#[derive(Args, Debug)]
pub struct PackArgs {
    #[arg(long)]
    modality: Modality,
    /// JSONL with one {"id": ..., "vector": [...]} per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FetchArgs {
    /// Provider base URL, e.g. http://127.0.0.1:8765
    #[arg(long)]
    provider: String,
    #[arg(long)]
    modality: Modality,
    /// JSONL of request items: {"id", "text"} or {"id", "uri"}.
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

#[derive(Args, Debug)]
pub struct TextsArgs {
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Append the adjectives to each subcategory name.
    #[arg(long)]
    augmented: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VectorRecord {
    id: String,
    vector: Vec<f32>,
}

#[derive(Serialize)]
struct WriteReport {
    out: String,
    modality: Modality,
    count: usize,
    dim: usize,
    bytes: u64,
}

fn write_set(ctx: &Ctx, command: &str, set: &EmbeddingSet, out: &Path) -> CmdResult {
    let bytes = write_embeddings(set, out)?;
    ctx.emit(
        command,
        &WriteReport {
            out: out.display().to_string(),
            modality: set.modality(),
            count: set.len(),
            dim: set.dim(),
            bytes,
        },
    )
}

pub fn pack(ctx: &mut Ctx, args: PackArgs) -> CmdResult {
    let records: Vec<VectorRecord> = read_jsonl(&args.input)?;
    let dim = records
        .first()
        .map(|r| r.vector.len())
        .ok_or_else(|| Failure::validation(format!("{} has no records", args.input.display())))?;
    let set = EmbeddingSet::from_records(args.modality, dim, records.into_iter().map(|r| (r.id, r.vector)))
        .map_err(|e| Failure::validation(format!("{}: {e}", args.input.display())))?;
    write_set(ctx, "embed_pack", &set, &args.out)
}

pub fn fetch(ctx: &mut Ctx, args: FetchArgs) -> CmdResult {
    let items: Vec<EmbedItem> = read_jsonl(&args.items)?;
    let client = ProviderClient::new(args.provider)?.with_batch_size(args.batch_size);
    client.health()?;
    let set = client.fetch(args.modality, &items)?;
    write_set(ctx, "embed_fetch", &set, &args.out)
}

pub fn texts(ctx: &mut Ctx, args: TextsArgs) -> CmdResult {
    let path = require_path(args.taxonomy, ctx.cfg.paths.taxonomy.clone(), "--taxonomy")?;
    let t = load_taxonomy(&path)?;
    let mut body = String::new();
    let mut count = 0usize;
    for class in &t.classes {
        for sub in &class.subcategories {
            let text = if args.augmented {
                augment_subcategory_text(sub)
            } else {
                sub.name.clone()
            };
            let item = EmbedItem::text(text_key(&class.name, &sub.name), text);
            body.push_str(&serde_json::to_string(&item).expect("item serializes"));
            body.push('\n');
            count += 1;
        }
    }
    std::fs::write(&args.out, body).map_err(|e| Failure::io(&args.out, e))?;
    ctx.emit(
        "embed_texts",
        &serde_json::json!({"out": args.out.display().to_string(), "count": count, "augmented": args.augmented}),
    )
}

pub fn inspect(ctx: &mut Ctx, path: &Path) -> CmdResult {
    let set = read_emb(path)?;
    ctx.emit(
        "embed_inspect",
        &serde_json::json!({
            "path": path.display().to_string(),
            "modality": set.modality(),
            "dim": set.dim(),
            "count": set.len(),
        }),
    )
}
