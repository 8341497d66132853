use std::path::PathBuf;

use clap::Args;
use divesound::llm::{
    run_taxonomy_pipeline, ChatBackend, HttpChatClient, PipelineOptions, PipelineReport, PromptSet,
    RecordingClient, ReplayStore,
};
use divesound::taxonomy::{
    load_taxonomy, parse_labels, save_taxonomy, taxonomy_stats, taxonomy_warnings, validate_taxonomy,
};
use serde::Serialize;

use super::{read_text, require_path, Ctx};
use crate::failure::{CmdResult, Failure};

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Labels file, one `category<TAB>label` per line.
    #[arg(long)]
    labels: PathBuf,
    /// Answer requests from this transcript directory instead of the endpoint.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Store every live exchange in this directory.
    #[arg(long, conflicts_with = "replay")]
    record: Option<PathBuf>,
    /// Directory with prompt template overrides.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct BuildReport<'a> {
    out: String,
    model_id: &'a str,
    class_count: usize,
    mean_subcategories: f64,
    #[serde(flatten)]
    pipeline: &'a PipelineReport,
}

pub fn build(ctx: &mut Ctx, args: BuildArgs) -> CmdResult {
    let llm = &ctx.cfg.llm;
    let out = require_path(args.out, ctx.cfg.paths.taxonomy.clone(), "--out")?;
    let labels = parse_labels(&read_text(&args.labels)?)
        .map_err(|e| Failure::from(e).context(args.labels.display()))?;
    let prompts = match args.templates.as_ref().or(llm.templates_dir.as_ref()) {
        Some(dir) => PromptSet::from_dir(dir)?,
        None => PromptSet::default(),
    };
    let opts = PipelineOptions {
        model: args.model.unwrap_or_else(|| llm.model.clone()),
        seed: llm.seed,
        parallelism: llm.parallelism,
        prompts,
    };

    let replay = args.replay.or_else(|| llm.replay_dir.clone());
    let backend: Box<dyn ChatBackend> = match replay {
        Some(dir) => Box::new(ReplayStore::open(dir)?),
        None => {
            let client = HttpChatClient::new(args.base_url.unwrap_or_else(|| llm.base_url.clone()))?;
            match args.record {
                Some(dir) => Box::new(RecordingClient::new(client, ReplayStore::create(dir)?)),
                None => Box::new(client),
            }
        }
    };

    let output = run_taxonomy_pipeline(&labels, backend.as_ref(), &opts)?;
    for w in taxonomy_warnings(&output.taxonomy) {
        eprintln!("warning: {w}");
    }
    save_taxonomy(&output.taxonomy, &out)?;
    let stats = taxonomy_stats(&output.taxonomy).ok();
    ctx.emit(
        "taxonomy_build",
        &BuildReport {
            out: out.display().to_string(),
            model_id: output
                .taxonomy
                .provenance
                .as_ref()
                .map(|p| p.model_id.as_str())
                .unwrap_or_default(),
            class_count: output.taxonomy.classes.len(),
            mean_subcategories: stats.map(|s| s.mean_subcategories).unwrap_or(0.0),
            pipeline: &output.report,
        },
    )
}

#[derive(Serialize)]
struct ValidateReport {
    path: String,
    valid: bool,
    violations: Vec<String>,
    warnings: Vec<String>,
}

pub fn validate(ctx: &mut Ctx, path: Option<PathBuf>) -> CmdResult {
    let path = require_path(path, ctx.cfg.paths.taxonomy.clone(), "taxonomy path")?;
    let t = load_taxonomy(&path)?;
    let violations: Vec<String> = validate_taxonomy(&t).iter().map(ToString::to_string).collect();
    let warnings = taxonomy_warnings(&t);
    for v in &violations {
        eprintln!("violation: {v}");
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let valid = violations.is_empty();
    let count = violations.len();
    ctx.emit(
        "taxonomy_validate",
        &ValidateReport {
            path: path.display().to_string(),
            valid,
            violations,
            warnings,
        },
    )?;
    if valid {
        Ok(())
    } else {
        Err(Failure::validation(format!("{} has {count} violation(s)", path.display())))
    }
}

pub fn stats(ctx: &mut Ctx, path: Option<PathBuf>) -> CmdResult {
    let path = require_path(path, ctx.cfg.paths.taxonomy.clone(), "taxonomy path")?;
    let t = load_taxonomy(&path)?;
    ctx.emit("taxonomy_stats", &taxonomy_stats(&t)?)
}
