use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use divesound::matcher::read_manifest;
use divesound::metrics::{fit_gaussian, frechet_distance, msd_report, welch_ttest, MsdReport};
use serde::Serialize;

use super::{read_emb, read_text, require_path, Ctx};
use crate::failure::{CmdResult, Failure};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Grouping {
    Class,
    Subcategory,
}

#[derive(Serialize)]
struct FadReport {
    fad: f64,
    regularization_applied: bool,
    real_count: usize,
    gen_count: usize,
    dim: usize,
}

pub fn fad(ctx: &mut Ctx, real: &Path, gen: &Path) -> CmdResult {
    let a = read_emb(real)?;
    let b = read_emb(gen)?;
    if a.dim() != b.dim() {
        return Err(Failure::validation(format!(
            "dimension mismatch: {} has {}, {} has {}",
            real.display(),
            a.dim(),
            gen.display(),
            b.dim()
        )));
    }
    let r = frechet_distance(&fit_gaussian(&a.to_f64_rows())?, &fit_gaussian(&b.to_f64_rows())?)?;
    ctx.emit(
        "metrics_fad",
        &FadReport {
            fad: r.distance,
            regularization_applied: r.regularization_applied,
            real_count: a.len(),
            gen_count: b.len(),
            dim: a.dim(),
        },
    )
}

#[derive(Serialize)]
struct MsdOutput {
    grouping: &'static str,
    #[serde(flatten)]
    report: MsdReport,
}

pub fn msd(ctx: &mut Ctx, emb: &Path, manifest: Option<PathBuf>, by: Grouping) -> CmdResult {
    let manifest_path = require_path(manifest, ctx.cfg.paths.manifest.clone(), "--manifest")?;
    let m = read_manifest(&manifest_path)?;
    let set = read_emb(emb)?;
    let mut groups: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (class, sub, clip) in m.retained_clips() {
        let v = set.get(clip).ok_or_else(|| {
            Failure::validation(format!("{} has no vector for clip {clip:?}", emb.display()))
        })?;
        let key = match by {
            Grouping::Class => class.to_string(),
            Grouping::Subcategory => format!("{class}/{}", sub.name),
        };
        groups
            .entry(key)
            .or_default()
            .push(v.iter().map(|&x| f64::from(x)).collect());
    }
    let report = msd_report(&groups)?;
    ctx.emit(
        "metrics_msd",
        &MsdOutput {
            grouping: match by {
                Grouping::Class => "class",
                Grouping::Subcategory => "subcategory",
            },
            report,
        },
    )
}

/// A JSON array of numbers, or numbers separated by whitespace or commas.
fn read_sample(path: &Path) -> CmdResult<Vec<f64>> {
    let text = read_text(path)?;
    let bad = |msg: String| Failure::validation(format!("{}: {msg}", path.display()));
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| bad(e.to_string()));
    }
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| bad(format!("not a number: {t:?}"))))
        .collect()
}

pub fn ttest(ctx: &mut Ctx, a: &Path, b: &Path) -> CmdResult {
    let r = welch_ttest(&read_sample(a)?, &read_sample(b)?)?;
    ctx.emit("metrics_ttest", &r)
}
