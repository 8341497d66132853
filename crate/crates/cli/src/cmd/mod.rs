pub mod embed;
pub mod fuse;
pub mod matching;
pub mod metrics;
pub mod taxonomy;

use std::path::{Path, PathBuf};

use divesound::embedding::{read_embeddings, read_embeddings_as, EmbeddingSet, Modality};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::failure::{CmdResult, Failure};

pub struct Ctx {
    pub cfg: PipelineConfig,
}

impl Ctx {
    pub fn new(cfg: PipelineConfig) -> Self {
        Self { cfg }
    }

    /// Print `report` as JSON on stdout, and copy it to the reports
    /// directory when one is configured.
    pub fn emit<T: Serialize>(&self, command: &str, report: &T) -> CmdResult {
        let mut text = serde_json::to_string_pretty(report).expect("report serializes");
        text.push('\n');
        print!("{text}");
        if let Some(dir) = &self.cfg.paths.reports {
            std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
            let path = dir.join(format!("{command}.json"));
            std::fs::write(&path, text).map_err(|e| Failure::io(&path, e))?;
        }
        Ok(())
    }
}

/// `flag`, else `fallback`, else a validation error naming the flag.
pub fn require_path(flag: Option<PathBuf>, fallback: Option<PathBuf>, name: &str) -> CmdResult<PathBuf> {
    flag.or(fallback)
        .ok_or_else(|| Failure::validation(format!("{name} is required (flag or config paths)")))
}

pub fn read_emb(path: &Path) -> CmdResult<EmbeddingSet> {
    read_embeddings(path).map_err(|e| Failure::from(e).context(format!("reading {}", path.display())))
}

/// Like [`read_emb`], but the file must hold `modality` vectors.
pub fn read_emb_as(path: &Path, modality: Modality) -> CmdResult<EmbeddingSet> {
    read_embeddings_as(path, modality).map_err(|e| Failure::from(e).context(format!("reading {}", path.display())))
}

pub fn read_text(path: &Path) -> CmdResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

/// Parse one JSON value per non-blank line.
pub fn read_jsonl<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> CmdResult<Vec<T>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(line)
            .map_err(|e| Failure::validation(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}
