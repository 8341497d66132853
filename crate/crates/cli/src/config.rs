use std::path::{Path, PathBuf};

use divesound::fusion::DEFAULT_LABEL_DIM;
use divesound::matcher::{FrameAgg, MatchConfig, DEFAULT_MIN_CLIPS, DEFAULT_SOFTMAX_SCALE};
use serde::{Deserialize, Serialize};

use crate::failure::{CmdResult, Failure};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub llm: LlmConfig,
    pub matching: MatchingConfig,
    pub fusion: FusionConfig,
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub base_url: String,
    pub model: String,
    /// Categories sent to the endpoint at the same time.
    pub parallelism: usize,
    pub replay_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    pub min_clips: usize,
    pub softmax_scale: f64,
    pub frame_agg: FrameAgg,
    /// 0 uses every frame.
    pub frames_per_clip: usize,
    pub keep_singleton_classes: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub label_dim: usize,
    pub seed: u64,
}

/// Default locations used when the matching flag is not given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub taxonomy: Option<PathBuf>,
    /// Directory holding audio.emb, frames.emb, text.emb, augmented_text.emb.
    pub embeddings: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    /// Every command also writes its JSON report here as `<command>.json`.
    pub reports: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            parallelism: 4,
            replay_dir: None,
            templates_dir: None,
            seed: None,
        }
    }
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self {
            min_clips: DEFAULT_MIN_CLIPS,
            softmax_scale: DEFAULT_SOFTMAX_SCALE,
            frame_agg: FrameAgg::Mean,
            frames_per_clip: 3,
            keep_singleton_classes: false,
            seed: 0,
        }
    }
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            label_dim: DEFAULT_LABEL_DIM,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> CmdResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Failure::validation(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// `--seed` reseeds every stage.
    pub fn apply_seed(&mut self, seed: u64) {
        self.llm.seed = Some(seed);
        self.matching.seed = seed;
        self.fusion.seed = seed;
    }

    pub fn check(&self) -> CmdResult {
        let mut problems = Vec::new();
        if self.matching.min_clips < 1 {
            problems.push("matching.min_clips must be at least 1".to_string());
        }
        let s = self.matching.softmax_scale;
        if !(s > 0.0 && s.is_finite()) {
            problems.push(format!("matching.softmax_scale must be positive, got {s}"));
        }
        if self.fusion.label_dim < 1 {
            problems.push("fusion.label_dim must be at least 1".to_string());
        }
        if self.llm.parallelism < 1 {
            problems.push("llm.parallelism must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Failure::validation(format!("invalid config: {}", problems.join("; "))))
        }
    }

    pub fn match_config(&self) -> MatchConfig {
        let m = &self.matching;
        MatchConfig {
            softmax_scale: m.softmax_scale,
            frame_agg: m.frame_agg,
            min_clips: m.min_clips,
            keep_singleton_classes: m.keep_singleton_classes,
            frames_per_clip: (m.frames_per_clip > 0).then_some(m.frames_per_clip),
            seed: m.seed,
        }
    }
}
