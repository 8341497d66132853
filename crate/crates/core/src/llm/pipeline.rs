use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use super::parse::{parse_cluster_response, parse_subcategory_response, ClusterResult, ItemViolation};
use super::{ChatBackend, ChatRequest, LlmError, PromptSet, Stage};
use crate::parallel;
use crate::taxonomy::{Category, Provenance, SoundClass, SourceLabel, Taxonomy};

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub model: String,
    pub seed: Option<u64>,
    /// Categories processed at the same time.
    pub parallelism: usize,
    pub prompts: PromptSet,
}

impl PipelineOptions {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            seed: None,
            parallelism: 4,
            prompts: PromptSet::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Fewer than two subcategories survived parsing.
    TooFewSubcategories { valid: usize },
    /// The subcategory answer could not be parsed at all.
    Unparseable { message: String },
    /// An earlier category already produced a class with this name.
    DuplicateClassName,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedClass {
    pub category: Category,
    pub class_name: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedSubcategory {
    pub class_name: String,
    pub name: String,
    pub problems: Vec<String>,
}

/// What the pipeline left out, and why.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct PipelineReport {
    pub requests: usize,
    /// Labels listed more than once in the input; only the first was used.
    pub duplicate_labels: Vec<String>,
    pub discarded_labels: BTreeMap<Category, Vec<String>>,
    pub dropped_classes: Vec<DroppedClass>,
    pub rejected_subcategories: Vec<RejectedSubcategory>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub taxonomy: Taxonomy,
    pub report: PipelineReport,
}

struct CategoryOutcome {
    category: Category,
    hashes: Vec<String>,
    model_id: Option<String>,
    clusters: ClusterResult,
    classes: Vec<Result<SoundClass, DropReason>>,
    rejected: Vec<RejectedSubcategory>,
}

fn rejected(class_name: &str, v: &ItemViolation) -> RejectedSubcategory {
    RejectedSubcategory {
        class_name: class_name.to_string(),
        name: v.name.clone(),
        problems: v.kinds.iter().map(|k| k.to_string()).collect(),
    }
}

fn run_category<B: ChatBackend + ?Sized>(
    category: Category,
    labels: &[String],
    backend: &B,
    opts: &PipelineOptions,
) -> Result<CategoryOutcome, LlmError> {
    let mut hashes = Vec::new();
    let mut model_id = None;
    let mut ask = |messages| -> Result<(String, String), LlmError> {
        let request = ChatRequest::new(opts.model.clone(), messages, opts.seed);
        let hash = request.hash();
        let completion = backend.complete(&request)?;
        hashes.push(hash.clone());
        model_id.get_or_insert(completion.model_id);
        Ok((completion.content, hash))
    };

    let (raw, hash) = ask(opts.prompts.cluster_messages(category, labels)?)?;
    let clusters = parse_cluster_response(&raw, category, labels).map_err(|source| LlmError::Response {
        stage: Stage::Cluster,
        context: category.to_string(),
        request_hash: hash,
        source,
    })?;

    let mut classes = Vec::with_capacity(clusters.clusters.len());
    let mut rejected_subs = Vec::new();
    for cluster in &clusters.clusters {
        let mut class = SoundClass {
            name: cluster.class_name.clone(),
            source_labels: cluster.member_labels.clone(),
            subcategories: Vec::new(),
        };
        let (raw, _) = ask(opts.prompts.subcategory_messages(&class)?)?;
        let outcome = match parse_subcategory_response(&raw) {
            Err(e) => Err(DropReason::Unparseable { message: e.to_string() }),
            Ok(parsed) => {
                rejected_subs.extend(parsed.violations.iter().map(|v| rejected(&class.name, v)));
                if parsed.valid.len() < 2 {
                    Err(DropReason::TooFewSubcategories {
                        valid: parsed.valid.len(),
                    })
                } else {
                    class.subcategories = parsed.valid;
                    Ok(class)
                }
            }
        };
        classes.push(outcome);
    }
    Ok(CategoryOutcome {
        category,
        hashes,
        model_id,
        clusters,
        classes,
        rejected: rejected_subs,
    })
}

/// Build a taxonomy from source labels: one clustering request per category,
/// then one subcategory request per resulting class.
///
/// Categories are handled concurrently (up to `opts.parallelism`) and merged
/// in the fixed category order, so with a replay store the result does not
/// depend on scheduling. Classes with fewer than two valid subcategories are
/// dropped and listed in the report.
pub fn run_taxonomy_pipeline<B: ChatBackend + ?Sized>(
    labels: &[SourceLabel],
    backend: &B,
    opts: &PipelineOptions,
) -> Result<PipelineOutput, LlmError> {
    let mut report = PipelineReport::default();
    let mut seen = HashSet::new();
    let mut grouped: BTreeMap<Category, Vec<String>> = BTreeMap::new();
    for l in labels {
        let text = l.text.trim();
        if text.is_empty() {
            return Err(LlmError::Precondition("empty source label".into()));
        }
        if seen.insert(text.to_string()) {
            grouped.entry(l.category).or_default().push(text.to_string());
        } else {
            report.duplicate_labels.push(text.to_string());
        }
    }
    if grouped.is_empty() {
        return Err(LlmError::Precondition("no source labels".into()));
    }

    let jobs: Vec<(Category, Vec<String>)> = Category::ALL
        .into_iter()
        .filter_map(|c| grouped.remove(&c).map(|l| (c, l)))
        .collect();
    let outcomes = parallel::with_threads(opts.parallelism.max(1), || {
        parallel::try_map(&jobs, |(category, labels)| run_category(*category, labels, backend, opts))
    })?;

    let mut classes: Vec<SoundClass> = Vec::new();
    let mut hashes = Vec::new();
    let mut model_id = None;
    for outcome in outcomes {
        report.requests += outcome.hashes.len();
        hashes.extend(outcome.hashes);
        if model_id.is_none() {
            model_id = outcome.model_id;
        }
        if !outcome.clusters.discarded_labels.is_empty() {
            report
                .discarded_labels
                .insert(outcome.category, outcome.clusters.discarded_labels.clone());
        }
        report.rejected_subcategories.extend(outcome.rejected);
        for (cluster, result) in outcome.clusters.clusters.iter().zip(outcome.classes) {
            let drop = |reason| DroppedClass {
                category: outcome.category,
                class_name: cluster.class_name.clone(),
                reason,
            };
            match result {
                Err(reason) => report.dropped_classes.push(drop(reason)),
                Ok(class) if classes.iter().any(|c| c.name == class.name) => {
                    report.dropped_classes.push(drop(DropReason::DuplicateClassName))
                }
                Ok(class) => classes.push(class),
            }
        }
    }

    let mut taxonomy = Taxonomy::new(classes);
    taxonomy.provenance = Some(Provenance {
        model_id: model_id.unwrap_or_else(|| opts.model.clone()),
        transcript_hashes: hashes,
    });
    Ok(PipelineOutput { taxonomy, report })
}
