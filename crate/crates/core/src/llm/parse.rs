use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::taxonomy::{Category, Subcategory, ViolationKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no JSON object found in response")]
    NoJson,
    #[error("response does not match the expected schema: {0}")]
    Schema(String),
    #[error("response names label {0:?}, which is not among the input labels")]
    Hallucination(String),
    #[error("label {0:?} is assigned more than once")]
    DuplicateLabel(String),
    #[error("class name {0:?} is used by more than one cluster")]
    DuplicateClass(String),
}

/// First balanced `{...}` region of `raw` that parses as JSON. Braces inside
/// string literals are ignored, so prose and code fences around the object
/// do not matter.
pub fn extract_json_object(raw: &str) -> Option<&str> {
    let bytes = raw.as_bytes();
    let mut start = 0;
    while let Some(offset) = raw[start..].find('{') {
        let open = start + offset;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        let mut close = None;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_string {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == b'"' {
                    in_string = false;
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        if let Some(close) = close {
            let candidate = &raw[open..=close];
            if serde_json::from_str::<serde_json::Value>(candidate).is_ok() {
                return Some(candidate);
            }
        }
        start = open + 1;
    }
    None
}

fn parse_object<T: for<'de> Deserialize<'de>>(raw: &str) -> Result<T, ParseError> {
    let json = extract_json_object(raw).ok_or(ParseError::NoJson)?;
    serde_json::from_str(json).map_err(|e| ParseError::Schema(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub class_name: String,
    pub member_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub category: Category,
    pub clusters: Vec<Cluster>,
    pub discarded_labels: Vec<String>,
}

#[derive(Deserialize)]
struct RawClusters {
    classes: Vec<Cluster>,
    #[serde(default)]
    discarded_labels: Vec<String>,
}

/// Validate a clustering answer against the labels that were sent.
///
/// Names and labels are trimmed. Every label in the answer must be one of
/// `input_labels`, and may be used once. Input labels the answer does not
/// mention are added to `discarded_labels`, in input order.
pub fn parse_cluster_response<S: AsRef<str>>(
    raw: &str,
    category: Category,
    input_labels: &[S],
) -> Result<ClusterResult, ParseError> {
    let parsed: RawClusters = parse_object(raw)?;
    let inputs: HashSet<&str> = input_labels.iter().map(|s| s.as_ref().trim()).collect();
    let mut used: HashSet<String> = HashSet::new();
    let mut class_names: HashSet<String> = HashSet::new();
    let mut take = |label: &str| -> Result<String, ParseError> {
        let label = label.trim();
        if !inputs.contains(label) {
            return Err(ParseError::Hallucination(label.to_string()));
        }
        if !used.insert(label.to_string()) {
            return Err(ParseError::DuplicateLabel(label.to_string()));
        }
        Ok(label.to_string())
    };

    let mut clusters = Vec::with_capacity(parsed.classes.len());
    for c in &parsed.classes {
        let class_name = c.class_name.trim().to_string();
        if class_name.is_empty() {
            return Err(ParseError::Schema("empty class_name".into()));
        }
        if c.member_labels.is_empty() {
            return Err(ParseError::Schema(format!("class {class_name:?} has no member_labels")));
        }
        if !class_names.insert(class_name.clone()) {
            return Err(ParseError::DuplicateClass(class_name));
        }
        let member_labels = c
            .member_labels
            .iter()
            .map(|l| take(l))
            .collect::<Result<Vec<_>, _>>()?;
        clusters.push(Cluster {
            class_name,
            member_labels,
        });
    }
    let mut discarded_labels = parsed
        .discarded_labels
        .iter()
        .map(|l| take(l))
        .collect::<Result<Vec<_>, _>>()?;
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for l in input_labels {
        let l = l.as_ref().trim();
        if !used.contains(l) && seen.insert(l) {
            discarded_labels.push(l.to_string());
        }
    }
    Ok(ClusterResult {
        category,
        clusters,
        discarded_labels,
    })
}

/// Problems with one subcategory of an answer; the item is left out of
/// [`SubcategoryParse::valid`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemViolation {
    pub index: usize,
    pub name: String,
    pub kinds: Vec<ViolationKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SubcategoryParse {
    pub valid: Vec<Subcategory>,
    pub violations: Vec<ItemViolation>,
}

#[derive(Deserialize)]
struct RawSubcategories {
    subcategories: Vec<RawSubcategory>,
}

#[derive(Deserialize)]
struct RawSubcategory {
    name: String,
    adjectives: Vec<String>,
    #[serde(default)]
    description: Option<String>,
}

/// Parse a subcategory answer. Items that break the 2–4 adjective rule or
/// reuse an earlier name are reported per item, not returned.
pub fn parse_subcategory_response(raw: &str) -> Result<SubcategoryParse, ParseError> {
    let parsed: RawSubcategories = parse_object(raw)?;
    let mut out = SubcategoryParse::default();
    let mut first_use: HashMap<String, usize> = HashMap::new();
    for (index, item) in parsed.subcategories.into_iter().enumerate() {
        let sub = Subcategory {
            name: item.name.trim().to_string(),
            adjectives: item.adjectives.iter().map(|a| a.trim().to_string()).collect(),
            description: item
                .description
                .map(|d| d.trim().to_string())
                .filter(|d| !d.is_empty()),
        };
        let mut kinds = sub.check();
        if !sub.name.is_empty() && *first_use.entry(sub.name.clone()).or_insert(index) != index {
            kinds.push(ViolationKind::DuplicateSubcategoryName(sub.name.clone()));
        }
        if kinds.is_empty() {
            out.valid.push(sub);
        } else {
            out.violations.push(ItemViolation {
                index,
                name: sub.name,
                kinds,
            });
        }
    }
    Ok(out)
}
