//! Diversity taxonomy: sound classes, their visually and auditorily
//! distinguishable subcategories, and the adjectives attached to each.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Schema version written by [`save_taxonomy`] and accepted by [`load_taxonomy`].
pub const TAXONOMY_SCHEMA_VERSION: u32 = 1;

/// Allowed number of adjectives per subcategory.
pub const MIN_ADJECTIVES: usize = 2;
pub const MAX_ADJECTIVES: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("failed to read or write {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported taxonomy version {found} (expected {expected})")]
    Version { found: u64, expected: u32 },
    #[error("taxonomy is invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("no classes")]
    Empty,
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("labels file line {line}: {message}")]
    Labels { line: usize, message: String },
}

/// The nine overarching categories source labels are grouped under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Animals,
    Home,
    Music,
    Nature,
    People,
    Sports,
    Tools,
    Vehicle,
    Others,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::Animals,
        Category::Home,
        Category::Music,
        Category::Nature,
        Category::People,
        Category::Sports,
        Category::Tools,
        Category::Vehicle,
        Category::Others,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Animals => "animals",
            Category::Home => "home",
            Category::Music => "music",
            Category::Nature => "nature",
            Category::People => "people",
            Category::Sports => "sports",
            Category::Tools => "tools",
            Category::Vehicle => "vehicle",
            Category::Others => "others",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let needle = s.trim().to_ascii_lowercase();
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == needle)
            .ok_or_else(|| TaxonomyError::UnknownCategory(s.to_string()))
    }
}

/// An original dataset label together with its overarching category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceLabel {
    pub text: String,
    pub category: Category,
}

impl SourceLabel {
    pub fn new(text: impl Into<String>, category: Category) -> Result<Self, TaxonomyError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TaxonomyError::Labels {
                line: 0,
                message: "empty label text".into(),
            });
        }
        Ok(Self { text, category })
    }
}

/// Parse a labels listing: one `category<TAB>label` per line.
///
/// Blank lines and lines starting with `#` are skipped. Categories outside
/// the closed nine-name set are rejected.
pub fn parse_labels(text: &str) -> Result<Vec<SourceLabel>, TaxonomyError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (cat, label) = line.split_once('\t').ok_or_else(|| TaxonomyError::Labels {
            line: i + 1,
            message: "expected `category<TAB>label`".into(),
        })?;
        let category = cat.parse::<Category>().map_err(|_| TaxonomyError::Labels {
            line: i + 1,
            message: format!("unknown category {:?}", cat.trim()),
        })?;
        let label = label.trim();
        if label.is_empty() {
            return Err(TaxonomyError::Labels {
                line: i + 1,
                message: "empty label text".into(),
            });
        }
        out.push(SourceLabel {
            text: label.to_string(),
            category,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subcategory {
    pub name: String,
    pub adjectives: Vec<String>,
    #[serde(default)]
    pub description: Option<String>,
}

impl Subcategory {
    pub fn new<S: Into<String>>(name: impl Into<String>, adjectives: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            adjectives: adjectives.into_iter().map(Into::into).collect(),
            description: None,
        }
    }

    /// Problems with this subcategory taken on its own.
    pub fn check(&self) -> Vec<ViolationKind> {
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push(ViolationKind::EmptySubcategoryName);
        }
        let n = self.adjectives.len();
        if !(MIN_ADJECTIVES..=MAX_ADJECTIVES).contains(&n) {
            out.push(ViolationKind::AdjectiveCount(n));
        }
        if self.adjectives.iter().any(|a| a.trim().is_empty()) {
            out.push(ViolationKind::EmptyAdjective);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoundClass {
    pub name: String,
    pub source_labels: Vec<String>,
    #[serde(default)]
    pub subcategories: Vec<Subcategory>,
}

impl SoundClass {
    pub fn subcategory(&self, name: &str) -> Option<&Subcategory> {
        self.subcategories.iter().find(|s| s.name == name)
    }
}

/// Where a taxonomy came from when it was produced by the LLM pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub model_id: String,
    pub transcript_hashes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Taxonomy {
    pub version: u32,
    #[serde(default)]
    pub provenance: Option<Provenance>,
    pub classes: Vec<SoundClass>,
}

impl Taxonomy {
    pub fn new(classes: Vec<SoundClass>) -> Self {
        Self {
            version: TAXONOMY_SCHEMA_VERSION,
            provenance: None,
            classes,
        }
    }

    pub fn class(&self, name: &str) -> Option<&SoundClass> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Class that lists `label` among its source labels.
    pub fn class_for_label(&self, label: &str) -> Option<&SoundClass> {
        self.classes
            .iter()
            .find(|c| c.source_labels.iter().any(|l| l == label))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    UnsupportedVersion(u32),
    EmptyClassName,
    DuplicateClassName(String),
    NoSourceLabels,
    EmptySourceLabel,
    LabelInMultipleClasses(String),
    DuplicateSourceLabel(String),
    EmptySubcategoryName,
    DuplicateSubcategoryName(String),
    AdjectiveCount(usize),
    EmptyAdjective,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::UnsupportedVersion(v) => write!(f, "version must be >= 1, got {v}"),
            ViolationKind::EmptyClassName => f.write_str("empty class name"),
            ViolationKind::DuplicateClassName(n) => write!(f, "duplicate class name: {n}"),
            ViolationKind::NoSourceLabels => f.write_str("class has no source labels"),
            ViolationKind::EmptySourceLabel => f.write_str("empty source label"),
            ViolationKind::LabelInMultipleClasses(l) => {
                write!(f, "source label in multiple classes: {l}")
            }
            ViolationKind::DuplicateSourceLabel(l) => write!(f, "duplicate source label: {l}"),
            ViolationKind::EmptySubcategoryName => f.write_str("empty subcategory name"),
            ViolationKind::DuplicateSubcategoryName(n) => {
                write!(f, "duplicate subcategory name: {n}")
            }
            ViolationKind::AdjectiveCount(_) => write!(
                f,
                "adjective count out of range [{MIN_ADJECTIVES},{MAX_ADJECTIVES}]"
            ),
            ViolationKind::EmptyAdjective => f.write_str("empty adjective"),
        }
    }
}

/// A broken invariant and where it was found (`class` or `class/subcategory`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.location.is_empty() {
            write!(f, "{}", self.kind)
        } else {
            write!(f, "{}: {}", self.location, self.kind)
        }
    }
}

/// Check every taxonomy invariant. An empty result means the taxonomy is valid.
pub fn validate_taxonomy(t: &Taxonomy) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |location: String, kind| out.push(Violation { location, kind });

    if t.version < 1 {
        push(String::new(), ViolationKind::UnsupportedVersion(t.version));
    }
    let mut class_names = HashSet::new();
    let mut label_owner: BTreeMap<&str, &str> = BTreeMap::new();
    for class in &t.classes {
        let loc = class.name.clone();
        if class.name.trim().is_empty() {
            push(loc.clone(), ViolationKind::EmptyClassName);
        } else if !class_names.insert(class.name.as_str()) {
            push(loc.clone(), ViolationKind::DuplicateClassName(class.name.clone()));
        }
        if class.source_labels.is_empty() {
            push(loc.clone(), ViolationKind::NoSourceLabels);
        }
        for label in &class.source_labels {
            if label.trim().is_empty() {
                push(loc.clone(), ViolationKind::EmptySourceLabel);
                continue;
            }
            match label_owner.get(label.as_str()) {
                Some(owner) if *owner != class.name.as_str() => {
                    push(loc.clone(), ViolationKind::LabelInMultipleClasses(label.clone()))
                }
                Some(_) => push(loc.clone(), ViolationKind::DuplicateSourceLabel(label.clone())),
                None => {
                    label_owner.insert(label, &class.name);
                }
            }
        }
        let mut sub_names = HashSet::new();
        for sub in &class.subcategories {
            let sloc = format!("{}/{}", class.name, sub.name);
            if !sub.name.trim().is_empty() && !sub_names.insert(sub.name.as_str()) {
                push(sloc.clone(), ViolationKind::DuplicateSubcategoryName(sub.name.clone()));
            }
            for kind in sub.check() {
                push(sloc.clone(), kind);
            }
        }
    }
    out
}

/// Non-fatal observations: classes with fewer than two subcategories.
pub fn taxonomy_warnings(t: &Taxonomy) -> Vec<String> {
    t.classes
        .iter()
        .filter(|c| c.subcategories.len() < 2)
        .map(|c| {
            format!(
                "{}: class has {} subcategor{} (diversity classes need at least 2)",
                c.name,
                c.subcategories.len(),
                if c.subcategories.len() == 1 { "y" } else { "ies" }
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyStats {
    pub class_count: usize,
    pub total_subcategories: usize,
    pub mean_subcategories: f64,
    /// subcategory count -> number of classes with that many subcategories
    pub subcategory_histogram: BTreeMap<usize, usize>,
}

/// Round to 4 decimal places for reporting.
pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

pub fn taxonomy_stats(t: &Taxonomy) -> Result<TaxonomyStats, TaxonomyError> {
    if t.classes.is_empty() {
        return Err(TaxonomyError::Empty);
    }
    let mut hist = BTreeMap::new();
    let mut total = 0usize;
    for c in &t.classes {
        total += c.subcategories.len();
        *hist.entry(c.subcategories.len()).or_insert(0) += 1;
    }
    Ok(TaxonomyStats {
        class_count: t.classes.len(),
        total_subcategories: total,
        mean_subcategories: round4(total as f64 / t.classes.len() as f64),
        subcategory_histogram: hist,
    })
}

/// Serialize to the canonical pretty JSON form (trailing newline included).
pub fn taxonomy_to_json(t: &Taxonomy) -> String {
    let mut s = serde_json::to_string_pretty(t).expect("taxonomy serializes");
    s.push('\n');
    s
}

pub fn save_taxonomy(t: &Taxonomy, path: &Path) -> Result<(), TaxonomyError> {
    let violations = validate_taxonomy(t);
    if !violations.is_empty() {
        return Err(TaxonomyError::Invalid(violations));
    }
    let io_err = |source| TaxonomyError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(taxonomy_to_json(t).as_bytes()).map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn load_taxonomy(path: &Path) -> Result<Taxonomy, TaxonomyError> {
    let text = fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_taxonomy(&text, &path.display().to_string())
}

/// Parse taxonomy JSON; `origin` names the source in error messages.
pub fn parse_taxonomy(text: &str, origin: &str) -> Result<Taxonomy, TaxonomyError> {
    #[derive(Deserialize)]
    struct VersionProbe {
        version: u64,
    }
    let parse_err = |e: serde_json::Error| TaxonomyError::Parse {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    };
    let probe: VersionProbe = serde_json::from_str(text).map_err(parse_err)?;
    if probe.version != u64::from(TAXONOMY_SCHEMA_VERSION) {
        return Err(TaxonomyError::Version {
            found: probe.version,
            expected: TAXONOMY_SCHEMA_VERSION,
        });
    }
    serde_json::from_str(text).map_err(parse_err)
}
