//! Benchmark manifests: a JSON list of feature files with their roles.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::feature_io::probe_file;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestKind {
    TripletSynthetic,
    TripletReal,
    LabeledKnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Reference,
    Positive,
    Negative,
    RandomNegative,
    Gallery,
    Query,
}

/// Edit categories of the synthetic triplet benchmark, in report column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Static,
    #[serde(rename = "Dyn-App")]
    DynApp,
    #[serde(rename = "Dyn-Obj")]
    DynObj,
    View,
    Style,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Static,
        Category::DynApp,
        Category::DynObj,
        Category::View,
        Category::Style,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Static => "Static",
            Category::DynApp => "Dyn-App",
            Category::DynObj => "Dyn-Obj",
            Category::View => "View",
            Category::Style => "Style",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub feature_path: PathBuf,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triplet_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Triplet {
    pub id: String,
    pub category: Option<Category>,
    pub reference: String,
    pub positive: String,
    pub negatives: Vec<String>,
    /// Random negatives bound to this triplet (real kind only).
    pub random_negatives: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub name: String,
    pub kind: ManifestKind,
    /// Required candidate-pool size per query (real kind); checked on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<usize>,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
    #[serde(skip)]
    triplets: Vec<Triplet>,
}

fn malformed(triplet_id: &str, reason: impl Into<String>) -> BenchError {
    BenchError::MalformedTriplet {
        triplet_id: triplet_id.to_owned(),
        reason: reason.into(),
    }
}

/// Reads and fully validates a manifest; relative feature paths resolve
/// against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<BenchmarkManifest, BenchError> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    BenchmarkManifest::from_json(&text, base)
}

impl BenchmarkManifest {
    pub fn new(name: impl Into<String>, kind: ManifestKind, entries: Vec<ManifestEntry>) -> Self {
        Self {
            name: name.into(),
            kind,
            pool_size: None,
            entries,
            base_dir: PathBuf::new(),
            triplets: Vec::new(),
        }
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, BenchError> {
        let mut manifest: Self =
            serde_json::from_str(text).map_err(|e| BenchError::Schema(e.to_string()))?;
        manifest.base_dir = base_dir.to_path_buf();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), BenchError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: &Path) {
        self.base_dir = dir.to_path_buf();
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.feature_path)
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn entry(&self, video_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.video_id == video_id)
    }

    pub fn video_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.video_id.as_str())
    }

    pub fn category_counts(&self) -> BTreeMap<Category, usize> {
        let mut counts = BTreeMap::new();
        for t in &self.triplets {
            if let Some(c) = t.category {
                *counts.entry(c).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Candidates a triplet's reference is ranked against.
    pub fn pool(&self, triplet: &Triplet) -> Vec<String> {
        match self.kind {
            ManifestKind::TripletSynthetic => self
                .video_ids()
                .filter(|id| *id != triplet.reference)
                .map(str::to_owned)
                .collect(),
            _ => {
                let shared = self
                    .entries
                    .iter()
                    .filter(|e| e.role == Role::RandomNegative && e.triplet_id.is_none())
                    .map(|e| e.video_id.clone());
                std::iter::once(triplet.positive.clone())
                    .chain(triplet.negatives.iter().cloned())
                    .chain(triplet.random_negatives.iter().cloned())
                    .chain(shared)
                    .collect()
            }
        }
    }

    /// Checks the schema and every cross-entry invariant, then resolves triplets.
    pub fn validate(&mut self) -> Result<(), BenchError> {
        if self.entries.is_empty() {
            return Err(BenchError::Schema("manifest has no entries".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.video_id.is_empty() {
                return Err(BenchError::Schema("empty video_id".into()));
            }
            if !seen.insert(e.video_id.as_str()) {
                return Err(BenchError::Schema(format!(
                    "duplicate video_id {:?}",
                    e.video_id
                )));
            }
        }
        match self.kind {
            ManifestKind::LabeledKnn => self.validate_labeled()?,
            _ => self.triplets = self.collect_triplets()?,
        }
        for e in &self.entries {
            let path = self.resolve(e);
            probe_file(&path).map_err(|source| BenchError::DanglingFeature {
                video_id: e.video_id.clone(),
                path: path.clone(),
                source,
            })?;
        }
        Ok(())
    }

    fn validate_labeled(&self) -> Result<(), BenchError> {
        let mut queries = 0;
        for e in &self.entries {
            match e.role {
                Role::Gallery => {}
                Role::Query => queries += 1,
                other => {
                    return Err(BenchError::Schema(format!(
                        "role {other:?} is not allowed in a labeled_knn manifest ({})",
                        e.video_id
                    )))
                }
            }
            if e.label.as_deref().is_none_or(str::is_empty) {
                return Err(BenchError::Schema(format!("{} has no label", e.video_id)));
            }
        }
        if queries == 0 || queries == self.entries.len() {
            return Err(BenchError::Schema(
                "labeled_knn needs both query and gallery entries".into(),
            ));
        }
        Ok(())
    }

    fn collect_triplets(&self) -> Result<Vec<Triplet>, BenchError> {
        let synthetic = self.kind == ManifestKind::TripletSynthetic;
        let mut order: Vec<&str> = Vec::new();
        let mut groups: HashMap<&str, Vec<&ManifestEntry>> = HashMap::new();
        for e in &self.entries {
            match (e.role, e.triplet_id.as_deref()) {
                (Role::Gallery | Role::Query, _) => {
                    return Err(BenchError::Schema(format!(
                        "role {:?} is not allowed in a triplet manifest ({})",
                        e.role, e.video_id
                    )))
                }
                (Role::RandomNegative, None) if !synthetic => {}
                (_, None) => {
                    return Err(BenchError::Schema(format!(
                        "{} has no triplet_id",
                        e.video_id
                    )))
                }
                (_, Some(t)) => {
                    if !groups.contains_key(t) {
                        order.push(t);
                    }
                    groups.entry(t).or_default().push(e);
                }
            }
        }

        let mut triplets = Vec::with_capacity(order.len());
        for id in order {
            let members = &groups[id];
            let with_role = |role: Role| members.iter().filter(move |e| e.role == role);
            let reference: Vec<_> = with_role(Role::Reference).collect();
            let positive: Vec<_> = with_role(Role::Positive).collect();
            let negatives: Vec<String> = with_role(Role::Negative)
                .map(|e| e.video_id.clone())
                .collect();
            let random_negatives: Vec<String> = with_role(Role::RandomNegative)
                .map(|e| e.video_id.clone())
                .collect();
            if reference.len() != 1 {
                return Err(malformed(
                    id,
                    format!("expected 1 reference, found {}", reference.len()),
                ));
            }
            if positive.len() != 1 {
                return Err(malformed(
                    id,
                    format!("expected 1 positive, found {}", positive.len()),
                ));
            }
            if negatives.is_empty() {
                return Err(malformed(id, "no negative"));
            }
            if synthetic && !random_negatives.is_empty() {
                return Err(malformed(
                    id,
                    "random_negative entries belong to triplet_real manifests",
                ));
            }
            let category = reference[0].category;
            if synthetic && category.is_none() {
                return Err(malformed(
                    id,
                    "synthetic triplets need a category on the reference",
                ));
            }
            if let Some(e) = members
                .iter()
                .find(|e| e.category.is_some() && e.category != category)
            {
                return Err(malformed(
                    id,
                    format!("{} disagrees on category", e.video_id),
                ));
            }
            triplets.push(Triplet {
                id: id.to_owned(),
                category,
                reference: reference[0].video_id.clone(),
                positive: positive[0].video_id.clone(),
                negatives,
                random_negatives,
            });
        }
        if triplets.is_empty() {
            return Err(BenchError::Schema("manifest defines no triplets".into()));
        }
        if let Some(expected) = self.pool_size {
            for t in &triplets {
                let found = self.pool(t).len();
                if found != expected {
                    return Err(BenchError::PoolSize {
                        triplet_id: t.id.clone(),
                        expected,
                        found,
                    });
                }
            }
        }
        Ok(triplets)
    }
}
