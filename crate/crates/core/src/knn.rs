//! kNN classification on top of the embedding index.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::retrieval::{EmbeddingIndex, RankedEntry, RetrievalError};

pub const DEFAULT_K: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum KnnError {
    #[error("empty gallery")]
    EmptyGallery,
    #[error("no query videos")]
    NoQueries,
    #[error("K must be >= 1")]
    ZeroK,
    #[error("no label for {0:?}")]
    MissingLabel(String),
    #[error("empty label for {0:?}")]
    EmptyLabel(String),
    #[error("bad labeled set: {0}")]
    Invalid(String),
    #[error("{0:?} is not in the index")]
    NotIndexed(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Gallery,
    Query,
}

/// Class labels plus the gallery/query split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledSet {
    labels: HashMap<String, String>,
    gallery: Vec<String>,
    queries: Vec<String>,
}

#[derive(Deserialize)]
struct LabelRow {
    video_id: String,
    label: String,
    split: Split,
}

impl LabeledSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        video_id: impl Into<String>,
        label: impl Into<String>,
        split: Split,
    ) -> Result<(), KnnError> {
        let (video_id, label) = (video_id.into(), label.into());
        if label.is_empty() {
            return Err(KnnError::EmptyLabel(video_id));
        }
        if self.labels.contains_key(&video_id) {
            return Err(KnnError::Invalid(format!("{video_id:?} listed twice")));
        }
        match split {
            Split::Gallery => self.gallery.push(video_id.clone()),
            Split::Query => self.queries.push(video_id.clone()),
        }
        self.labels.insert(video_id, label);
        Ok(())
    }

    /// Reads `video_id,label,split` rows (with header).
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, KnnError> {
        let mut set = Self::new();
        for row in csv::Reader::from_reader(reader).deserialize() {
            let row: LabelRow = row?;
            set.insert(row.video_id, row.label, row.split)?;
        }
        Ok(set)
    }

    pub fn load_csv(path: &Path) -> Result<Self, KnnError> {
        Self::from_csv(std::fs::File::open(path).map_err(csv::Error::from)?)
    }

    pub fn label(&self, video_id: &str) -> Result<&str, KnnError> {
        self.labels
            .get(video_id)
            .map(String::as_str)
            .ok_or_else(|| KnnError::MissingLabel(video_id.to_owned()))
    }

    pub fn gallery(&self) -> &[String] {
        &self.gallery
    }

    pub fn queries(&self) -> &[String] {
        &self.queries
    }

    pub fn validate(&self, index: &EmbeddingIndex) -> Result<(), KnnError> {
        if self.queries.is_empty() {
            return Err(KnnError::NoQueries);
        }
        if self.gallery.is_empty() {
            return Err(KnnError::EmptyGallery);
        }
        if let Some(id) = self
            .gallery
            .iter()
            .chain(&self.queries)
            .find(|id| !index.contains(id))
        {
            return Err(KnnError::NotIndexed(id.clone()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Neighbors {
    pub entries: Vec<RankedEntry>,
    /// Set when the gallery held fewer than K candidates.
    pub truncated: bool,
}

/// The `k` most similar gallery members (the query itself is never returned).
pub fn knn(
    index: &EmbeddingIndex,
    query_id: &str,
    k: usize,
    gallery: &[String],
) -> Result<Neighbors, KnnError> {
    if k == 0 {
        return Err(KnnError::ZeroK);
    }
    let query = index.position(query_id)?;
    let candidates = gallery
        .iter()
        .map(|id| index.position(id))
        .collect::<Result<Vec<_>, _>>()?;
    let ranked = index.rank_positions(query, &candidates);
    if ranked.is_empty() {
        return Err(KnnError::EmptyGallery);
    }
    let truncated = ranked.len() < k;
    let entries = ranked
        .into_iter()
        .take(k)
        .map(|(c, score)| RankedEntry {
            id: index.ids()[c].clone(),
            score,
        })
        .collect();
    Ok(Neighbors { entries, truncated })
}

/// Most frequent label; count ties go to the larger similarity sum, then the
/// lexicographically smaller label.
pub fn majority_vote(neighbors: &[RankedEntry], labels: &LabeledSet) -> Result<String, KnnError> {
    let mut tally: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for n in neighbors {
        let entry = tally.entry(labels.label(&n.id)?).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += n.score;
    }
    // BTreeMap iterates labels in ascending order; on a full tie `reduce` keeps the earlier one.
    tally
        .into_iter()
        .reduce(|best, cand| {
            let (b, c) = (best.1, cand.1);
            if c.0 > b.0 || (c.0 == b.0 && c.1 > b.1) {
                cand
            } else {
                best
            }
        })
        .map(|(label, _)| label.to_owned())
        .ok_or(KnnError::EmptyGallery)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassScore {
    pub label: String,
    pub score: f64,
}

/// Per-class similarity sums, best first; ties in ascending label order.
/// With `clamp_negative`, negative similarities contribute 0.
pub fn weighted_vote(
    neighbors: &[RankedEntry],
    labels: &LabeledSet,
    clamp_negative: bool,
) -> Result<Vec<ClassScore>, KnnError> {
    if neighbors.is_empty() {
        return Err(KnnError::EmptyGallery);
    }
    let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
    for n in neighbors {
        let w = if clamp_negative {
            n.score.max(0.0)
        } else {
            n.score
        };
        *sums.entry(labels.label(&n.id)?).or_insert(0.0) += w;
    }
    let mut scores: Vec<ClassScore> = sums
        .into_iter()
        .map(|(label, score)| ClassScore {
            label: label.to_owned(),
            score,
        })
        .collect();
    // stable sort keeps the ascending-label order among equal scores
    scores.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(scores)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KnnOptions {
    pub k: usize,
    pub clamp_negative: bool,
}

impl Default for KnnOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            clamp_negative: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub label: String,
    pub neighbors: Vec<RankedEntry>,
    pub truncated: bool,
    pub majority: String,
    pub weighted: Vec<ClassScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KnnReport {
    pub k: usize,
    pub clamp_negative: bool,
    pub queries: usize,
    pub acc1_majority: f64,
    pub acc1_weighted: f64,
    pub acc5_weighted: f64,
    pub records: Vec<QueryRecord>,
}

impl KnnReport {
    pub const CSV_HEADER: &'static str = "k,queries,acc1_majority,acc1_weighted,acc5_weighted";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6}",
            self.k, self.queries, self.acc1_majority, self.acc1_weighted, self.acc5_weighted
        )
    }

    pub fn markdown(&self, method: &str) -> String {
        format!(
            "| Method | Acc@1 maj | Acc@1 w-kNN | Acc@5 w-kNN |\n|---|---|---|---|\n| {method} | {:.1} | {:.1} | {:.1} |\n",
            100.0 * self.acc1_majority,
            100.0 * self.acc1_weighted,
            100.0 * self.acc5_weighted
        )
    }
}

/// Runs every query against the gallery and scores majority and weighted votes.
pub fn eval_knn(
    index: &EmbeddingIndex,
    labeled: &LabeledSet,
    options: KnnOptions,
) -> Result<KnnReport, KnnError> {
    labeled.validate(index)?;
    let records = labeled
        .queries()
        .par_iter()
        .map(|query| {
            let gallery: Vec<String> = labeled
                .gallery()
                .iter()
                .filter(|g| *g != query)
                .cloned()
                .collect();
            let neighbors = knn(index, query, options.k, &gallery)?;
            Ok(QueryRecord {
                query_id: query.clone(),
                label: labeled.label(query)?.to_owned(),
                majority: majority_vote(&neighbors.entries, labeled)?,
                weighted: weighted_vote(&neighbors.entries, labeled, options.clamp_negative)?,
                neighbors: neighbors.entries,
                truncated: neighbors.truncated,
            })
        })
        .collect::<Result<Vec<_>, KnnError>>()?;

    let n = records.len() as f64;
    let rate =
        |hit: &dyn Fn(&QueryRecord) -> bool| records.iter().filter(|r| hit(r)).count() as f64 / n;
    let acc1_majority = rate(&|r| r.majority == r.label);
    let acc1_weighted = rate(&|r| r.weighted[0].label == r.label);
    let acc5_weighted = rate(&|r| r.weighted.iter().take(5).any(|c| c.label == r.label));
    Ok(KnnReport {
        k: options.k,
        clamp_negative: options.clamp_negative,
        queries: records.len(),
        acc1_majority,
        acc1_weighted,
        acc5_weighted,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::MomentEmbedding;
    use crate::retrieval::build_index;

    fn n(id: &str, score: f64) -> RankedEntry {
        RankedEntry {
            id: id.into(),
            score,
        }
    }

    fn labels(pairs: &[(&str, &str)]) -> LabeledSet {
        let mut set = LabeledSet::new();
        for (id, label) in pairs {
            set.insert(*id, *label, Split::Gallery).unwrap();
        }
        set
    }

    #[test]
    fn majority_cases() {
        let l = labels(&[("a1", "A"), ("a2", "A"), ("b1", "B"), ("b2", "B")]);
        assert_eq!(
            majority_vote(&[n("a1", 0.1), n("a2", 0.1), n("b1", 0.9)], &l).unwrap(),
            "A"
        );
        assert_eq!(
            majority_vote(&[n("a1", 0.9), n("b1", 0.5)], &l).unwrap(),
            "A"
        );
        assert_eq!(
            majority_vote(&[n("a1", 0.5), n("b1", 0.9)], &l).unwrap(),
            "B"
        );
        // full tie falls back to label order
        assert_eq!(
            majority_vote(&[n("b1", 0.5), n("a1", 0.5)], &l).unwrap(),
            "A"
        );
        assert!(matches!(
            majority_vote(&[n("zz", 0.5)], &l),
            Err(KnnError::MissingLabel(_))
        ));
    }

    #[test]
    fn weighted_cases() {
        let l = labels(&[("a", "A"), ("b1", "B"), ("b2", "B")]);
        let v = weighted_vote(&[n("a", 0.9), n("b1", 0.8), n("b2", 0.7)], &l, true).unwrap();
        assert_eq!(v[0].label, "B");
        assert!((v[0].score - 1.5).abs() < 1e-12);
        assert_eq!(
            majority_vote(&[n("a", 0.9), n("b1", 0.8), n("b2", 0.7)], &l).unwrap(),
            "B"
        );

        let nb = [n("a", 0.9), n("b1", 0.4), n("b2", 0.4)];
        let v = weighted_vote(&nb, &l, true).unwrap();
        assert_eq!((v[0].label.as_str(), v[0].score), ("A", 0.9));
        assert!((v[1].score - 0.8).abs() < 1e-12);
        assert_eq!(majority_vote(&nb, &l).unwrap(), "B");

        let single = weighted_vote(&[n("b1", 0.3)], &l, true).unwrap();
        assert_eq!(
            single,
            vec![ClassScore {
                label: "B".into(),
                score: 0.3
            }]
        );

        let neg = [n("a", -0.5), n("b1", 0.1)];
        assert_eq!(weighted_vote(&neg, &l, true).unwrap()[1].score, 0.0);
        assert_eq!(weighted_vote(&neg, &l, false).unwrap()[1].score, -0.5);
    }

    #[test]
    fn neighbors_boundaries() {
        let e = |id: &str, v: [f64; 2]| MomentEmbedding {
            video_id: id.into(),
            vector: v.to_vec(),
            config_digest: "x".into(),
            normalized: true,
        };
        let index =
            build_index(&[e("q", [1.0, 0.0]), e("dup", [1.0, 0.0]), e("o", [0.0, 1.0])]).unwrap();
        let gallery = vec!["dup".to_string(), "o".to_string()];
        let top = knn(&index, "q", 1, &gallery).unwrap();
        assert_eq!(top.entries, vec![n("dup", 1.0)]);
        assert!(!top.truncated);
        let all = knn(&index, "q", 5, &gallery).unwrap();
        assert_eq!(all.entries.len(), 2);
        assert!(all.truncated);
        assert!(matches!(
            knn(&index, "q", 3, &[]),
            Err(KnnError::EmptyGallery)
        ));
        assert!(matches!(
            knn(&index, "q", 3, &["q".to_string()]),
            Err(KnnError::EmptyGallery)
        ));
    }

    #[test]
    fn csv_loading() {
        let text = "video_id,label,split\nv1,swipe,gallery\nv2,push,query\n";
        let set = LabeledSet::from_csv(text.as_bytes()).unwrap();
        assert_eq!(set.gallery(), ["v1"]);
        assert_eq!(set.queries(), ["v2"]);
        assert_eq!(set.label("v2").unwrap(), "push");
        assert!(LabeledSet::from_csv("video_id,label,split\nv1,,gallery\n".as_bytes()).is_err());
        assert!(LabeledSet::from_csv("video_id,label,split\nv1,a,train\n".as_bytes()).is_err());
    }
}
