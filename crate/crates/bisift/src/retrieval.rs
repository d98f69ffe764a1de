//! The retrieval pipeline: an in-memory index over BoVW histograms and
//! per-image feature sets, Euclidean first-stage ranking, and re-ranking of
//! the top-X candidates by image-to-image matching.
//!
//! Re-ranking touches only the head of the first-stage list: the re-scored
//! block is emitted first, followed by the untouched tail in its original
//! order, even if some tail image would have out-scored a head image. That
//! keeps the per-query cost bounded by X image comparisons.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::binarize::{binarize_bisift, binarize_percell};
use crate::descriptor::{DescriptorSet, FloatDescriptor};
use crate::distance::DistanceKind;
use crate::matching::{match_feature_sets, FeatureSet, MatchError};
use crate::vocabulary::{build_histogram, BovwHistogram, Vocabulary};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("vocabulary mismatch: index has k = {expected}, query histogram has k = {actual}")]
    VocabularyMismatch { expected: usize, actual: usize },
    #[error("duplicate image id {0:?} in index")]
    DuplicateImageId(String),
    #[error("rank list references image id {0:?} not present in the index")]
    UnknownImageId(String),
    #[error("top-x must be at least 1")]
    InvalidTopX,
    #[error("ratio threshold must lie in (0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("distance kind {kind} is incompatible with the {representation} index representation")]
    IncompatibleKind {
        kind: DistanceKind,
        representation: RerankRepresentation,
    },
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error("manifest line {line}: {reason}")]
    ManifestParse { line: usize, reason: String },
    #[error("rank list line {line}: {reason}")]
    RankListParse { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which stage produced a rank entry's score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    First,
    Reranked,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::First => "first",
            Stage::Reranked => "reranked",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "first" => Ok(Stage::First),
            "reranked" => Ok(Stage::Reranked),
            other => Err(format!("unknown stage {other:?}")),
        }
    }
}

/// One scored candidate. First-stage scores are histogram distances
/// (ascending is better); re-ranked scores are match counts (the full
/// ordering also uses total match distance and the first-stage rank as tie
/// breaks).
#[derive(Debug, Clone, PartialEq)]
pub struct RankEntry {
    pub image_id: String,
    pub score: f64,
    pub stage: Stage,
}

/// Ordered answer to one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RankList {
    query_id: String,
    entries: Vec<RankEntry>,
}

impl RankList {
    /// Assembles a rank list, rejecting duplicate image ids.
    pub fn new(query_id: impl Into<String>, entries: Vec<RankEntry>) -> Result<Self, RetrievalError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(RetrievalError::DuplicateImageId(e.image_id.clone()));
            }
        }
        Ok(Self {
            query_id: query_id.into(),
            entries,
        })
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn entries(&self) -> &[RankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Representation used for the re-ranking stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RerankRepresentation {
    /// Whole-vector binary fingerprints matched in Hamming space.
    BiSift,
    /// Per-cell binary fingerprints matched in Hamming space.
    PerCell,
    /// Raw float descriptors matched with Euclidean distance.
    RawFloat,
}

impl RerankRepresentation {
    pub fn as_str(&self) -> &'static str {
        match self {
            RerankRepresentation::BiSift => "bisift",
            RerankRepresentation::PerCell => "percell",
            RerankRepresentation::RawFloat => "raw",
        }
    }

    /// The distance kind this representation is matched with by default.
    pub fn default_kind(&self) -> DistanceKind {
        match self {
            RerankRepresentation::BiSift | RerankRepresentation::PerCell => {
                DistanceKind::HammingLookup
            }
            RerankRepresentation::RawFloat => DistanceKind::FloatL2,
        }
    }

    pub fn supports_kind(&self, kind: DistanceKind) -> bool {
        match self {
            RerankRepresentation::BiSift | RerankRepresentation::PerCell => kind.is_binary(),
            RerankRepresentation::RawFloat => kind == DistanceKind::FloatL2,
        }
    }
}

impl fmt::Display for RerankRepresentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RerankRepresentation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bisift" => Ok(RerankRepresentation::BiSift),
            "percell" => Ok(RerankRepresentation::PerCell),
            "raw" => Ok(RerankRepresentation::RawFloat),
            other => Err(format!(
                "unknown representation {other:?}; expected bisift, percell, or raw"
            )),
        }
    }
}

/// One indexed image: its BoVW histogram plus the features used for
/// re-ranking.
#[derive(Debug, Clone)]
pub struct IndexedImage {
    id: String,
    histogram: BovwHistogram,
    features: FeatureSet,
}

impl IndexedImage {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn histogram(&self) -> &BovwHistogram {
        &self.histogram
    }

    pub fn features(&self) -> &FeatureSet {
        &self.features
    }
}

/// The in-memory retrieval index. Immutable after construction; queries are
/// read-only and may run concurrently.
#[derive(Debug)]
pub struct Index {
    vocabulary: Vocabulary,
    representation: RerankRepresentation,
    images: Vec<IndexedImage>,
    by_id: HashMap<String, usize>,
}

impl Index {
    /// Builds the index: every image is quantized into a histogram and its
    /// descriptors converted to the re-ranking representation.
    pub fn build(
        vocabulary: Vocabulary,
        sets: Vec<DescriptorSet<FloatDescriptor>>,
        representation: RerankRepresentation,
    ) -> Result<Self, RetrievalError> {
        let mut by_id = HashMap::with_capacity(sets.len());
        for (i, set) in sets.iter().enumerate() {
            if by_id.insert(set.image_id().to_string(), i).is_some() {
                return Err(RetrievalError::DuplicateImageId(set.image_id().to_string()));
            }
        }
        let images: Vec<IndexedImage> = sets
            .into_par_iter()
            .map(|set| {
                let histogram = build_histogram(&set, &vocabulary);
                let features = features_for(&set, representation);
                IndexedImage {
                    id: set.image_id().to_string(),
                    histogram,
                    features,
                }
            })
            .collect();
        Ok(Self {
            vocabulary,
            representation,
            images,
            by_id,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn representation(&self) -> RerankRepresentation {
        self.representation
    }

    pub fn images(&self) -> &[IndexedImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Quantizes a query image against this index's vocabulary.
    pub fn query_histogram(&self, ds: &DescriptorSet<FloatDescriptor>) -> BovwHistogram {
        build_histogram(ds, &self.vocabulary)
    }

    /// Converts query descriptors to this index's re-ranking representation.
    pub fn query_features(&self, ds: &DescriptorSet<FloatDescriptor>) -> FeatureSet {
        features_for(ds, self.representation)
    }
}

fn features_for(
    ds: &DescriptorSet<FloatDescriptor>,
    representation: RerankRepresentation,
) -> FeatureSet {
    match representation {
        RerankRepresentation::RawFloat => FeatureSet::Float(ds.clone()),
        RerankRepresentation::BiSift => FeatureSet::Binary(DescriptorSet::new(
            ds.image_id(),
            ds.descriptors()
                .iter()
                .map(|d| binarize_bisift(d.components()))
                .collect(),
        )),
        RerankRepresentation::PerCell => FeatureSet::Binary(DescriptorSet::new(
            ds.image_id(),
            ds.descriptors()
                .iter()
                .map(|d| binarize_percell(d.components()))
                .collect(),
        )),
    }
}

fn histogram_distance(a: &BovwHistogram, b: &BovwHistogram) -> f64 {
    let mut sum = 0.0f64;
    for (&x, &y) in a.weights().iter().zip(b.weights().iter()) {
        let d = x - y;
        sum += d * d;
    }
    sum.sqrt()
}

/// Ranks every indexed image by Euclidean distance between the normalized
/// histograms, ascending, ties broken by image id.
pub fn first_stage_rank(
    query: &BovwHistogram,
    index: &Index,
) -> Result<RankList, RetrievalError> {
    if query.k() != index.vocabulary.k() {
        return Err(RetrievalError::VocabularyMismatch {
            expected: index.vocabulary.k(),
            actual: query.k(),
        });
    }
    let mut scored: Vec<(f64, &IndexedImage)> = index
        .images
        .iter()
        .map(|img| (histogram_distance(query, &img.histogram), img))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    let entries = scored
        .into_iter()
        .map(|(score, img)| RankEntry {
            image_id: img.id.clone(),
            score,
            stage: Stage::First,
        })
        .collect();
    RankList::new(query.image_id(), entries)
}

/// Re-ranks the top `min(top_x, len)` entries of `first` by image-to-image
/// matching against the query features. Within the head, ordering is by
/// match count descending, total match distance ascending, then original
/// first-stage rank; the tail keeps its original order and follows the head.
pub fn rerank_top_x(
    first: &RankList,
    query_features: &FeatureSet,
    index: &Index,
    top_x: usize,
    ratio: f64,
    kind: DistanceKind,
) -> Result<RankList, RetrievalError> {
    if top_x == 0 {
        return Err(RetrievalError::InvalidTopX);
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(RetrievalError::InvalidRatio(ratio));
    }
    if !index.representation.supports_kind(kind) {
        return Err(RetrievalError::IncompatibleKind {
            kind,
            representation: index.representation,
        });
    }
    let head_len = top_x.min(first.entries.len());
    let head = &first.entries[..head_len];

    let similarities: Vec<_> = head
        .par_iter()
        .map(|entry| {
            let img_pos = index
                .by_id
                .get(entry.image_id.as_str())
                .ok_or_else(|| RetrievalError::UnknownImageId(entry.image_id.clone()))?;
            let (similarity, _) = match_feature_sets(
                query_features,
                &index.images[*img_pos].features,
                kind,
                ratio,
            )?;
            Ok::<_, RetrievalError>(similarity)
        })
        .collect::<Result<_, _>>()?;

    let mut order: Vec<usize> = (0..head_len).collect();
    order.sort_by(|&a, &b| {
        similarities[b]
            .score()
            .cmp(&similarities[a].score())
            .then_with(|| a.cmp(&b))
    });

    let mut entries = Vec::with_capacity(first.entries.len());
    for pos in order {
        entries.push(RankEntry {
            image_id: head[pos].image_id.clone(),
            score: similarities[pos].match_count as f64,
            stage: Stage::Reranked,
        });
    }
    entries.extend(first.entries[head_len..].iter().cloned());
    RankList::new(first.query_id.clone(), entries)
}

/// Query-time parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryConfig {
    /// How many first-stage candidates are re-ranked.
    pub top_x: usize,
    /// Ratio threshold for the reliable-match test.
    pub ratio: f64,
    /// Distance kind used for re-ranking.
    pub kind: DistanceKind,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            top_x: 30,
            ratio: crate::matching::DEFAULT_RATIO,
            kind: DistanceKind::HammingLookup,
        }
    }
}

/// Runs the full two-stage query: histogram, first-stage rank, re-rank.
pub fn query(
    ds: &DescriptorSet<FloatDescriptor>,
    index: &Index,
    config: &QueryConfig,
) -> Result<RankList, RetrievalError> {
    let histogram = index.query_histogram(ds);
    let first = first_stage_rank(&histogram, index)?;
    if first.is_empty() {
        return Ok(first);
    }
    let features = index.query_features(ds);
    rerank_top_x(&first, &features, index, config.top_x, config.ratio, config.kind)
}

/// One index manifest row: where an image's descriptors live on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub image_id: String,
    pub file: String,
    pub offset: u64,
}

/// Writes the index manifest: one `image_id<TAB>file<TAB>offset` line per
/// image.
pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<(), RetrievalError> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        writeln!(w, "{}\t{}\t{}", row.image_id, row.file, row.offset)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, RetrievalError> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(image_id), Some(file), Some(offset), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(RetrievalError::ManifestParse {
                line: i + 1,
                reason: "expected 3 tab-separated fields".to_string(),
            });
        };
        let offset = offset.parse::<u64>().map_err(|e| RetrievalError::ManifestParse {
            line: i + 1,
            reason: format!("bad offset: {e}"),
        })?;
        rows.push(ManifestRow {
            image_id: image_id.to_string(),
            file: file.to_string(),
            offset,
        });
    }
    Ok(rows)
}

/// Writes rank lists as TSV: `query_id<TAB>rank<TAB>image_id<TAB>score<TAB>stage`,
/// ranks starting at 1 per query.
pub fn write_rank_lists(path: &Path, lists: &[RankList]) -> Result<(), RetrievalError> {
    let mut w = BufWriter::new(File::create(path)?);
    for list in lists {
        for (i, entry) in list.entries.iter().enumerate() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                list.query_id,
                i + 1,
                entry.image_id,
                entry.score,
                entry.stage
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a rank-list TSV. Rows for one query must be contiguous with ranks
/// counting up from 1; anything else is a parse error.
pub fn read_rank_lists(path: &Path) -> Result<Vec<RankList>, RetrievalError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lists: Vec<RankList> = Vec::new();
    let mut current: Option<(String, Vec<RankEntry>)> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let parse_err = |reason: String| RetrievalError::RankListParse { line: i + 1, reason };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(parse_err("expected 5 tab-separated fields".to_string()));
        }
        let rank: usize = fields[1].parse().map_err(|e| parse_err(format!("bad rank: {e}")))?;
        let score: f64 = fields[3].parse().map_err(|e| parse_err(format!("bad score: {e}")))?;
        let stage: Stage = fields[4].parse().map_err(parse_err)?;
        let entry = RankEntry {
            image_id: fields[2].to_string(),
            score,
            stage,
        };
        match current.as_mut() {
            Some((qid, entries)) if qid == fields[0] => {
                if rank != entries.len() + 1 {
                    return Err(parse_err(format!(
                        "rank {rank} out of order (expected {})",
                        entries.len() + 1
                    )));
                }
                entries.push(entry);
            }
            _ => {
                if rank != 1 {
                    return Err(parse_err(format!("new query must start at rank 1, got {rank}")));
                }
                if let Some((qid, entries)) = current.take() {
                    lists.push(RankList::new(qid, entries)?);
                }
                current = Some((fields[0].to_string(), vec![entry]));
            }
        }
    }
    if let Some((qid, entries)) = current.take() {
        lists.push(RankList::new(qid, entries)?);
    }
    Ok(lists)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocabulary::train_kmeans;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use tempfile::TempDir;

    fn random_descriptor(rng: &mut StdRng) -> FloatDescriptor {
        FloatDescriptor::from_components(std::array::from_fn(|_| rng.gen_range(0.0..256.0)))
    }

    fn toy_corpus(rng: &mut StdRng, images: usize, per: usize) -> Vec<DescriptorSet<FloatDescriptor>> {
        (0..images)
            .map(|i| {
                DescriptorSet::new(
                    format!("img{i:03}"),
                    (0..per).map(|_| random_descriptor(rng)).collect(),
                )
            })
            .collect()
    }

    fn toy_index(rng: &mut StdRng, images: usize, repr: RerankRepresentation) -> Index {
        let corpus = toy_corpus(rng, images, 30);
        let pool: Vec<FloatDescriptor> = corpus
            .iter()
            .flat_map(|s| s.descriptors().iter().cloned())
            .collect();
        let vocab = train_kmeans(&pool, 16, 15, 5).unwrap();
        Index::build(vocab, corpus, repr).unwrap()
    }

    #[test]
    fn identical_histogram_ranks_first_with_zero_distance() {
        let mut rng = StdRng::seed_from_u64(181);
        let index = toy_index(&mut rng, 10, RerankRepresentation::BiSift);
        let target = &index.images()[4];
        let first = first_stage_rank(target.histogram(), &index).unwrap();
        assert_eq!(first.entries()[0].image_id, "img004");
        assert_eq!(first.entries()[0].score, 0.0);
        assert_eq!(first.len(), 10);
    }

    #[test]
    fn single_image_index_yields_single_entry() {
        let mut rng = StdRng::seed_from_u64(191);
        let index = toy_index(&mut rng, 1, RerankRepresentation::BiSift);
        let first = first_stage_rank(index.images()[0].histogram(), &index).unwrap();
        assert_eq!(first.len(), 1);
    }

    #[test]
    fn first_stage_matches_exhaustive_sort_oracle() {
        let mut rng = StdRng::seed_from_u64(193);
        let index = toy_index(&mut rng, 50, RerankRepresentation::BiSift);
        let probe = DescriptorSet::new("probe", (0..25).map(|_| random_descriptor(&mut rng)).collect());
        let q = index.query_histogram(&probe);
        let first = first_stage_rank(&q, &index).unwrap();

        let mut oracle: Vec<(f64, String)> = index
            .images()
            .iter()
            .map(|img| (histogram_distance(&q, img.histogram()), img.id().to_string()))
            .collect();
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let got: Vec<(f64, String)> = first
            .entries()
            .iter()
            .map(|e| (e.score, e.image_id.clone()))
            .collect();
        let want: Vec<(f64, String)> = oracle;
        assert_eq!(got, want);
    }

    #[test]
    fn vocabulary_mismatch_is_an_error() {
        let mut rng = StdRng::seed_from_u64(197);
        let index = toy_index(&mut rng, 5, RerankRepresentation::BiSift);
        let probe = DescriptorSet::new("p", vec![random_descriptor(&mut rng)]);
        let foreign = {
            let pool: Vec<FloatDescriptor> = (0..40).map(|_| random_descriptor(&mut rng)).collect();
            let vocab = train_kmeans(&pool, 8, 10, 6).unwrap();
            build_histogram(&probe, &vocab)
        };
        assert!(matches!(
            first_stage_rank(&foreign, &index),
            Err(RetrievalError::VocabularyMismatch { expected: 16, actual: 8 })
        ));
    }

    #[test]
    fn duplicate_image_ids_are_rejected() {
        let mut rng = StdRng::seed_from_u64(199);
        let mut corpus = toy_corpus(&mut rng, 3, 10);
        corpus.push(DescriptorSet::new("img001", vec![random_descriptor(&mut rng)]));
        let pool: Vec<FloatDescriptor> = corpus
            .iter()
            .flat_map(|s| s.descriptors().iter().cloned())
            .collect();
        let vocab = train_kmeans(&pool, 4, 10, 7).unwrap();
        assert!(matches!(
            Index::build(vocab, corpus, RerankRepresentation::BiSift),
            Err(RetrievalError::DuplicateImageId(id)) if id == "img001"
        ));
    }

    #[test]
    fn rerank_with_x_of_one_only_tags_the_top_entry() {
        let mut rng = StdRng::seed_from_u64(211);
        let index = toy_index(&mut rng, 8, RerankRepresentation::BiSift);
        let probe = DescriptorSet::new("p", (0..20).map(|_| random_descriptor(&mut rng)).collect());
        let first = first_stage_rank(&index.query_histogram(&probe), &index).unwrap();
        let features = index.query_features(&probe);
        let reranked =
            rerank_top_x(&first, &features, &index, 1, 0.8, DistanceKind::HammingLookup).unwrap();
        assert_eq!(reranked.entries()[0].image_id, first.entries()[0].image_id);
        assert_eq!(reranked.entries()[0].stage, Stage::Reranked);
        for (a, b) in reranked.entries()[1..].iter().zip(first.entries()[1..].iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn exact_duplicate_is_promoted_to_rank_one() {
        let mut rng = StdRng::seed_from_u64(223);
        let mut corpus = toy_corpus(&mut rng, 12, 25);
        // Plant an exact duplicate of the probe in the corpus.
        let probe = DescriptorSet::new("probe", (0..25).map(|_| random_descriptor(&mut rng)).collect());
        corpus.push(DescriptorSet::new("dupe", probe.descriptors().to_vec()));
        let pool: Vec<FloatDescriptor> = corpus
            .iter()
            .flat_map(|s| s.descriptors().iter().cloned())
            .collect();
        let vocab = train_kmeans(&pool, 16, 15, 8).unwrap();
        let index = Index::build(vocab, corpus, RerankRepresentation::BiSift).unwrap();
        let list = query(&probe, &index, &QueryConfig::default()).unwrap();
        assert_eq!(list.entries()[0].image_id, "dupe");
    }

    #[test]
    fn rerank_is_a_permutation_preserving_the_tail() {
        let mut rng = StdRng::seed_from_u64(227);
        let index = toy_index(&mut rng, 20, RerankRepresentation::BiSift);
        let probe = DescriptorSet::new("p", (0..20).map(|_| random_descriptor(&mut rng)).collect());
        let first = first_stage_rank(&index.query_histogram(&probe), &index).unwrap();
        let features = index.query_features(&probe);
        let x = 7;
        let reranked =
            rerank_top_x(&first, &features, &index, x, 0.8, DistanceKind::HammingLookup).unwrap();

        let mut first_ids: Vec<&str> = first.entries().iter().map(|e| e.image_id.as_str()).collect();
        let mut rerank_ids: Vec<&str> =
            reranked.entries().iter().map(|e| e.image_id.as_str()).collect();
        first_ids.sort_unstable();
        rerank_ids.sort_unstable();
        assert_eq!(first_ids, rerank_ids);

        for (a, b) in reranked.entries()[x..].iter().zip(first.entries()[x..].iter()) {
            assert_eq!(a, b);
            assert_eq!(a.stage, Stage::First);
        }
        let head_ids: HashSet<&str> = reranked.entries()[..x]
            .iter()
            .map(|e| e.image_id.as_str())
            .collect();
        let first_head: HashSet<&str> = first.entries()[..x]
            .iter()
            .map(|e| e.image_id.as_str())
            .collect();
        assert_eq!(head_ids, first_head);
    }

    #[test]
    fn querying_an_indexed_image_returns_it_first() {
        let mut rng = StdRng::seed_from_u64(229);
        let corpus = toy_corpus(&mut rng, 15, 25);
        let target = corpus[9].clone();
        let pool: Vec<FloatDescriptor> = corpus
            .iter()
            .flat_map(|s| s.descriptors().iter().cloned())
            .collect();
        let vocab = train_kmeans(&pool, 16, 15, 9).unwrap();
        let index = Index::build(vocab, corpus, RerankRepresentation::BiSift).unwrap();
        let list = query(&target, &index, &QueryConfig::default()).unwrap();
        assert_eq!(list.entries()[0].image_id, "img009");
        assert_eq!(list.query_id(), "img009");
    }

    #[test]
    fn empty_query_preserves_first_stage_order_through_rerank() {
        let mut rng = StdRng::seed_from_u64(233);
        let index = toy_index(&mut rng, 10, RerankRepresentation::BiSift);
        let empty = DescriptorSet::new("empty", vec![]);
        let first = first_stage_rank(&index.query_histogram(&empty), &index).unwrap();
        let list = query(&empty, &index, &QueryConfig::default()).unwrap();
        // Zero matches everywhere: similarity ties resolve to first-stage order.
        let first_ids: Vec<&str> = first.entries().iter().map(|e| e.image_id.as_str()).collect();
        let got_ids: Vec<&str> = list.entries().iter().map(|e| e.image_id.as_str()).collect();
        assert_eq!(first_ids, got_ids);
    }

    #[test]
    fn query_is_deterministic() {
        let mut rng = StdRng::seed_from_u64(239);
        let index = toy_index(&mut rng, 25, RerankRepresentation::BiSift);
        let probe = DescriptorSet::new("p", (0..30).map(|_| random_descriptor(&mut rng)).collect());
        let a = query(&probe, &index, &QueryConfig::default()).unwrap();
        let b = query(&probe, &index, &QueryConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn incompatible_kind_is_rejected() {
        let mut rng = StdRng::seed_from_u64(241);
        let index = toy_index(&mut rng, 5, RerankRepresentation::BiSift);
        let probe = DescriptorSet::new("p", (0..5).map(|_| random_descriptor(&mut rng)).collect());
        let first = first_stage_rank(&index.query_histogram(&probe), &index).unwrap();
        let features = index.query_features(&probe);
        assert!(matches!(
            rerank_top_x(&first, &features, &index, 3, 0.8, DistanceKind::FloatL2),
            Err(RetrievalError::IncompatibleKind { .. })
        ));
        assert!(matches!(
            rerank_top_x(&first, &features, &index, 0, 0.8, DistanceKind::HammingLookup),
            Err(RetrievalError::InvalidTopX)
        ));
        assert!(matches!(
            rerank_top_x(&first, &features, &index, 3, 1.5, DistanceKind::HammingLookup),
            Err(RetrievalError::InvalidRatio(_))
        ));
    }

    #[test]
    fn planted_copies_surface_in_the_top_five_after_rerank() {
        use crate::matching::match_feature_sets;
        use crate::synthbench::{gen_planted_corpus, CorpusConfig};

        let config = CorpusConfig {
            base_images: 20,
            copies_per_query: 3,
            queries: 1,
            keypoints_per_image: 60,
            ..CorpusConfig::default()
        };
        let corpus = gen_planted_corpus(&config).unwrap();
        let pool: Vec<FloatDescriptor> = corpus
            .images
            .iter()
            .flat_map(|s| s.descriptors().iter().cloned())
            .collect();
        let vocab = train_kmeans(&pool, 64, 20, 11).unwrap();
        let index =
            Index::build(vocab, corpus.images.clone(), RerankRepresentation::BiSift).unwrap();
        let q = &corpus.queries[0];
        let list = query(q, &index, &QueryConfig::default()).unwrap();
        let top5: Vec<&str> = list.entries()[..5].iter().map(|e| e.image_id.as_str()).collect();
        for copy in ["img0000_copy00", "img0000_copy01", "img0000_copy02"] {
            assert!(top5.contains(&copy), "{copy} missing from top 5: {top5:?}");
        }
        // Re-rank scores agree with exhaustive image-to-image matching.
        let features = index.query_features(q);
        for entry in &list.entries()[..5] {
            let img = index
                .images()
                .iter()
                .find(|i| i.id() == entry.image_id)
                .unwrap();
            let (sim, _) = match_feature_sets(
                &features,
                img.features(),
                DistanceKind::HammingLookup,
                0.8,
            )
            .unwrap();
            assert_eq!(entry.score, sim.match_count as f64);
        }
    }

    #[test]
    fn full_width_rerank_orders_by_match_count_alone() {
        let mut rng = StdRng::seed_from_u64(251);
        let index = toy_index(&mut rng, 12, RerankRepresentation::BiSift);
        let probe = DescriptorSet::new("p", (0..25).map(|_| random_descriptor(&mut rng)).collect());
        let first = first_stage_rank(&index.query_histogram(&probe), &index).unwrap();
        let features = index.query_features(&probe);
        let reranked = rerank_top_x(
            &first,
            &features,
            &index,
            index.len(),
            0.8,
            DistanceKind::HammingLookup,
        )
        .unwrap();
        let scores: Vec<f64> = reranked.entries().iter().map(|e| e.score).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]), "counts not descending: {scores:?}");
        assert!(reranked.entries().iter().all(|e| e.stage == Stage::Reranked));
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("index.manifest");
        let rows = vec![
            ManifestRow { image_id: "a".into(), file: "d.bsft".into(), offset: 12 },
            ManifestRow { image_id: "b".into(), file: "d.bsft".into(), offset: 540 },
        ];
        write_manifest(&path, &rows).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), rows);

        std::fs::write(&path, "a\td.bsft\n").unwrap();
        assert!(matches!(
            read_manifest(&path),
            Err(RetrievalError::ManifestParse { line: 1, .. })
        ));
        std::fs::write(&path, "a\td.bsft\tnot-a-number\n").unwrap();
        assert!(matches!(
            read_manifest(&path),
            Err(RetrievalError::ManifestParse { line: 1, .. })
        ));
    }

    #[test]
    fn rank_list_tsv_round_trip_and_errors() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("ranks.tsv");
        let lists = vec![
            RankList::new(
                "q1",
                vec![
                    RankEntry { image_id: "a".into(), score: 3.0, stage: Stage::Reranked },
                    RankEntry { image_id: "b".into(), score: 0.125, stage: Stage::First },
                ],
            )
            .unwrap(),
            RankList::new(
                "q2",
                vec![RankEntry { image_id: "c".into(), score: 0.4375, stage: Stage::First }],
            )
            .unwrap(),
        ];
        write_rank_lists(&path, &lists).unwrap();
        let loaded = read_rank_lists(&path).unwrap();
        assert_eq!(loaded, lists);
        // Writing the parsed lists reproduces the bytes.
        let path2 = dir.path().join("ranks2.tsv");
        write_rank_lists(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());

        std::fs::write(&path, "q1\t2\ta\t0.5\tfirst\n").unwrap();
        assert!(matches!(
            read_rank_lists(&path),
            Err(RetrievalError::RankListParse { line: 1, .. })
        ));
        std::fs::write(&path, "q1\t1\ta\t0.5\tmystery\n").unwrap();
        assert!(matches!(
            read_rank_lists(&path),
            Err(RetrievalError::RankListParse { line: 1, .. })
        ));
        std::fs::write(&path, "q1\t1\ta\t0.5\tfirst\nq1\t2\ta\t0.6\tfirst\n").unwrap();
        assert!(matches!(
            read_rank_lists(&path),
            Err(RetrievalError::DuplicateImageId(_))
        ));
    }
}
