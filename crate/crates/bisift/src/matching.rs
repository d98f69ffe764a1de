//! Image-to-image keypoint matching.
//!
//! For every query keypoint the nearest and second-nearest reference
//! keypoints are found; the pair is accepted as a reliable match only when
//! the nearest distance is strictly below the second-nearest distance times
//! the ratio threshold. Matching is directional (query to reference) and
//! many-to-one: two query points may match the same reference point.

use std::cmp::Ordering;

use thiserror::Error;

use crate::binarize::BinaryFingerprint;
use crate::descriptor::{DescriptorSet, FloatDescriptor, IntDescriptor};
use crate::distance::{
    euclidean, euclidean_int, hamming_lookup, hamming_naive, nearest_neighbor_by, DistanceKind,
};

/// Default ratio threshold for the reliable-match test.
pub const DEFAULT_RATIO: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("representation mismatch: cannot match {query} features against {reference}")]
    RepresentationMismatch {
        query: &'static str,
        reference: &'static str,
    },
    #[error("distance kind {kind} does not apply to {representation} features")]
    KindMismatch {
        kind: DistanceKind,
        representation: &'static str,
    },
    #[error("scheme mismatch between query and reference fingerprints")]
    SchemeMismatch,
}

/// One accepted keypoint correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub query_index: usize,
    pub ref_index: usize,
    pub dist: f64,
    pub second_dist: f64,
}

/// Aggregate similarity between two images: how many keypoints matched and
/// the sum of the accepted match distances.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImageSimilarity {
    pub match_count: usize,
    pub total_dist: f64,
}

impl ImageSimilarity {
    /// The orderable score: match count dominates, smaller total distance
    /// breaks ties. Greater scores are better.
    pub fn score(&self) -> SimilarityScore {
        SimilarityScore {
            match_count: self.match_count,
            total_dist: self.total_dist,
        }
    }
}

/// Ordered image-pair score. `a > b` means image `a` is the better match.
#[derive(Debug, Clone, Copy)]
pub struct SimilarityScore {
    pub match_count: usize,
    pub total_dist: f64,
}

impl PartialEq for SimilarityScore {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SimilarityScore {}

impl PartialOrd for SimilarityScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimilarityScore {
    fn cmp(&self, other: &Self) -> Ordering {
        self.match_count
            .cmp(&other.match_count)
            .then_with(|| other.total_dist.total_cmp(&self.total_dist))
    }
}

/// Matches every query keypoint against the reference set and keeps the
/// pairs passing the ratio test: `dist < second_dist * ratio`.
///
/// An empty query or reference set yields zero matches; it is not an error.
/// With a single reference keypoint the second distance is infinite and any
/// finite nearest distance is accepted. Ties in the nearest-neighbor scan
/// resolve to the lowest reference index, so results are deterministic.
pub fn match_images<T>(
    query: &[T],
    reference: &[T],
    mut dist: impl FnMut(&T, &T) -> f64,
    ratio: f64,
) -> (ImageSimilarity, Vec<MatchPair>) {
    debug_assert!(ratio > 0.0 && ratio <= 1.0);
    let mut pairs = Vec::new();
    if !reference.is_empty() {
        for (query_index, q) in query.iter().enumerate() {
            let nn = nearest_neighbor_by(q, reference, &mut dist)
                .expect("reference checked non-empty");
            if nn.distance < nn.second_distance * ratio {
                pairs.push(MatchPair {
                    query_index,
                    ref_index: nn.index,
                    dist: nn.distance,
                    second_dist: nn.second_distance,
                });
            }
        }
    }
    let total_dist = pairs.iter().map(|p| p.dist).sum();
    (
        ImageSimilarity {
            match_count: pairs.len(),
            total_dist,
        },
        pairs,
    )
}

/// A per-image feature collection in one of the three representations the
/// pipeline can match on.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSet {
    Float(DescriptorSet<FloatDescriptor>),
    Int(DescriptorSet<IntDescriptor>),
    Binary(DescriptorSet<BinaryFingerprint>),
}

impl FeatureSet {
    pub fn image_id(&self) -> &str {
        match self {
            FeatureSet::Float(s) => s.image_id(),
            FeatureSet::Int(s) => s.image_id(),
            FeatureSet::Binary(s) => s.image_id(),
        }
    }

    pub fn count(&self) -> usize {
        match self {
            FeatureSet::Float(s) => s.count(),
            FeatureSet::Int(s) => s.count(),
            FeatureSet::Binary(s) => s.count(),
        }
    }

    pub fn representation_name(&self) -> &'static str {
        match self {
            FeatureSet::Float(_) => "float",
            FeatureSet::Int(_) => "int",
            FeatureSet::Binary(_) => "binary",
        }
    }
}

/// Matches two feature sets that share a representation, dispatching to the
/// distance kernel selected by `kind`.
pub fn match_feature_sets(
    query: &FeatureSet,
    reference: &FeatureSet,
    kind: DistanceKind,
    ratio: f64,
) -> Result<(ImageSimilarity, Vec<MatchPair>), MatchError> {
    match (query, reference) {
        (FeatureSet::Float(q), FeatureSet::Float(r)) => {
            if kind != DistanceKind::FloatL2 {
                return Err(MatchError::KindMismatch {
                    kind,
                    representation: "float",
                });
            }
            Ok(match_images(q.descriptors(), r.descriptors(), euclidean, ratio))
        }
        (FeatureSet::Int(q), FeatureSet::Int(r)) => {
            if kind != DistanceKind::IntL2 {
                return Err(MatchError::KindMismatch {
                    kind,
                    representation: "int",
                });
            }
            Ok(match_images(q.descriptors(), r.descriptors(), euclidean_int, ratio))
        }
        (FeatureSet::Binary(q), FeatureSet::Binary(r)) => {
            if !kind.is_binary() {
                return Err(MatchError::KindMismatch {
                    kind,
                    representation: "binary",
                });
            }
            if let (Some(a), Some(b)) = (q.descriptors().first(), r.descriptors().first()) {
                if a.scheme() != b.scheme() {
                    return Err(MatchError::SchemeMismatch);
                }
            }
            let dist = move |a: &BinaryFingerprint, b: &BinaryFingerprint| -> f64 {
                let d = if kind == DistanceKind::HammingLookup {
                    hamming_lookup(a, b)
                } else {
                    hamming_naive(a, b)
                };
                d.expect("scheme homogeneity checked") as f64
            };
            Ok(match_images(q.descriptors(), r.descriptors(), dist, ratio))
        }
        (q, r) => Err(MatchError::RepresentationMismatch {
            query: q.representation_name(),
            reference: r.representation_name(),
        }),
    }
}
