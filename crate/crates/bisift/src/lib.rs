//! Binary-quantized SIFT fingerprints (BiSIFT) for image copy retrieval.
//!
//! The pipeline has two stages: a bag-of-visual-words (BoVW) first stage that
//! ranks the whole database by histogram distance, and a re-ranking stage that
//! re-scores the top candidates by direct image-to-image keypoint matching.
//! Descriptors can be matched as raw floats, as 8-bit integers, or as 128-bit
//! binary fingerprints compared in Hamming space, which is where the speed
//! comes from.
//!
//! Modules:
//! - [`descriptor`]: descriptor types and SIFT-style computation from patches
//! - [`binarize`]: binary fingerprint quantization (whole-vector and per-cell)
//! - [`distance`]: L2 and Hamming distance kernels plus nearest-neighbor scans
//! - [`matching`]: ratio-test keypoint matching between two images
//! - [`vocabulary`]: flat k-means visual vocabularies and BoVW histograms
//! - [`retrieval`]: the index, first-stage ranking, and top-X re-ranking
//! - [`eval`]: precision/recall/mAP evaluation against ground truth
//! - [`synthbench`]: synthetic data generation and the timing harness
//! - [`io`]: binary file formats for descriptors and vocabularies

pub mod binarize;
pub mod descriptor;
pub mod distance;
pub mod eval;
pub mod io;
pub mod matching;
pub mod retrieval;
pub mod synthbench;
pub mod vocabulary;

pub use binarize::{BinarizationScheme, BinaryFingerprint, FINGERPRINT_BITS};
pub use descriptor::{
    DescriptorSet, FloatDescriptor, IntDescriptor, Patch, DESCRIPTOR_DIM, PATCH_SIZE,
};
pub use distance::{DistanceKind, NearestNeighbor};
pub use matching::{FeatureSet, ImageSimilarity, MatchPair};
pub use retrieval::{Index, QueryConfig, RankList, RerankRepresentation, Stage};
pub use vocabulary::{BovwHistogram, Vocabulary};
