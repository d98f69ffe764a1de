//! Visual vocabularies: flat k-means training, descriptor quantization, and
//! bag-of-visual-words histograms.
//!
//! Training is Lloyd's algorithm with seeded k-means++ initialization and is
//! fully deterministic: the assignment step may run in parallel but is pure
//! per point, and centroid updates accumulate in ascending descriptor index
//! order, so the result does not depend on the worker count.

use rayon::prelude::*;
use thiserror::Error;

use crate::descriptor::{DescriptorSet, FloatDescriptor, DESCRIPTOR_DIM};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabularyError {
    #[error("vocabulary size must be at least 1")]
    InvalidK,
    #[error("insufficient training data: {available} descriptors for k = {needed}")]
    InsufficientData { available: usize, needed: usize },
    #[error("training sample has fewer distinct descriptors than k")]
    InsufficientDistinctData,
}

/// K centroids in descriptor space defining the quantizer, plus training
/// metadata. Immutable after training.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    centroids: Vec<FloatDescriptor>,
    seed: u64,
    iterations: u32,
    final_inertia: Option<f64>,
}

impl Vocabulary {
    /// Reassembles a vocabulary from persisted parts. The inertia is not
    /// stored in the file format, so loaded vocabularies carry `None`.
    pub(crate) fn from_parts(
        centroids: Vec<FloatDescriptor>,
        seed: u64,
        iterations: u32,
        final_inertia: Option<f64>,
    ) -> Self {
        Self {
            centroids,
            seed,
            iterations,
            final_inertia,
        }
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[FloatDescriptor] {
        &self.centroids
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Lloyd iterations actually run.
    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    /// Sum of squared distances to assigned centroids at convergence.
    /// `None` for vocabularies loaded from a file.
    pub fn final_inertia(&self) -> Option<f64> {
        self.final_inertia
    }
}

/// Per-image visual-word frequency vector, L2-normalized. Empty images get
/// the all-zero histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct BovwHistogram {
    image_id: String,
    weights: Vec<f64>,
    raw_count: usize,
}

impl BovwHistogram {
    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Total keypoints quantized into this histogram.
    pub fn raw_count(&self) -> usize {
        self.raw_count
    }
}

#[inline]
fn squared_distance(a: &FloatDescriptor, b: &FloatDescriptor) -> f64 {
    let mut sum = 0.0f64;
    for (&x, &y) in a.components().iter().zip(b.components().iter()) {
        let d = x as f64 - y as f64;
        sum += d * d;
    }
    sum
}

/// Index of the nearest centroid, ties to the lowest index.
#[inline]
fn nearest_centroid(d: &FloatDescriptor, centroids: &[FloatDescriptor]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d2 = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d2 = squared_distance(d, c);
        if d2 < best_d2 {
            best_d2 = d2;
            best = i;
        }
    }
    (best, best_d2)
}

fn assign_all(sample: &[FloatDescriptor], centroids: &[FloatDescriptor]) -> Vec<(u32, f64)> {
    sample
        .par_iter()
        .map(|d| {
            let (i, d2) = nearest_centroid(d, centroids);
            (i as u32, d2)
        })
        .collect()
}

/// Compensated summation; the inertia sequence comparisons need more
/// accuracy than a plain running sum over large samples provides.
fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

fn kmeans_plus_plus_init(
    sample: &[FloatDescriptor],
    k: usize,
    rng: &mut impl rand::Rng,
) -> Result<Vec<FloatDescriptor>, VocabularyError> {
    let mut centroids: Vec<FloatDescriptor> = Vec::with_capacity(k);
    let first = rng.gen_range(0..sample.len());
    centroids.push(sample[first].clone());
    let mut d2: Vec<f64> = sample
        .iter()
        .map(|d| squared_distance(d, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = kahan_sum(d2.iter().copied());
        if total <= 0.0 {
            return Err(VocabularyError::InsufficientDistinctData);
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0f64;
        let mut chosen = None;
        for (i, &w) in d2.iter().enumerate() {
            acc += w;
            if acc > target {
                chosen = Some(i);
                break;
            }
        }
        // Rounding can leave the cumulative walk just short of the target;
        // fall back to the last point with positive weight.
        let chosen = match chosen {
            Some(i) => i,
            None => d2
                .iter()
                .rposition(|&w| w > 0.0)
                .ok_or(VocabularyError::InsufficientDistinctData)?,
        };
        let new_centroid = sample[chosen].clone();
        for (w, d) in d2.iter_mut().zip(sample.iter()) {
            let nd = squared_distance(d, &new_centroid);
            if nd < *w {
                *w = nd;
            }
        }
        centroids.push(new_centroid);
    }
    Ok(centroids)
}

/// Trains a flat k-means vocabulary. Stops when no assignment changes or
/// after `max_iters` Lloyd iterations, whichever comes first.
pub fn train_kmeans(
    sample: &[FloatDescriptor],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<Vocabulary, VocabularyError> {
    train_kmeans_with_log(sample, k, max_iters, seed).map(|(v, _)| v)
}

/// Like [`train_kmeans`], additionally returning the inertia measured after
/// each assignment step. The sequence is non-increasing.
pub fn train_kmeans_with_log(
    sample: &[FloatDescriptor],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<(Vocabulary, Vec<f64>), VocabularyError> {
    use rand::SeedableRng;

    if k == 0 {
        return Err(VocabularyError::InvalidK);
    }
    if sample.len() < k {
        return Err(VocabularyError::InsufficientData {
            available: sample.len(),
            needed: k,
        });
    }
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus_init(sample, k, &mut rng)?;

    let mut inertia_log = Vec::new();
    let mut previous: Option<Vec<(u32, f64)>> = None;
    let mut iterations = 0u32;
    let mut final_inertia = 0.0f64;

    for _ in 0..max_iters.max(1) {
        let assignment = assign_all(sample, &centroids);
        iterations += 1;
        final_inertia = kahan_sum(assignment.iter().map(|&(_, d2)| d2));
        inertia_log.push(final_inertia);

        let converged = previous
            .as_ref()
            .map(|prev| {
                prev.iter()
                    .zip(assignment.iter())
                    .all(|(a, b)| a.0 == b.0)
            })
            .unwrap_or(false);
        if converged {
            break;
        }

        // Centroid update: sums accumulate in ascending descriptor index
        // order so the result is independent of the assignment parallelism.
        let mut sums = vec![[0.0f64; DESCRIPTOR_DIM]; k];
        let mut counts = vec![0usize; k];
        for (d, &(cluster, _)) in sample.iter().zip(assignment.iter()) {
            let sum = &mut sums[cluster as usize];
            for (s, &c) in sum.iter_mut().zip(d.components().iter()) {
                *s += c as f64;
            }
            counts[cluster as usize] += 1;
        }
        for (i, (sum, &count)) in sums.iter().zip(counts.iter()).enumerate() {
            if count == 0 {
                continue;
            }
            let mut components = [0.0f32; DESCRIPTOR_DIM];
            for (out, &s) in components.iter_mut().zip(sum.iter()) {
                *out = (s / count as f64) as f32;
            }
            centroids[i] = FloatDescriptor::from_components(components);
        }

        // Empty-cluster repair: re-seed each empty cluster with the point
        // currently farthest from its assigned centroid.
        let empty: Vec<usize> = counts
            .iter()
            .enumerate()
            .filter(|&(_, &c)| c == 0)
            .map(|(i, _)| i)
            .collect();
        if !empty.is_empty() {
            let mut taken = vec![false; sample.len()];
            for cluster in empty {
                let mut farthest = None;
                let mut farthest_d2 = 0.0f64;
                for (i, &(_, d2)) in assignment.iter().enumerate() {
                    if !taken[i] && d2 > farthest_d2 {
                        farthest_d2 = d2;
                        farthest = Some(i);
                    }
                }
                let farthest = farthest.ok_or(VocabularyError::InsufficientDistinctData)?;
                taken[farthest] = true;
                centroids[cluster] = sample[farthest].clone();
            }
        }

        previous = Some(assignment);
    }

    debug_assert!(
        {
            let mut seen: Vec<&[f32; DESCRIPTOR_DIM]> =
                centroids.iter().map(|c| c.components()).collect();
            seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
            seen.windows(2).all(|w| w[0] != w[1])
        },
        "centroids must be distinct"
    );

    Ok((
        Vocabulary {
            centroids,
            seed,
            iterations,
            final_inertia: Some(final_inertia),
        },
        inertia_log,
    ))
}

/// Quantizes a descriptor to its visual word. Word ids are 1-based, in
/// `[1, K]`; ties resolve to the lowest word id.
pub fn quantize(d: &FloatDescriptor, vocabulary: &Vocabulary) -> u32 {
    let (index, _) = nearest_centroid(d, vocabulary.centroids());
    index as u32 + 1
}

/// Visual-word occurrence counts for one image, indexed by `word_id - 1`.
pub fn count_words(ds: &DescriptorSet<FloatDescriptor>, vocabulary: &Vocabulary) -> Vec<u64> {
    let words: Vec<u32> = ds
        .descriptors()
        .par_iter()
        .map(|d| quantize(d, vocabulary))
        .collect();
    let mut counts = vec![0u64; vocabulary.k()];
    for w in words {
        counts[(w - 1) as usize] += 1;
    }
    counts
}

/// Builds the L2-normalized visual-word histogram for one image.
pub fn build_histogram(
    ds: &DescriptorSet<FloatDescriptor>,
    vocabulary: &Vocabulary,
) -> BovwHistogram {
    let counts = count_words(ds, vocabulary);
    let raw_count = ds.count();
    let norm = (counts.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>()).sqrt();
    let weights = if norm == 0.0 {
        vec![0.0; vocabulary.k()]
    } else {
        counts.iter().map(|&c| c as f64 / norm).collect()
    };
    BovwHistogram {
        image_id: ds.image_id().to_string(),
        weights,
        raw_count,
    }
}
