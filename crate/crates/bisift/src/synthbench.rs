//! Synthetic data generation and the distance-computation timing harness,
//! plus a planted-near-duplicate corpus generator for desk-scale retrieval
//! experiments.
//!
//! The timing harness measures wall time of exhaustive nearest-neighbor
//! scans for each distance strategy over a ladder of database sizes. The
//! benchmarked loops run on a single worker by contract, use a monotonic
//! clock, take the median of repeated runs, and exclude a warm-up pass.
//! Correctness is audited inline: the two Hamming kernels must return the
//! same neighbor index, and the integer and float Euclidean paths must agree
//! exactly (float images of integers are exact).

use std::path::Path;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use rayon::prelude::*;
use thiserror::Error;

use crate::binarize::{binarize_bisift, BinaryFingerprint};
use crate::descriptor::{DescriptorSet, FloatDescriptor, IntDescriptor, DESCRIPTOR_DIM};
use crate::distance::{
    nearest_neighbor_float, nearest_neighbor_hamming, nearest_neighbor_int, DistanceError,
    DistanceKind,
};
use crate::eval::{EvalError, GroundTruth};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("database size ladder must be non-empty and strictly increasing")]
    InvalidSizes,
    #[error("query count must be at least 1")]
    NoQueries,
    #[error("repetition count must be at least 1")]
    NoReps,
    #[error("no distance kinds selected")]
    NoKinds,
    #[error("corpus configuration invalid: {0}")]
    InvalidCorpusConfig(String),
    #[error(
        "inline audit failed: {left} and {right} disagree on query {query} at db size {db_size}"
    )]
    AuditFailure {
        left: DistanceKind,
        right: DistanceKind,
        db_size: usize,
        query: usize,
    },
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// SplitMix64-style stream derivation so per-image generation can run in
/// parallel while staying deterministic in the run seed.
pub(crate) fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gaussian(rng: &mut StdRng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// One batch of synthetic descriptors in all three representations: uniform
/// random bytes, their exact float images, and their whole-vector binary
/// fingerprints.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDescriptors {
    pub int: Vec<IntDescriptor>,
    pub float: Vec<FloatDescriptor>,
    pub binary: Vec<BinaryFingerprint>,
}

/// Generates `n` synthetic descriptors, deterministic in the seed.
pub fn gen_synth_descriptors(n: usize, seed: u64) -> SynthDescriptors {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut int = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = [0u8; DESCRIPTOR_DIM];
        rng.fill_bytes(&mut row);
        int.push(IntDescriptor::from_components(row));
    }
    let float = int.iter().map(FloatDescriptor::from).collect();
    let binary = int.iter().map(|d| binarize_bisift(d.components())).collect();
    SynthDescriptors { int, float, binary }
}

/// Timing harness configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Database sizes, strictly increasing.
    pub sizes: Vec<usize>,
    /// Queries measured per cell.
    pub queries: usize,
    /// Repetitions per cell; the reported time is their median.
    pub reps: usize,
    pub seed: u64,
    /// Distance strategies to benchmark.
    pub kinds: Vec<DistanceKind>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sizes: vec![1_000, 10_000, 100_000, 500_000],
            queries: 32,
            reps: 5,
            seed: 42,
            kinds: DistanceKind::ALL.to_vec(),
        }
    }
}

/// One measured (kind, database size) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingCell {
    pub kind: DistanceKind,
    pub db_size: usize,
    pub queries: usize,
    /// Median across repetitions of the summed per-query wall time.
    pub total_seconds: f64,
    pub seconds_per_query: f64,
    /// Queries per second.
    pub throughput: f64,
}

/// All measured cells plus the execution note.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub cells: Vec<TimingCell>,
    /// The benchmarked loops are sequential regardless of process-level
    /// worker settings.
    pub environment_note: &'static str,
}

impl TimingReport {
    pub fn cell(&self, kind: DistanceKind, db_size: usize) -> Option<&TimingCell> {
        self.cells
            .iter()
            .find(|c| c.kind == kind && c.db_size == db_size)
    }

    /// Per-query time ratio `numerator / denominator` at one database size.
    pub fn gain(
        &self,
        numerator: DistanceKind,
        denominator: DistanceKind,
        db_size: usize,
    ) -> Option<f64> {
        let n = self.cell(numerator, db_size)?;
        let d = self.cell(denominator, db_size)?;
        Some(n.seconds_per_query / d.seconds_per_query)
    }

    /// Writes `kind<TAB>db_size<TAB>seconds_per_query` rows.
    pub fn write_tsv(&self, path: &Path) -> Result<(), SynthError> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for cell in &self.cells {
            writeln!(w, "{}\t{}\t{}", cell.kind, cell.db_size, cell.seconds_per_query)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the gain curves of every benchmarked kind against the lookup
    /// kernel: `numerator<TAB>denominator<TAB>db_size<TAB>gain` rows.
    pub fn write_gains_tsv(&self, path: &Path) -> Result<(), SynthError> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let denominator = DistanceKind::HammingLookup;
        let mut sizes: Vec<usize> = self.cells.iter().map(|c| c.db_size).collect();
        sizes.sort_unstable();
        sizes.dedup();
        for kind in DistanceKind::ALL {
            if kind == denominator {
                continue;
            }
            for &size in &sizes {
                if let Some(gain) = self.gain(kind, denominator, size) {
                    writeln!(w, "{kind}\t{denominator}\t{size}\t{gain}")?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs one timed pass: per-query wall times for all queries against one
/// database slice, plus the neighbor indices for the inline audit.
fn timed_pass<T, F>(queries: &[T], db: &[T], mut nn: F) -> Result<(f64, Vec<usize>), SynthError>
where
    F: FnMut(&T, &[T]) -> Result<crate::distance::NearestNeighbor, DistanceError>,
{
    let mut indices = Vec::with_capacity(queries.len());
    let mut total = 0.0f64;
    for q in queries {
        let start = Instant::now();
        let result = nn(q, db)?;
        total += start.elapsed().as_secs_f64();
        indices.push(result.index);
    }
    Ok((total, indices))
}

/// Measures nearest-neighbor wall time for every configured kind and
/// database size. Single-worker by construction; results include the median
/// of `reps` repetitions after one unmeasured warm-up pass.
pub fn run_timing(config: &SynthConfig) -> Result<TimingReport, SynthError> {
    if config.sizes.is_empty() || config.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SynthError::InvalidSizes);
    }
    if config.queries == 0 {
        return Err(SynthError::NoQueries);
    }
    if config.reps == 0 {
        return Err(SynthError::NoReps);
    }
    if config.kinds.is_empty() {
        return Err(SynthError::NoKinds);
    }

    let max_size = *config.sizes.last().unwrap();
    let db = gen_synth_descriptors(max_size, derive_seed(config.seed, 1));
    let queries = gen_synth_descriptors(config.queries, derive_seed(config.seed, 2));

    let mut cells = Vec::new();
    let mut audit: Vec<(DistanceKind, usize, Vec<usize>)> = Vec::new();

    for &size in &config.sizes {
        for &kind in &config.kinds {
            let run = || -> Result<(f64, Vec<usize>), SynthError> {
                match kind {
                    DistanceKind::FloatL2 => timed_pass(&queries.float, &db.float[..size], |q, d| {
                        nearest_neighbor_float(q, d)
                    }),
                    DistanceKind::IntL2 => timed_pass(&queries.int, &db.int[..size], |q, d| {
                        nearest_neighbor_int(q, d)
                    }),
                    DistanceKind::HammingNaive | DistanceKind::HammingLookup => {
                        timed_pass(&queries.binary, &db.binary[..size], |q, d| {
                            nearest_neighbor_hamming(q, d, kind)
                        })
                    }
                }
            };
            // Warm-up pass: populates caches and the popcount table.
            let (_, indices) = run()?;
            let mut totals = Vec::with_capacity(config.reps);
            for _ in 0..config.reps {
                let (total, rep_indices) = run()?;
                debug_assert_eq!(rep_indices, indices);
                totals.push(total);
            }
            let total_seconds = median(totals);
            cells.push(TimingCell {
                kind,
                db_size: size,
                queries: config.queries,
                total_seconds,
                seconds_per_query: total_seconds / config.queries as f64,
                throughput: config.queries as f64 / total_seconds,
            });
            audit.push((kind, size, indices));
        }
    }

    // Inline audit: kernels that must agree exactly, pairwise.
    let audited_pairs = [
        (DistanceKind::HammingNaive, DistanceKind::HammingLookup),
        (DistanceKind::IntL2, DistanceKind::FloatL2),
    ];
    for &size in &config.sizes {
        for (left, right) in audited_pairs {
            let find = |kind: DistanceKind| {
                audit
                    .iter()
                    .find(|(k, s, _)| *k == kind && *s == size)
                    .map(|(_, _, idx)| idx)
            };
            if let (Some(a), Some(b)) = (find(left), find(right)) {
                if let Some(query) = a.iter().zip(b.iter()).position(|(x, y)| x != y) {
                    return Err(SynthError::AuditFailure {
                        left,
                        right,
                        db_size: size,
                        query,
                    });
                }
            }
        }
    }

    Ok(TimingReport {
        cells,
        environment_note: "single-worker",
    })
}

/// Planted-corpus generation parameters. Copies of a query image are
/// perturbed versions of its descriptor set: per-component Gaussian noise,
/// keypoint dropout, and injected distractor keypoints.
///
/// Images draw their keypoints around anchors picked from one shared pool,
/// so distinct images collide in visual-word space the way real scenes
/// share vocabulary. That keeps the first stage imperfect and leaves the
/// re-ranking stage real work to do.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub base_images: usize,
    pub copies_per_query: usize,
    pub queries: usize,
    pub seed: u64,
    /// Mean keypoints per image; actual counts vary around this.
    pub keypoints_per_image: usize,
    /// Descriptor-space cluster centers per image, picked from the pool.
    pub anchors_per_image: usize,
    /// Size of the shared anchor pool all images draw from.
    pub anchor_pool_size: usize,
    /// Consecutive base images share one anchor selection per family,
    /// giving every scene look-alike neighbors that confuse histogram
    /// ranking but not keypoint matching.
    pub scene_family_size: usize,
    /// Spread of keypoints around their anchor, on the 0-255 scale.
    pub anchor_sigma: f64,
    /// Copy perturbation noise, on the 0-255 scale.
    pub noise_sigma: f64,
    /// Fraction of keypoints dropped from each copy.
    pub dropout: f64,
    /// Distractor keypoints injected per copy, as a fraction of the
    /// original count.
    pub distractor_rate: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            base_images: 200,
            copies_per_query: 5,
            queries: 10,
            seed: 42,
            keypoints_per_image: 200,
            anchors_per_image: 12,
            anchor_pool_size: 96,
            scene_family_size: 4,
            anchor_sigma: 12.0,
            noise_sigma: 8.0,
            dropout: 0.3,
            distractor_rate: 0.2,
        }
    }
}

/// A generated corpus: all indexed images (bases plus planted copies), the
/// query descriptor sets, and matching ground truth with one theme per
/// query scene.
#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub images: Vec<DescriptorSet<FloatDescriptor>>,
    pub queries: Vec<DescriptorSet<FloatDescriptor>>,
    pub ground_truth: GroundTruth,
}

fn clamp_component(v: f64) -> f32 {
    v.clamp(0.0, 255.0) as f32
}

fn random_keypoint(rng: &mut StdRng, anchors: &[[f32; DESCRIPTOR_DIM]], sigma: f64) -> FloatDescriptor {
    let anchor = &anchors[rng.gen_range(0..anchors.len())];
    let mut components = [0.0f32; DESCRIPTOR_DIM];
    for (out, &a) in components.iter_mut().zip(anchor.iter()) {
        *out = clamp_component(a as f64 + sigma * gaussian(rng));
    }
    FloatDescriptor::from_components(components)
}

/// Pool anchors cluster around a smaller set of super-structures, the way
/// distinct real scenes share low-level patch patterns. Visual words then
/// collide across unrelated images (the first stage stays imperfect) while
/// the anchors themselves remain separated enough for keypoint matching to
/// tell twins from look-alikes.
fn generate_anchor_pool(config: &CorpusConfig) -> Vec<[f32; DESCRIPTOR_DIM]> {
    let mut rng = StdRng::seed_from_u64(derive_seed(config.seed, 500));
    let super_count = (config.anchor_pool_size / 6).max(1);
    let super_anchors: Vec<[f32; DESCRIPTOR_DIM]> = (0..super_count)
        .map(|_| std::array::from_fn(|_| rng.gen_range(0.0f32..256.0)))
        .collect();
    let spread = 2.0 * config.anchor_sigma;
    (0..config.anchor_pool_size)
        .map(|_| {
            let base = &super_anchors[rng.gen_range(0..super_anchors.len())];
            std::array::from_fn(|i| clamp_component(base[i] as f64 + spread * gaussian(&mut rng)))
        })
        .collect()
}

fn generate_base_image(
    config: &CorpusConfig,
    pool: &[[f32; DESCRIPTOR_DIM]],
    index: usize,
) -> DescriptorSet<FloatDescriptor> {
    // All members of a scene family draw keypoints around the same anchor
    // selection; only the draws differ.
    let family = index / config.scene_family_size.max(1);
    let mut family_rng = StdRng::seed_from_u64(derive_seed(config.seed, 700 + family as u64));
    let anchors: Vec<[f32; DESCRIPTOR_DIM]> = (0..config.anchors_per_image)
        .map(|_| pool[family_rng.gen_range(0..pool.len())])
        .collect();
    let mut rng = StdRng::seed_from_u64(derive_seed(config.seed, 1000 + index as u64));
    let spread = config.keypoints_per_image / 5;
    let count = (config.keypoints_per_image - spread
        + rng.gen_range(0..=2 * spread.max(1)))
    .max(1);
    let descriptors = (0..count)
        .map(|_| random_keypoint(&mut rng, &anchors, config.anchor_sigma))
        .collect();
    DescriptorSet::new(format!("img{index:04}"), descriptors)
}

fn generate_copy(
    config: &CorpusConfig,
    pool: &[[f32; DESCRIPTOR_DIM]],
    base: &DescriptorSet<FloatDescriptor>,
    query_index: usize,
    copy_index: usize,
) -> DescriptorSet<FloatDescriptor> {
    let stream = 2_000_000 + (query_index * 1000 + copy_index) as u64;
    let mut rng = StdRng::seed_from_u64(derive_seed(config.seed, stream));
    let mut descriptors = Vec::with_capacity(base.count());
    for d in base.descriptors() {
        if rng.gen::<f64>() < config.dropout {
            continue;
        }
        let mut components = [0.0f32; DESCRIPTOR_DIM];
        for (out, &c) in components.iter_mut().zip(d.components().iter()) {
            *out = clamp_component(c as f64 + config.noise_sigma * gaussian(&mut rng));
        }
        descriptors.push(FloatDescriptor::from_components(components));
    }
    // Distractors are inserted foreign content: whole keypoint groups around
    // pool anchors, with the same per-anchor density as genuine content.
    // Grouping matters: a lone foreign keypoint would have no same-cluster
    // second neighbor and would slip through the ratio test.
    let mut distractors = (config.distractor_rate * base.count() as f64).round() as usize;
    let group = (config.keypoints_per_image / config.anchors_per_image).max(1);
    while distractors > 0 {
        let take = distractors.min(group);
        let anchor = &pool[rng.gen_range(0..pool.len())];
        for _ in 0..take {
            let mut components = [0.0f32; DESCRIPTOR_DIM];
            for (out, &a) in components.iter_mut().zip(anchor.iter()) {
                *out = clamp_component(a as f64 + config.anchor_sigma * gaussian(&mut rng));
            }
            descriptors.push(FloatDescriptor::from_components(components));
        }
        distractors -= take;
    }
    DescriptorSet::new(
        format!("{}_copy{copy_index:02}", base.image_id()),
        descriptors,
    )
}

/// Generates the planted corpus: `base_images` synthetic images, with the
/// first `queries` of them serving as query scenes, each planted with
/// `copies_per_query` perturbed copies.
pub fn gen_planted_corpus(config: &CorpusConfig) -> Result<PlantedCorpus, SynthError> {
    if config.base_images == 0 || config.copies_per_query == 0 || config.queries == 0 {
        return Err(SynthError::InvalidCorpusConfig(
            "image, copy, and query counts must be at least 1".to_string(),
        ));
    }
    if config.queries > config.base_images {
        return Err(SynthError::InvalidCorpusConfig(format!(
            "{} queries requested but only {} base images",
            config.queries, config.base_images
        )));
    }
    for (name, rate) in [("dropout", config.dropout), ("distractor_rate", config.distractor_rate)] {
        if !(0.0..=1.0).contains(&rate) {
            return Err(SynthError::InvalidCorpusConfig(format!(
                "{name} must lie in [0, 1], got {rate}"
            )));
        }
    }
    if config.keypoints_per_image == 0 || config.anchors_per_image == 0 {
        return Err(SynthError::InvalidCorpusConfig(
            "keypoints and anchors per image must be at least 1".to_string(),
        ));
    }
    if config.anchor_pool_size == 0 {
        return Err(SynthError::InvalidCorpusConfig(
            "anchor pool size must be at least 1".to_string(),
        ));
    }
    if config.scene_family_size == 0 {
        return Err(SynthError::InvalidCorpusConfig(
            "scene family size must be at least 1".to_string(),
        ));
    }

    let pool = generate_anchor_pool(config);
    let bases: Vec<DescriptorSet<FloatDescriptor>> = (0..config.base_images)
        .into_par_iter()
        .map(|i| generate_base_image(config, &pool, i))
        .collect();

    let copies: Vec<Vec<DescriptorSet<FloatDescriptor>>> = (0..config.queries)
        .into_par_iter()
        .map(|q| {
            (0..config.copies_per_query)
                .map(|c| generate_copy(config, &pool, &bases[q], q, c))
                .collect()
        })
        .collect();

    let mut ground_truth = GroundTruth::new();
    for (q, query_copies) in copies.iter().enumerate() {
        let theme = format!("scene_{}", bases[q].image_id());
        for copy in query_copies {
            ground_truth.add(&theme, bases[q].image_id(), copy.image_id())?;
        }
    }

    let queries = bases[..config.queries].to_vec();
    let mut images = bases;
    images.extend(copies.into_iter().flatten());

    Ok(PlantedCorpus {
        images,
        queries,
        ground_truth,
    })
}
