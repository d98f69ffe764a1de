//! Command-line pipeline for BiSIFT image copy retrieval.
//!
//! Every command is a batch operation over files: descriptor files in,
//! descriptor/vocabulary/rank-list/metric files out. Nothing is interactive
//! and all commands are deterministic given identical inputs and seeds.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use bisift::binarize::BinarizationScheme;
use bisift::descriptor::{DescriptorSet, FloatDescriptor};
use bisift::distance::DistanceKind;
use bisift::eval::{evaluate, read_ground_truth, render_metric_table, write_metric_report};
use bisift::io::{
    descriptor_file_dtype, image_record_offsets, load_descriptors, load_vocabulary,
    save_fingerprints, save_float_descriptors, save_int_descriptors, save_vocabulary, Dtype,
    LoadedDescriptors,
};
use bisift::retrieval::{
    first_stage_rank, query as run_query, read_manifest, read_rank_lists, rerank_top_x,
    write_manifest, write_rank_lists, Index, ManifestRow, QueryConfig, RankList,
    RerankRepresentation,
};
use bisift::synthbench::{
    gen_planted_corpus, gen_synth_descriptors, run_timing, CorpusConfig, SynthConfig,
};
use bisift::vocabulary::train_kmeans;

#[derive(Parser)]
#[command(
    name = "bisift",
    about = "Binary-quantized SIFT fingerprints for image copy retrieval",
    version
)]
struct Cli {
    /// Worker threads for parallel stages (0 = one per core). The timed
    /// loops of `bench` are single-worker regardless.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a float or integer descriptor file into binary fingerprints.
    Binarize {
        /// Input descriptor file (dtype float32 or uint8).
        #[arg(long)]
        input: PathBuf,
        /// Binarization scheme: bisift or percell.
        #[arg(long, default_value_t = BinarizationScheme::BiSift)]
        scheme: BinarizationScheme,
        /// Output descriptor file (dtype binary128).
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a flat k-means visual vocabulary from a descriptor file.
    TrainVocab {
        #[arg(long)]
        input: PathBuf,
        /// Vocabulary size.
        #[arg(long, default_value_t = 1000)]
        k: usize,
        #[arg(long, default_value_t = 25)]
        max_iters: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Uniformly subsample the training pool past this many descriptors.
        #[arg(long, default_value_t = 200_000)]
        sample_cap: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build an index manifest listing every image record in the inputs.
    Index {
        /// Input descriptor files (repeatable).
        #[arg(long, required = true, num_args = 1..)]
        descriptors: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Rank database images for every query image: BoVW first stage, then
    /// top-X re-ranking by image-to-image matching.
    Query {
        /// Index manifest from `bisift index`.
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Query descriptor file (float32 or uint8).
        #[arg(long)]
        queries: PathBuf,
        /// Candidates re-ranked per query.
        #[arg(long, default_value_t = 30)]
        top_x: usize,
        /// Reliable-match ratio threshold, in (0, 1].
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long, default_value_t = DistanceKind::HammingLookup)]
        kind: DistanceKind,
        /// Re-ranking representation: bisift, percell, or raw.
        #[arg(long, default_value_t = RerankRepresentation::BiSift)]
        repr: RerankRepresentation,
        /// Emit the first-stage ranking without re-ranking.
        #[arg(long)]
        first_stage_only: bool,
        /// Output rank-list TSV.
        #[arg(long)]
        output: PathBuf,
    },
    /// Re-rank the head of existing rank lists by image-to-image matching.
    Rerank {
        /// Rank-list TSV to re-rank.
        #[arg(long)]
        ranks: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 30)]
        top_x: usize,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long, default_value_t = DistanceKind::HammingLookup)]
        kind: DistanceKind,
        #[arg(long, default_value_t = RerankRepresentation::BiSift)]
        repr: RerankRepresentation,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score rank lists against ground truth.
    Eval {
        #[arg(long)]
        ranks: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// Precision/recall cutoffs.
        #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10, 30])]
        cutoffs: Vec<usize>,
        /// Output metric TSV.
        #[arg(long)]
        output: PathBuf,
    },
    /// Time nearest-neighbor scans over a synthetic database ladder.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [1_000usize, 10_000, 100_000, 500_000])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        queries: usize,
        /// Repetitions per cell; the median is reported.
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_values_t = DistanceKind::ALL)]
        kinds: Vec<DistanceKind>,
        /// Output timing TSV (kind, db_size, seconds_per_query).
        #[arg(long)]
        output: PathBuf,
        /// Output gain-curve TSV (vs hamming-lookup).
        #[arg(long)]
        gains_output: Option<PathBuf>,
    },
    /// Generate synthetic uniform-byte descriptors in all representations.
    GenSynth {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Files are written as <prefix>.float.bsft, <prefix>.int.bsft,
        /// and <prefix>.bisift.bsft.
        #[arg(long)]
        output_prefix: PathBuf,
    },
    /// Generate a planted-near-duplicate corpus with ground truth.
    GenCorpus {
        #[arg(long, default_value_t = 200)]
        base_images: usize,
        #[arg(long, default_value_t = 5)]
        copies: usize,
        #[arg(long, default_value_t = 10)]
        queries: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Mean keypoints per image.
        #[arg(long, default_value_t = 200)]
        keypoints: usize,
        /// Copy noise sigma on the 0-255 component scale.
        #[arg(long, default_value_t = 8.0)]
        noise_sigma: f64,
        /// Fraction of keypoints dropped per copy.
        #[arg(long, default_value_t = 0.3)]
        dropout: f64,
        /// Distractor keypoints injected per copy, as a fraction.
        #[arg(long, default_value_t = 0.2)]
        distractors: f64,
        #[arg(long)]
        output_descriptors: PathBuf,
        #[arg(long)]
        output_queries: PathBuf,
        #[arg(long)]
        output_ground_truth: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if cli.workers > 0 {
        // Fixing the pool size keeps module-level parallelism bounded; all
        // outputs are identical for any worker count.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global();
    }
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

/// Loads a descriptor file as float sets, converting uint8 payloads to their
/// exact float images. Binary files are rejected: descriptor-space features
/// are required.
fn load_float_sets(path: &Path) -> Result<Vec<DescriptorSet<FloatDescriptor>>> {
    let loaded = load_descriptors(path, BinarizationScheme::BiSift)
        .with_context(|| format!("failed to load descriptors from {}", path.display()))?;
    match loaded {
        LoadedDescriptors::Float(sets) => Ok(sets),
        LoadedDescriptors::Int(sets) => Ok(sets
            .into_iter()
            .map(|s| {
                let floats = s.descriptors().iter().map(FloatDescriptor::from).collect();
                DescriptorSet::new(s.image_id(), floats)
            })
            .collect()),
        LoadedDescriptors::Binary(_) => bail!(
            "{} stores binary fingerprints; descriptor-space features are required here",
            path.display()
        ),
    }
}

/// Resolves a manifest row's file path relative to the manifest location.
fn resolve_manifest_path(manifest: &Path, file: &str) -> PathBuf {
    let path = Path::new(file);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(path)
    }
}

/// Loads the images named by an index manifest, in manifest order, verifying
/// that ids and record offsets match the descriptor files on disk.
fn load_manifest_sets(manifest_path: &Path) -> Result<Vec<DescriptorSet<FloatDescriptor>>> {
    let rows = read_manifest(manifest_path)
        .with_context(|| format!("failed to read manifest {}", manifest_path.display()))?;
    let mut by_file: HashMap<&str, HashMap<&str, u64>> = HashMap::new();
    for row in &rows {
        by_file
            .entry(row.file.as_str())
            .or_default()
            .insert(row.image_id.as_str(), row.offset);
    }
    let mut sets_by_id: HashMap<String, DescriptorSet<FloatDescriptor>> = HashMap::new();
    for (file, expected) in by_file {
        let path = resolve_manifest_path(manifest_path, file);
        let offsets = image_record_offsets(&path)
            .with_context(|| format!("failed to scan {}", path.display()))?;
        let actual: HashMap<&str, u64> =
            offsets.iter().map(|(id, off, _)| (id.as_str(), *off)).collect();
        for (id, offset) in &expected {
            match actual.get(id) {
                Some(actual_offset) if actual_offset == offset => {}
                Some(actual_offset) => bail!(
                    "manifest offset {offset} for image {id:?} disagrees with {} (record at {actual_offset})",
                    path.display()
                ),
                None => bail!("image {id:?} not found in {}", path.display()),
            }
        }
        for set in load_float_sets(&path)? {
            if expected.contains_key(set.image_id()) {
                sets_by_id.insert(set.image_id().to_string(), set);
            }
        }
    }
    rows.iter()
        .map(|row| {
            sets_by_id
                .remove(&row.image_id)
                .with_context(|| format!("image {:?} missing after load", row.image_id))
        })
        .collect()
}

fn load_index(manifest: &Path, vocab: &Path, repr: RerankRepresentation) -> Result<Index> {
    let vocabulary = load_vocabulary(vocab)
        .with_context(|| format!("failed to load vocabulary {}", vocab.display()))?;
    let sets = load_manifest_sets(manifest)?;
    Index::build(vocabulary, sets, repr).context("failed to build index")
}

fn validate_query_params(top_x: usize, ratio: f64, kind: DistanceKind, repr: RerankRepresentation) -> Result<()> {
    if top_x == 0 {
        bail!("--top-x must be at least 1");
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        bail!("--ratio must lie in (0, 1], got {ratio}");
    }
    if !repr.supports_kind(kind) {
        bail!("--kind {kind} is incompatible with --repr {repr}");
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Binarize { input, scheme, output } => {
            let loaded = load_descriptors(&input, scheme)
                .with_context(|| format!("failed to load {}", input.display()))?;
            let fingerprint_sets: Vec<_> = match loaded {
                LoadedDescriptors::Float(sets) => sets
                    .iter()
                    .map(|s| binarize_set(s.image_id(), s.descriptors().iter().map(|d| d.components()), scheme))
                    .collect(),
                LoadedDescriptors::Int(sets) => sets
                    .iter()
                    .map(|s| binarize_set(s.image_id(), s.descriptors().iter().map(|d| d.components()), scheme))
                    .collect(),
                LoadedDescriptors::Binary(_) => {
                    bail!("{} already stores binary fingerprints", input.display())
                }
            };
            save_fingerprints(&output, &fingerprint_sets)
                .with_context(|| format!("failed to write {}", output.display()))?;
            println!(
                "binarized {} images ({} scheme) -> {}",
                fingerprint_sets.len(),
                scheme,
                output.display()
            );
        }
        Command::TrainVocab { input, k, max_iters, seed, sample_cap, output } => {
            if k == 0 {
                bail!("--k must be at least 1");
            }
            if sample_cap == 0 {
                bail!("--sample-cap must be at least 1");
            }
            let sets = load_float_sets(&input)?;
            let mut pool: Vec<FloatDescriptor> = sets
                .iter()
                .flat_map(|s| s.descriptors().iter().cloned())
                .collect();
            if pool.len() > sample_cap {
                use rand::SeedableRng;
                let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
                let mut picked = rand::seq::index::sample(&mut rng, pool.len(), sample_cap)
                    .into_vec();
                picked.sort_unstable();
                pool = picked.into_iter().map(|i| pool[i].clone()).collect();
            }
            let vocabulary = train_kmeans(&pool, k, max_iters, seed)
                .context("vocabulary training failed")?;
            save_vocabulary(&output, &vocabulary)
                .with_context(|| format!("failed to write {}", output.display()))?;
            println!(
                "trained k = {} vocabulary on {} descriptors in {} iterations (inertia {:.3e}) -> {}",
                vocabulary.k(),
                pool.len(),
                vocabulary.iterations(),
                vocabulary.final_inertia().unwrap_or(f64::NAN),
                output.display()
            );
        }
        Command::Index { descriptors, output } => {
            let mut rows = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for file in &descriptors {
                let dtype = descriptor_file_dtype(file)
                    .with_context(|| format!("failed to read {}", file.display()))?;
                if dtype == Dtype::Binary128 {
                    bail!(
                        "{} stores binary fingerprints; index inputs must be descriptor-space files",
                        file.display()
                    );
                }
                for (image_id, offset, _) in image_record_offsets(file)? {
                    if !seen.insert(image_id.clone()) {
                        bail!("duplicate image id {image_id:?} across index inputs");
                    }
                    rows.push(ManifestRow {
                        image_id,
                        file: file.display().to_string(),
                        offset,
                    });
                }
            }
            write_manifest(&output, &rows)
                .with_context(|| format!("failed to write {}", output.display()))?;
            println!("indexed {} images -> {}", rows.len(), output.display());
        }
        Command::Query {
            index,
            vocab,
            queries,
            top_x,
            ratio,
            kind,
            repr,
            first_stage_only,
            output,
        } => {
            validate_query_params(top_x, ratio, kind, repr)?;
            let idx = load_index(&index, &vocab, repr)?;
            let query_sets = load_float_sets(&queries)?;
            let config = QueryConfig { top_x, ratio, kind };
            let lists: Vec<RankList> = query_sets
                .iter()
                .map(|ds| {
                    if first_stage_only {
                        first_stage_rank(&idx.query_histogram(ds), &idx)
                    } else {
                        run_query(ds, &idx, &config)
                    }
                })
                .collect::<Result<_, _>>()
                .context("query failed")?;
            write_rank_lists(&output, &lists)
                .with_context(|| format!("failed to write {}", output.display()))?;
            println!(
                "ranked {} images for {} queries -> {}",
                idx.len(),
                lists.len(),
                output.display()
            );
        }
        Command::Rerank {
            ranks,
            index,
            vocab,
            queries,
            top_x,
            ratio,
            kind,
            repr,
            output,
        } => {
            validate_query_params(top_x, ratio, kind, repr)?;
            let idx = load_index(&index, &vocab, repr)?;
            let query_sets = load_float_sets(&queries)?;
            let by_id: HashMap<&str, &DescriptorSet<FloatDescriptor>> =
                query_sets.iter().map(|s| (s.image_id(), s)).collect();
            let lists = read_rank_lists(&ranks)
                .with_context(|| format!("failed to read {}", ranks.display()))?;
            let reranked: Vec<RankList> = lists
                .iter()
                .map(|list| {
                    let ds = by_id.get(list.query_id()).with_context(|| {
                        format!("no query descriptors for {:?}", list.query_id())
                    })?;
                    let features = idx.query_features(ds);
                    rerank_top_x(list, &features, &idx, top_x, ratio, kind)
                        .context("re-ranking failed")
                })
                .collect::<Result<_>>()?;
            write_rank_lists(&output, &reranked)
                .with_context(|| format!("failed to write {}", output.display()))?;
            println!("re-ranked {} lists -> {}", reranked.len(), output.display());
        }
        Command::Eval { ranks, ground_truth, cutoffs, output } => {
            if cutoffs.is_empty() || cutoffs.contains(&0) {
                bail!("--cutoffs must be positive");
            }
            let lists = read_rank_lists(&ranks)
                .with_context(|| format!("failed to read {}", ranks.display()))?;
            let gt = read_ground_truth(&ground_truth)
                .with_context(|| format!("failed to read {}", ground_truth.display()))?;
            let report = evaluate(&lists, &gt, &cutoffs).context("evaluation failed")?;
            write_metric_report(&output, &report)
                .with_context(|| format!("failed to write {}", output.display()))?;
            print!("{}", render_metric_table(&report));
        }
        Command::Bench { sizes, queries, reps, seed, kinds, output, gains_output } => {
            let config = SynthConfig { sizes, queries, reps, seed, kinds };
            let report = run_timing(&config).context("benchmark failed")?;
            report
                .write_tsv(&output)
                .with_context(|| format!("failed to write {}", output.display()))?;
            if let Some(gains) = &gains_output {
                report
                    .write_gains_tsv(gains)
                    .with_context(|| format!("failed to write {}", gains.display()))?;
            }
            for cell in &report.cells {
                println!(
                    "{}\t{}\t{:.3e} s/query",
                    cell.kind, cell.db_size, cell.seconds_per_query
                );
            }
        }
        Command::GenSynth { count, seed, output_prefix } => {
            if count == 0 {
                bail!("--count must be at least 1");
            }
            let synth = gen_synth_descriptors(count, seed);
            let prefix = output_prefix.display();
            let float_path = PathBuf::from(format!("{prefix}.float.bsft"));
            let int_path = PathBuf::from(format!("{prefix}.int.bsft"));
            let binary_path = PathBuf::from(format!("{prefix}.bisift.bsft"));
            save_float_descriptors(&float_path, &[DescriptorSet::new("synth", synth.float)])?;
            save_int_descriptors(&int_path, &[DescriptorSet::new("synth", synth.int)])?;
            save_fingerprints(&binary_path, &[DescriptorSet::new("synth", synth.binary)])?;
            println!(
                "wrote {count} synthetic descriptors to {}, {}, {}",
                float_path.display(),
                int_path.display(),
                binary_path.display()
            );
        }
        Command::GenCorpus {
            base_images,
            copies,
            queries,
            seed,
            keypoints,
            noise_sigma,
            dropout,
            distractors,
            output_descriptors,
            output_queries,
            output_ground_truth,
        } => {
            let config = CorpusConfig {
                base_images,
                copies_per_query: copies,
                queries,
                seed,
                keypoints_per_image: keypoints,
                noise_sigma,
                dropout,
                distractor_rate: distractors,
                ..CorpusConfig::default()
            };
            let corpus = gen_planted_corpus(&config).context("corpus generation failed")?;
            save_float_descriptors(&output_descriptors, &corpus.images)
                .with_context(|| format!("failed to write {}", output_descriptors.display()))?;
            save_float_descriptors(&output_queries, &corpus.queries)
                .with_context(|| format!("failed to write {}", output_queries.display()))?;
            bisift::eval::write_ground_truth(&output_ground_truth, &corpus.ground_truth)
                .with_context(|| format!("failed to write {}", output_ground_truth.display()))?;
            println!(
                "generated {} images ({} queries x {} copies) -> {}",
                corpus.images.len(),
                queries,
                copies,
                output_descriptors.display()
            );
        }
    }
    Ok(())
}

fn binarize_set<'a, T: PartialOrd + 'a>(
    image_id: &str,
    rows: impl Iterator<Item = &'a [T; bisift::DESCRIPTOR_DIM]>,
    scheme: BinarizationScheme,
) -> DescriptorSet<bisift::BinaryFingerprint> {
    let fingerprints = rows
        .map(|components| match scheme {
            BinarizationScheme::BiSift => bisift::binarize::binarize_bisift(components),
            BinarizationScheme::PerCell => bisift::binarize::binarize_percell(components),
        })
        .collect();
    DescriptorSet::new(image_id, fingerprints)
}
