//! Shared data setup for the criterion benchmarks.

use bisift::synthbench::{gen_synth_descriptors, SynthDescriptors};

pub const BENCH_SEED: u64 = 42;

/// Deterministic descriptor batch shared by the benchmark targets.
pub fn bench_descriptors(n: usize) -> SynthDescriptors {
    gen_synth_descriptors(n, BENCH_SEED)
}
