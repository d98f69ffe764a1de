//! Distance kernels and exhaustive nearest-neighbor scans.
//!
//! Four strategies are offered for comparing descriptors: Euclidean distance
//! on float descriptors, Euclidean distance on 8-bit integer descriptors,
//! and Hamming distance on binary fingerprints computed either bit by bit
//! (the naive sum of bit differences) or via a 16-bit population-count
//! lookup table. The two Hamming kernels are exactly equivalent; the lookup
//! variant exists because it is much faster.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use thiserror::Error;

use crate::binarize::{BinarizationScheme, BinaryFingerprint, FINGERPRINT_BITS};
use crate::descriptor::{FloatDescriptor, IntDescriptor};

/// The distance-computation strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistanceKind {
    /// Euclidean distance on float descriptors.
    FloatL2,
    /// Euclidean distance on 8-bit integer descriptors.
    IntL2,
    /// Bit-by-bit Hamming distance on binary fingerprints.
    HammingNaive,
    /// Table-driven Hamming distance on binary fingerprints.
    HammingLookup,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 4] = [
        DistanceKind::FloatL2,
        DistanceKind::IntL2,
        DistanceKind::HammingNaive,
        DistanceKind::HammingLookup,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DistanceKind::FloatL2 => "float-l2",
            DistanceKind::IntL2 => "int-l2",
            DistanceKind::HammingNaive => "hamming-naive",
            DistanceKind::HammingLookup => "hamming-lookup",
        }
    }

    /// True for the Hamming kinds, which apply to binary fingerprints only.
    pub fn is_binary(&self) -> bool {
        matches!(self, DistanceKind::HammingNaive | DistanceKind::HammingLookup)
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistanceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "float-l2" => Ok(DistanceKind::FloatL2),
            "int-l2" => Ok(DistanceKind::IntL2),
            "hamming-naive" => Ok(DistanceKind::HammingNaive),
            "hamming-lookup" => Ok(DistanceKind::HammingLookup),
            other => Err(format!(
                "unknown distance kind {other:?}; expected one of float-l2, int-l2, hamming-naive, hamming-lookup"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DistanceError {
    #[error("scheme mismatch: cannot compare {left:?} and {right:?} fingerprints")]
    SchemeMismatch {
        left: BinarizationScheme,
        right: BinarizationScheme,
    },
    #[error("empty database")]
    EmptyDatabase,
}

/// Euclidean distance between two float descriptors.
pub fn euclidean(a: &FloatDescriptor, b: &FloatDescriptor) -> f64 {
    let mut sum = 0.0f64;
    for (&x, &y) in a.components().iter().zip(b.components().iter()) {
        let d = x as f64 - y as f64;
        sum += d * d;
    }
    sum.sqrt()
}

/// Euclidean distance between two 8-bit integer descriptors. The squared
/// distance is accumulated in integer arithmetic and is exact: the maximum
/// value 255^2 * 128 fits comfortably in 32 bits and in a double.
pub fn euclidean_int(a: &IntDescriptor, b: &IntDescriptor) -> f64 {
    (squared_int(a, b) as f64).sqrt()
}

#[inline]
fn squared_int(a: &IntDescriptor, b: &IntDescriptor) -> u32 {
    let mut sum = 0u32;
    for (&x, &y) in a.components().iter().zip(b.components().iter()) {
        let d = x as i32 - y as i32;
        sum += (d * d) as u32;
    }
    sum
}

#[inline]
fn check_schemes(a: &BinaryFingerprint, b: &BinaryFingerprint) -> Result<(), DistanceError> {
    if a.scheme() != b.scheme() {
        return Err(DistanceError::SchemeMismatch {
            left: a.scheme(),
            right: b.scheme(),
        });
    }
    Ok(())
}

/// Naive Hamming distance: walks all 128 bit positions and counts the ones
/// that differ. This is deliberately the direct evaluation; see
/// [`hamming_lookup`] for the fast path.
pub fn hamming_naive(
    a: &BinaryFingerprint,
    b: &BinaryFingerprint,
) -> Result<u32, DistanceError> {
    check_schemes(a, b)?;
    Ok(hamming_naive_bits(a.bits(), b.bits()))
}

#[inline]
fn hamming_naive_bits(a: u128, b: u128) -> u32 {
    let xs = a.to_le_bytes();
    let ys = b.to_le_bytes();
    let mut count = 0u32;
    for (x, y) in xs.iter().zip(ys.iter()) {
        for bit in 0..8 {
            let mask = 1u8 << bit;
            if x & mask != y & mask {
                count += 1;
            }
        }
    }
    count
}

const POPCOUNT_CHUNKS: usize = FINGERPRINT_BITS / 16;

static POPCOUNT16: OnceLock<Vec<u8>> = OnceLock::new();

/// The 16-bit population-count table: entry `v` holds the number of set bits
/// in `v`. Built once on first use, 64 KiB.
fn popcount_table() -> &'static [u8] {
    POPCOUNT16.get_or_init(|| {
        let mut table = vec![0u8; 1 << 16];
        for v in 1usize..1 << 16 {
            table[v] = table[v >> 1] + (v & 1) as u8;
        }
        table
    })
}

/// Table entry lookup, exposed for inspection and tests.
pub fn popcount16(v: u16) -> u32 {
    popcount_table()[v as usize] as u32
}

/// Table-driven Hamming distance: XORs the containers, splits the result
/// into eight 16-bit chunks, and sums the table entries. Identical results
/// to [`hamming_naive`] by construction.
pub fn hamming_lookup(
    a: &BinaryFingerprint,
    b: &BinaryFingerprint,
) -> Result<u32, DistanceError> {
    check_schemes(a, b)?;
    Ok(hamming_lookup_bits(a.bits(), b.bits(), popcount_table()))
}

#[inline]
fn hamming_lookup_bits(a: u128, b: u128, table: &[u8]) -> u32 {
    let x = a ^ b;
    let mut count = 0u32;
    for chunk in 0..POPCOUNT_CHUNKS {
        let v = (x >> (chunk * 16)) as u16;
        count += table[v as usize] as u32;
    }
    count
}

/// Result of a nearest-neighbor scan: the minimizing index, its distance,
/// and the smallest distance over any *other* index. For a single-element
/// database the second distance is reported as positive infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestNeighbor {
    pub index: usize,
    pub distance: f64,
    pub second_distance: f64,
}

/// Exhaustive nearest-neighbor scan with an arbitrary distance function.
/// Ties are broken toward the lowest index.
pub fn nearest_neighbor_by<T>(
    query: &T,
    db: &[T],
    mut dist: impl FnMut(&T, &T) -> f64,
) -> Result<NearestNeighbor, DistanceError> {
    if db.is_empty() {
        return Err(DistanceError::EmptyDatabase);
    }
    let mut best_index = 0usize;
    let mut best = f64::INFINITY;
    let mut second = f64::INFINITY;
    for (index, candidate) in db.iter().enumerate() {
        let d = dist(query, candidate);
        if d < best {
            second = best;
            best = d;
            best_index = index;
        } else if d < second {
            second = d;
        }
    }
    Ok(NearestNeighbor {
        index: best_index,
        distance: best,
        second_distance: second,
    })
}

/// Nearest neighbor over float descriptors (squared distances are compared;
/// the reported distances are Euclidean).
pub fn nearest_neighbor_float(
    query: &FloatDescriptor,
    db: &[FloatDescriptor],
) -> Result<NearestNeighbor, DistanceError> {
    let nn = nearest_neighbor_by(query, db, |a, b| {
        let mut sum = 0.0f64;
        for (&x, &y) in a.components().iter().zip(b.components().iter()) {
            let d = x as f64 - y as f64;
            sum += d * d;
        }
        sum
    })?;
    Ok(NearestNeighbor {
        index: nn.index,
        distance: nn.distance.sqrt(),
        second_distance: nn.second_distance.sqrt(),
    })
}

/// Nearest neighbor over 8-bit integer descriptors.
pub fn nearest_neighbor_int(
    query: &IntDescriptor,
    db: &[IntDescriptor],
) -> Result<NearestNeighbor, DistanceError> {
    let nn = nearest_neighbor_by(query, db, |a, b| squared_int(a, b) as f64)?;
    Ok(NearestNeighbor {
        index: nn.index,
        distance: nn.distance.sqrt(),
        second_distance: nn.second_distance.sqrt(),
    })
}

/// Nearest neighbor over binary fingerprints with the chosen Hamming kernel.
///
/// The query's scheme is validated against the database once; databases are
/// expected to be scheme-homogeneous, which every construction path in this
/// crate guarantees.
pub fn nearest_neighbor_hamming(
    query: &BinaryFingerprint,
    db: &[BinaryFingerprint],
    kind: DistanceKind,
) -> Result<NearestNeighbor, DistanceError> {
    if db.is_empty() {
        return Err(DistanceError::EmptyDatabase);
    }
    check_schemes(query, &db[0])?;
    debug_assert!(db.iter().all(|fp| fp.scheme() == query.scheme()));
    match kind {
        DistanceKind::HammingNaive => {
            nearest_neighbor_by(query, db, |a, b| hamming_naive_bits(a.bits(), b.bits()) as f64)
        }
        DistanceKind::HammingLookup => {
            let table = popcount_table();
            nearest_neighbor_by(query, db, |a, b| {
                hamming_lookup_bits(a.bits(), b.bits(), table) as f64
            })
        }
        other => panic!("nearest_neighbor_hamming called with non-binary kind {other}"),
    }
}
