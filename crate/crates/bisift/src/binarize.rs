//! Binary fingerprint quantization.
//!
//! Two schemes are supported. The whole-vector scheme compares each adjacent
//! component pair across the full 128-component descriptor, yielding 127
//! informative bits padded with a constant zero. The per-cell scheme applies
//! the same comparison circularly inside each of the sixteen 8-bin cell
//! histograms, yielding 8 bits per cell and 128 informative bits total.
//! Both are scale-free: only the ordering of components matters.

use thiserror::Error;

use crate::descriptor::{DESCRIPTOR_DIM, GRID_CELLS, ORIENTATION_BINS};

/// Size of the fingerprint container in bits.
pub const FINGERPRINT_BITS: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BinarizeError {
    #[error("whole-vector fingerprints carry 127 informative bits; padding bit 127 must be 0")]
    InvalidPadding,
}

/// Which binarization produced a fingerprint. The scheme determines the
/// informative bit count and which fingerprints are comparable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinarizationScheme {
    /// Whole-vector adjacent comparison, 127 informative bits + zero padding.
    BiSift,
    /// Circular adjacent comparison within each 8-bin cell, 128 bits.
    PerCell,
}

impl BinarizationScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            BinarizationScheme::BiSift => "bisift",
            BinarizationScheme::PerCell => "percell",
        }
    }
}

impl std::fmt::Display for BinarizationScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BinarizationScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bisift" => Ok(BinarizationScheme::BiSift),
            "percell" => Ok(BinarizationScheme::PerCell),
            other => Err(format!("unknown scheme {other:?}; expected bisift or percell")),
        }
    }
}

/// A 128-bit binary fingerprint. Bit `i` of the container is
/// `(bits >> i) & 1`; byte 0 of the little-endian encoding holds bits 0-7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BinaryFingerprint {
    bits: u128,
    scheme: BinarizationScheme,
}

impl BinaryFingerprint {
    /// Wraps raw container bits. For the whole-vector scheme the padding bit
    /// (bit 127) must be zero.
    pub fn from_bits(bits: u128, scheme: BinarizationScheme) -> Result<Self, BinarizeError> {
        if scheme == BinarizationScheme::BiSift && bits >> 127 != 0 {
            return Err(BinarizeError::InvalidPadding);
        }
        Ok(Self { bits, scheme })
    }

    pub fn bits(&self) -> u128 {
        self.bits
    }

    #[inline]
    pub fn bit(&self, index: usize) -> bool {
        debug_assert!(index < FINGERPRINT_BITS);
        (self.bits >> index) & 1 == 1
    }

    pub fn scheme(&self) -> BinarizationScheme {
        self.scheme
    }

    /// 127 for the whole-vector scheme, 128 for the per-cell scheme.
    pub fn informative_bits(&self) -> usize {
        match self.scheme {
            BinarizationScheme::BiSift => FINGERPRINT_BITS - 1,
            BinarizationScheme::PerCell => FINGERPRINT_BITS,
        }
    }

    pub fn to_le_bytes(&self) -> [u8; 16] {
        self.bits.to_le_bytes()
    }
}

/// Whole-vector binarization: bit `i` is set when component `i` is greater
/// than or equal to component `i + 1` (ties produce 1), for `i` in 0..127.
/// Bit 127 is constant zero padding.
pub fn binarize_bisift<T: PartialOrd>(components: &[T; DESCRIPTOR_DIM]) -> BinaryFingerprint {
    let mut bits = 0u128;
    for i in 0..DESCRIPTOR_DIM - 1 {
        if components[i] >= components[i + 1] {
            bits |= 1 << i;
        }
    }
    BinaryFingerprint {
        bits,
        scheme: BinarizationScheme::BiSift,
    }
}

/// Per-cell binarization: within each 8-bin cell histogram, bit `j` is set
/// when bin `j` is greater than or equal to bin `(j + 1) mod 8`. The sixteen
/// 8-bit groups are concatenated in cell order.
pub fn binarize_percell<T: PartialOrd>(components: &[T; DESCRIPTOR_DIM]) -> BinaryFingerprint {
    let mut bits = 0u128;
    for cell in 0..GRID_CELLS * GRID_CELLS {
        let base = cell * ORIENTATION_BINS;
        for j in 0..ORIENTATION_BINS {
            let next = base + (j + 1) % ORIENTATION_BINS;
            if components[base + j] >= components[next] {
                bits |= 1 << (base + j);
            }
        }
    }
    BinaryFingerprint {
        bits,
        scheme: BinarizationScheme::PerCell,
    }
}
