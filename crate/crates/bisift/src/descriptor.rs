//! Descriptor types and SIFT-style descriptor computation.
//!
//! A descriptor is a 128-component vector: a 4x4 spatial grid of 8-bin
//! gradient-orientation histograms, concatenated cell-major. Descriptors
//! either come from [`compute_patch_descriptor`] on a normalized 41x41
//! grayscale patch, or are ingested from files produced by external
//! extractors (see [`crate::io`]).

use thiserror::Error;

/// Number of components in a descriptor.
pub const DESCRIPTOR_DIM: usize = 128;
/// Side length of a normalized patch, in pixels.
pub const PATCH_SIZE: usize = 41;
/// Spatial grid cells per axis.
pub const GRID_CELLS: usize = 4;
/// Orientation histogram bins per cell.
pub const ORIENTATION_BINS: usize = 8;

/// Gaussian weighting window: sigma is 1.5x the patch scale, with the scale
/// fixed at half the patch width.
const GAUSSIAN_SIGMA: f64 = 1.5 * (PATCH_SIZE as f64 / 2.0);
/// Per-component clamp applied between the two normalization passes.
const COMPONENT_CLAMP: f64 = 0.2;
/// Integerization scale for the 8-bit descriptor variant.
const INT_SCALE: f64 = 512.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DescriptorError {
    #[error("dimension mismatch: expected {expected} components, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("patch must be {PATCH_SIZE}x{PATCH_SIZE} pixels, got {actual} pixels")]
    BadPatchSize { actual: usize },
}

/// A 128-component descriptor with non-negative `f32` components.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatDescriptor {
    components: [f32; DESCRIPTOR_DIM],
}

impl FloatDescriptor {
    pub fn from_components(components: [f32; DESCRIPTOR_DIM]) -> Self {
        Self { components }
    }

    pub fn zeroed() -> Self {
        Self {
            components: [0.0; DESCRIPTOR_DIM],
        }
    }

    pub fn components(&self) -> &[f32; DESCRIPTOR_DIM] {
        &self.components
    }
}

impl TryFrom<&[f32]> for FloatDescriptor {
    type Error = DescriptorError;

    fn try_from(slice: &[f32]) -> Result<Self, DescriptorError> {
        let components: [f32; DESCRIPTOR_DIM] =
            slice.try_into().map_err(|_| DescriptorError::DimensionMismatch {
                expected: DESCRIPTOR_DIM,
                actual: slice.len(),
            })?;
        Ok(Self { components })
    }
}

impl From<&IntDescriptor> for FloatDescriptor {
    /// The exact float image of an 8-bit descriptor.
    fn from(d: &IntDescriptor) -> Self {
        let mut components = [0.0f32; DESCRIPTOR_DIM];
        for (out, &v) in components.iter_mut().zip(d.components.iter()) {
            *out = v as f32;
        }
        Self { components }
    }
}

/// A 128-component descriptor with 8-bit unsigned integer components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntDescriptor {
    components: [u8; DESCRIPTOR_DIM],
}

impl IntDescriptor {
    pub fn from_components(components: [u8; DESCRIPTOR_DIM]) -> Self {
        Self { components }
    }

    pub fn components(&self) -> &[u8; DESCRIPTOR_DIM] {
        &self.components
    }
}

impl TryFrom<&[u8]> for IntDescriptor {
    type Error = DescriptorError;

    fn try_from(slice: &[u8]) -> Result<Self, DescriptorError> {
        let components: [u8; DESCRIPTOR_DIM] =
            slice.try_into().map_err(|_| DescriptorError::DimensionMismatch {
                expected: DESCRIPTOR_DIM,
                actual: slice.len(),
            })?;
        Ok(Self { components })
    }
}

/// A normalized 41x41 grayscale patch with intensities in `[0, 1]`,
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pixels: Vec<f32>,
}

impl Patch {
    pub fn new(pixels: Vec<f32>) -> Result<Self, DescriptorError> {
        if pixels.len() != PATCH_SIZE * PATCH_SIZE {
            return Err(DescriptorError::BadPatchSize {
                actual: pixels.len(),
            });
        }
        Ok(Self { pixels })
    }

    /// Builds a patch by evaluating `f(x, y)` over the 41x41 grid.
    pub fn from_fn(mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(PATCH_SIZE * PATCH_SIZE);
        for y in 0..PATCH_SIZE {
            for x in 0..PATCH_SIZE {
                pixels.push(f(x, y));
            }
        }
        Self { pixels }
    }

    /// Pixel lookup with replicate border handling.
    #[inline]
    fn pixel(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, PATCH_SIZE as isize - 1) as usize;
        let y = y.clamp(0, PATCH_SIZE as isize - 1) as usize;
        self.pixels[y * PATCH_SIZE + x]
    }
}

/// All descriptors extracted from one image, in keypoint order.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet<D> {
    image_id: String,
    descriptors: Vec<D>,
}

impl<D> DescriptorSet<D> {
    pub fn new(image_id: impl Into<String>, descriptors: Vec<D>) -> Self {
        Self {
            image_id: image_id.into(),
            descriptors,
        }
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn descriptors(&self) -> &[D] {
        &self.descriptors
    }

    /// Number of keypoints in the image. Empty images are permitted.
    pub fn count(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

/// Spatial cell index of a pixel coordinate, 0..4.
#[inline]
fn cell_of(coord: usize) -> usize {
    coord * GRID_CELLS / PATCH_SIZE
}

/// Orientation bin of a gradient, 0..8. Bin 0 starts at angle 0 (+x axis)
/// and bins advance counter-clockwise in 45-degree steps.
#[inline]
fn orientation_bin(gx: f64, gy: f64) -> usize {
    let theta = gy.atan2(gx);
    let t = if theta < 0.0 {
        theta + std::f64::consts::TAU
    } else {
        theta
    };
    let bin = (t / (std::f64::consts::TAU / ORIENTATION_BINS as f64)) as usize;
    // t can round up to exactly TAU for tiny negative angles; that wraps to bin 0.
    if bin >= ORIENTATION_BINS {
        0
    } else {
        bin
    }
}

/// Raw per-cell gradient histograms, before normalization. Each pixel votes
/// into exactly one cell and one orientation bin, weighted by gradient
/// magnitude and the Gaussian window.
fn accumulate_histograms(patch: &Patch) -> [f64; DESCRIPTOR_DIM] {
    let mut hist = [0.0f64; DESCRIPTOR_DIM];
    let center = (PATCH_SIZE as f64 - 1.0) / 2.0;
    let inv_two_sigma_sq = 1.0 / (2.0 * GAUSSIAN_SIGMA * GAUSSIAN_SIGMA);
    for y in 0..PATCH_SIZE {
        for x in 0..PATCH_SIZE {
            let (xi, yi) = (x as isize, y as isize);
            let gx = (patch.pixel(xi + 1, yi) as f64 - patch.pixel(xi - 1, yi) as f64) * 0.5;
            let gy = (patch.pixel(xi, yi + 1) as f64 - patch.pixel(xi, yi - 1) as f64) * 0.5;
            let magnitude = (gx * gx + gy * gy).sqrt();
            if magnitude == 0.0 {
                continue;
            }
            let dx = x as f64 - center;
            let dy = y as f64 - center;
            let weight = (-(dx * dx + dy * dy) * inv_two_sigma_sq).exp();
            let cell = cell_of(y) * GRID_CELLS + cell_of(x);
            hist[cell * ORIENTATION_BINS + orientation_bin(gx, gy)] += weight * magnitude;
        }
    }
    hist
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Standard SIFT post-processing: L2-normalize, clamp each component at 0.2,
/// re-normalize. A zero histogram stays all-zero.
fn normalize_histograms(hist: &[f64; DESCRIPTOR_DIM]) -> FloatDescriptor {
    let norm = l2_norm(hist);
    if norm == 0.0 {
        return FloatDescriptor::zeroed();
    }
    let clamped: Vec<f64> = hist
        .iter()
        .map(|v| (v / norm).min(COMPONENT_CLAMP))
        .collect();
    let norm2 = l2_norm(&clamped);
    let mut components = [0.0f32; DESCRIPTOR_DIM];
    for (out, v) in components.iter_mut().zip(clamped.iter()) {
        *out = (v / norm2) as f32;
    }
    FloatDescriptor::from_components(components)
}

/// Computes a SIFT-style descriptor from a normalized 41x41 patch.
///
/// The patch is divided into a 4x4 spatial grid; each cell accumulates an
/// 8-bin gradient-orientation histogram weighted by gradient magnitude and a
/// Gaussian window centered on the patch. Gradients are central differences
/// with replicate border handling. The 16 histograms are concatenated
/// cell-major and L2-normalized with a 0.2 clamp. A patch with no gradient
/// anywhere yields the all-zero descriptor.
pub fn compute_patch_descriptor(patch: &Patch) -> FloatDescriptor {
    normalize_histograms(&accumulate_histograms(patch))
}

/// Maps a normalized float descriptor (components in `[0, 1]`) to the 8-bit
/// integer variant: `round(c * 512)` clamped to `[0, 255]`.
pub fn to_int_descriptor(d: &FloatDescriptor) -> IntDescriptor {
    let mut components = [0u8; DESCRIPTOR_DIM];
    for (out, &c) in components.iter_mut().zip(d.components().iter()) {
        *out = ((c as f64) * INT_SCALE).round().clamp(0.0, 255.0) as u8;
    }
    IntDescriptor::from_components(components)
}
