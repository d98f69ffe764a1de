//! Binary file formats.
//!
//! Descriptor files (magic `BSFT`) hold the descriptor sets of any number of
//! images in one of three payload types: float32, uint8, or 128-bit binary
//! fingerprints. Vocabulary files (magic `BVOC`) hold the k-means centroids
//! with the training seed and iteration count in a footer. Both formats are
//! little-endian and fully validated on load: malformed input produces a
//! typed error naming the byte offset, never a silent misread.
//!
//! Descriptor file layout:
//!
//! ```text
//! "BSFT" | version u16 = 1 | dtype u8 | reserved u8 = 0 | image count u32
//! per image: id length u16 | id UTF-8 | descriptor count u32 | payload
//! ```
//!
//! Payloads are row-major: 128 float32 or 128 uint8 per descriptor, or 16
//! bytes per fingerprint with bit 0 stored as the least significant bit of
//! byte 0.
//!
//! Vocabulary file layout:
//!
//! ```text
//! "BVOC" | version u16 = 1 | K u32 | dim u32 = 128
//! payload: K x 128 float32 row-major | footer: seed u64, iterations u32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::binarize::{BinarizationScheme, BinaryFingerprint};
use crate::descriptor::{DescriptorSet, FloatDescriptor, IntDescriptor, DESCRIPTOR_DIM};
use crate::vocabulary::Vocabulary;

const DESCRIPTOR_MAGIC: &[u8; 4] = b"BSFT";
const VOCABULARY_MAGIC: &[u8; 4] = b"BVOC";
const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum FileFormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a {expected} file")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("reserved header byte must be 0, found {0}")]
    NonzeroReserved(u8),
    #[error("file truncated: expected more data at byte offset {offset}")]
    Truncated { offset: u64 },
    #[error("invalid UTF-8 in image id at byte offset {offset}")]
    InvalidUtf8 { offset: u64 },
    #[error("dimension mismatch: expected {expected}, found {actual}")]
    DimensionMismatch { expected: u32, actual: u32 },
    #[error("invalid component (negative or non-finite) at byte offset {offset}")]
    InvalidComponent { offset: u64 },
    #[error("fingerprint padding bit set at byte offset {offset}")]
    InvalidPadding { offset: u64 },
    #[error("trailing bytes after final record at byte offset {offset}")]
    TrailingBytes { offset: u64 },
    #[error("vocabulary size in file must be at least 1")]
    EmptyVocabulary,
    #[error("image id exceeds the 65535-byte limit")]
    IdTooLong,
    #[error("too many images for the file format")]
    TooManyImages,
}

/// Payload type stored in a descriptor file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    U8 = 1,
    Binary128 = 2,
}

impl Dtype {
    fn from_code(code: u8) -> Result<Self, FileFormatError> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::U8),
            2 => Ok(Dtype::Binary128),
            other => Err(FileFormatError::UnknownDtype(other)),
        }
    }
}

/// The contents of a descriptor file; all images share one payload type.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedDescriptors {
    Float(Vec<DescriptorSet<FloatDescriptor>>),
    Int(Vec<DescriptorSet<IntDescriptor>>),
    Binary(Vec<DescriptorSet<BinaryFingerprint>>),
}

impl LoadedDescriptors {
    pub fn dtype(&self) -> Dtype {
        match self {
            LoadedDescriptors::Float(_) => Dtype::F32,
            LoadedDescriptors::Int(_) => Dtype::U8,
            LoadedDescriptors::Binary(_) => Dtype::Binary128,
        }
    }

    pub fn image_count(&self) -> usize {
        match self {
            LoadedDescriptors::Float(v) => v.len(),
            LoadedDescriptors::Int(v) => v.len(),
            LoadedDescriptors::Binary(v) => v.len(),
        }
    }
}

/// Reader wrapper that tracks the byte offset so corruption errors can name
/// the position where parsing stopped.
struct TrackedReader<R: Read> {
    inner: R,
    pos: u64,
}

impl<R: Read> TrackedReader<R> {
    fn new(inner: R) -> Self {
        Self { inner, pos: 0 }
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<(), FileFormatError> {
        let offset = self.pos;
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                FileFormatError::Truncated { offset }
            } else {
                FileFormatError::Io(e)
            }
        })?;
        self.pos += buf.len() as u64;
        Ok(())
    }

    fn read_u8(&mut self) -> Result<u8, FileFormatError> {
        let mut b = [0u8; 1];
        self.read_exact(&mut b)?;
        Ok(b[0])
    }

    fn read_u16(&mut self) -> Result<u16, FileFormatError> {
        let mut b = [0u8; 2];
        self.read_exact(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    fn read_u32(&mut self) -> Result<u32, FileFormatError> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_u64(&mut self) -> Result<u64, FileFormatError> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    /// Errors if any byte remains past the declared end of the file.
    fn expect_eof(&mut self) -> Result<(), FileFormatError> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(FileFormatError::TrailingBytes { offset: self.pos }),
            Err(e) => Err(FileFormatError::Io(e)),
        }
    }
}

fn read_image_id<R: Read>(reader: &mut TrackedReader<R>) -> Result<String, FileFormatError> {
    let len = reader.read_u16()? as usize;
    let id_offset = reader.pos;
    let mut bytes = vec![0u8; len];
    reader.read_exact(&mut bytes)?;
    String::from_utf8(bytes).map_err(|_| FileFormatError::InvalidUtf8 { offset: id_offset })
}

fn write_header(
    w: &mut impl Write,
    dtype: Dtype,
    image_count: usize,
) -> Result<(), FileFormatError> {
    let count = u32::try_from(image_count).map_err(|_| FileFormatError::TooManyImages)?;
    w.write_all(DESCRIPTOR_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[dtype as u8, 0u8])?;
    w.write_all(&count.to_le_bytes())?;
    Ok(())
}

fn write_image_prefix(
    w: &mut impl Write,
    image_id: &str,
    descriptor_count: usize,
) -> Result<(), FileFormatError> {
    let id_len = u16::try_from(image_id.len()).map_err(|_| FileFormatError::IdTooLong)?;
    let count = u32::try_from(descriptor_count).map_err(|_| FileFormatError::TooManyImages)?;
    w.write_all(&id_len.to_le_bytes())?;
    w.write_all(image_id.as_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    Ok(())
}

/// Saves float descriptor sets (dtype 0).
pub fn save_float_descriptors(
    path: &Path,
    sets: &[DescriptorSet<FloatDescriptor>],
) -> Result<(), FileFormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, Dtype::F32, sets.len())?;
    for set in sets {
        write_image_prefix(&mut w, set.image_id(), set.count())?;
        for d in set.descriptors() {
            let mut row = [0u8; DESCRIPTOR_DIM * 4];
            for (chunk, &c) in row.chunks_exact_mut(4).zip(d.components().iter()) {
                chunk.copy_from_slice(&c.to_le_bytes());
            }
            w.write_all(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Saves 8-bit integer descriptor sets (dtype 1).
pub fn save_int_descriptors(
    path: &Path,
    sets: &[DescriptorSet<IntDescriptor>],
) -> Result<(), FileFormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, Dtype::U8, sets.len())?;
    for set in sets {
        write_image_prefix(&mut w, set.image_id(), set.count())?;
        for d in set.descriptors() {
            w.write_all(d.components())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Saves binary fingerprint sets (dtype 2, 16 bytes per fingerprint).
pub fn save_fingerprints(
    path: &Path,
    sets: &[DescriptorSet<BinaryFingerprint>],
) -> Result<(), FileFormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, Dtype::Binary128, sets.len())?;
    for set in sets {
        write_image_prefix(&mut w, set.image_id(), set.count())?;
        for fp in set.descriptors() {
            w.write_all(&fp.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct DescriptorHeader {
    dtype: Dtype,
    image_count: u32,
}

fn read_descriptor_header<R: Read>(
    reader: &mut TrackedReader<R>,
) -> Result<DescriptorHeader, FileFormatError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != DESCRIPTOR_MAGIC {
        return Err(FileFormatError::BadMagic { expected: "BSFT" });
    }
    let version = reader.read_u16()?;
    if version != FORMAT_VERSION {
        return Err(FileFormatError::UnsupportedVersion(version));
    }
    let dtype = Dtype::from_code(reader.read_u8()?)?;
    let reserved = reader.read_u8()?;
    if reserved != 0 {
        return Err(FileFormatError::NonzeroReserved(reserved));
    }
    let image_count = reader.read_u32()?;
    Ok(DescriptorHeader { dtype, image_count })
}

/// Returns the payload type of a descriptor file without reading records.
pub fn descriptor_file_dtype(path: &Path) -> Result<Dtype, FileFormatError> {
    let mut reader = TrackedReader::new(BufReader::new(File::open(path)?));
    Ok(read_descriptor_header(&mut reader)?.dtype)
}

/// Loads every descriptor set in the file, preserving image order.
///
/// `binary_scheme` names the scheme of fingerprints in dtype-2 files (the
/// format itself does not record it); it is ignored for the other payload
/// types. Whole-vector fingerprints are validated to carry a zero padding
/// bit.
pub fn load_descriptors(
    path: &Path,
    binary_scheme: BinarizationScheme,
) -> Result<LoadedDescriptors, FileFormatError> {
    let mut reader = TrackedReader::new(BufReader::new(File::open(path)?));
    let header = read_descriptor_header(&mut reader)?;
    let n = header.image_count as usize;
    let loaded = match header.dtype {
        Dtype::F32 => {
            let mut sets = Vec::with_capacity(n);
            for _ in 0..n {
                let id = read_image_id(&mut reader)?;
                let count = reader.read_u32()? as usize;
                let mut descriptors = Vec::with_capacity(count);
                for _ in 0..count {
                    let row_offset = reader.pos;
                    let mut row = [0u8; DESCRIPTOR_DIM * 4];
                    reader.read_exact(&mut row)?;
                    let mut components = [0.0f32; DESCRIPTOR_DIM];
                    for (i, chunk) in row.chunks_exact(4).enumerate() {
                        let v = f32::from_le_bytes(chunk.try_into().unwrap());
                        if !v.is_finite() || v < 0.0 {
                            return Err(FileFormatError::InvalidComponent {
                                offset: row_offset + 4 * i as u64,
                            });
                        }
                        components[i] = v;
                    }
                    descriptors.push(FloatDescriptor::from_components(components));
                }
                sets.push(DescriptorSet::new(id, descriptors));
            }
            LoadedDescriptors::Float(sets)
        }
        Dtype::U8 => {
            let mut sets = Vec::with_capacity(n);
            for _ in 0..n {
                let id = read_image_id(&mut reader)?;
                let count = reader.read_u32()? as usize;
                let mut descriptors = Vec::with_capacity(count);
                for _ in 0..count {
                    let mut row = [0u8; DESCRIPTOR_DIM];
                    reader.read_exact(&mut row)?;
                    descriptors.push(IntDescriptor::from_components(row));
                }
                sets.push(DescriptorSet::new(id, descriptors));
            }
            LoadedDescriptors::Int(sets)
        }
        Dtype::Binary128 => {
            let mut sets = Vec::with_capacity(n);
            for _ in 0..n {
                let id = read_image_id(&mut reader)?;
                let count = reader.read_u32()? as usize;
                let mut fingerprints = Vec::with_capacity(count);
                for _ in 0..count {
                    let fp_offset = reader.pos;
                    let mut row = [0u8; 16];
                    reader.read_exact(&mut row)?;
                    let bits = u128::from_le_bytes(row);
                    let fp = BinaryFingerprint::from_bits(bits, binary_scheme)
                        .map_err(|_| FileFormatError::InvalidPadding { offset: fp_offset })?;
                    fingerprints.push(fp);
                }
                sets.push(DescriptorSet::new(id, fingerprints));
            }
            LoadedDescriptors::Binary(sets)
        }
    };
    reader.expect_eof()?;
    Ok(loaded)
}

/// Image id, byte offset of the record, and descriptor count for every image
/// in a descriptor file, in file order. Offsets point at the record's id
/// length field and are what index manifests store.
pub fn image_record_offsets(path: &Path) -> Result<Vec<(String, u64, u32)>, FileFormatError> {
    let mut reader = TrackedReader::new(BufReader::new(File::open(path)?));
    let header = read_descriptor_header(&mut reader)?;
    let record_bytes: u64 = match header.dtype {
        Dtype::F32 => DESCRIPTOR_DIM as u64 * 4,
        Dtype::U8 => DESCRIPTOR_DIM as u64,
        Dtype::Binary128 => 16,
    };
    let mut out = Vec::with_capacity(header.image_count as usize);
    for _ in 0..header.image_count {
        let offset = reader.pos;
        let id = read_image_id(&mut reader)?;
        let count = reader.read_u32()?;
        // Skip the payload.
        let mut remaining = count as u64 * record_bytes;
        let mut chunk = [0u8; 4096];
        while remaining > 0 {
            let take = remaining.min(chunk.len() as u64) as usize;
            reader.read_exact(&mut chunk[..take])?;
            remaining -= take as u64;
        }
        out.push((id, offset, count));
    }
    reader.expect_eof()?;
    Ok(out)
}

/// Persists a trained vocabulary. The final inertia is training metadata and
/// is not part of the format.
pub fn save_vocabulary(path: &Path, vocabulary: &Vocabulary) -> Result<(), FileFormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    let k = u32::try_from(vocabulary.k()).map_err(|_| FileFormatError::TooManyImages)?;
    w.write_all(VOCABULARY_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&k.to_le_bytes())?;
    w.write_all(&(DESCRIPTOR_DIM as u32).to_le_bytes())?;
    for centroid in vocabulary.centroids() {
        let mut row = [0u8; DESCRIPTOR_DIM * 4];
        for (chunk, &c) in row.chunks_exact_mut(4).zip(centroid.components().iter()) {
            chunk.copy_from_slice(&c.to_le_bytes());
        }
        w.write_all(&row)?;
    }
    w.write_all(&vocabulary.seed().to_le_bytes())?;
    w.write_all(&vocabulary.iterations().to_le_bytes())?;
    w.flush()?;
    Ok(())
}

/// Loads a vocabulary file. Loaded vocabularies report no final inertia.
pub fn load_vocabulary(path: &Path) -> Result<Vocabulary, FileFormatError> {
    let mut reader = TrackedReader::new(BufReader::new(File::open(path)?));
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != VOCABULARY_MAGIC {
        return Err(FileFormatError::BadMagic { expected: "BVOC" });
    }
    let version = reader.read_u16()?;
    if version != FORMAT_VERSION {
        return Err(FileFormatError::UnsupportedVersion(version));
    }
    let k = reader.read_u32()?;
    if k == 0 {
        return Err(FileFormatError::EmptyVocabulary);
    }
    let dim = reader.read_u32()?;
    if dim != DESCRIPTOR_DIM as u32 {
        return Err(FileFormatError::DimensionMismatch {
            expected: DESCRIPTOR_DIM as u32,
            actual: dim,
        });
    }
    let mut centroids = Vec::with_capacity(k as usize);
    for _ in 0..k {
        let row_offset = reader.pos;
        let mut row = [0u8; DESCRIPTOR_DIM * 4];
        reader.read_exact(&mut row)?;
        let mut components = [0.0f32; DESCRIPTOR_DIM];
        for (i, chunk) in row.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() || v < 0.0 {
                return Err(FileFormatError::InvalidComponent {
                    offset: row_offset + 4 * i as u64,
                });
            }
            components[i] = v;
        }
        centroids.push(FloatDescriptor::from_components(components));
    }
    let seed = reader.read_u64()?;
    let iterations = reader.read_u32()?;
    reader.expect_eof()?;
    Ok(Vocabulary::from_parts(centroids, seed, iterations, None))
}
