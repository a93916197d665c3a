//! MVFT binary feature files and tensor validation.
//!
//! Layout (little-endian, no padding, no trailer):
//!
//! ```text
//! 0..4    magic "MVFT"
//! 4..8    version (u32) = 1
//! 8..12   T frames (u32)
//! 12..16  P patches (u32)
//! 16..20  d feature width (u32)
//! 20..24  L id length in bytes (u32)
//! 24..    L bytes of UTF-8 video id, then T*P*d f32 values in [t][p][dim] order
//! ```

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

pub const MAGIC: [u8; 4] = *b"MVFT";
pub const VERSION: u32 = 1;
/// Fixed header bytes before the id block.
pub const HEADER_LEN: usize = 24;

// Reads never pre-allocate more than this; longer payloads grow as bytes arrive.
const READ_CHUNK: u64 = 1 << 20;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated header: {0}")]
    TruncatedHeader(&'static str),
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    TruncatedPayload { expected: u64, actual: u64 },
    #[error("trailing bytes after payload")]
    TrailingBytes,
    #[error("shape/length mismatch: {0}")]
    ShapeMismatch(String),
    #[error("video id is not valid UTF-8")]
    InvalidId,
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("row {row} is not unit-norm (norm {norm})")]
    NotNormalized { row: usize, norm: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Dense `[t][p][dim]` patch features for one video.
#[derive(Clone, PartialEq)]
pub struct FeatureTensor {
    video_id: String,
    frames: usize,
    patches: usize,
    dim: usize,
    data: Vec<f32>,
}

impl fmt::Debug for FeatureTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureTensor")
            .field("video_id", &self.video_id)
            .field("shape", &self.shape())
            .finish_non_exhaustive()
    }
}

impl FeatureTensor {
    /// Builds a tensor, enforcing shape and finiteness.
    pub fn new(
        video_id: impl Into<String>,
        frames: usize,
        patches: usize,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self, FormatError> {
        if frames == 0 || patches == 0 || dim == 0 {
            return Err(FormatError::ShapeMismatch(format!(
                "every axis must be >= 1, got ({frames}, {patches}, {dim})"
            )));
        }
        let expected = frames
            .checked_mul(patches)
            .and_then(|n| n.checked_mul(dim))
            .ok_or_else(|| FormatError::ShapeMismatch("shape overflows".into()))?;
        if data.len() != expected {
            return Err(FormatError::ShapeMismatch(format!(
                "shape ({frames}, {patches}, {dim}) needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite { index });
        }
        Ok(Self {
            video_id: video_id.into(),
            frames,
            patches,
            dim,
            data,
        })
    }

    /// Builds a tensor from values computed in f64, checking the narrowed values.
    pub fn from_f64(
        video_id: impl Into<String>,
        frames: usize,
        patches: usize,
        dim: usize,
        data: &[f64],
    ) -> Result<Self, FormatError> {
        Self::new(
            video_id,
            frames,
            patches,
            dim,
            data.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames, self.patches, self.dim)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// The `P x d` block of frame `t`.
    pub fn frame(&self, t: usize) -> &[f32] {
        let stride = self.patches * self.dim;
        &self.data[t * stride..(t + 1) * stride]
    }

    pub fn with_video_id(mut self, video_id: impl Into<String>) -> Self {
        self.video_id = video_id.into();
        self
    }

    /// Keeps only the listed frames, in the listed order.
    pub fn select_frames(&self, indices: &[usize]) -> Result<Self, FormatError> {
        let mut data = Vec::with_capacity(indices.len() * self.patches * self.dim);
        for &t in indices {
            if t >= self.frames {
                return Err(FormatError::ShapeMismatch(format!(
                    "frame {t} out of range for {} ({} frames)",
                    self.video_id, self.frames
                )));
            }
            data.extend_from_slice(self.frame(t));
        }
        Self::new(
            self.video_id.clone(),
            indices.len(),
            self.patches,
            self.dim,
            data,
        )
    }

    /// Size of the encoded file in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.video_id.len() + 4 * self.data.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorDiagnostics {
    pub video_id: String,
    pub shape: (usize, usize, usize),
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub finite: bool,
    pub issues: Vec<String>,
}

/// Scans a tensor and reports every invariant violation it finds.
///
/// `FeatureTensor::new` already refuses most of these, so this mainly serves
/// tensors read through other routes and the `validate` CLI path.
pub fn validate(tensor: &FeatureTensor) -> TensorDiagnostics {
    let (frames, patches, dim) = tensor.shape();
    let mut issues = Vec::new();
    if frames == 0 || patches == 0 || dim == 0 {
        issues.push(format!("empty axis in shape ({frames}, {patches}, {dim})"));
    }
    let expected = frames * patches * dim;
    if tensor.data.len() != expected {
        issues.push(format!(
            "data length {} does not match shape product {expected}",
            tensor.data.len()
        ));
    }

    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0f64;
    let mut finite = true;
    for (i, &v) in tensor.data.iter().enumerate() {
        if !v.is_finite() {
            finite = false;
            issues.push(format!("non-finite value {v} at flat index {i}"));
            continue;
        }
        let v = v as f64;
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    let n = tensor.data.len();
    let (min, max, mean) = if n == 0 || !min.is_finite() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (min, max, sum / n as f64)
    };
    TensorDiagnostics {
        video_id: tensor.video_id.clone(),
        shape: (frames, patches, dim),
        min,
        max,
        mean,
        finite,
        issues,
    }
}

/// Encodes `tensor` into `sink`, returning the number of bytes written.
pub fn write_feature_file<W: Write>(tensor: &FeatureTensor, sink: W) -> Result<usize, FormatError> {
    if let Some(index) = tensor.data.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite { index });
    }
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| FormatError::ShapeMismatch(format!("{what} {v} exceeds u32")))
    };
    let mut header = Vec::with_capacity(HEADER_LEN + tensor.video_id.len());
    header.extend_from_slice(&MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&to_u32(tensor.frames, "T")?.to_le_bytes());
    header.extend_from_slice(&to_u32(tensor.patches, "P")?.to_le_bytes());
    header.extend_from_slice(&to_u32(tensor.dim, "d")?.to_le_bytes());
    header.extend_from_slice(&to_u32(tensor.video_id.len(), "id length")?.to_le_bytes());
    header.extend_from_slice(tensor.video_id.as_bytes());

    let mut sink = BufWriter::new(sink);
    sink.write_all(&header)?;
    for v in &tensor.data {
        sink.write_all(&v.to_le_bytes())?;
    }
    sink.flush()?;
    Ok(header.len() + 4 * tensor.data.len())
}

/// Header fields of an MVFT stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureHeader {
    pub video_id: String,
    pub frames: usize,
    pub patches: usize,
    pub dim: usize,
}

fn read_u32<R: Read>(source: &mut R, what: &'static str) -> Result<u32, FormatError> {
    let mut buf = [0u8; 4];
    read_exact_or(source, &mut buf, FormatError::TruncatedHeader(what))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_exact_or<R: Read>(
    source: &mut R,
    buf: &mut [u8],
    short: FormatError,
) -> Result<(), FormatError> {
    match source.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(short),
        Err(e) => Err(e.into()),
    }
}

/// Reads `len` bytes without trusting `len` for the allocation size.
pub(crate) fn read_bounded<R: Read>(source: &mut R, len: u64) -> io::Result<Vec<u8>> {
    let mut out = Vec::with_capacity(len.min(READ_CHUNK) as usize);
    source.take(len).read_to_end(&mut out)?;
    Ok(out)
}

pub(crate) fn expect_eof<R: Read>(source: &mut R) -> Result<(), FormatError> {
    let mut probe = [0u8; 1];
    loop {
        match source.read(&mut probe) {
            Ok(0) => return Ok(()),
            Ok(_) => return Err(FormatError::TrailingBytes),
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
}

/// Parses the header and id block, leaving `source` positioned at the payload.
pub fn read_header<R: Read>(source: &mut R) -> Result<FeatureHeader, FormatError> {
    let mut magic = [0u8; 4];
    read_exact_or(source, &mut magic, FormatError::TruncatedHeader("magic"))?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = read_u32(source, "version")?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let frames = read_u32(source, "T")? as usize;
    let patches = read_u32(source, "P")? as usize;
    let dim = read_u32(source, "d")? as usize;
    if frames == 0 || patches == 0 || dim == 0 {
        return Err(FormatError::ShapeMismatch(format!(
            "every axis must be >= 1, got ({frames}, {patches}, {dim})"
        )));
    }
    let id_len = read_u32(source, "id length")? as u64;
    let id = read_bounded(source, id_len)?;
    if (id.len() as u64) < id_len {
        return Err(FormatError::TruncatedHeader("video id"));
    }
    let video_id = String::from_utf8(id).map_err(|_| FormatError::InvalidId)?;
    Ok(FeatureHeader {
        video_id,
        frames,
        patches,
        dim,
    })
}

/// Decodes one tensor; the stream must end exactly after the payload.
pub fn read_feature_file<R: Read>(source: R) -> Result<FeatureTensor, FormatError> {
    let mut source = BufReader::new(source);
    let header = read_header(&mut source)?;
    let count = (header.frames as u64)
        .checked_mul(header.patches as u64)
        .and_then(|n| n.checked_mul(header.dim as u64))
        .filter(|&n| n <= usize::MAX as u64 / 4)
        .ok_or_else(|| FormatError::ShapeMismatch("declared shape overflows".into()))?;
    let expected = count * 4;
    let payload = read_bounded(&mut source, expected)?;
    if (payload.len() as u64) < expected {
        return Err(FormatError::TruncatedPayload {
            expected,
            actual: payload.len() as u64,
        });
    }
    expect_eof(&mut source)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FeatureTensor::new(
        header.video_id,
        header.frames,
        header.patches,
        header.dim,
        data,
    )
}

pub fn load_tensor(path: &Path) -> Result<FeatureTensor, FormatError> {
    read_feature_file(File::open(path)?)
}

pub fn save_tensor(tensor: &FeatureTensor, path: &Path) -> Result<usize, FormatError> {
    // Validate before creating the file so a bad tensor leaves nothing behind.
    if let Some(index) = tensor.data.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite { index });
    }
    write_feature_file(tensor, File::create(path)?)
}

/// Reads only the header of an MVFT file.
pub fn probe_file(path: &Path) -> Result<FeatureHeader, FormatError> {
    read_header(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(t: &FeatureTensor) -> Vec<u8> {
        let mut buf = Vec::new();
        write_feature_file(t, &mut buf).unwrap();
        buf
    }

    #[test]
    fn smallest_tensor_layout() {
        let t = FeatureTensor::new("v", 1, 1, 2, vec![1.0, 2.0]).unwrap();
        let buf = encode(&t);
        assert_eq!(buf.len(), HEADER_LEN + 1 + 8);
        assert_eq!(&buf[..4], b"MVFT");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[20..24], &1u32.to_le_bytes());
        assert_eq!(buf[24], b'v');
        assert_eq!(&buf[25..29], &1.0f32.to_le_bytes());
        assert_eq!(&buf[29..33], &2.0f32.to_le_bytes());
    }

    #[test]
    fn nan_is_rejected_before_writing() {
        let mut t = FeatureTensor::new("v", 1, 1, 2, vec![1.0, 2.0]).unwrap();
        t.data[1] = f32::NAN;
        let mut buf = Vec::new();
        let err = write_feature_file(&t, &mut buf).unwrap_err();
        assert!(matches!(err, FormatError::NonFinite { index: 1 }));
        assert!(buf.is_empty());
        assert!(FeatureTensor::new("v", 1, 1, 2, vec![1.0, f32::NAN]).is_err());
    }

    #[test]
    fn backbone_sized_payload() {
        let (t, p, d) = (32usize, 256usize, 768usize);
        let tensor = FeatureTensor::new("clip", t, p, d, vec![0.5; t * p * d]).unwrap();
        let written = write_feature_file(&tensor, io::sink()).unwrap();
        assert_eq!(written - HEADER_LEN - 4, 25_165_824);
        assert_eq!(written, tensor.encoded_len());
    }

    #[test]
    fn wrong_magic() {
        let t = FeatureTensor::new("v", 1, 1, 1, vec![0.0]).unwrap();
        let mut buf = encode(&t);
        buf[0] = b'X';
        assert!(matches!(
            read_feature_file(&buf[..]),
            Err(FormatError::BadMagic { .. })
        ));
    }

    #[test]
    fn short_payload() {
        let t = FeatureTensor::new("v", 2, 1, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let buf = encode(&t);
        let err = read_feature_file(&buf[..buf.len() - 4]).unwrap_err();
        assert!(matches!(
            err,
            FormatError::TruncatedPayload {
                expected: 16,
                actual: 12
            }
        ));
    }

    #[test]
    fn trailing_and_version() {
        let t = FeatureTensor::new("v", 1, 1, 1, vec![0.0]).unwrap();
        let mut buf = encode(&t);
        buf.push(0);
        assert!(matches!(
            read_feature_file(&buf[..]),
            Err(FormatError::TrailingBytes)
        ));
        let mut buf = encode(&t);
        buf[4] = 2;
        assert!(matches!(
            read_feature_file(&buf[..]),
            Err(FormatError::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn huge_declared_shape_does_not_allocate() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"MVFT");
        for v in [1u32, u32::MAX, u32::MAX, u32::MAX, 0] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        assert!(read_feature_file(&buf[..]).is_err());
    }

    #[test]
    fn diagnostics() {
        let zeros = FeatureTensor::new("z", 2, 2, 2, vec![0.0; 8]).unwrap();
        let diag = validate(&zeros);
        assert!(diag.finite);
        assert_eq!((diag.min, diag.max, diag.mean), (0.0, 0.0, 0.0));
        assert!(diag.issues.is_empty());

        let mut bad = zeros.clone();
        bad.data[5] = f32::INFINITY;
        let diag = validate(&bad);
        assert!(!diag.finite);
        assert_eq!(diag.issues.len(), 1);
        assert!(diag.issues[0].contains("flat index 5"));
    }

    #[test]
    fn diagnostics_match_direct_scan() {
        let data: Vec<f32> = (0..60)
            .map(|i| ((i * 37 % 11) as f32 - 5.0) * 0.25)
            .collect();
        let t = FeatureTensor::new("r", 3, 4, 5, data.clone()).unwrap();
        let diag = validate(&t);
        let mut lo = f64::MAX;
        let mut hi = f64::MIN;
        let mut s = 0.0;
        for v in &data {
            lo = lo.min(*v as f64);
            hi = hi.max(*v as f64);
            s += *v as f64;
        }
        assert!(diag.issues.is_empty());
        assert_eq!((diag.min, diag.max), (lo, hi));
        assert!((diag.mean - s / 60.0).abs() < 1e-15);
    }

    fn arb_tensor() -> impl Strategy<Value = FeatureTensor> {
        (1usize..5, 1usize..4, 1usize..6, "[a-z0-9_]{0,12}").prop_flat_map(|(t, p, d, id)| {
            proptest::collection::vec(-1e6f32..1e6, t * p * d)
                .prop_map(move |data| FeatureTensor::new(id.clone(), t, p, d, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(t in arb_tensor()) {
            let buf = encode(&t);
            prop_assert_eq!(buf.len(), t.encoded_len());
            let back = read_feature_file(&buf[..]).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(encode(&back), buf);
        }

        #[test]
        fn every_truncation_is_rejected(t in arb_tensor(), cut in 0usize..1000) {
            let buf = encode(&t);
            let cut = cut % buf.len();
            prop_assert!(read_feature_file(&buf[..cut]).is_err());
        }
    }
}
