//! Feature files and corpus manifests.
//!
//! `FSEQ1` layout, all little-endian:
//!
//! | bytes   | field                     |
//! |---------|---------------------------|
//! | 0..4    | magic `b"FSEQ"`           |
//! | 4..8    | `u32` version = 1         |
//! | 8..12   | `u32` dim                 |
//! | 12..16  | `u32` n_frames            |
//! | 16..20  | `f32` hop_ms              |
//! | 20..    | `n_frames * dim` `f32`, frame-major |
//!
//! The manifest is JSON lines, one utterance per line.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FSEQ";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// One utterance's frame-level features, an `n_frames x dim` row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    utterance_id: String,
    frames: Vec<f32>,
    dim: usize,
    hop_ms: f32,
}

impl FeatureSequence {
    pub fn new(
        utterance_id: impl Into<String>,
        frames: Vec<f32>,
        dim: usize,
        hop_ms: f32,
    ) -> Result<Self> {
        let seq = Self {
            utterance_id: utterance_id.into(),
            frames,
            dim,
            hop_ms,
        };
        seq.validate()?;
        Ok(seq)
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Validation("feature dimension must be >= 1".into()));
        }
        if self.frames.is_empty() {
            return Err(Error::Validation(format!(
                "utterance {:?} has no frames",
                self.utterance_id
            )));
        }
        if !self.frames.len().is_multiple_of(self.dim) {
            return Err(Error::Validation(format!(
                "frame buffer length {} is not a multiple of dim {}",
                self.frames.len(),
                self.dim
            )));
        }
        if !(self.hop_ms.is_finite() && self.hop_ms > 0.0) {
            return Err(Error::Validation(format!(
                "hop_ms must be positive, got {}",
                self.hop_ms
            )));
        }
        if let Some(pos) = self.frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value at frame {}, dim {}",
                pos / self.dim,
                pos % self.dim
            )));
        }
        Ok(())
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.utterance_id = id.into();
        self
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hop_ms(&self) -> f32 {
        self.hop_ms
    }

    pub fn duration_ms(&self) -> f64 {
        self.n_frames() as f64 * self.hop_ms as f64
    }

    /// Row-major frame data.
    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn frame(&self, index: usize) -> &[f32] {
        &self.frames[index * self.dim..(index + 1) * self.dim]
    }

    /// Encode to `FSEQ1` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        encode_matrix(&self.frames, self.dim, self.hop_ms)
    }

    /// Decode `FSEQ1` bytes. The utterance id is not part of the format.
    pub fn from_bytes(utterance_id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        let (frames, dim, hop_ms) = decode_matrix(bytes)?;
        if frames.is_empty() {
            return Err(Error::Validation("feature file has zero frames".into()));
        }
        Self::new(utterance_id, frames, dim, hop_ms)
    }
}

/// Raw `FSEQ1` encoding of an `rows x dim` matrix. Also used for index snapshots.
pub(crate) fn encode_matrix(values: &[f32], dim: usize, hop_ms: f32) -> Vec<u8> {
    let rows = values.len().checked_div(dim).unwrap_or(0);
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&hop_ms.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn decode_matrix(bytes: &[u8]) -> Result<(Vec<f32>, usize, f32)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"FSEQ\"",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = u32_at(8) as usize;
    let rows = u32_at(12) as usize;
    let hop_ms = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if dim == 0 {
        return Err(Error::Format("header dim is 0".into()));
    }
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Corrupt(format!(
            "payload is {} bytes, header declares {rows} x {dim} values ({expected} bytes)",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((values, dim, hop_ms))
}

pub fn write_feature_file(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    seq.validate()?;
    fs::write(path, seq.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Read a feature file; the utterance id is taken from the file stem.
pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureSequence::from_bytes(id, &bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?} (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub feature_path: PathBuf,
    pub split: Split,
    pub duration_ms: f64,
    /// Interior word boundaries only; utterance edges are implicit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_boundaries_ms: Option<Vec<f64>>,
}

impl ManifestEntry {
    fn validate(&self) -> Result<()> {
        if !(self.duration_ms.is_finite() && self.duration_ms >= 0.0) {
            return Err(Error::Validation(format!(
                "{}: duration_ms must be finite and >= 0",
                self.id
            )));
        }
        if let Some(bounds) = &self.ref_boundaries_ms {
            for (i, b) in bounds.iter().enumerate() {
                if !b.is_finite() || *b < 0.0 || *b > self.duration_ms {
                    return Err(Error::Validation(format!(
                        "{}: boundary {b} outside [0, {}]",
                        self.id, self.duration_ms
                    )));
                }
                if i > 0 && *b <= bounds[i - 1] {
                    return Err(Error::Validation(format!(
                        "{}: reference boundaries not strictly increasing ({} then {b})",
                        self.id,
                        bounds[i - 1]
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative feature paths are resolved against.
    pub root: PathBuf,
}

impl CorpusManifest {
    pub fn new(entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Result<Self> {
        let manifest = Self {
            entries,
            root: root.into(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for entry in &self.entries {
            entry.validate()?;
            if !seen.insert(entry.id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate utterance id {:?}",
                    entry.id
                )));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.feature_path.is_absolute() {
            entry.feature_path.clone()
        } else {
            self.root.join(&entry.feature_path)
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("manifest entry serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(BufReader::new(file), root).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_manifest(reader: impl BufRead, root: impl Into<PathBuf>) -> Result<CorpusManifest> {
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<manifest>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    CorpusManifest::new(entries, root)
}

pub fn write_manifest(manifest: &CorpusManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(manifest.to_jsonl().as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Source of feature sequences for manifest entries.
pub trait FeatureLoader: Sync {
    fn load(
        &self,
        manifest: &CorpusManifest,
        entry: &ManifestEntry,
    ) -> Result<Arc<FeatureSequence>>;
}

/// Reads `FSEQ1` files from disk on every call.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiskLoader;

impl FeatureLoader for DiskLoader {
    fn load(
        &self,
        manifest: &CorpusManifest,
        entry: &ManifestEntry,
    ) -> Result<Arc<FeatureSequence>> {
        let seq = read_feature_file(manifest.resolve(entry))?;
        Ok(Arc::new(seq.with_id(entry.id.clone())))
    }
}

/// Sequences held in memory, keyed by utterance id.
#[derive(Debug, Clone, Default)]
pub struct MemoryLoader {
    sequences: HashMap<String, Arc<FeatureSequence>>,
}

impl MemoryLoader {
    pub fn new(sequences: impl IntoIterator<Item = FeatureSequence>) -> Self {
        Self {
            sequences: sequences
                .into_iter()
                .map(|s| (s.utterance_id().to_owned(), Arc::new(s)))
                .collect(),
        }
    }
}

impl FeatureLoader for MemoryLoader {
    fn load(&self, _: &CorpusManifest, entry: &ManifestEntry) -> Result<Arc<FeatureSequence>> {
        self.sequences
            .get(&entry.id)
            .cloned()
            .ok_or_else(|| Error::Validation(format!("no features for utterance {:?}", entry.id)))
    }
}

/// Memoizes another loader; each file is read at most once.
#[derive(Debug, Default)]
pub struct CachingLoader<L> {
    inner: L,
    cache: Mutex<HashMap<PathBuf, Arc<FeatureSequence>>>,
}

impl<L: FeatureLoader> CachingLoader<L> {
    pub fn new(inner: L) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl<L: FeatureLoader> FeatureLoader for CachingLoader<L> {
    fn load(
        &self,
        manifest: &CorpusManifest,
        entry: &ManifestEntry,
    ) -> Result<Arc<FeatureSequence>> {
        let key = manifest.resolve(entry);
        if let Some(seq) = self.cache.lock().unwrap().get(&key) {
            return Ok(Arc::clone(seq));
        }
        let seq = self.inner.load(manifest, entry)?;
        self.cache.lock().unwrap().insert(key, Arc::clone(&seq));
        Ok(seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_file_is_24_bytes() {
        let seq = FeatureSequence::new("u", vec![0.0], 1, 20.0).unwrap();
        let bytes = seq.to_bytes();
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[..4], b"FSEQ");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &20.0f32.to_le_bytes());
        assert_eq!(&bytes[20..], &[0, 0, 0, 0]);
    }

    #[test]
    fn size_is_header_plus_payload() {
        let seq = FeatureSequence::new("u", vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 20.0).unwrap();
        assert_eq!(seq.n_frames(), 3);
        assert_eq!(seq.to_bytes().len(), 20 + 3 * 2 * 4);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("utt7.fseq");
        let seq = FeatureSequence::new("utt7", vec![1.5, -2.25, 3e-8, 7.0], 2, 20.0).unwrap();
        write_feature_file(&seq, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 36);
        let back = read_feature_file(&path).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = FeatureSequence::new("u", vec![1.0], 1, 20.0)
            .unwrap()
            .to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            FeatureSequence::from_bytes("u", &bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn rejects_bad_version() {
        let mut bytes = FeatureSequence::new("u", vec![1.0], 1, 20.0)
            .unwrap()
            .to_bytes();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            FeatureSequence::from_bytes("u", &bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let bytes = FeatureSequence::new("u", vec![1.0; 6], 2, 20.0)
            .unwrap()
            .to_bytes();
        let short = &bytes[..bytes.len() - 4];
        assert!(matches!(
            FeatureSequence::from_bytes("u", short),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn non_finite_payload_fails_validation() {
        let mut bytes = FeatureSequence::new("u", vec![1.0; 4], 2, 20.0)
            .unwrap()
            .to_bytes();
        bytes[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            FeatureSequence::from_bytes("u", &bytes),
            Err(Error::Validation(_))
        ));
        assert!(FeatureSequence::new("u", vec![f32::INFINITY], 1, 20.0).is_err());
    }

    #[test]
    fn invalid_sequences_are_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.fseq");
        let bad = FeatureSequence {
            utterance_id: "x".into(),
            frames: vec![1.0],
            dim: 1,
            hop_ms: 0.0,
        };
        assert!(write_feature_file(&bad, &path).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn empty_manifest() {
        let m = parse_manifest("".as_bytes(), "").unwrap();
        assert!(m.entries.is_empty());
    }

    #[test]
    fn manifest_rejects_duplicates() {
        let text = r#"{"id":"a","feature_path":"a.fseq","split":"train","duration_ms":100}
{"id":"a","feature_path":"b.fseq","split":"val","duration_ms":100}
"#;
        assert!(matches!(
            parse_manifest(text.as_bytes(), ""),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn manifest_rejects_unsorted_boundaries() {
        let text = r#"{"id":"a","feature_path":"a.fseq","split":"val","duration_ms":500,"ref_boundaries_ms":[300.0,120.0]}"#;
        assert!(matches!(
            parse_manifest(text.as_bytes(), ""),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn manifest_parse_error_reports_line() {
        let text = "{\"id\":\"a\",\"feature_path\":\"a\",\"split\":\"val\",\"duration_ms\":1}\n\nnot json\n";
        match parse_manifest(text.as_bytes(), "") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_keeps_order_and_resolves_paths() {
        let text = r#"{"id":"b","feature_path":"f/b.fseq","split":"val","duration_ms":400,"ref_boundaries_ms":[100.0,250.5]}
{"id":"a","feature_path":"/abs/a.fseq","split":"train","duration_ms":200}
"#;
        let m = parse_manifest(text.as_bytes(), "/data").unwrap();
        let ids: Vec<_> = m.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["b", "a"]);
        assert_eq!(m.resolve(&m.entries[0]), PathBuf::from("/data/f/b.fseq"));
        assert_eq!(m.resolve(&m.entries[1]), PathBuf::from("/abs/a.fseq"));
        let again = parse_manifest(m.to_jsonl().as_bytes(), "/data").unwrap();
        assert_eq!(again, m);
    }

    proptest! {
        #[test]
        fn bytes_round_trip(
            dim in 1usize..6,
            rows in 1usize..20,
            hop in 0.5f32..100.0,
            seed in proptest::collection::vec(-1e6f32..1e6, 120),
        ) {
            let frames: Vec<f32> = seed.iter().cycle().take(dim * rows).copied().collect();
            let seq = FeatureSequence::new("p", frames, dim, hop).unwrap();
            let bytes = seq.to_bytes();
            prop_assert_eq!(bytes.len(), 20 + 4 * rows * dim);
            let back = FeatureSequence::from_bytes("p", &bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back, seq);
        }
    }
}
