//! File-based persistence: JSONL record files, run manifests and the
//! workspace directory layout.
//!
//! A JSONL file written by [`JsonlWriter`] has a sidecar `<file>.offset`
//! holding the byte length of the last fully written batch. The sidecar is
//! replaced by atomic rename after each batch, so a crash mid-batch leaves
//! a tail that [`JsonlWriter::open`] truncates away on the next run.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use syntheval_core::divergence::DivergenceRecord;
use syntheval_core::query::Query;
use syntheval_core::scoring::Prediction;
use syntheval_core::template::ExpandedCase;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("record {index}: {message}")]
    Schema { index: usize, message: String },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{path}: batch interrupted after {written} bytes")]
    Interrupted { path: PathBuf, written: u64 },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// A type stored one-per-line. `check` enforces constraints the type
/// system does not.
pub trait Record: Serialize + DeserializeOwned {
    fn check(&self) -> Result<(), String> {
        Ok(())
    }
}

impl Record for Query {
    fn check(&self) -> Result<(), String> {
        if self.words.iter().any(|w| w.is_empty() || w.contains(char::is_whitespace)) {
            return Err("query words must be non-empty and contain no whitespace".into());
        }
        Ok(())
    }
}

impl Record for Prediction {
    fn check(&self) -> Result<(), String> {
        let labels: Vec<String> = self.probs.keys().cloned().collect();
        if labels.is_empty() || !self.is_valid_for(&labels) {
            return Err(format!("probabilities for {} are not a distribution", self.example_id));
        }
        Ok(())
    }
}

impl Record for DivergenceRecord {
    fn check(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.score) || self.rank == 0 {
            return Err(format!("invalid score or rank for {}", self.example_id));
        }
        Ok(())
    }
}

impl Record for ExpandedCase {}

/// One generated example, as stored in the dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthExample {
    pub id: String,
    pub query: Vec<String>,
    pub text: String,
    pub raw: String,
    pub model_id: String,
}

impl Record for SynthExample {
    fn check(&self) -> Result<(), String> {
        if self.text.trim().is_empty() {
            return Err(format!("example {} has empty text", self.id));
        }
        Ok(())
    }
}

/// A query that produced no example, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedExample {
    pub id: String,
    pub reason: String,
}

impl Record for SkippedExample {}

fn offset_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".offset");
    path.with_file_name(name)
}

fn read_committed(path: &Path) -> Result<Option<u64>, StoreError> {
    match fs::read_to_string(offset_path(path)) {
        Ok(s) => Ok(s.trim().parse().ok()),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(StoreError::Io { path: offset_path(path), source: e }),
    }
}

fn write_committed(path: &Path, offset: u64) -> Result<(), StoreError> {
    let side = offset_path(path);
    let tmp = side.with_extension("offset.tmp");
    fs::write(&tmp, offset.to_string()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &side).map_err(io_err(&side))
}

/// Single-writer appender with batch-level crash recovery.
pub struct JsonlWriter {
    path: PathBuf,
    file: File,
    committed: u64,
    fault_after: Option<u64>,
}

impl JsonlWriter {
    /// Opens for appending. Anything past the last committed batch is
    /// truncated. A file without a sidecar is taken as fully committed.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = OpenOptions::new().create(true).truncate(false).read(true).write(true).open(&path).map_err(io_err(&path))?;
        let len = file.metadata().map_err(io_err(&path))?.len();
        let committed = read_committed(&path)?.map_or(len, |c| c.min(len));
        if committed < len {
            file.set_len(committed).map_err(io_err(&path))?;
        }
        write_committed(&path, committed)?;
        Ok(Self { path, file, committed, fault_after: None })
    }

    /// Opens and discards any existing content.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let mut w = Self::open(path)?;
        w.file.set_len(0).map_err(io_err(&w.path))?;
        w.committed = 0;
        write_committed(&w.path, 0)?;
        Ok(w)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Byte length of the committed content.
    pub fn committed_len(&self) -> u64 {
        self.committed
    }

    /// Fault injection: the next batch stops after writing `bytes` bytes
    /// and reports [`StoreError::Interrupted`], as a crash would.
    pub fn interrupt_next_batch_after(&mut self, bytes: u64) {
        self.fault_after = Some(bytes);
    }

    /// Writes one batch. Every record is validated and serialized before
    /// the file is touched, so a schema error writes nothing.
    pub fn append_records<R: Record>(&mut self, records: &[R]) -> Result<usize, StoreError> {
        let mut buf = Vec::new();
        for (index, r) in records.iter().enumerate() {
            r.check().map_err(|message| StoreError::Schema { index, message })?;
            serde_json::to_writer(&mut buf, r).map_err(|e| StoreError::Schema { index, message: e.to_string() })?;
            buf.push(b'\n');
        }
        self.file.seek(SeekFrom::Start(self.committed)).map_err(io_err(&self.path))?;
        if let Some(limit) = self.fault_after.take() {
            let cut = (limit as usize).min(buf.len());
            self.file.write_all(&buf[..cut]).map_err(io_err(&self.path))?;
            self.file.flush().map_err(io_err(&self.path))?;
            return Err(StoreError::Interrupted { path: self.path.clone(), written: cut as u64 });
        }
        self.file.write_all(&buf).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))?;
        self.committed += buf.len() as u64;
        write_committed(&self.path, self.committed)?;
        Ok(records.len())
    }
}

/// Writes `records` to a fresh file in one batch.
pub fn write_records<R: Record>(path: impl AsRef<Path>, records: &[R]) -> Result<usize, StoreError> {
    JsonlWriter::create(path)?.append_records(records)
}

/// Streaming reader; holds one line in memory at a time.
pub struct RecordReader<R, T> {
    path: PathBuf,
    reader: R,
    line: usize,
    buf: String,
    _marker: PhantomData<T>,
}

impl<R: BufRead, T: DeserializeOwned> Iterator for RecordReader<R, T> {
    type Item = Result<T, StoreError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(source) => return Some(Err(StoreError::Io { path: self.path.clone(), source })),
            }
            self.line += 1;
            let line = self.buf.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() {
                continue;
            }
            return Some(serde_json::from_str(line).map_err(|e| StoreError::Malformed {
                path: self.path.clone(),
                line: self.line,
                message: e.to_string(),
            }));
        }
    }
}

pub fn read_records<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<RecordReader<BufReader<File>, T>, StoreError> {
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path).map_err(io_err(&path))?;
    Ok(RecordReader { reader: BufReader::new(file), path, line: 0, buf: String::new(), _marker: PhantomData })
}

/// Reads every record into memory.
pub fn load_records<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, StoreError> {
    read_records(path)?.collect()
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<(), StoreError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|source| StoreError::Json { path: path.into(), source })?;
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T, StoreError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| StoreError::Json { path: path.into(), source })
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String, StoreError> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sample,
    Generate,
    Predict,
    Rank,
    Analyze,
    Verify,
}

impl Stage {
    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Sample => "sample",
            Stage::Generate => "generate",
            Stage::Predict => "predict",
            Stage::Rank => "rank",
            Stage::Analyze => "analyze",
            Stage::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the workspace root when the file lives inside it.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub stage: Stage,
    pub config: serde_json::Value,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub counts: BTreeMap<String, u64>,
    pub started_at: String,
    pub finished_at: String,
    pub wall_clock_ms: u64,
}

/// Source of timestamps for manifests. `Zero` makes reruns byte-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    Zero,
}

pub const ZERO_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

impl Clock {
    pub fn now(self) -> Stamp {
        match self {
            Clock::System => Stamp(Some(chrono::Utc::now())),
            Clock::Zero => Stamp(None),
        }
    }
}

/// A point in time as seen by a [`Clock`].
#[derive(Debug, Clone, Copy)]
pub struct Stamp(Option<chrono::DateTime<chrono::Utc>>);

impl Stamp {
    pub fn rfc3339(self) -> String {
        self.0
            .map(|t| t.to_rfc3339_opts(chrono::SecondsFormat::Millis, true))
            .unwrap_or_else(|| ZERO_TIMESTAMP.into())
    }

    pub fn millis_until(self, later: Stamp) -> u64 {
        match (self.0, later.0) {
            (Some(a), Some(b)) => (b - a).num_milliseconds().max(0) as u64,
            _ => 0,
        }
    }
}

/// Root directory holding `templates/`, `lexicons/` and `runs/<id>/<stage>/`.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn templates_dir(&self) -> PathBuf {
        self.root.join("templates")
    }

    pub fn lexicons_dir(&self) -> PathBuf {
        self.root.join("lexicons")
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    pub fn stage_dir(&self, run_id: &str, stage: Stage) -> PathBuf {
        self.run_dir(run_id).join(stage.dir_name())
    }

    /// Relative paths are taken relative to the root.
    pub fn resolve(&self, path: impl AsRef<Path>) -> PathBuf {
        let path = path.as_ref();
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    /// Path as recorded in manifests: root-relative with `/` separators
    /// when possible.
    pub fn display_path(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
    }

    pub fn artifact(&self, path: &Path) -> Result<Artifact, StoreError> {
        Ok(Artifact { path: self.display_path(path), sha256: file_digest(path)? })
    }
}

/// Builder for a stage manifest; digests are taken when it is finished.
pub struct ManifestBuilder {
    run_id: String,
    stage: Stage,
    clock: Clock,
    started: Stamp,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    counts: BTreeMap<String, u64>,
}

impl ManifestBuilder {
    pub fn start(run_id: &str, stage: Stage, clock: Clock, config: serde_json::Value) -> Self {
        Self {
            run_id: run_id.into(),
            stage,
            clock,
            started: clock.now(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            counts: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) -> &mut Self {
        self.inputs.push(path.into());
        self
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) -> &mut Self {
        self.outputs.push(path.into());
        self
    }

    pub fn count(&mut self, key: &str, value: u64) -> &mut Self {
        self.counts.insert(key.into(), value);
        self
    }

    pub fn finish(&self, ws: &Workspace) -> Result<RunManifest, StoreError> {
        let finished = self.clock.now();
        Ok(RunManifest {
            run_id: self.run_id.clone(),
            stage: self.stage,
            config: self.config.clone(),
            inputs: self.inputs.iter().map(|p| ws.artifact(p)).collect::<Result<_, _>>()?,
            outputs: self.outputs.iter().map(|p| ws.artifact(p)).collect::<Result<_, _>>()?,
            counts: self.counts.clone(),
            started_at: self.started.rfc3339(),
            finished_at: finished.rfc3339(),
            wall_clock_ms: self.started.millis_until(finished),
        })
    }

    /// Finishes and writes the manifest to `path`.
    pub fn write(&self, ws: &Workspace, path: impl AsRef<Path>) -> Result<RunManifest, StoreError> {
        let manifest = self.finish(ws)?;
        write_json(path, &manifest)?;
        Ok(manifest)
    }
}
