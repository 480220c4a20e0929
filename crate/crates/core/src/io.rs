//! On-disk formats for field samples and kernels, and resumable ensemble
//! checkpoints.
//!
//! A block file is `b"CFLD"`, a little-endian `u32` version, `u64` rows and
//! `u64` columns, then `rows * cols` complex values as interleaved
//! little-endian `f64` pairs `(re, im)`, row-major. Metadata lives in a JSON
//! sidecar with the same stem.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_field::FieldSample;
use crate::hilbert::{CMatrix, C64};

const MAGIC: &[u8; 4] = b"CFLD";
pub const FORMAT_VERSION: u32 = 1;

/// Writes a row-major complex block.
pub fn write_block<W: Write>(mut w: W, rows: usize, cols: usize, data: &[C64]) -> Result<()> {
    if data.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            got: data.len(),
        });
    }
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    for z in data {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a block written by [`write_block`]: `(rows, cols, values)`.
pub fn read_block<R: Read>(mut r: R) -> Result<(usize, usize, Vec<C64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a field block (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported block version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let rows = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let cols = u64::from_le_bytes(b8) as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("block dimensions overflow".into()))?;
    let mut data = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        let re = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        data.push(C64::new(re, f64::from_le_bytes(b8)));
    }
    if r.read(&mut b8)? != 0 {
        return Err(Error::Format("trailing bytes after block".into()));
    }
    Ok((rows, cols, data))
}

fn sidecar(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Sidecar for a block of field samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub format_version: u32,
    pub kernel_hash: String,
    pub rows: usize,
    pub cols: usize,
    /// `(seed, index)` for every row.
    pub streams: Vec<(u64, u64)>,
}

/// Saves samples to `stem.bin` and `stem.json`.
pub fn save_samples(stem: &Path, samples: &[FieldSample], kernel_hash: &str) -> Result<()> {
    let cols = samples.first().map_or(0, |s| s.values.len());
    if let Some(bad) = samples.iter().find(|s| s.values.len() != cols) {
        return Err(Error::DimensionMismatch {
            expected: cols,
            got: bad.values.len(),
        });
    }
    let (bin, json) = sidecar(stem);
    let data: Vec<C64> = samples.iter().flat_map(|s| s.values.iter().copied()).collect();
    write_block(BufWriter::new(fs::File::create(&bin)?), samples.len(), cols, &data)?;
    let meta = SampleMeta {
        format_version: FORMAT_VERSION,
        kernel_hash: kernel_hash.to_string(),
        rows: samples.len(),
        cols,
        streams: samples.iter().map(|s| (s.seed, s.index)).collect(),
    };
    write_json_atomic(&json, &meta)
}

pub fn load_samples(stem: &Path) -> Result<(Vec<FieldSample>, SampleMeta)> {
    let (bin, json) = sidecar(stem);
    let meta: SampleMeta = serde_json::from_slice(&fs::read(&json)?)?;
    let (rows, cols, data) = read_block(BufReader::new(fs::File::open(&bin)?))?;
    if rows != meta.rows || cols != meta.cols || meta.streams.len() != rows {
        return Err(Error::Format(format!(
            "block is {rows}x{cols} but metadata says {}x{} with {} streams",
            meta.rows,
            meta.cols,
            meta.streams.len()
        )));
    }
    let samples = meta
        .streams
        .iter()
        .enumerate()
        .map(|(i, &(seed, index))| FieldSample {
            values: data[i * cols..(i + 1) * cols].to_vec(),
            seed,
            index,
        })
        .collect();
    Ok((samples, meta))
}

/// Sidecar for a kernel matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub format_version: u32,
    pub rows: usize,
    pub cols: usize,
    pub kernel_hash: Option<String>,
}

pub fn save_matrix(stem: &Path, m: &CMatrix, kernel_hash: Option<&str>) -> Result<()> {
    let (bin, json) = sidecar(stem);
    let data: Vec<C64> = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
    write_block(BufWriter::new(fs::File::create(&bin)?), m.nrows(), m.ncols(), &data)?;
    write_json_atomic(
        &json,
        &MatrixMeta {
            format_version: FORMAT_VERSION,
            rows: m.nrows(),
            cols: m.ncols(),
            kernel_hash: kernel_hash.map(str::to_string),
        },
    )
}

pub fn load_matrix(stem: &Path) -> Result<(CMatrix, MatrixMeta)> {
    let (bin, json) = sidecar(stem);
    let meta: MatrixMeta = serde_json::from_slice(&fs::read(&json)?)?;
    let (rows, cols, data) = read_block(BufReader::new(fs::File::open(&bin)?))?;
    if rows != meta.rows || cols != meta.cols {
        return Err(Error::Format("matrix block disagrees with metadata".into()));
    }
    Ok((CMatrix::from_row_slice(rows, cols, &data), meta))
}

/// One saved chunk of a checkpointed ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub stem: String,
    pub first_index: u64,
    pub count: usize,
    pub weights: Vec<f64>,
}

/// Manifest of a checkpoint directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub kernel_hash: String,
    pub seed: u64,
    pub target: usize,
    pub chunks: Vec<ChunkRecord>,
}

impl CheckpointManifest {
    pub fn completed(&self) -> usize {
        self.chunks.iter().map(|c| c.count).sum()
    }
}

/// A directory of sample chunks plus `manifest.json`.
///
/// The manifest is rewritten only after a chunk's files are on disk, so an
/// interrupted run loses at most the chunk in flight.
#[derive(Debug)]
pub struct EnsembleCheckpoint {
    dir: PathBuf,
    manifest: CheckpointManifest,
}

impl EnsembleCheckpoint {
    const MANIFEST: &'static str = "manifest.json";

    /// Opens an existing checkpoint or starts a new one. An existing manifest
    /// must agree on kernel hash, seed and target.
    pub fn open_or_create(dir: &Path, kernel_hash: &str, seed: u64, target: usize) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(Self::MANIFEST);
        let manifest = if path.exists() {
            let m: CheckpointManifest = serde_json::from_slice(&fs::read(&path)?)?;
            if m.kernel_hash != kernel_hash || m.seed != seed || m.target != target {
                return Err(Error::Format(format!(
                    "checkpoint in {} belongs to another run (hash {}, seed {}, target {})",
                    dir.display(),
                    m.kernel_hash,
                    m.seed,
                    m.target
                )));
            }
            m
        } else {
            let m = CheckpointManifest {
                format_version: FORMAT_VERSION,
                kernel_hash: kernel_hash.to_string(),
                seed,
                target,
                chunks: Vec::new(),
            };
            write_json_atomic(&path, &m)?;
            m
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn manifest(&self) -> &CheckpointManifest {
        &self.manifest
    }

    pub fn completed(&self) -> usize {
        self.manifest.completed()
    }

    pub fn is_complete(&self) -> bool {
        self.completed() >= self.manifest.target
    }

    /// Appends the next contiguous chunk.
    pub fn append(&mut self, samples: &[FieldSample], weights: &[f64]) -> Result<()> {
        if samples.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: samples.len(),
                got: weights.len(),
            });
        }
        let first = self.completed() as u64;
        if samples.iter().enumerate().any(|(k, s)| s.index != first + k as u64) {
            return Err(Error::Format(format!("chunk must start at sample {first}")));
        }
        let stem = format!("chunk-{:06}", self.manifest.chunks.len());
        save_samples(&self.dir.join(&stem), samples, &self.manifest.kernel_hash)?;
        self.manifest.chunks.push(ChunkRecord {
            stem,
            first_index: first,
            count: samples.len(),
            weights: weights.to_vec(),
        });
        write_json_atomic(&self.dir.join(Self::MANIFEST), &self.manifest)
    }

    /// Everything saved so far, in index order.
    pub fn load(&self) -> Result<(Vec<FieldSample>, Vec<f64>)> {
        let mut samples = Vec::with_capacity(self.completed());
        let mut weights = Vec::with_capacity(self.completed());
        for c in &self.manifest.chunks {
            let (s, meta) = load_samples(&self.dir.join(&c.stem))?;
            if meta.kernel_hash != self.manifest.kernel_hash || s.len() != c.count {
                return Err(Error::Format(format!("chunk {} is inconsistent with the manifest", c.stem)));
            }
            samples.extend(s);
            weights.extend_from_slice(&c.weights);
        }
        Ok((samples, weights))
    }

    /// Fills the checkpoint up to its target in chunks of `chunk`, skipping
    /// samples already on disk. `draw(i)` must be a pure function of `i`.
    pub fn run<F>(&mut self, chunk: usize, draw: F) -> Result<(Vec<FieldSample>, Vec<f64>)>
    where
        F: Fn(u64) -> Result<(FieldSample, f64)> + Sync,
    {
        if chunk == 0 {
            return Err(Error::invalid("chunk", "must be >= 1"));
        }
        while !self.is_complete() {
            let start = self.completed();
            let n = chunk.min(self.manifest.target - start);
            let drawn = crate::parallel::try_map_indices(n, |k| draw((start + k) as u64))?;
            let (s, w): (Vec<_>, Vec<_>) = drawn.into_iter().unzip();
            self.append(&s, &w)?;
        }
        self.load()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(i: u64) -> FieldSample {
        FieldSample {
            values: vec![C64::new(i as f64, -0.5), C64::new(1e-300, f64::MAX)],
            seed: 7,
            index: i,
        }
    }

    #[test]
    fn block_layout_is_little_endian_interleaved() {
        let mut buf = Vec::new();
        write_block(&mut buf, 1, 1, &[C64::new(1.0, -2.0)]).unwrap();
        assert_eq!(&buf[..4], b"CFLD");
        assert_eq!(buf.len(), 4 + 4 + 16 + 16);
        assert_eq!(&buf[8..16], &1u64.to_le_bytes());
        assert_eq!(&buf[24..32], &1.0f64.to_le_bytes());
        assert_eq!(&buf[32..40], &(-2.0f64).to_le_bytes());
    }

    #[test]
    fn truncated_and_foreign_blocks_are_rejected() {
        let mut buf = Vec::new();
        write_block(&mut buf, 2, 1, &[C64::new(1.0, 0.0); 2]).unwrap();
        assert!(read_block(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_block(&bad[..]), Err(Error::Format(_))));
        buf.push(0);
        assert!(matches!(read_block(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn samples_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("xi");
        let samples: Vec<_> = (0..3).map(sample).collect();
        save_samples(&stem, &samples, "abc").unwrap();
        let (back, meta) = load_samples(&stem).unwrap();
        assert_eq!(back, samples);
        assert_eq!(meta.kernel_hash, "abc");
    }

    #[test]
    fn matrix_round_trip_keeps_row_major_order() {
        let dir = tempfile::tempdir().unwrap();
        let m = CMatrix::from_fn(2, 3, |i, j| C64::new(i as f64, j as f64));
        save_matrix(&dir.path().join("k"), &m, None).unwrap();
        assert_eq!(load_matrix(&dir.path().join("k")).unwrap().0, m);
    }

    #[test]
    fn checkpoint_resumes_where_it_stopped() {
        let dir = tempfile::tempdir().unwrap();
        let draw = |i: u64| Ok((sample(i), 1.0 + i as f64));
        {
            let mut cp = EnsembleCheckpoint::open_or_create(dir.path(), "h", 7, 10).unwrap();
            let first: Vec<_> = (0..4).map(sample).collect();
            cp.append(&first, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        }
        let mut cp = EnsembleCheckpoint::open_or_create(dir.path(), "h", 7, 10).unwrap();
        assert_eq!(cp.completed(), 4);
        let (s, w) = cp.run(3, draw).unwrap();
        let (s_fresh, w_fresh): (Vec<_>, Vec<_>) = (0..10).map(|i| draw(i).unwrap()).unzip();
        assert_eq!(s, s_fresh);
        assert_eq!(w, w_fresh);
        assert_eq!(cp.manifest().chunks.len(), 3);
    }

    #[test]
    fn checkpoint_refuses_foreign_runs() {
        let dir = tempfile::tempdir().unwrap();
        EnsembleCheckpoint::open_or_create(dir.path(), "h", 7, 10).unwrap();
        assert!(EnsembleCheckpoint::open_or_create(dir.path(), "other", 7, 10).is_err());
        assert!(EnsembleCheckpoint::open_or_create(dir.path(), "h", 8, 10).is_err());
        let mut cp = EnsembleCheckpoint::open_or_create(dir.path(), "h", 7, 10).unwrap();
        assert!(cp.append(&[sample(3)], &[1.0]).is_err());
    }
}
