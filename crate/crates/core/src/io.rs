//! On-disk matrix format and the asynchronous column streaming layer.
//!
//! Every matrix lives in its own file:
//!
//! ```text
//! offset  size  field
//!      0     8  magic  "OOCGLS01"
//!      8     8  rows   u64 little-endian
//!     16     8  cols   u64 little-endian
//!     24     4  dtype  u32 little-endian, 1 = float64
//!     28     4  reserved, zero
//!     32   8rc  payload, column-major little-endian IEEE-754 f64
//! ```
//!
//! Column `j` therefore starts at byte `32 + 8 * rows * j`, which is what
//! lets the streaming reader pull arbitrary column ranges of a matrix far
//! larger than memory.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;

use thiserror::Error;

use crate::clock::{Span, WallClock};
use crate::matrix::Matrix;

pub const MAGIC: [u8; 8] = *b"OOCGLS01";
pub const HEADER_LEN: u64 = 32;
pub const DTYPE_F64: u32 = 1;

#[derive(Debug, Error)]
pub enum MatrixIoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: bad magic {found:?}, expected \"OOCGLS01\"", path.display())]
    BadMagic { path: PathBuf, found: [u8; 8] },
    #[error("{}: unsupported dtype {dtype}, expected 1 (float64)", path.display())]
    BadDtype { path: PathBuf, dtype: u32 },
    #[error("{}: file is {found} bytes but header implies {expected}", path.display())]
    LengthMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("{}: columns {first}..{} out of range for {cols} columns", path.display(), first + count)]
    RangeOutOfBounds {
        path: PathBuf,
        first: u64,
        count: u64,
        cols: u64,
    },
    #[error("slab holds {capacity} values but {needed} are required")]
    SlabTooSmall { needed: usize, capacity: usize },
    #[error("data has {found} values but {expected} were declared")]
    DataLength { expected: usize, found: usize },
    #[error("I/O worker terminated")]
    WorkerGone,
}

impl MatrixIoError {
    /// Malformed or inconsistent file contents, as opposed to an OS failure.
    pub fn is_format_error(&self) -> bool {
        matches!(
            self,
            MatrixIoError::BadMagic { .. }
                | MatrixIoError::BadDtype { .. }
                | MatrixIoError::LengthMismatch { .. }
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MatrixIoError + '_ {
    move |source| MatrixIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixFileHeader {
    pub rows: u64,
    pub cols: u64,
    pub dtype: u32,
}

impl MatrixFileHeader {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows: rows as u64,
            cols: cols as u64,
            dtype: DTYPE_F64,
        }
    }

    pub fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut b = [0u8; HEADER_LEN as usize];
        b[0..8].copy_from_slice(&MAGIC);
        b[8..16].copy_from_slice(&self.rows.to_le_bytes());
        b[16..24].copy_from_slice(&self.cols.to_le_bytes());
        b[24..28].copy_from_slice(&self.dtype.to_le_bytes());
        b
    }

    /// Parses and validates magic and dtype. Reserved bytes are ignored.
    pub fn decode(path: &Path, b: &[u8; HEADER_LEN as usize]) -> Result<Self, MatrixIoError> {
        let mut magic = [0u8; 8];
        magic.copy_from_slice(&b[0..8]);
        if magic != MAGIC {
            return Err(MatrixIoError::BadMagic {
                path: path.to_path_buf(),
                found: magic,
            });
        }
        let word = |r: std::ops::Range<usize>| {
            let mut w = [0u8; 8];
            w.copy_from_slice(&b[r]);
            u64::from_le_bytes(w)
        };
        let dtype = u32::from_le_bytes([b[24], b[25], b[26], b[27]]);
        if dtype != DTYPE_F64 {
            return Err(MatrixIoError::BadDtype {
                path: path.to_path_buf(),
                dtype,
            });
        }
        Ok(Self {
            rows: word(8..16),
            cols: word(16..24),
            dtype,
        })
    }

    pub fn payload_len(&self) -> u64 {
        self.rows * self.cols * 8
    }

    pub fn file_len(&self) -> u64 {
        HEADER_LEN + self.payload_len()
    }

    fn column_offset(&self, col: u64) -> u64 {
        HEADER_LEN + col * self.rows * 8
    }
}

/// Exact size in bytes of a `rows x cols` matrix file.
pub fn file_len(rows: usize, cols: usize) -> u64 {
    MatrixFileHeader::new(rows, cols).file_len()
}

fn read_header_from(path: &Path, f: &File) -> Result<MatrixFileHeader, MatrixIoError> {
    let mut b = [0u8; HEADER_LEN as usize];
    f.read_exact_at(&mut b, 0).map_err(io_err(path))?;
    let h = MatrixFileHeader::decode(path, &b)?;
    let len = f.metadata().map_err(io_err(path))?.len();
    if len != h.file_len() {
        return Err(MatrixIoError::LengthMismatch {
            path: path.to_path_buf(),
            expected: h.file_len(),
            found: len,
        });
    }
    Ok(h)
}

/// Reads and validates the header of `path`.
pub fn read_header(path: impl AsRef<Path>) -> Result<MatrixFileHeader, MatrixIoError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(io_err(path))?;
    read_header_from(path, &f)
}

#[cfg(target_endian = "little")]
fn encode_payload(data: &[f64]) -> std::borrow::Cow<'_, [u8]> {
    std::borrow::Cow::Borrowed(bytemuck::cast_slice(data))
}

#[cfg(not(target_endian = "little"))]
fn encode_payload(data: &[f64]) -> std::borrow::Cow<'_, [u8]> {
    std::borrow::Cow::Owned(data.iter().flat_map(|v| v.to_le_bytes()).collect())
}

fn fill_from_le(path: &Path, f: &File, offset: u64, dest: &mut [f64]) -> Result<(), MatrixIoError> {
    f.read_exact_at(bytemuck::cast_slice_mut(dest), offset)
        .map_err(io_err(path))?;
    #[cfg(not(target_endian = "little"))]
    for v in dest.iter_mut() {
        *v = f64::from_le_bytes(v.to_ne_bytes());
    }
    Ok(())
}

/// Writes a whole matrix, replacing any existing file.
pub fn write_matrix(
    path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    data: &[f64],
) -> Result<(), MatrixIoError> {
    let path = path.as_ref();
    if data.len() != rows * cols {
        return Err(MatrixIoError::DataLength {
            expected: rows * cols,
            found: data.len(),
        });
    }
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(&MatrixFileHeader::new(rows, cols).encode())
        .map_err(io_err(path))?;
    f.write_all(&encode_payload(data)).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

pub fn write_matrix_from(path: impl AsRef<Path>, m: &Matrix) -> Result<(), MatrixIoError> {
    write_matrix(path, m.rows(), m.cols(), m.as_slice())
}

/// Reads a whole matrix.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix, MatrixIoError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(io_err(path))?;
    let h = read_header_from(path, &f)?;
    let mut data = vec![0.0; (h.rows * h.cols) as usize];
    fill_from_le(path, &f, HEADER_LEN, &mut data)?;
    Matrix::from_col_major(h.rows as usize, h.cols as usize, data).map_err(|_| {
        MatrixIoError::DataLength {
            expected: (h.rows * h.cols) as usize,
            found: 0,
        }
    })
}

/// Creates a zero-filled `rows x cols` file to be filled by column writes.
pub fn create_matrix(path: impl AsRef<Path>, rows: usize, cols: usize) -> Result<(), MatrixIoError> {
    let path = path.as_ref();
    let h = MatrixFileHeader::new(rows, cols);
    let f = File::create(path).map_err(io_err(path))?;
    f.write_all_at(&h.encode(), 0).map_err(io_err(path))?;
    f.set_len(h.file_len()).map_err(io_err(path))
}

fn check_range(
    path: &Path,
    h: &MatrixFileHeader,
    first: usize,
    count: usize,
) -> Result<(), MatrixIoError> {
    let end = first as u64 + count as u64;
    if end > h.cols {
        return Err(MatrixIoError::RangeOutOfBounds {
            path: path.to_path_buf(),
            first: first as u64,
            count: count as u64,
            cols: h.cols,
        });
    }
    Ok(())
}

fn read_columns_from(
    path: &Path,
    f: &File,
    h: &MatrixFileHeader,
    first: usize,
    count: usize,
    dest: &mut [f64],
) -> Result<(), MatrixIoError> {
    check_range(path, h, first, count)?;
    let needed = h.rows as usize * count;
    if dest.len() < needed {
        return Err(MatrixIoError::SlabTooSmall {
            needed,
            capacity: dest.len(),
        });
    }
    if needed == 0 {
        return Ok(());
    }
    fill_from_le(path, f, h.column_offset(first as u64), &mut dest[..needed])
}

fn write_columns_to(
    path: &Path,
    f: &File,
    h: &MatrixFileHeader,
    first: usize,
    count: usize,
    src: &[f64],
) -> Result<(), MatrixIoError> {
    check_range(path, h, first, count)?;
    let needed = h.rows as usize * count;
    if src.len() < needed {
        return Err(MatrixIoError::SlabTooSmall {
            needed,
            capacity: src.len(),
        });
    }
    if needed == 0 {
        return Ok(());
    }
    f.write_all_at(&encode_payload(&src[..needed]), h.column_offset(first as u64))
        .map_err(io_err(path))
}

/// Synchronously reads columns `[first, first + count)` into `dest`
/// (column-major, `rows * count` values).
pub fn read_columns(
    path: impl AsRef<Path>,
    first: usize,
    count: usize,
    dest: &mut [f64],
) -> Result<MatrixFileHeader, MatrixIoError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(io_err(path))?;
    let h = read_header_from(path, &f)?;
    read_columns_from(path, &f, &h, first, count, dest)?;
    Ok(h)
}

/// Synchronously overwrites columns `[first, first + count)` of an existing file.
pub fn write_columns(
    path: impl AsRef<Path>,
    first: usize,
    count: usize,
    src: &[f64],
) -> Result<(), MatrixIoError> {
    let path = path.as_ref();
    let f = OpenOptions::new()
        .read(true)
        .write(true)
        .open(path)
        .map_err(io_err(path))?;
    let h = read_header_from(path, &f)?;
    write_columns_to(path, &f, &h, first, count, src)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferKind {
    Read,
    Write,
}

/// What a completed transfer hands back: the slab (now free for reuse) and
/// the wall-clock interval the transfer occupied on the worker.
#[derive(Debug)]
pub struct Completed {
    pub slab: Vec<f64>,
    pub span: Span,
}

struct Job {
    kind: TransferKind,
    path: PathBuf,
    first: usize,
    count: usize,
    slab: Vec<f64>,
    reply: mpsc::Sender<Result<Completed, MatrixIoError>>,
}

/// One in-flight read or write. The slab travels with the operation and is
/// returned by [`StreamHandle::wait`], so nothing else can touch it meanwhile.
#[must_use = "an in-flight transfer must be waited on"]
#[derive(Debug)]
pub struct StreamHandle {
    pub kind: TransferKind,
    pub first_col: usize,
    pub count: usize,
    rx: mpsc::Receiver<Result<Completed, MatrixIoError>>,
}

impl StreamHandle {
    /// Blocks until the transfer is complete. Deferred I/O errors surface here.
    pub fn wait(self) -> Result<Completed, MatrixIoError> {
        self.rx.recv().map_err(|_| MatrixIoError::WorkerGone)?
    }
}

/// A dedicated I/O worker thread. Operations run in dispatch order on the
/// worker; distinct streams run concurrently with each other and with the
/// caller.
pub struct IoStream {
    tx: Option<mpsc::Sender<Job>>,
    worker: Option<thread::JoinHandle<()>>,
}

struct OpenFile {
    file: File,
    header: MatrixFileHeader,
    writable: bool,
}

fn open_cached<'a>(
    cache: &'a mut HashMap<PathBuf, OpenFile>,
    path: &Path,
    writable: bool,
) -> Result<&'a OpenFile, MatrixIoError> {
    let stale = cache.get(path).is_some_and(|f| writable && !f.writable);
    if stale || !cache.contains_key(path) {
        let file = OpenOptions::new()
            .read(true)
            .write(writable)
            .open(path)
            .map_err(io_err(path))?;
        let header = read_header_from(path, &file)?;
        cache.insert(
            path.to_path_buf(),
            OpenFile {
                file,
                header,
                writable,
            },
        );
    }
    Ok(&cache[path])
}

fn run_job(cache: &mut HashMap<PathBuf, OpenFile>, job: &mut Job) -> Result<(), MatrixIoError> {
    let writable = job.kind == TransferKind::Write;
    let of = open_cached(cache, &job.path, writable)?;
    let needed = of.header.rows as usize * job.count;
    match job.kind {
        TransferKind::Read => {
            if job.slab.capacity() < needed {
                return Err(MatrixIoError::SlabTooSmall {
                    needed,
                    capacity: job.slab.capacity(),
                });
            }
            job.slab.resize(needed, 0.0);
            read_columns_from(&job.path, &of.file, &of.header, job.first, job.count, &mut job.slab)
        }
        TransferKind::Write => write_columns_to(
            &job.path,
            &of.file,
            &of.header,
            job.first,
            job.count,
            &job.slab,
        ),
    }
}

impl IoStream {
    pub fn spawn(name: &str, clock: WallClock) -> Self {
        let (tx, rx) = mpsc::channel::<Job>();
        let worker = thread::Builder::new()
            .name(name.to_string())
            .spawn(move || {
                let mut cache = HashMap::new();
                for mut job in rx {
                    let t0 = clock.now();
                    let res = run_job(&mut cache, &mut job);
                    let span = Span::new(t0, clock.now());
                    let out = res.map(|()| Completed {
                        slab: std::mem::take(&mut job.slab),
                        span,
                    });
                    // Receiver may have been dropped if the caller bailed out.
                    let _ = job.reply.send(out);
                }
            })
            .expect("failed to spawn I/O worker");
        Self {
            tx: Some(tx),
            worker: Some(worker),
        }
    }

    fn submit(
        &self,
        kind: TransferKind,
        path: &Path,
        first: usize,
        count: usize,
        slab: Vec<f64>,
    ) -> StreamHandle {
        let (reply, rx) = mpsc::channel();
        let job = Job {
            kind,
            path: path.to_path_buf(),
            first,
            count,
            slab,
            reply,
        };
        if let Some(tx) = &self.tx {
            // A send failure drops `reply`, which wait() reports as WorkerGone.
            let _ = tx.send(job);
        }
        StreamHandle {
            kind,
            first_col: first,
            count,
            rx,
        }
    }

    /// Reads columns `[first, first + count)` of `path` into `slab`. The
    /// slab's capacity must hold `rows * count` values; its length is set
    /// to exactly that on completion.
    pub fn read_columns_async(
        &self,
        path: &Path,
        first: usize,
        count: usize,
        slab: Vec<f64>,
    ) -> StreamHandle {
        self.submit(TransferKind::Read, path, first, count, slab)
    }

    /// Writes the first `rows * count` values of `slab` into columns
    /// `[first, first + count)` of an existing file.
    pub fn write_columns_async(
        &self,
        path: &Path,
        first: usize,
        count: usize,
        slab: Vec<f64>,
    ) -> StreamHandle {
        self.submit(TransferKind::Write, path, first, count, slab)
    }
}

impl Drop for IoStream {
    fn drop(&mut self) {
        drop(self.tx.take());
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
