//! AXT: a minimal binary container for one row-major rank-2 tensor.
//!
//! ```text
//! "AXT1" | u32 LE header length | UTF-8 JSON header | raw LE payload
//! ```
//!
//! The header is `{"dtype":"f32"|"f64","shape":[rows,cols],"byte_order":"little"}`
//! and the payload holds exactly `rows × cols` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use featalign_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"AXT1";
const MAX_HEADER_BYTES: u32 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxtHeader {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub byte_order: String,
}

impl AxtHeader {
    pub fn new(dtype: Dtype, rows: usize, cols: usize) -> Self {
        Self {
            dtype,
            shape: vec![rows, cols],
            byte_order: "little".into(),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn payload_bytes(&self) -> u64 {
        (self.rows() as u64) * (self.cols() as u64) * self.dtype.size() as u64
    }

    fn encode(&self) -> Vec<u8> {
        let json = serde_json::to_vec(self).expect("header serializes");
        let mut out = Vec::with_capacity(8 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out
    }
}

fn encode_values(values: &[f64], dtype: Dtype, out: &mut Vec<u8>) {
    match dtype {
        Dtype::F32 => values.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => values.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
}

fn decode_values(bytes: &[u8], dtype: Dtype, out: &mut Vec<f64>) {
    match dtype {
        Dtype::F32 => out.extend(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64),
        ),
        Dtype::F64 => out.extend(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()))),
    }
}

/// Writes `m` in one go. Values are narrowed to `dtype`.
pub fn write_tensor(path: impl AsRef<Path>, m: &Matrix, dtype: Dtype) -> Result<()> {
    let mut w = AxtWriter::create(path, dtype, m.rows(), m.cols())?;
    w.write_rows(m)?;
    w.finish()
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Matrix> {
    AxtReader::open(path)?.read_all()
}

/// Streaming writer; the shape is fixed up front and checked on `finish`.
pub struct AxtWriter {
    path: PathBuf,
    out: BufWriter<File>,
    header: AxtHeader,
    rows_written: usize,
    scratch: Vec<u8>,
}

impl AxtWriter {
    pub fn create(path: impl AsRef<Path>, dtype: Dtype, rows: usize, cols: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let header = AxtHeader::new(dtype, rows, cols);
        let mut out = BufWriter::new(File::create(&path).at(&path)?);
        out.write_all(&header.encode()).at(&path)?;
        Ok(Self {
            path,
            out,
            header,
            rows_written: 0,
            scratch: Vec::new(),
        })
    }

    pub fn write_rows(&mut self, block: &Matrix) -> Result<()> {
        if block.cols() != self.header.cols() && block.rows() > 0 {
            return Err(format_err(
                &self.path,
                format!("block has {} columns, tensor has {}", block.cols(), self.header.cols()),
            ));
        }
        if self.rows_written + block.rows() > self.header.rows() {
            return Err(format_err(&self.path, "more rows written than declared"));
        }
        self.scratch.clear();
        encode_values(block.as_slice(), self.header.dtype, &mut self.scratch);
        self.out.write_all(&self.scratch).at(&self.path)?;
        self.rows_written += block.rows();
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.rows_written != self.header.rows() {
            return Err(format_err(
                &self.path,
                format!("declared {} rows, wrote {}", self.header.rows(), self.rows_written),
            ));
        }
        self.out.flush().at(&self.path)
    }
}

/// Validated handle on an AXT file. Cheap to clone; every block stream
/// opens its own file handle.
#[derive(Debug, Clone)]
pub struct AxtReader {
    path: PathBuf,
    header: AxtHeader,
    data_offset: u64,
}

impl AxtReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut f = File::open(&path).at(&path)?;
        let file_len = f.metadata().at(&path)?.len();
        let mut prologue = [0u8; 8];
        f.read_exact(&mut prologue)
            .map_err(|_| format_err(&path, "file shorter than the 8-byte prologue"))?;
        if &prologue[..4] != MAGIC {
            return Err(format_err(&path, "bad magic (expected AXT1)"));
        }
        let hlen = u32::from_le_bytes(prologue[4..].try_into().unwrap());
        if hlen > MAX_HEADER_BYTES || 8 + hlen as u64 > file_len {
            return Err(format_err(&path, format!("implausible header length {hlen}")));
        }
        let mut raw = vec![0u8; hlen as usize];
        f.read_exact(&mut raw).at(&path)?;
        let header: AxtHeader =
            serde_json::from_slice(&raw).map_err(|e| format_err(&path, format!("corrupt header: {e}")))?;
        if header.byte_order != "little" {
            return Err(format_err(&path, format!("unsupported byte order `{}`", header.byte_order)));
        }
        if header.shape.len() != 2 {
            return Err(format_err(&path, format!("expected rank 2, got shape {:?}", header.shape)));
        }
        let data_offset = 8 + hlen as u64;
        let payload = file_len - data_offset;
        if payload != header.payload_bytes() {
            return Err(format_err(
                &path,
                format!(
                    "payload is {payload} bytes, shape {:?} of {:?} needs {}",
                    header.shape,
                    header.dtype,
                    header.payload_bytes()
                ),
            ));
        }
        Ok(Self {
            path,
            header,
            data_offset,
        })
    }

    pub fn header(&self) -> &AxtHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn rows(&self) -> usize {
        self.header.rows()
    }

    pub fn cols(&self) -> usize {
        self.header.cols()
    }

    /// Row blocks of at most `block_rows` rows, in order.
    pub fn blocks(&self, block_rows: usize) -> Result<Blocks> {
        if block_rows == 0 {
            return Err(format_err(&self.path, "block_rows must be at least 1"));
        }
        let mut f = File::open(&self.path).at(&self.path)?;
        f.seek(SeekFrom::Start(self.data_offset)).at(&self.path)?;
        Ok(Blocks {
            reader: self.clone(),
            input: BufReader::with_capacity(1 << 20, f),
            block_rows,
            next_row: 0,
            bytes: Vec::new(),
        })
    }

    pub fn read_all(&self) -> Result<Matrix> {
        match self.blocks(self.rows().max(1))?.next() {
            Some(block) => Ok(block?.1),
            None => Ok(Matrix::zeros(0, self.cols())),
        }
    }

    /// The listed columns of every row, in the listed order.
    pub fn read_columns(&self, cols: &[usize], block_rows: usize) -> Result<Matrix> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.cols()) {
            return Err(format_err(&self.path, format!("column {bad} out of range 0..{}", self.cols())));
        }
        let mut out = Matrix::zeros(self.rows(), cols.len());
        for block in self.blocks(block_rows)? {
            let (offset, m) = block?;
            for r in 0..m.rows() {
                let src = m.row(r);
                let dst = out.row_mut(offset + r);
                for (d, &c) in dst.iter_mut().zip(cols) {
                    *d = src[c];
                }
            }
        }
        Ok(out)
    }
}

/// Iterator over `(row offset, block)`.
pub struct Blocks {
    reader: AxtReader,
    input: BufReader<File>,
    block_rows: usize,
    next_row: usize,
    bytes: Vec<u8>,
}

impl Iterator for Blocks {
    type Item = Result<(usize, Matrix)>;

    fn next(&mut self) -> Option<Self::Item> {
        let total = self.reader.rows();
        if self.next_row >= total {
            return None;
        }
        let start = self.next_row;
        let rows = self.block_rows.min(total - start);
        let cols = self.reader.cols();
        let dtype = self.reader.header.dtype;
        self.bytes.resize(rows * cols * dtype.size(), 0);
        if let Err(e) = self.input.read_exact(&mut self.bytes) {
            self.next_row = total;
            return Some(Err(format_err(&self.reader.path, format!("truncated payload: {e}"))));
        }
        let mut values = Vec::with_capacity(rows * cols);
        decode_values(&self.bytes, dtype, &mut values);
        self.next_row += rows;
        Some(Matrix::from_vec(rows, cols, values).map(|m| (start, m)).map_err(Into::into))
    }
}
