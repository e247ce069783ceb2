//! Binary embedding and projection-weight files.
//!
//! Both formats are little-endian and share one header layout:
//!
//! ```text
//! magic      [u8; 4]   "ADPE" (embeddings) or "ADPW" (weights)
//! version    u32       1
//! rows       u32
//! cols       u32
//! segments   u32
//! per segment:
//!   kind     u8
//!   length   u32       rows covered by the segment
//!   view     u32       camera view id (visual segments only, else 0)
//! [weights only] heads u32, head_dim u32
//! payload    rows * cols f32, row-major
//! ```
//!
//! Embedding segment kinds: 0 BOS, 1 VIS, 2 PROP, 3 TXT, 4 ACT, 5 EOS.
//! Weight files carry two segments, kind 0 for `W_Q` and kind 1 for `W_K`,
//! each `D` rows long, so `rows = 2D` and `cols = D`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{AdpError, Result};
use crate::scoring::{EmbeddingMatrix, ProjectionWeights, Segment, SegmentKind};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"ADPE";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"ADPW";
pub const FORMAT_VERSION: u32 = 1;

const WEIGHT_KIND_Q: u8 = 0;
const WEIGHT_KIND_K: u8 = 1;

struct RawSegment {
    kind: u8,
    len: u32,
    view: u32,
}

struct Header {
    rows: usize,
    cols: usize,
    segments: Vec<RawSegment>,
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b[0])
}

fn truncated(e: std::io::Error) -> AdpError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        AdpError::format("unexpected end of file")
    } else {
        AdpError::Io(e)
    }
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<Header> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(truncated)?;
    if &m != magic {
        return Err(AdpError::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(AdpError::format(format!("unsupported version {version}")));
    }
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let n = read_u32(r)? as usize;
    // Each segment record is 9 bytes, so anything beyond rows is bogus.
    if n > rows.max(1) * 6 + 6 {
        return Err(AdpError::format(format!("implausible segment count {n}")));
    }
    let mut segments = Vec::with_capacity(n);
    for _ in 0..n {
        segments.push(RawSegment {
            kind: read_u8(r)?,
            len: read_u32(r)?,
            view: read_u32(r)?,
        });
    }
    let covered: u64 = segments.iter().map(|s| s.len as u64).sum();
    if covered != rows as u64 {
        return Err(AdpError::format(format!(
            "segments cover {covered} rows, header says {rows}"
        )));
    }
    Ok(Header {
        rows,
        cols,
        segments,
    })
}

fn read_payload<R: Read>(r: &mut R, count: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes).map_err(truncated)?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(AdpError::format("trailing bytes after payload"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_header<W: Write>(
    w: &mut W,
    magic: &[u8; 4],
    rows: usize,
    cols: usize,
    segments: &[(u8, usize, u32)],
) -> Result<()> {
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| AdpError::invalid(format!("{what} {v} does not fit in u32")))
    };
    w.write_all(magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&to_u32(rows, "rows")?.to_le_bytes())?;
    w.write_all(&to_u32(cols, "cols")?.to_le_bytes())?;
    w.write_all(&to_u32(segments.len(), "segment count")?.to_le_bytes())?;
    for &(kind, len, view) in segments {
        w.write_all(&[kind])?;
        w.write_all(&to_u32(len, "segment length")?.to_le_bytes())?;
        w.write_all(&view.to_le_bytes())?;
    }
    Ok(())
}

fn write_payload<W: Write>(w: &mut W, data: &[f32]) -> Result<()> {
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_embeddings<R: Read>(mut r: R) -> Result<EmbeddingMatrix> {
    let header = read_header(&mut r, EMBEDDING_MAGIC)?;
    let segments = header
        .segments
        .iter()
        .map(|s| {
            let kind = SegmentKind::from_code(s.kind)?;
            if kind != SegmentKind::Vis && s.view != 0 {
                return Err(AdpError::format(format!(
                    "{kind:?} segment has non-zero view id {}",
                    s.view
                )));
            }
            Ok(Segment {
                kind,
                len: s.len as usize,
                view: s.view,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let data = read_payload(&mut r, header.rows * header.cols)?;
    EmbeddingMatrix::new(header.cols, data, segments)
        .map_err(|e| AdpError::format(format!("invalid embedding contents: {e}")))
}

pub fn write_embeddings<W: Write>(mut w: W, m: &EmbeddingMatrix) -> Result<()> {
    let segs: Vec<(u8, usize, u32)> = m
        .segments()
        .iter()
        .map(|s| (s.kind.code(), s.len, s.view))
        .collect();
    write_header(&mut w, EMBEDDING_MAGIC, m.rows(), m.cols(), &segs)?;
    write_payload(&mut w, m.data())?;
    w.flush()?;
    Ok(())
}

pub fn read_weights<R: Read>(mut r: R) -> Result<ProjectionWeights> {
    let header = read_header(&mut r, WEIGHTS_MAGIC)?;
    let heads = read_u32(&mut r)? as usize;
    let head_dim = read_u32(&mut r)? as usize;
    let d = header.cols;
    if header.segments.len() != 2 || header.rows != 2 * d {
        return Err(AdpError::format(format!(
            "weights file must hold two {d}x{d} matrices, got {} segments over {} rows",
            header.segments.len(),
            header.rows
        )));
    }
    let data = read_payload(&mut r, header.rows * d)?;
    let mut w_q = None;
    let mut w_k = None;
    let mut offset = 0;
    for s in &header.segments {
        let len = s.len as usize;
        if len != d || s.view != 0 {
            return Err(AdpError::format(
                "weight segments must be D rows with view 0",
            ));
        }
        let block = data[offset * d..(offset + len) * d].to_vec();
        let slot = match s.kind {
            WEIGHT_KIND_Q => &mut w_q,
            WEIGHT_KIND_K => &mut w_k,
            other => return Err(AdpError::format(format!("unknown weight kind {other}"))),
        };
        if slot.replace(block).is_some() {
            return Err(AdpError::format(format!(
                "duplicate weight kind {}",
                s.kind
            )));
        }
        offset += len;
    }
    let (Some(w_q), Some(w_k)) = (w_q, w_k) else {
        return Err(AdpError::format("weights file needs both W_Q and W_K"));
    };
    ProjectionWeights::new(w_q, w_k, heads, head_dim)
        .map_err(|e| AdpError::format(format!("invalid weights: {e}")))
}

pub fn write_weights<W: Write>(mut w: W, p: &ProjectionWeights) -> Result<()> {
    p.validate()?;
    let d = p.width();
    let segs = [(WEIGHT_KIND_Q, d, 0), (WEIGHT_KIND_K, d, 0)];
    write_header(&mut w, WEIGHTS_MAGIC, 2 * d, d, &segs)?;
    w.write_all(&(p.num_heads as u32).to_le_bytes())?;
    w.write_all(&(p.head_dim as u32).to_le_bytes())?;
    write_payload(&mut w, &p.w_q)?;
    write_payload(&mut w, &p.w_k)?;
    w.flush()?;
    Ok(())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    read_embeddings(BufReader::new(File::open(path)?))
}

pub fn save_embeddings(path: impl AsRef<Path>, m: &EmbeddingMatrix) -> Result<()> {
    write_embeddings(BufWriter::new(File::create(path)?), m)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ProjectionWeights> {
    read_weights(BufReader::new(File::open(path)?))
}

pub fn save_weights(path: impl AsRef<Path>, p: &ProjectionWeights) -> Result<()> {
    write_weights(BufWriter::new(File::create(path)?), p)
}
