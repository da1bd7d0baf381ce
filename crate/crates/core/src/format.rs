//! On-disk formats. All integers are little-endian and fp16 payloads are raw
//! bit patterns.
//!
//! ```text
//! ECCT  "ECCT" ver:u16 dtype:u8(1=fp16) ndim:u8 dims:u64*ndim payload:u16*prod(dims)
//! ECCM  "ECCM" ver:u16 mode:u8(0=weight,1=kv) s_t_exp:i16 S:u16 H:u16 coding:u8(0=fixed,1=huffman)
//!       centroids:f32*(S*15)  codebooks:(len:u8,code:u8)*(S*H*16)
//!       [coding=huffman, S>=2] pattern code:(len:u8,code:u16)*S
//! ECCB  "ECCB" ver:u16 ratio:u8(4|2) ndim:u8 dims:u64*ndim groups:u64 pad:u64 blocks:[u8;64]*groups
//! ```

use std::path::Path;

use half::f16;

use crate::bits::PotScale;
use crate::calib::{HuffmanCodebook, KMeansPattern, Mode, PatternIndexCoding, PatternLibrary, TensorMeta, NUM_CENTROIDS, NUM_SYMBOLS};
use crate::error::{EccoError, Result};
use crate::tensor::TensorF16;

pub const VERSION: u16 = 1;
pub const DTYPE_F16: u8 = 1;
const BLOCK: usize = 64;

/// Tensor with its original dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<u64>,
    pub values: Vec<f16>,
}

impl TensorFile {
    pub fn from_tensor(t: &TensorF16) -> Self {
        Self {
            dims: vec![t.rows() as u64, t.cols() as u64],
            values: t.values().to_vec(),
        }
    }

    /// Rows are all leading dimensions, columns the last one.
    pub fn shape_2d(dims: &[u64]) -> (usize, usize) {
        match dims.split_last() {
            None => (1, 1),
            Some((&last, rest)) => (rest.iter().product::<u64>() as usize, last as usize),
        }
    }

    pub fn to_tensor(&self) -> Result<TensorF16> {
        let (rows, cols) = Self::shape_2d(&self.dims);
        TensorF16::new(rows, cols, self.values.clone())
    }
}

/// Compressed blob: header plus raw 64-byte blocks in group order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlobFile {
    /// Compression ratio tag, 4 or 2.
    pub ratio: u8,
    pub dims: Vec<u64>,
    pub pad: u64,
    pub blocks: Vec<[u8; BLOCK]>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn err(&self, msg: impl Into<String>) -> EccoError {
        EccoError::Format {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn i16(&mut self, what: &str) -> Result<i16> {
        Ok(i16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            self.pos = 0;
            return Err(self.err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        let v = self.u16("version")?;
        if v != VERSION {
            self.pos -= 2;
            return Err(self.err(format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn dims(&mut self) -> Result<Vec<u64>> {
        let ndim = self.u8("ndim")?;
        if ndim == 0 {
            return Err(self.err("ndim must be at least 1"));
        }
        (0..ndim).map(|_| self.u64("dimension")).collect()
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_dims(out: &mut Vec<u8>, dims: &[u64]) {
    out.push(dims.len() as u8);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
}

fn checked_elements(dims: &[u64], r: &Reader) -> Result<usize> {
    dims.iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= (usize::MAX / 2) as u64)
        .map(|n| n as usize)
        .ok_or_else(|| r.err("dimension product overflows"))
}

pub fn encode_tensor(t: &TensorFile) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * t.dims.len() + 2 * t.values.len());
    out.extend_from_slice(b"ECCT");
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F16);
    put_dims(&mut out, &t.dims);
    for v in &t.values {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    out
}

pub fn decode_tensor(buf: &[u8]) -> Result<TensorFile> {
    let mut r = Reader::new(buf);
    r.header(b"ECCT")?;
    let dtype = r.u8("dtype")?;
    if dtype != DTYPE_F16 {
        r.pos -= 1;
        return Err(r.err(format!("unsupported dtype code {dtype}")));
    }
    let dims = r.dims()?;
    let n = checked_elements(&dims, &r)?;
    let payload = r.take(2 * n, "fp16 payload")?;
    let values = payload
        .chunks_exact(2)
        .map(|c| f16::from_bits(u16::from_le_bytes([c[0], c[1]])))
        .collect();
    r.finish()?;
    Ok(TensorFile { dims, values })
}

pub fn encode_meta(m: &TensorMeta) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"ECCM");
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match m.mode {
        Mode::Weight => 0,
        Mode::Kv => 1,
    });
    out.extend_from_slice(&(m.s_t.exponent as i16).to_le_bytes());
    out.extend_from_slice(&(m.s() as u16).to_le_bytes());
    out.extend_from_slice(&(m.h as u16).to_le_bytes());
    out.push(match m.pattern_index_coding {
        PatternIndexCoding::Fixed => 0,
        PatternIndexCoding::Huffman => 1,
    });
    for p in &m.library.patterns {
        for c in p.centroids() {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for book in m.codebooks.iter().flatten() {
        for (&len, &code) in book.lengths().iter().zip(book.codes()) {
            out.push(len);
            out.push(code as u8);
        }
    }
    if let Some(code) = &m.pattern_index_code {
        for (&len, &c) in code.lengths().iter().zip(code.codes()) {
            out.push(len);
            out.extend_from_slice(&(c as u16).to_le_bytes());
        }
    }
    out
}

pub fn decode_meta(buf: &[u8]) -> Result<TensorMeta> {
    let mut r = Reader::new(buf);
    r.header(b"ECCM")?;
    let mode = match r.u8("mode")? {
        0 => Mode::Weight,
        1 => Mode::Kv,
        x => {
            r.pos -= 1;
            return Err(r.err(format!("unknown mode {x}")));
        }
    };
    let s_t = PotScale::new(r.i16("s_t exponent")? as i32);
    if !(-1000..=1000).contains(&s_t.exponent) {
        r.pos -= 2;
        return Err(r.err("s_t exponent out of range"));
    }
    let s = r.u16("S")? as usize;
    let h = r.u16("H")? as usize;
    if s == 0 || h == 0 || h > 16 {
        r.pos -= 4;
        return Err(r.err(format!("invalid S = {s} / H = {h}")));
    }
    let coding = match r.u8("pattern index coding")? {
        0 => PatternIndexCoding::Fixed,
        1 => PatternIndexCoding::Huffman,
        x => {
            r.pos -= 1;
            return Err(r.err(format!("unknown pattern index coding {x}")));
        }
    };
    let mut patterns = Vec::with_capacity(s);
    for _ in 0..s {
        let at = r.pos;
        let mut c = [0f32; NUM_CENTROIDS];
        for x in c.iter_mut() {
            *x = r.f32("centroid")?;
        }
        patterns.push(KMeansPattern::new(c).map_err(|e| EccoError::Format {
            offset: at,
            msg: e.to_string(),
        })?);
    }
    let mut codebooks = Vec::with_capacity(s);
    for _ in 0..s {
        let mut row = Vec::with_capacity(h);
        for _ in 0..h {
            let at = r.pos;
            let mut lens = [0u8; NUM_SYMBOLS];
            let mut codes = [0u32; NUM_SYMBOLS];
            for k in 0..NUM_SYMBOLS {
                lens[k] = r.u8("code length")?;
                codes[k] = r.u8("code")? as u32;
            }
            let bad = |msg: String| EccoError::Format { offset: at, msg };
            if lens.iter().any(|&l| !(2..=8).contains(&l)) {
                return Err(bad(format!("code lengths outside [2, 8]: {lens:?}")));
            }
            row.push(HuffmanCodebook::from_parts(&lens, &codes).map_err(|e| bad(e.to_string()))?);
        }
        codebooks.push(row);
    }
    let pattern_index_code = if coding == PatternIndexCoding::Huffman && s >= 2 {
        let at = r.pos;
        let mut lens = Vec::with_capacity(s);
        let mut codes = Vec::with_capacity(s);
        for _ in 0..s {
            lens.push(r.u8("pattern code length")?);
            codes.push(r.u16("pattern code")? as u32);
        }
        Some(HuffmanCodebook::from_parts(&lens, &codes).map_err(|e| EccoError::Format {
            offset: at,
            msg: e.to_string(),
        })?)
    } else {
        None
    };
    r.finish()?;
    let meta = TensorMeta {
        s_t,
        library: PatternLibrary { patterns },
        codebooks,
        h,
        mode,
        pattern_index_coding: coding,
        pattern_index_code,
    };
    meta.validate()?;
    Ok(meta)
}

pub fn encode_blob(b: &BlobFile) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * b.dims.len() + BLOCK * b.blocks.len());
    out.extend_from_slice(b"ECCB");
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(b.ratio);
    put_dims(&mut out, &b.dims);
    out.extend_from_slice(&(b.blocks.len() as u64).to_le_bytes());
    out.extend_from_slice(&b.pad.to_le_bytes());
    for block in &b.blocks {
        out.extend_from_slice(block);
    }
    out
}

pub fn decode_blob(buf: &[u8]) -> Result<BlobFile> {
    let mut r = Reader::new(buf);
    r.header(b"ECCB")?;
    let ratio = r.u8("ratio")?;
    if ratio != 4 && ratio != 2 {
        r.pos -= 1;
        return Err(r.err(format!("unknown ratio tag {ratio}")));
    }
    let dims = r.dims()?;
    let groups = r.u64("group count")?;
    let pad = r.u64("pad count")?;
    let elements = checked_elements(&dims, &r)? as u64;
    let group_size = if ratio == 4 { 128 } else { 64 };
    if elements.div_ceil(group_size) != groups || groups * group_size - elements != pad {
        return Err(r.err(format!(
            "{groups} groups with {pad} pad values do not cover {elements} elements"
        )));
    }
    let mut blocks = Vec::with_capacity(groups as usize);
    for i in 0..groups {
        if r.pos + BLOCK > buf.len() {
            return Err(EccoError::TruncatedBlob { block: i, total: groups });
        }
        blocks.push(r.take(BLOCK, "block")?.try_into().unwrap());
    }
    r.finish()?;
    Ok(BlobFile {
        ratio,
        dims,
        pad,
        blocks,
    })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| EccoError::Io(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| EccoError::Io(format!("{}: {e}", path.display())))
}

pub fn load_tensor(path: &Path) -> Result<TensorFile> {
    decode_tensor(&read_file(path)?)
}

pub fn save_tensor(path: &Path, t: &TensorFile) -> Result<()> {
    write_file(path, &encode_tensor(t))
}

pub fn load_meta(path: &Path) -> Result<TensorMeta> {
    decode_meta(&read_file(path)?)
}

pub fn save_meta(path: &Path, m: &TensorMeta) -> Result<()> {
    write_file(path, &encode_meta(m))
}

pub fn load_blob(path: &Path) -> Result<BlobFile> {
    decode_blob(&read_file(path)?)
}

pub fn save_blob(path: &Path, b: &BlobFile) -> Result<()> {
    write_file(path, &encode_blob(b))
}
