//! `QKV1` tensor container: the magic bytes, little-endian u32 `f, h, w, d`,
//! then `Q`, `K`, `V` as row-major little-endian f64.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layout::VideoShape;
use crate::solver::AttentionProblem;
use crate::tensor::DenseMatrix;

const MAGIC: &[u8; 4] = b"QKV1";

/// Little-endian reader that reports failures with byte offsets.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(Error::Parse {
                offset: self.bytes.len(),
                msg: format!(
                    "truncated {what}: missing {} bytes ({len} needed at byte {}, {available} left)",
                    len - available,
                    self.pos
                ),
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let at = self.pos;
        let got = self.take(4, "magic")?;
        if got != want {
            return Err(Error::Parse {
                offset: at,
                msg: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(want)
                ),
            });
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4, "header")?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub(crate) fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let len = count.checked_mul(8).ok_or_else(|| Error::Parse {
            offset: self.pos,
            msg: "payload size overflows".into(),
        })?;
        let b = self.take(len, "payload")?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Parse {
                offset: self.pos,
                msg: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

pub fn encode_tensors(problem: &AttentionProblem) -> Vec<u8> {
    let s = problem.shape();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for x in [s.f, s.h, s.w, problem.d()] {
        out.extend_from_slice(&(x as u32).to_le_bytes());
    }
    for m in [problem.q(), problem.k(), problem.v()] {
        for x in m.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Parses a container. `V` must have the same width `d` as `Q` and `K`.
pub fn decode_tensors(bytes: &[u8]) -> Result<AttentionProblem> {
    let mut cur = Cursor::new(bytes);
    cur.magic(MAGIC)?;
    let [f, h, w, d] = [cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?].map(|x| x as usize);
    if f == 0 || h == 0 || w == 0 || d == 0 {
        return Err(Error::Parse {
            offset: 4,
            msg: format!("header has a zero dimension: f={f} h={h} w={w} d={d}"),
        });
    }
    let shape = VideoShape::new(f, h, w)?;
    let n = shape.n();
    let mut mats = Vec::with_capacity(3);
    for _ in 0..3 {
        let at = cur.offset();
        let data = cur.f64s(n * d)?;
        let m = DenseMatrix::from_vec(n, d, data).map_err(|e| Error::Parse {
            offset: at,
            msg: e.to_string(),
        })?;
        mats.push(m);
    }
    if cur.offset() != bytes.len() {
        // more bytes than f·h·w·d implies: report the N the payload suggests
        let implied = (bytes.len() - 20) / (3 * 8 * d);
        return Err(Error::Parse {
            offset: cur.offset(),
            msg: format!(
                "payload implies N = {implied} but header gives f*h*w = {n}"
            ),
        });
    }
    let v = mats.pop().expect("three matrices");
    let k = mats.pop().expect("three matrices");
    let q = mats.pop().expect("three matrices");
    AttentionProblem::new(shape, q, k, v)
}

pub fn save_tensors(path: &Path, problem: &AttentionProblem) -> Result<()> {
    fs::write(path, encode_tensors(problem))?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<AttentionProblem> {
    decode_tensors(&fs::read(path)?)
}
