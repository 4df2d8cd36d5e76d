//! Little-endian binary helpers shared by the `BSMD` and `BSMF` containers.

use crate::error::{Error, Result};
use crate::sphmath::Complex;

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: impl IntoIterator<Item = f64>) {
        for v in vs {
            self.f64(v);
        }
    }

    pub fn complexes<'a>(&mut self, vs: impl IntoIterator<Item = &'a Complex>) {
        for v in vs {
            self.f64(v.re);
            self.f64(v.im);
        }
    }

    pub fn json(&mut self, value: &serde_json::Map<String, serde_json::Value>) -> Result<()> {
        let blob = serde_json::to_vec(value)?;
        let len = u32::try_from(blob.len())
            .map_err(|_| Error::InvalidData("metadata too large".into()))?;
        self.u32(len);
        self.bytes(&blob);
        Ok(())
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated(what))?;
        if end > self.buf.len() {
            return Err(Error::Truncated(what));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let m = self.take(4, "magic")?;
        let found = [m[0], m[1], m[2], m[3]];
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn f64(&mut self, what: &'static str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(Error::Truncated(what))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn complexes(&mut self, n: usize, what: &'static str) -> Result<Vec<Complex>> {
        let flat = self.f64s(n.checked_mul(2).ok_or(Error::Truncated(what))?, what)?;
        Ok(flat
            .chunks_exact(2)
            .map(|c| Complex::new(c[0], c[1]))
            .collect())
    }

    pub fn json(&mut self) -> Result<serde_json::Map<String, serde_json::Value>> {
        let len = self.u32("metadata length")? as usize;
        let blob = self.take(len, "metadata")?;
        Ok(serde_json::from_slice(blob)?)
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::dims(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn all_finite<'a>(vs: impl IntoIterator<Item = &'a Complex>) -> bool {
    vs.into_iter().all(|v| v.re.is_finite() && v.im.is_finite())
}
