use crate::error::{Error, Result};
use crate::scheme::{GradientDirection, MultiShellScheme, Shell};

#[derive(Default)]
pub(crate) struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut e = Self { buf: magic.to_vec() };
        e.u32(version);
        e
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.f64(*v);
        }
    }

    pub fn len_u32(&mut self, n: usize) -> Result<()> {
        let v = u32::try_from(n).map_err(|_| Error::invalid(format!("{n} does not fit the container")))?;
        self.u32(v);
        Ok(())
    }

    /// Bitmap, least significant bit first.
    pub fn bits(&mut self, bits: &[bool]) {
        for chunk in bits.chunks(8) {
            let mut byte = 0u8;
            for (i, b) in chunk.iter().enumerate() {
                if *b {
                    byte |= 1 << i;
                }
            }
            self.buf.push(byte);
        }
    }

    pub fn scheme(&mut self, scheme: &MultiShellScheme) -> Result<()> {
        self.len_u32(scheme.num_shells())?;
        for shell in scheme.shells() {
            self.f64(shell.b_value());
            self.len_u32(shell.len())?;
            for d in shell.directions() {
                self.f64s(&d.to_array());
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

pub(crate) struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    /// Checks magic, version and trailing checksum.
    pub fn new(bytes: &'a [u8], magic: &[u8; 8], version: u32, what: &str) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != magic {
            return Err(Error::format(format!("not a {what} file")));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::format(format!("{what} checksum mismatch")));
        }
        let mut d = Self { data: body, pos: 8 };
        let v = d.u32()?;
        if v != version {
            return Err(Error::format(format!("unsupported {what} version {v}")));
        }
        Ok(d)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::format("unexpected end of file"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::format("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn bits(&mut self, n: usize) -> Result<Vec<bool>> {
        let bytes = self.take(n.div_ceil(8))?;
        Ok((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
    }

    pub fn scheme(&mut self) -> Result<MultiShellScheme> {
        let shells = self.usize()?;
        let mut out = Vec::with_capacity(shells.min(64));
        for _ in 0..shells {
            let b = self.f64()?;
            let n = self.usize()?;
            let coords = self.f64s(n.checked_mul(3).ok_or_else(|| Error::format("length overflow"))?)?;
            let dirs = coords
                .chunks_exact(3)
                .map(|c| GradientDirection::new(c[0], c[1], c[2]))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::format(format!("stored scheme: {e}")))?;
            out.push(Shell::new(b, dirs).map_err(|e| Error::format(format!("stored scheme: {e}")))?);
        }
        MultiShellScheme::new(out).map_err(|e| Error::format(format!("stored scheme: {e}")))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::format("trailing bytes after payload"));
        }
        Ok(())
    }
}
