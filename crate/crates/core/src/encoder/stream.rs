//! Packed binary plane streams and the `DMDS` file format.
//!
//! ```text
//! offset 0   magic          "DMDS"
//!        4   u32 version    1
//!        8   u32 width      mirrors
//!        12  u32 height     mirrors
//!        16  u32 plane_count
//!        20  u64 plane_period_ns
//!        28  u64 t0_ns
//!        36  planes, each height rows of ceil(width / 8) bytes
//! ```
//!
//! All integers little-endian. Within a row, mirror `x` lives in byte `x / 8`
//! at bit `7 - x % 8` (MSB first); pad bits are zero. A set bit means the
//! mirror is on, i.e. light goes to the sensor.

use std::io::{Read, Write};

use crate::binio::{checked_len, put_u32, put_u64, ByteReader};
use crate::error::{Error, Result};

pub const DMDS_MAGIC: &[u8; 4] = b"DMDS";
pub const DMDS_VERSION: u32 = 1;
pub const DMDS_HEADER_LEN: usize = 36;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlaneStream {
    pub width: u32,
    pub height: u32,
    pub plane_period_ns: u64,
    pub t0_ns: u64,
    plane_count: usize,
    data: Vec<u8>,
}

#[inline]
pub fn row_stride(width: u32) -> usize {
    (width as usize).div_ceil(8)
}

#[inline]
pub(crate) fn set_bit(plane: &mut [u8], stride: usize, x: usize, y: usize) {
    plane[y * stride + x / 8] |= 0x80 >> (x % 8);
}

#[inline]
pub(crate) fn get_bit(plane: &[u8], stride: usize, x: usize, y: usize) -> bool {
    plane[y * stride + x / 8] & (0x80 >> (x % 8)) != 0
}

impl PlaneStream {
    pub fn new(width: u32, height: u32, plane_period_ns: u64, t0_ns: u64) -> Self {
        Self {
            width,
            height,
            plane_period_ns,
            t0_ns,
            plane_count: 0,
            data: Vec::new(),
        }
    }

    pub fn plane_bytes(&self) -> usize {
        row_stride(self.width) * self.height as usize
    }

    pub fn stride(&self) -> usize {
        row_stride(self.width)
    }

    pub fn plane_count(&self) -> usize {
        self.plane_count
    }

    pub fn plane(&self, i: usize) -> &[u8] {
        let n = self.plane_bytes();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn planes(&self) -> impl Iterator<Item = &[u8]> {
        // chunks_exact(0) panics; a zero-area stream has no planes worth yielding
        let n = self.plane_bytes().max(1);
        self.data.chunks_exact(n)
    }

    pub fn bit(&self, plane: usize, x: usize, y: usize) -> bool {
        get_bit(self.plane(plane), self.stride(), x, y)
    }

    pub fn push_plane(&mut self, plane: &[u8]) -> Result<()> {
        if plane.len() != self.plane_bytes() {
            return Err(Error::Geometry(format!(
                "plane of {} bytes, expected {}",
                plane.len(),
                self.plane_bytes()
            )));
        }
        self.data.extend_from_slice(plane);
        self.plane_count += 1;
        Ok(())
    }

    /// Append `n` planes stored back to back.
    pub fn extend_planes(&mut self, planes: &[u8]) -> Result<()> {
        let n = self.plane_bytes();
        if n == 0 || planes.len() % n != 0 {
            return Err(Error::Geometry("plane block is not a whole number of planes".into()));
        }
        self.data.extend_from_slice(planes);
        self.plane_count += planes.len() / n;
        Ok(())
    }

    /// Start time of plane `i` on the contiguous plane timeline.
    pub fn plane_time_ns(&self, i: usize) -> u64 {
        self.t0_ns + i as u64 * self.plane_period_ns
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(DMDS_HEADER_LEN + self.data.len());
        write_header(
            &mut out,
            self.width,
            self.height,
            self.plane_count as u32,
            self.plane_period_ns,
            self.t0_ns,
        );
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "DMDS");
        let h = read_header(&mut r)?;
        let len = checked_len(
            "DMDS",
            &[row_stride(h.width) as u64, h.height as u64, h.plane_count as u64],
        )?;
        if len != r.remaining() {
            return Err(Error::Format(format!(
                "DMDS: header promises {len} payload bytes, found {}",
                r.remaining()
            )));
        }
        let data = r.take(len)?.to_vec();
        r.finish()?;
        let stream = Self {
            width: h.width,
            height: h.height,
            plane_period_ns: h.plane_period_ns,
            t0_ns: h.t0_ns,
            plane_count: h.plane_count as usize,
            data,
        };
        check_padding(stream.width, &stream.data)?;
        Ok(stream)
    }
}

fn check_padding(width: u32, data: &[u8]) -> Result<()> {
    let pad = (8 - width % 8) % 8;
    if pad == 0 {
        return Ok(());
    }
    let mask = (1u8 << pad) - 1;
    let stride = row_stride(width);
    for (i, row) in data.chunks_exact(stride).enumerate() {
        if row[stride - 1] & mask != 0 {
            return Err(Error::Format(format!("DMDS: nonzero pad bits in row {i}")));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DmdsHeader {
    pub width: u32,
    pub height: u32,
    pub plane_count: u32,
    pub plane_period_ns: u64,
    pub t0_ns: u64,
}

fn write_header(out: &mut Vec<u8>, w: u32, h: u32, n: u32, period: u64, t0: u64) {
    out.extend_from_slice(DMDS_MAGIC);
    put_u32(out, DMDS_VERSION);
    put_u32(out, w);
    put_u32(out, h);
    put_u32(out, n);
    put_u64(out, period);
    put_u64(out, t0);
}

fn read_header(r: &mut ByteReader<'_>) -> Result<DmdsHeader> {
    r.magic(DMDS_MAGIC)?;
    let version = r.u32()?;
    if version != DMDS_VERSION {
        return Err(Error::Format(format!("DMDS: unsupported version {version}")));
    }
    let h = DmdsHeader {
        width: r.u32()?,
        height: r.u32()?,
        plane_count: r.u32()?,
        plane_period_ns: r.u64()?,
        t0_ns: r.u64()?,
    };
    if h.width == 0 || h.height == 0 {
        return Err(Error::Format("DMDS: zero extent".into()));
    }
    if h.plane_period_ns == 0 {
        return Err(Error::Format("DMDS: zero plane period".into()));
    }
    Ok(h)
}

/// Writes a `DMDS` stream plane by plane without holding it in memory.
pub struct PlaneStreamWriter<W: Write> {
    inner: W,
    plane_bytes: usize,
    expected: u32,
    written: u32,
}

impl<W: Write> PlaneStreamWriter<W> {
    pub fn new(mut inner: W, header: DmdsHeader) -> Result<Self> {
        let mut buf = Vec::with_capacity(DMDS_HEADER_LEN);
        write_header(
            &mut buf,
            header.width,
            header.height,
            header.plane_count,
            header.plane_period_ns,
            header.t0_ns,
        );
        inner.write_all(&buf)?;
        Ok(Self {
            inner,
            plane_bytes: row_stride(header.width) * header.height as usize,
            expected: header.plane_count,
            written: 0,
        })
    }

    /// Write one or more whole planes.
    pub fn write_planes(&mut self, planes: &[u8]) -> Result<()> {
        if self.plane_bytes == 0 || planes.len() % self.plane_bytes != 0 {
            return Err(Error::Geometry("partial plane written".into()));
        }
        let n = (planes.len() / self.plane_bytes) as u32;
        if self.written + n > self.expected {
            return Err(Error::Geometry(format!(
                "more than the {} planes declared in the header",
                self.expected
            )));
        }
        self.inner.write_all(planes)?;
        self.written += n;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.expected {
            return Err(Error::Geometry(format!(
                "wrote {} planes, header declares {}",
                self.written, self.expected
            )));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Reads a `DMDS` stream plane by plane.
pub struct PlaneStreamReader<R: Read> {
    inner: R,
    pub header: DmdsHeader,
    plane_bytes: usize,
    read: u32,
}

impl<R: Read> PlaneStreamReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut buf = [0u8; DMDS_HEADER_LEN];
        inner.read_exact(&mut buf)?;
        let header = read_header(&mut ByteReader::new(&buf, "DMDS"))?;
        let plane_bytes = checked_len("DMDS", &[row_stride(header.width) as u64, header.height as u64])?;
        Ok(Self {
            inner,
            header,
            plane_bytes,
            read: 0,
        })
    }

    /// Next plane, or `None` once `plane_count` planes have been read.
    pub fn next_plane(&mut self) -> Result<Option<Vec<u8>>> {
        if self.read == self.header.plane_count {
            return Ok(None);
        }
        // grow with the data actually present rather than trusting the header
        let mut buf = Vec::new();
        (&mut self.inner).take(self.plane_bytes as u64).read_to_end(&mut buf)?;
        if buf.len() != self.plane_bytes {
            return Err(Error::Format(format!(
                "DMDS: plane {} truncated at {} of {} bytes",
                self.read,
                buf.len(),
                self.plane_bytes
            )));
        }
        check_padding(self.header.width, &buf)?;
        self.read += 1;
        Ok(Some(buf))
    }
}
