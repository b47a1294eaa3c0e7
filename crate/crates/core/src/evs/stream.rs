//! `EVT1` event file and its CSV mirror.
//!
//! ```text
//! "EVT1"  u32 version=1  u32 width  u32 height  u64 count
//! count x (u64 t_ns, u16 x, u16 y, i8 polarity, u64 t_generated_ns)
//! ```

use super::Event;
use crate::binio::{checked_len, put_u16, put_u32, put_u64, ByteReader};
use crate::error::{Error, Result};

pub const EVT1_MAGIC: &[u8; 4] = b"EVT1";
pub const EVT1_VERSION: u32 = 1;
pub const EVT1_RECORD_BYTES: usize = 21;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventStream {
    pub width: usize,
    pub height: usize,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.events.len() * EVT1_RECORD_BYTES);
        out.extend_from_slice(EVT1_MAGIC);
        put_u32(&mut out, EVT1_VERSION);
        put_u32(&mut out, self.width as u32);
        put_u32(&mut out, self.height as u32);
        put_u64(&mut out, self.events.len() as u64);
        for e in &self.events {
            put_u64(&mut out, e.t_ns);
            put_u16(&mut out, e.x);
            put_u16(&mut out, e.y);
            out.push(e.polarity as u8);
            put_u64(&mut out, e.t_generated_ns);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "EVT1");
        r.magic(EVT1_MAGIC)?;
        let version = r.u32()?;
        if version != EVT1_VERSION {
            return Err(Error::Format(format!("EVT1: unsupported version {version}")));
        }
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let count = r.u64()?;
        let len = checked_len("EVT1", &[count, EVT1_RECORD_BYTES as u64])?;
        if len != r.remaining() {
            return Err(Error::Format(format!(
                "EVT1: header promises {count} events, payload has {} bytes",
                r.remaining()
            )));
        }
        let mut events = Vec::with_capacity(count as usize);
        let mut last = None;
        for _ in 0..count {
            let e = Event {
                t_ns: r.u64()?,
                x: r.u16()?,
                y: r.u16()?,
                polarity: r.i8()?,
                t_generated_ns: r.u64()?,
            };
            if e.polarity != 1 && e.polarity != -1 {
                return Err(Error::Format(format!("EVT1: polarity {} is not +-1", e.polarity)));
            }
            if e.x as usize >= width || e.y as usize >= height {
                return Err(Error::Format(format!("EVT1: event at ({}, {}) outside grid", e.x, e.y)));
            }
            if e.t_generated_ns > e.t_ns {
                return Err(Error::Format("EVT1: event emitted before it was generated".into()));
            }
            if last.is_some_and(|k| k > e.order_key()) {
                return Err(Error::Format("EVT1: events out of order".into()));
            }
            last = Some(e.order_key());
            events.push(e);
        }
        r.finish()?;
        Ok(Self { width, height, events })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t_ns,x,y,polarity,t_generated_ns\n");
        for e in &self.events {
            s.push_str(&format!("{},{},{},{},{}\n", e.t_ns, e.x, e.y, e.polarity, e.t_generated_ns));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EventStream {
        EventStream {
            width: 4,
            height: 3,
            events: vec![
                Event {
                    t_ns: 10,
                    x: 1,
                    y: 2,
                    polarity: 1,
                    t_generated_ns: 10,
                },
                Event {
                    t_ns: 15,
                    x: 3,
                    y: 0,
                    polarity: -1,
                    t_generated_ns: 11,
                },
            ],
        }
    }

    #[test]
    fn round_trip_and_csv() {
        let s = sample();
        let b = s.to_bytes();
        assert_eq!(b.len(), 24 + 2 * EVT1_RECORD_BYTES);
        assert_eq!(EventStream::from_bytes(&b).unwrap(), s);
        assert_eq!(s.to_csv().lines().count(), 3);
    }

    #[test]
    fn header_only_when_empty() {
        let s = EventStream {
            width: 2,
            height: 2,
            events: vec![],
        };
        assert_eq!(s.to_bytes().len(), 24);
    }

    #[test]
    fn rejects_bad_records() {
        let mut b = sample().to_bytes();
        b[24 + 12] = 0;
        assert!(EventStream::from_bytes(&b).is_err());
        let b = sample().to_bytes();
        assert!(EventStream::from_bytes(&b[..b.len() - 2]).is_err());
    }
}
