//! Flow file formats.
//!
//! Text (`# nfseg-flow v1 width=W height=H` followed by `t,x,y,nx,ny` lines)
//! and binary (`NFSEG1\0`, u32 width, u32 height, u64 count, then
//! `f64 t, f32 x, f32 y, f32 nx, f32 ny` records, little endian). Flow is
//! stored in pixels per second. Record numbers in errors are 1-based and
//! count records only, not the header.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::NormalFlowObservation;

pub const BINARY_MAGIC: &[u8; 7] = b"NFSEG1\0";
const TEXT_HEADER_PREFIX: &str = "# nfseg-flow v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowFormat {
    Text,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowFile {
    pub width: u32,
    pub height: u32,
    pub observations: Vec<NormalFlowObservation>,
}

/// Streaming reader over either format.
pub struct FlowStream {
    width: u32,
    height: u32,
    inner: StreamInner,
    record: usize,
    last_t: f64,
    failed: bool,
}

enum StreamInner {
    Text(io::Lines<Box<dyn BufRead>>),
    Binary { reader: Box<dyn BufRead>, remaining: u64 },
}

impl FlowStream {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        Self::from_reader(BufReader::new(file))
    }

    pub fn from_reader(reader: impl BufRead + 'static) -> Result<Self> {
        let mut reader: Box<dyn BufRead> = Box::new(reader);
        let peek = reader.fill_buf()?;
        if peek.starts_with(b"NFSEG") {
            let mut magic = [0u8; 7];
            reader
                .read_exact(&mut magic)
                .map_err(|_| Error::format(0, "truncated binary header"))?;
            if &magic != BINARY_MAGIC {
                return Err(Error::format(0, "bad binary magic"));
            }
            let mut head = [0u8; 16];
            reader
                .read_exact(&mut head)
                .map_err(|_| Error::format(0, "truncated binary header"))?;
            let width = u32::from_le_bytes(head[0..4].try_into().unwrap());
            let height = u32::from_le_bytes(head[4..8].try_into().unwrap());
            let remaining = u64::from_le_bytes(head[8..16].try_into().unwrap());
            return Ok(Self::new(width, height, StreamInner::Binary { reader, remaining }));
        }

        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(line) => line?,
            None => return Err(Error::format(0, "missing header")),
        };
        let (width, height) = parse_text_header(&header)?;
        Ok(Self::new(width, height, StreamInner::Text(lines)))
    }

    fn new(width: u32, height: u32, inner: StreamInner) -> Self {
        Self {
            width,
            height,
            inner,
            record: 0,
            last_t: f64::NEG_INFINITY,
            failed: false,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn next_record(&mut self) -> Option<Result<NormalFlowObservation>> {
        match &mut self.inner {
            StreamInner::Text(lines) => loop {
                let line = match lines.next()? {
                    Ok(l) => l,
                    Err(e) => return Some(Err(e.into())),
                };
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                self.record += 1;
                return Some(parse_text_record(trimmed, self.record));
            },
            StreamInner::Binary { reader, remaining } => {
                if *remaining == 0 {
                    return None;
                }
                *remaining -= 1;
                self.record += 1;
                let mut buf = [0u8; 24];
                if reader.read_exact(&mut buf).is_err() {
                    return Some(Err(Error::format(self.record, "truncated record")));
                }
                let t = f64::from_le_bytes(buf[0..8].try_into().unwrap());
                let f = |i: usize| f32::from_le_bytes(buf[i..i + 4].try_into().unwrap()) as f64;
                Some(Ok(NormalFlowObservation::new(t, f(8), f(12), f(16), f(20))))
            }
        }
    }
}

impl Iterator for FlowStream {
    type Item = Result<NormalFlowObservation>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.next_record()?.and_then(|obs| {
            let record = self.record;
            if !(obs.x >= 0.0 && obs.x < self.width as f64 && obs.y >= 0.0 && obs.y < self.height as f64) {
                return Err(Error::format(record, format!("coordinate ({}, {}) out of bounds", obs.x, obs.y)));
            }
            if !obs.t.is_finite() || !obs.n.x.is_finite() || !obs.n.y.is_finite() {
                return Err(Error::format(record, "non-finite value"));
            }
            if obs.t < self.last_t {
                return Err(Error::format(record, "records not sorted by time"));
            }
            self.last_t = obs.t;
            Ok(obs)
        });
        if item.is_err() {
            self.failed = true;
        }
        Some(item)
    }
}

fn parse_text_header(line: &str) -> Result<(u32, u32)> {
    let rest = line
        .trim()
        .strip_prefix(TEXT_HEADER_PREFIX)
        .ok_or_else(|| Error::format(0, "missing `# nfseg-flow v1` header"))?;
    let mut width = None;
    let mut height = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("width=") {
            width = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("height=") {
            height = v.parse().ok();
        }
    }
    match (width, height) {
        (Some(w), Some(h)) => Ok((w, h)),
        _ => Err(Error::format(0, "header lacks width/height")),
    }
}

fn parse_text_record(line: &str, record: usize) -> Result<NormalFlowObservation> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 5 {
        return Err(Error::format(record, format!("expected 5 fields, found {}", fields.len())));
    }
    let real = |s: &str, name: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::format(record, format!("invalid {name} `{s}`")))
    };
    let int = |s: &str, name: &str| -> Result<f64> {
        s.parse::<i64>()
            .map(|v| v as f64)
            .map_err(|_| Error::format(record, format!("invalid integer {name} `{s}`")))
    };
    Ok(NormalFlowObservation::new(
        real(fields[0], "t")?,
        int(fields[1], "x")?,
        int(fields[2], "y")?,
        real(fields[3], "nx")?,
        real(fields[4], "ny")?,
    ))
}

pub fn read_flow_file(path: impl AsRef<Path>) -> Result<FlowFile> {
    let stream = FlowStream::open(path)?;
    collect_stream(stream)
}

pub fn collect_stream(stream: FlowStream) -> Result<FlowFile> {
    let (width, height) = (stream.width(), stream.height());
    let observations = stream.collect::<Result<Vec<_>>>()?;
    Ok(FlowFile {
        width,
        height,
        observations,
    })
}

pub fn write_flow_file(path: impl AsRef<Path>, flow: &FlowFile, format: FlowFormat) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_flow(&mut out, flow, format)?;
    out.flush()?;
    Ok(())
}

pub fn write_flow(out: &mut impl Write, flow: &FlowFile, format: FlowFormat) -> Result<()> {
    match format {
        FlowFormat::Text => {
            writeln!(out, "{TEXT_HEADER_PREFIX} width={} height={}", flow.width, flow.height)?;
            for (i, o) in flow.observations.iter().enumerate() {
                if o.x.fract() != 0.0 || o.y.fract() != 0.0 {
                    return Err(Error::format(i + 1, "text format requires integer pixel coordinates"));
                }
                writeln!(out, "{},{},{},{},{}", o.t, o.x as i64, o.y as i64, o.n.x, o.n.y)?;
            }
        }
        FlowFormat::Binary => {
            out.write_all(BINARY_MAGIC)?;
            out.write_all(&flow.width.to_le_bytes())?;
            out.write_all(&flow.height.to_le_bytes())?;
            out.write_all(&(flow.observations.len() as u64).to_le_bytes())?;
            for o in &flow.observations {
                out.write_all(&o.t.to_le_bytes())?;
                for v in [o.x, o.y, o.n.x, o.n.y] {
                    out.write_all(&(v as f32).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

/// One ground-truth sidecar row, aligned with a flow record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SidecarRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub source: u32,
}

pub fn write_sidecar(path: impl AsRef<Path>, records: &[SidecarRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_sidecar_to(&mut out, records)?;
    out.flush()?;
    Ok(())
}

pub fn write_sidecar_to(out: &mut impl Write, records: &[SidecarRecord]) -> Result<()> {
    writeln!(out, "t,x,y,source_id")?;
    for r in records {
        writeln!(out, "{},{},{},{}", r.t, r.x as i64, r.y as i64, r.source)?;
    }
    Ok(())
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Vec<SidecarRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("t,") {
            continue;
        }
        let record = records.len() + 1;
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(Error::format(record, "expected t,x,y,source_id"));
        }
        let bad = |what: &str| Error::format(record, format!("invalid {what}"));
        records.push(SidecarRecord {
            t: f[0].parse().map_err(|_| bad("t"))?,
            x: f[1].parse::<i64>().map_err(|_| bad("x"))? as f64,
            y: f[2].parse::<i64>().map_err(|_| bad("y"))? as f64,
            source: f[3].parse().map_err(|_| bad("source_id"))?,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read_text(s: &str) -> Result<FlowFile> {
        collect_stream(FlowStream::from_reader(Cursor::new(s.as_bytes().to_vec()))?)
    }

    #[test]
    fn empty_file_with_header() {
        let f = read_text("# nfseg-flow v1 width=346 height=260\n").unwrap();
        assert_eq!((f.width, f.height), (346, 260));
        assert!(f.observations.is_empty());
    }

    #[test]
    fn single_record_maps_fields() {
        let f = read_text("# nfseg-flow v1 width=346 height=260\n0.010000,120,85,33.0,-12.5\n").unwrap();
        assert_eq!(f.observations, vec![NormalFlowObservation::new(0.01, 120.0, 85.0, 33.0, -12.5)]);
    }

    #[test]
    fn half_open_bounds() {
        let err = read_text("# nfseg-flow v1 width=346 height=260\n0.0,346,10,1,1\n").unwrap_err();
        assert!(matches!(err, Error::Format { record: 1, .. }), "{err}");
    }

    #[test]
    fn unsorted_and_malformed_records_name_their_index() {
        let err = read_text("# nfseg-flow v1 width=10 height=10\n0.2,1,1,1,1\n0.1,1,1,1,1\n").unwrap_err();
        assert!(matches!(err, Error::Format { record: 2, .. }));
        let err = read_text("# nfseg-flow v1 width=10 height=10\n0.1,1,1,1,1\n0.2,1,x,1,1\n").unwrap_err();
        assert!(err.to_string().contains("record 2"));
        assert!(read_text("garbage\n").is_err());
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let flow = FlowFile {
            width: 346,
            height: 260,
            observations: vec![
                NormalFlowObservation::new(0.001, 3.0, 4.0, 12.5, -0.25),
                NormalFlowObservation::new(0.0015, 345.0, 259.0, -800.0, 3.0e-3),
            ],
        };
        let mut first = Vec::new();
        write_flow(&mut first, &flow, FlowFormat::Binary).unwrap();
        let back = collect_stream(FlowStream::from_reader(Cursor::new(first.clone())).unwrap()).unwrap();
        let mut second = Vec::new();
        write_flow(&mut second, &back, FlowFormat::Binary).unwrap();
        assert_eq!(first, second);
        assert_eq!(back.observations[0].t, 0.001);
    }

    #[test]
    fn text_writer_rejects_fractional_pixels() {
        let flow = FlowFile {
            width: 10,
            height: 10,
            observations: vec![NormalFlowObservation::new(0.0, 1.5, 1.0, 1.0, 0.0)],
        };
        assert!(write_flow(&mut Vec::new(), &flow, FlowFormat::Text).is_err());
    }
}
