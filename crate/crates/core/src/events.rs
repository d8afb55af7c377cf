//! Event model and the labeled event CSV format.
//!
//! ```text
//! t_us,x,y,p[,label]
//! 1000,5,7,1,1
//! ```
//! `p` is 0 (OFF) / 1 (ON); `label` is 1 for signal, 0 for noise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SensorGeometry {
    width: u16,
    height: u16,
}

impl SensorGeometry {
    pub const DAVIS346: SensorGeometry = SensorGeometry {
        width: 346,
        height: 260,
    };

    pub fn new(width: u16, height: u16) -> Result<Self> {
        if width < 8 || height < 8 {
            return Err(Error::Geometry { width, height });
        }
        Ok(SensorGeometry { width, height })
    }

    pub fn width(self) -> u16 {
        self.width
    }

    pub fn height(self) -> u16 {
        self.height
    }

    pub fn pixels(self) -> usize {
        usize::from(self.width) * usize::from(self.height)
    }

    pub fn contains(self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < i64::from(self.width) && y < i64::from(self.height)
    }

    /// Row-major pixel index.
    #[inline]
    pub fn index(self, x: u16, y: u16) -> usize {
        usize::from(y) * usize::from(self.width) + usize::from(x)
    }

    pub fn check(self, x: u32, y: u32) -> Result<()> {
        if x >= u32::from(self.width) || y >= u32::from(self.height) {
            return Err(Error::Bounds {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }
}

impl Default for SensorGeometry {
    fn default() -> Self {
        SensorGeometry::DAVIS346
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Off,
    On,
}

impl Polarity {
    /// -1 for OFF, +1 for ON.
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Off => -1,
            Polarity::On => 1,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Polarity::Off => 0,
            Polarity::On => 1,
        }
    }

    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Polarity::On
        } else {
            Polarity::Off
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Noise,
    Signal,
}

impl Label {
    pub fn is_signal(self) -> bool {
        self == Label::Signal
    }

    pub fn bit(self) -> u8 {
        u8::from(self.is_signal())
    }

    pub fn from_signal(signal: bool) -> Self {
        if signal {
            Label::Signal
        } else {
            Label::Noise
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
    pub label: Option<Label>,
}

impl Event {
    pub fn new(t_us: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Event {
            t_us,
            x,
            y,
            polarity,
            label: None,
        }
    }

    pub fn labeled(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }
}

/// Millisecond timestamp used by the TPI: the µs timestamp shifted right by 10.
#[inline]
pub fn ms_timestamp(t_us: u64) -> u64 {
    t_us >> 10
}

#[inline]
pub fn wrap16(t_ms: u64) -> u16 {
    (t_ms & 0xffff) as u16
}

/// Streaming reader that validates bounds and ordering as it goes.
pub struct EventReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    geometry: SensorGeometry,
    has_label: bool,
    prev_t: Option<u64>,
}

impl<R: Read> EventReader<R> {
    pub fn new(source: R, geometry: SensorGeometry) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(source);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let has_label = match header.as_slice() {
            ["t_us", "x", "y", "p"] => false,
            ["t_us", "x", "y", "p", "label"] => true,
            // an empty file has no header at all; treat it as an empty stream
            [] => false,
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!(
                        "expected header `t_us,x,y,p[,label]`, found `{}`",
                        header.join(",")
                    ),
                })
            }
        };
        Ok(EventReader {
            records: reader.into_records(),
            geometry,
            has_label,
            prev_t: None,
        })
    }

    pub fn has_label(&self) -> bool {
        self.has_label
    }

    fn parse_record(&mut self, rec: &csv::StringRecord) -> Result<Event> {
        let line = rec.position().map_or(0, |p| p.line());
        let expected = if self.has_label { 5 } else { 4 };
        if rec.len() != expected {
            return Err(Error::Parse {
                line,
                msg: format!("expected {expected} fields, found {}", rec.len()),
            });
        }
        let field = |i: usize, name: &str| -> Result<u64> {
            rec[i].parse::<u64>().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid {name} `{}`", &rec[i]),
            })
        };
        let bit = |i: usize, name: &str| -> Result<bool> {
            match &rec[i] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Parse {
                    line,
                    msg: format!("{name} must be 0 or 1, found `{other}`"),
                }),
            }
        };
        let t_us = field(0, "t_us")?;
        let x = field(1, "x")?;
        let y = field(2, "y")?;
        let polarity = Polarity::from_bit(bit(3, "p")?);
        let label = if self.has_label {
            Some(Label::from_signal(bit(4, "label")?))
        } else {
            None
        };
        let clamp32 = |v: u64| u32::try_from(v).unwrap_or(u32::MAX);
        self.geometry.check(clamp32(x), clamp32(y))?;
        if let Some(prev_us) = self.prev_t {
            if t_us < prev_us {
                return Err(Error::Ordering {
                    line,
                    t_us,
                    prev_us,
                });
            }
        }
        self.prev_t = Some(t_us);
        Ok(Event {
            t_us,
            x: x as u16,
            y: y as u16,
            polarity,
            label,
        })
    }
}

impl<R: Read> Iterator for EventReader<R> {
    type Item = Result<Event>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = match self.records.next()? {
            Ok(rec) => rec,
            Err(e) => return Some(Err(e.into())),
        };
        Some(self.parse_record(&rec))
    }
}

pub fn parse_stream<R: Read>(source: R, geometry: SensorGeometry) -> Result<Vec<Event>> {
    EventReader::new(source, geometry)?.collect()
}

pub fn read_events(path: &Path, geometry: SensorGeometry) -> Result<Vec<Event>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_stream(BufReader::new(file), geometry)
}

/// Writes the label column only if every event carries a label.
pub fn write_stream<W: Write>(sink: W, events: &[Event]) -> Result<()> {
    let labeled = !events.is_empty() && events.iter().all(|e| e.label.is_some());
    let mut w = BufWriter::new(sink);
    let io = |e: std::io::Error| Error::io("<event stream>", e);
    if labeled {
        writeln!(w, "t_us,x,y,p,label").map_err(io)?;
    } else {
        writeln!(w, "t_us,x,y,p").map_err(io)?;
    }
    for e in events {
        if labeled {
            let label = e.label.map_or(0, Label::bit);
            writeln!(
                w,
                "{},{},{},{},{}",
                e.t_us,
                e.x,
                e.y,
                e.polarity.bit(),
                label
            )
            .map_err(io)?;
        } else {
            writeln!(w, "{},{},{},{}", e.t_us, e.x, e.y, e.polarity.bit()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn write_events(path: &Path, events: &[Event]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_stream(file, events)
}
