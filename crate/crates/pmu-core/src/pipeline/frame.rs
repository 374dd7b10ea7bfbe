//! Frame-stream I/O.
//!
//! A stream is a time-ordered sequence of frames, each carrying 3-D
//! positions for a set of named entities. Two interchangeable encodings:
//!
//! * CSV, one row per entity per frame: `t,entity,x,y,z`. Rows sharing a
//!   timestamp form one frame.
//! * JSON lines, one frame per line:
//!   `{"t": 0.0, "entities": {"human": [x, y, z], ...}}`.
//!
//! Timestamps must be strictly increasing between frames and every
//! coordinate finite; both parsers enforce this so downstream code can
//! rely on it.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {detail}")]
    Malformed { line: u64, detail: String },
    #[error("line {line}: timestamps must be strictly increasing between frames")]
    NonMonotone { line: u64 },
    #[error("stream contains no frames")]
    Empty,
    #[error("cannot infer stream format from {0:?}, expected .csv or .jsonl")]
    UnknownFormat(String),
}

/// One sample instant: every tracked entity's position at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub entities: BTreeMap<String, [f64; 3]>,
}

impl Frame {
    pub fn new(t: f64) -> Self {
        Self {
            t,
            entities: BTreeMap::new(),
        }
    }

    pub fn position(&self, entity: &str) -> Option<[f64; 3]> {
        self.entities.get(entity).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    Csv,
    Jsonl,
}

impl FrameFormat {
    pub fn from_path(path: &Path) -> Result<Self, FrameError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(FrameFormat::Csv),
            Some("jsonl") | Some("ndjson") | Some("json") => Ok(FrameFormat::Jsonl),
            _ => Err(FrameError::UnknownFormat(path.display().to_string())),
        }
    }
}

fn check_coord(v: f64, line: u64, what: &str) -> Result<f64, FrameError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(FrameError::Malformed {
            line,
            detail: format!("{what} must be finite"),
        })
    }
}

/// Parses the long-format CSV encoding. Header must be exactly
/// `t,entity,x,y,z`.
pub fn parse_frames_csv<R: Read>(reader: R) -> Result<Vec<Frame>, FrameError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    let expected = ["t", "entity", "x", "y", "z"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(FrameError::Malformed {
            line: 1,
            detail: format!("header must be t,entity,x,y,z, got {:?}", headers),
        });
    }

    let mut frames: Vec<Frame> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 5 {
            return Err(FrameError::Malformed {
                line,
                detail: format!("expected 5 fields, got {}", record.len()),
            });
        }
        let field = |i: usize, what: &str| -> Result<f64, FrameError> {
            record[i].parse::<f64>().map_err(|_| FrameError::Malformed {
                line,
                detail: format!("{what} is not a number: {:?}", &record[i]),
            })
        };
        let t = check_coord(field(0, "t")?, line, "t")?;
        let entity = record[1].to_string();
        if entity.is_empty() {
            return Err(FrameError::Malformed {
                line,
                detail: "entity name is empty".into(),
            });
        }
        let pos = [
            check_coord(field(2, "x")?, line, "x")?,
            check_coord(field(3, "y")?, line, "y")?,
            check_coord(field(4, "z")?, line, "z")?,
        ];

        let start_new = match frames.last() {
            None => true,
            Some(f) if t == f.t => false,
            Some(f) if t > f.t => true,
            Some(_) => return Err(FrameError::NonMonotone { line }),
        };
        if start_new {
            frames.push(Frame::new(t));
        }
        let frame = frames.last_mut().expect("just pushed");
        if frame.entities.insert(entity.clone(), pos).is_some() {
            return Err(FrameError::Malformed {
                line,
                detail: format!("duplicate entity {entity:?} in frame at t = {t}"),
            });
        }
    }
    if frames.is_empty() {
        return Err(FrameError::Empty);
    }
    Ok(frames)
}

/// Parses the JSON-lines encoding. Blank lines are skipped.
pub fn parse_frames_jsonl<R: Read>(reader: R) -> Result<Vec<Frame>, FrameError> {
    let mut frames: Vec<Frame> = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = idx as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: Frame = serde_json::from_str(&line).map_err(|e| FrameError::Malformed {
            line: lineno,
            detail: e.to_string(),
        })?;
        check_coord(frame.t, lineno, "t")?;
        for (name, pos) in &frame.entities {
            for (axis, v) in ["x", "y", "z"].iter().zip(pos) {
                check_coord(*v, lineno, &format!("{name}.{axis}"))?;
            }
        }
        if let Some(prev) = frames.last() {
            if frame.t <= prev.t {
                return Err(FrameError::NonMonotone { line: lineno });
            }
        }
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(FrameError::Empty);
    }
    Ok(frames)
}

pub fn write_frames_csv<W: Write>(writer: W, frames: &[Frame]) -> Result<(), FrameError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["t", "entity", "x", "y", "z"])?;
    for frame in frames {
        for (entity, pos) in &frame.entities {
            wtr.write_record([
                frame.t.to_string(),
                entity.clone(),
                pos[0].to_string(),
                pos[1].to_string(),
                pos[2].to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_frames_jsonl<W: Write>(mut writer: W, frames: &[Frame]) -> Result<(), FrameError> {
    for frame in frames {
        let line = serde_json::to_string(frame).expect("frame serialization cannot fail");
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

/// Reads a stream, picking the encoding from the file extension.
pub fn load_frames(path: &Path) -> Result<Vec<Frame>, FrameError> {
    let format = FrameFormat::from_path(path)?;
    let file = File::open(path)?;
    match format {
        FrameFormat::Csv => parse_frames_csv(file),
        FrameFormat::Jsonl => parse_frames_jsonl(file),
    }
}

pub fn save_frames(path: &Path, frames: &[Frame]) -> Result<(), FrameError> {
    let format = FrameFormat::from_path(path)?;
    let file = BufWriter::new(File::create(path)?);
    match format {
        FrameFormat::Csv => write_frames_csv(file, frames),
        FrameFormat::Jsonl => write_frames_jsonl(file, frames),
    }
}
