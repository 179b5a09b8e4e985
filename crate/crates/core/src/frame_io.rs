//! Frame sequences as line-delimited JSON: one frame object per line with
//! fields `{frame_id, timestamp, sensor: [x, y, z], points: [[x, y, z], ...],
//! labels?}`.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scan::{Frame, ScanPoint, SensorOrigin};

/// Wire form of a frame.
#[derive(Debug, Serialize, Deserialize)]
struct FrameRecord {
    frame_id: u64,
    timestamp: f64,
    sensor: [f64; 3],
    points: Vec<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    labels: Option<Vec<i64>>,
}

impl From<&Frame> for FrameRecord {
    fn from(f: &Frame) -> Self {
        Self {
            frame_id: f.frame_id,
            timestamp: f.timestamp,
            sensor: [f.sensor.x, f.sensor.y, f.sensor.z],
            points: f.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            labels: f.labels.clone(),
        }
    }
}

impl FrameRecord {
    fn into_frame(self) -> Result<Frame> {
        if let Some(labels) = &self.labels {
            if labels.len() != self.points.len() {
                return Err(CoreError::InvalidInput(format!(
                    "frame {}: {} labels for {} points",
                    self.frame_id,
                    labels.len(),
                    self.points.len()
                )));
            }
        }
        Ok(Frame {
            frame_id: self.frame_id,
            timestamp: self.timestamp,
            sensor: SensorOrigin {
                x: self.sensor[0],
                y: self.sensor[1],
                z: self.sensor[2],
            },
            points: self
                .points
                .iter()
                .map(|p| ScanPoint {
                    x: p[0],
                    y: p[1],
                    z: p[2],
                    frame_id: self.frame_id,
                })
                .collect(),
            labels: self.labels,
        })
    }
}

pub fn write_frames_to(writer: &mut impl Write, frames: &[Frame]) -> Result<()> {
    for f in frames {
        serde_json::to_writer(&mut *writer, &FrameRecord::from(f))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_frames(path: impl AsRef<Path>, frames: &[Frame]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_frames_to(&mut w, frames)?;
    w.flush()?;
    Ok(())
}

pub fn read_frames(path: impl AsRef<Path>) -> Result<Vec<Frame>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut frames = Vec::new();
    let mut last_ts = f64::NEG_INFINITY;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FrameRecord = serde_json::from_str(&line)?;
        let frame = record.into_frame()?;
        if frame.timestamp <= last_ts {
            return Err(CoreError::InvalidInput(format!(
                "timestamps not strictly increasing at frame {}",
                frame.frame_id
            )));
        }
        last_ts = frame.timestamp;
        frames.push(frame);
    }
    Ok(frames)
}
