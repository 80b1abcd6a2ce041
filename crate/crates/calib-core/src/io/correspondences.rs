//! CSV serialization for correspondence sets and synthetic scenes.
//!
//! Correspondence files carry one observation per row under the mandatory
//! header `frame_id,x,y,z,u,v,weight`; scene files carry one 3D point per
//! row under `x,y,z`. Floats are written in shortest round-trip decimal
//! form, so save followed by load is bit-exact.

use super::{parse_finite, FileError};
use crate::camera::PixelPoint;
use crate::residuals::Correspondence;
use nalgebra::Vector3;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

const CORRESPONDENCE_HEADER: [&str; 7] = ["frame_id", "x", "y", "z", "u", "v", "weight"];
const SCENE_HEADER: [&str; 3] = ["x", "y", "z"];

/// All observations sharing one frame id, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceFrame {
    pub frame_id: u64,
    pub correspondences: Vec<Correspondence>,
}

fn csv_error(path: &Path, err: csv::Error) -> FileError {
    let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
    FileError::parse(path, line, err.to_string())
}

fn record_line(record: &csv::StringRecord) -> usize {
    record.position().map(|p| p.line() as usize).unwrap_or(0)
}

fn read_rows(
    path: &Path,
    expected_header: &[&str],
) -> Result<Vec<(usize, csv::StringRecord)>, FileError> {
    let file = File::open(path).map_err(|e| FileError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(FileError::parse(path, 1, "missing header row")),
        Some(r) => r.map_err(|e| csv_error(path, e))?,
    };
    if header.len() != expected_header.len()
        || header.iter().zip(expected_header).any(|(got, want)| got != *want)
    {
        return Err(FileError::parse(
            path,
            1,
            format!("header must be exactly {:?}", expected_header.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for result in records {
        let record = result.map_err(|e| csv_error(path, e))?;
        rows.push((record_line(&record), record));
    }
    Ok(rows)
}

/// Loads a correspondence file, grouped by frame id in ascending order.
/// Row order within a frame follows the file; the total row count is
/// preserved across groups.
pub fn load_correspondences(path: impl AsRef<Path>) -> Result<Vec<CorrespondenceFrame>, FileError> {
    let path = path.as_ref();
    let mut frames: BTreeMap<u64, Vec<Correspondence>> = BTreeMap::new();
    for (line, record) in read_rows(path, &CORRESPONDENCE_HEADER)? {
        let frame_id: u64 = record[0].parse().map_err(|_| {
            FileError::parse(path, line, format!("frame_id: not an unsigned integer: {:?}", &record[0]))
        })?;
        let x = parse_finite(path, line, "x", &record[1])?;
        let y = parse_finite(path, line, "y", &record[2])?;
        let z = parse_finite(path, line, "z", &record[3])?;
        let u = parse_finite(path, line, "u", &record[4])?;
        let v = parse_finite(path, line, "v", &record[5])?;
        let weight = parse_finite(path, line, "weight", &record[6])?;
        if !(0.0..=1.0).contains(&weight) {
            return Err(FileError::validation(
                path,
                line,
                format!("weight {weight} outside [0, 1]"),
            ));
        }
        frames.entry(frame_id).or_default().push(Correspondence {
            point: Vector3::new(x, y, z),
            pixel: PixelPoint::new(u, v),
            weight,
        });
    }
    Ok(frames
        .into_iter()
        .map(|(frame_id, correspondences)| CorrespondenceFrame { frame_id, correspondences })
        .collect())
}

pub fn save_correspondences(
    frames: &[CorrespondenceFrame],
    path: impl AsRef<Path>,
) -> Result<(), FileError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| FileError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>, text: String| {
        out.write_all(text.as_bytes()).map_err(|e| FileError::io(path, e))
    };
    write(&mut out, format!("{}\n", CORRESPONDENCE_HEADER.join(",")))?;
    for frame in frames {
        for c in &frame.correspondences {
            write(
                &mut out,
                format!(
                    "{},{},{},{},{},{},{}\n",
                    frame.frame_id, c.point.x, c.point.y, c.point.z, c.pixel.u, c.pixel.v, c.weight
                ),
            )?;
        }
    }
    out.flush().map_err(|e| FileError::io(path, e))
}

/// Loads a scene file: one finite 3D point per row.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Vec<Vector3<f64>>, FileError> {
    let path = path.as_ref();
    let mut points = Vec::new();
    for (line, record) in read_rows(path, &SCENE_HEADER)? {
        let x = parse_finite(path, line, "x", &record[0])?;
        let y = parse_finite(path, line, "y", &record[1])?;
        let z = parse_finite(path, line, "z", &record[2])?;
        points.push(Vector3::new(x, y, z));
    }
    Ok(points)
}

pub fn save_scene(points: &[Vector3<f64>], path: impl AsRef<Path>) -> Result<(), FileError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| FileError::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(format!("{}\n", SCENE_HEADER.join(",")).as_bytes())
        .map_err(|e| FileError::io(path, e))?;
    for p in points {
        out.write_all(format!("{},{},{}\n", p.x, p.y, p.z).as_bytes())
            .map_err(|e| FileError::io(path, e))?;
    }
    out.flush().map_err(|e| FileError::io(path, e))
}
