//! Point cloud and label file I/O.
//!
//! Cloud files are headerless runs of 16-byte records: four little-endian
//! `f32` values `x, y, z, intensity`. Label files are UTF-8 text with one
//! object per line, `class cx cy cz l w h yaw difficulty`, in the LiDAR frame.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::bevraster::RangeSpec;
use crate::boxgeom::Box3D;
use crate::error::{Error, Result};

const RECORD_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Point { x, y, z, intensity }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, frame_id: impl Into<String>) -> Self {
        PointCloud {
            points,
            frame_id: frame_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassId {
    Car,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];
}

macro_rules! text_enum {
    ($ty:ty { $($variant:ident => $text:literal),* $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text),* })
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok(Self::$variant),)*
                    other => Err(format!("unknown {} `{other}`", stringify!($ty))),
                }
            }
        }
    };
}

text_enum!(ClassId { Car => "Car", Background => "Background" });
text_enum!(Difficulty { Easy => "Easy", Moderate => "Moderate", Hard => "Hard" });

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthObject {
    pub class_id: ClassId,
    pub bbox: Box3D,
    pub difficulty: Difficulty,
}

/// Decodes a cloud from raw record bytes.
pub fn decode_cloud(bytes: &[u8], frame_id: &str) -> Result<PointCloud> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::format(
            None,
            format!(
                "cloud length {} is not a multiple of {RECORD_BYTES}",
                bytes.len()
            ),
        ));
    }
    let mut points = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        let p = Point::new(f(0), f(1), f(2), f(3));
        if ![p.x, p.y, p.z, p.intensity].iter().all(|v| v.is_finite()) {
            return Err(Error::format(None, format!("non-finite value in record {i}")));
        }
        points.push(p);
    }
    Ok(PointCloud::new(points, frame_id))
}

pub fn encode_cloud(pc: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(pc.points.len() * RECORD_BYTES);
    for p in &pc.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Loads a binary cloud; the frame id is the file stem.
pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let frame = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_cloud(&bytes, &frame)
}

pub fn save_cloud(pc: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_cloud(pc)).map_err(|e| Error::io(path, e))
}

/// Keeps the points inside the half-open range box, preserving order.
pub fn crop_range(pc: &PointCloud, range: &RangeSpec) -> PointCloud {
    let points = pc
        .points
        .iter()
        .copied()
        .filter(|p| range.contains(p.x as f64, p.y as f64, p.z as f64))
        .collect();
    PointCloud::new(points, pc.frame_id.clone())
}

fn parse_field<T: FromStr>(tok: &str, what: &str, line: usize) -> Result<T> {
    tok.parse::<T>()
        .map_err(|_| Error::format(Some(line), format!("bad {what} `{tok}`")))
}

/// Parses label text. Blank lines and lines starting with `#` are skipped.
pub fn parse_labels(text: &str) -> Result<Vec<GroundTruthObject>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 9 {
            return Err(Error::format(
                Some(lineno),
                format!("expected 9 fields, found {}", toks.len()),
            ));
        }
        let class_id: ClassId = toks[0]
            .parse()
            .map_err(|e: String| Error::format(Some(lineno), e))?;
        let mut v = [0.0f64; 7];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = parse_field(toks[k + 1], "number", lineno)?;
            if !slot.is_finite() {
                return Err(Error::format(Some(lineno), "non-finite value"));
            }
        }
        let difficulty: Difficulty = toks[8]
            .parse()
            .map_err(|e: String| Error::format(Some(lineno), e))?;
        let bbox = Box3D::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
        if !(bbox.l > 0.0 && bbox.w > 0.0 && bbox.h > 0.0) {
            return Err(Error::format(Some(lineno), "box dims must be positive"));
        }
        out.push(GroundTruthObject {
            class_id,
            bbox,
            difficulty,
        });
    }
    Ok(out)
}

pub fn format_labels(objs: &[GroundTruthObject]) -> String {
    let mut s = String::from("# class cx cy cz l w h yaw difficulty\n");
    for o in objs {
        let b = &o.bbox;
        s.push_str(&format!(
            "{} {} {} {} {} {} {} {} {}\n",
            o.class_id, b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw, o.difficulty
        ));
    }
    s
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<GroundTruthObject>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}

pub fn save_labels(objs: &[GroundTruthObject], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_labels(objs)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_two_points() {
        let pc = PointCloud::new(
            vec![Point::new(1.0, 2.0, 0.5, 0.3), Point::new(-1.0, 0.0, 0.0, 1.0)],
            "f",
        );
        let bytes = encode_cloud(&pc);
        assert_eq!(bytes.len(), 32);
        let back = decode_cloud(&bytes, "f").unwrap();
        assert_eq!(back, pc);
    }

    #[test]
    fn empty_and_bad_lengths() {
        assert!(decode_cloud(&[], "e").unwrap().is_empty());
        assert!(matches!(
            decode_cloud(&[0u8; 20], "e"),
            Err(Error::Format { .. })
        ));
        let mut nan = encode_cloud(&PointCloud::new(vec![Point::new(0.0, 0.0, 0.0, 0.0)], ""));
        nan[0..4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_cloud(&nan, "e").is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_cloud("/nonexistent/cloud.bin"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn crop_half_open() {
        let spec = RangeSpec::standard();
        let pc = PointCloud::new(
            vec![
                Point::new(35.0, 0.0, 1.0, 0.0),
                Point::new(70.0, 0.0, 1.0, 0.0),
                Point::new(0.0, -40.0, 0.0, 0.0),
                Point::new(1.0, 40.0, 0.0, 0.0),
            ],
            "",
        );
        let out = crop_range(&pc, &spec);
        assert_eq!(out.points, vec![pc.points[0], pc.points[2]]);
    }

    #[test]
    fn parse_single_label() {
        let objs = parse_labels("Car 10.0 0.0 0.8 4.0 1.8 1.5 0.0 Easy\n").unwrap();
        assert_eq!(objs.len(), 1);
        assert_eq!(objs[0].class_id, ClassId::Car);
        assert_eq!((objs[0].bbox.cx, objs[0].bbox.cy, objs[0].bbox.cz), (10.0, 0.0, 0.8));
        assert_eq!(objs[0].difficulty, Difficulty::Easy);
    }

    #[test]
    fn wrong_arity_reports_line() {
        let err = parse_labels("# header\nCar 1 2 3 4 5 6 0 Easy\nCar 1 2 3 4 5\n").unwrap_err();
        match err {
            Error::Format { line, .. } => assert_eq!(line, Some(3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_tokens_rejected() {
        assert!(parse_labels("Truck 1 2 3 4 5 6 0 Easy").is_err());
        assert!(parse_labels("Car 1 2 3 4 5 6 0 Medium").is_err());
        assert!(parse_labels("Car 1 2 3 -4 5 6 0 Easy").is_err());
        assert!(parse_labels("Car 1 x 3 4 5 6 0 Easy").is_err());
    }
}
