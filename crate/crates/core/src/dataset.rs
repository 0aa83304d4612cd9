//! KITTI velodyne `.bin` clouds and the JSON-Lines sequence manifest.
//!
//! A `.bin` file is a headerless run of little-endian `f32` quadruples
//! `(x, y, z, reflectance)`. A manifest holds one frame per line:
//!
//! ```text
//! {"cloud": "000000.bin", "box": [cx, cy, cz, h, w, l, theta], "category": "Car"}
//! ```
//!
//! Cloud paths are relative to the manifest's directory and boxes are in the
//! LiDAR frame.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box7, Point, PointCloud};

const RECORD_BYTES: usize = 16;

/// Reads a velodyne `.bin` file. Reflectance is divided by `reflectance_max`
/// (1.0 for KITTI, 255 for sensors reporting raw intensity) and clamped to `[0, 1]`.
pub fn load_point_cloud_bin(path: impl AsRef<Path>, reflectance_max: f64) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let cloud = decode_point_cloud(&bytes, reflectance_max).map_err(|e| match e {
        Error::TruncatedRecord { len, .. } => Error::TruncatedRecord {
            path: path.to_path_buf(),
            len,
        },
        other => other,
    })?;
    Ok(cloud)
}

/// Decodes the packed quadruple layout from memory.
pub fn decode_point_cloud(bytes: &[u8], reflectance_max: f64) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::TruncatedRecord {
            path: PathBuf::new(),
            len: bytes.len() as u64,
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    for (index, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        let p = Point::new(f(0), f(1), f(2), f(3));
        if !p.is_finite() {
            return Err(Error::NonFiniteValue { index });
        }
        let r = if reflectance_max == 1.0 {
            p.r
        } else {
            p.r / reflectance_max
        };
        points.push(Point {
            r: r.clamp(0.0, 1.0),
            ..p
        });
    }
    Ok(PointCloud::new(points, 0))
}

pub fn encode_point_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * RECORD_BYTES);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.r] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Writes `cloud` as float32 quadruples. Coordinates are narrowed to `f32`.
pub fn write_point_cloud_bin(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    fs::write(path, encode_point_cloud(cloud))?;
    Ok(())
}

/// Where a frame's points come from.
#[derive(Debug, Clone, PartialEq)]
pub enum CloudSource {
    File(PathBuf),
    Memory(PointCloud),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub cloud: CloudSource,
    pub gt_box: Box7,
}

/// An ordered tracking sequence. Frame 0 carries the initial target state.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub sequence_id: String,
    pub category: String,
    pub frames: Vec<Frame>,
    pub reflectance_max: f64,
}

impl Sequence {
    pub fn new(sequence_id: impl Into<String>, category: impl Into<String>, frames: Vec<Frame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(Self {
            sequence_id: sequence_id.into(),
            category: category.into(),
            frames,
            reflectance_max: 1.0,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Materializes the cloud of frame `index`.
    pub fn cloud(&self, index: usize) -> Result<PointCloud> {
        match &self.frames[index].cloud {
            CloudSource::Memory(c) => Ok(c.clone()),
            CloudSource::File(p) => {
                let mut c = load_point_cloud_bin(p, self.reflectance_max)?;
                c.frame_id = index as i64;
                Ok(c)
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    cloud: String,
    #[serde(rename = "box")]
    bbox: [f64; 7],
    category: String,
}

/// Parses a JSON-Lines manifest. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn ingest_sequence(manifest_path: impl AsRef<Path>) -> Result<Sequence> {
    let manifest_path = manifest_path.as_ref();
    let file = fs::File::open(manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(manifest_path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let mut frames = Vec::new();
    let mut category = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: line_no,
                reason: e.to_string(),
            })?;
        let gt_box = Box7::from_array(parsed.bbox).map_err(|e| Error::MalformedLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        let cloud_path = base.join(&parsed.cloud);
        if !cloud_path.is_file() {
            return Err(Error::MissingCloudFile {
                line: line_no,
                path: cloud_path,
            });
        }
        category.get_or_insert(parsed.category);
        frames.push(Frame {
            cloud: CloudSource::File(cloud_path),
            gt_box,
        });
    }
    let sequence_id = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Sequence::new(sequence_id, category.unwrap_or_default(), frames)
}

/// Writes a manifest of `(cloud path, box, category)` entries.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[(String, Box7, String)]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for (cloud, bbox, category) in entries {
        let line = ManifestLine {
            cloud: cloud.clone(),
            bbox: bbox.to_array(),
            category: category.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes every frame as `{index:06}.bin` plus `manifest.jsonl` into `dir`.
/// Returns the manifest path.
pub fn write_sequence(seq: &Sequence, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let manifest = dir.join("manifest.jsonl");
    let mut out = BufWriter::new(fs::File::create(&manifest)?);
    for (i, frame) in seq.frames.iter().enumerate() {
        let name = format!("{i:06}.bin");
        write_point_cloud_bin(dir.join(&name), &seq.cloud(i)?)?;
        let line = ManifestLine {
            cloud: name,
            bbox: frame.gt_box.to_array(),
            category: seq.category.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bytes_of(vals: &[f32]) -> Vec<u8> {
        vals.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn single_point_decodes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        fs::write(&path, bytes_of(&[1.0, 2.0, 3.0, 0.5])).unwrap();
        let c = load_point_cloud_bin(&path, 1.0).unwrap();
        assert_eq!(c.points, vec![Point::new(1.0, 2.0, 3.0, 0.5)]);
    }

    #[test]
    fn empty_file_is_empty_cloud() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        fs::write(&path, []).unwrap();
        assert!(load_point_cloud_bin(&path, 1.0).unwrap().is_empty());
    }

    #[test]
    fn truncated_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        fs::write(&path, [0u8; 17]).unwrap();
        assert!(matches!(
            load_point_cloud_bin(&path, 1.0),
            Err(Error::TruncatedRecord { len: 17, .. })
        ));
        assert!(matches!(
            load_point_cloud_bin(dir.path().join("nope.bin"), 1.0),
            Err(Error::FileNotFound(_))
        ));
    }

    #[test]
    fn nan_is_rejected() {
        let b = bytes_of(&[0.0, 0.0, 0.0, 0.0, 1.0, f32::NAN, 0.0, 0.0]);
        assert!(matches!(
            decode_point_cloud(&b, 1.0),
            Err(Error::NonFiniteValue { index: 1 })
        ));
    }

    #[test]
    fn raw_intensity_is_normalized() {
        let b = bytes_of(&[0.0, 0.0, 0.0, 51.0]);
        let c = decode_point_cloud(&b, 255.0).unwrap();
        assert!((c.points[0].r - 0.2).abs() < 1e-12);
    }

    fn write_manifest(dir: &Path, lines: &[&str]) -> PathBuf {
        fs::write(dir.join("000000.bin"), bytes_of(&[1.0, 1.0, 1.0, 0.1])).unwrap();
        fs::write(dir.join("000001.bin"), bytes_of(&[])).unwrap();
        let p = dir.join("seq.jsonl");
        fs::write(&p, lines.join("\n")).unwrap();
        p
    }

    #[test]
    fn manifest_two_frames() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(
            dir.path(),
            &[
                r#"{"cloud": "000000.bin", "box": [1,2,3,1.5,1.6,3.9,0.1], "category": "Car"}"#,
                r#"{"cloud": "000001.bin", "box": [1.2,2,3,1.5,1.6,3.9,0.1], "category": "Car"}"#,
            ],
        );
        let seq = ingest_sequence(&p).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.category, "Car");
        assert_eq!(seq.sequence_id, "seq");
        assert_eq!(
            seq.frames[0].gt_box.to_array(),
            [1.0, 2.0, 3.0, 1.5, 1.6, 3.9, 0.1]
        );
        assert_eq!(seq.cloud(0).unwrap().len(), 1);
        assert!(seq.cloud(1).unwrap().is_empty());
    }

    #[test]
    fn manifest_missing_box_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(
            dir.path(),
            &[
                r#"{"cloud": "000000.bin", "box": [1,2,3,1.5,1.6,3.9,0.1], "category": "Car"}"#,
                r#"{"cloud": "000001.bin", "category": "Car"}"#,
            ],
        );
        assert!(matches!(
            ingest_sequence(&p),
            Err(Error::MalformedLine { line: 2, .. })
        ));
    }

    #[test]
    fn manifest_missing_cloud() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(
            dir.path(),
            &[r#"{"cloud": "zzz.bin", "box": [1,2,3,1.5,1.6,3.9,0.1], "category": "Car"}"#],
        );
        assert!(matches!(
            ingest_sequence(&p),
            Err(Error::MissingCloudFile { line: 1, .. })
        ));
    }

    #[test]
    fn empty_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(dir.path(), &[]);
        assert!(matches!(ingest_sequence(&p), Err(Error::EmptySequence)));
    }

    proptest! {
        #[test]
        fn bin_roundtrip_is_bit_exact(
            vals in prop::collection::vec((-80.0f32..80.0, -80.0f32..80.0, -5.0f32..5.0, 0.0f32..1.0), 0..64)
        ) {
            let raw: Vec<f32> = vals.iter().flat_map(|&(x, y, z, r)| [x, y, z, r]).collect();
            let bytes = bytes_of(&raw);
            let cloud = decode_point_cloud(&bytes, 1.0).unwrap();
            prop_assert_eq!(encode_point_cloud(&cloud), bytes);
        }
    }
}
