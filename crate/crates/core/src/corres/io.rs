//! File formats for correspondences, set manifests and point clouds.
//!
//! Correspondences are stored one JSON object per line:
//!
//! ```text
//! {"image_q":0,"image_s":1,"u_q":12.0,"v_q":7.5,"u_s":10.25,"v_s":7.0,"confidence":0.9}
//! ```
//!
//! An optional `provenance` field defaults to `direct`; unknown fields are
//! ignored.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AugmentedSet, Correspondence, CorresError, PixelMap, Provenance};
use crate::geometry::PixelCoord;
use crate::linalg::Vec3;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: CorresError },
    #[error("{0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceRecord {
    pub image_q: usize,
    pub image_s: usize,
    pub u_q: f64,
    pub v_q: f64,
    pub u_s: f64,
    pub v_s: f64,
    pub confidence: f64,
    #[serde(default)]
    pub provenance: Provenance,
}

impl From<&Correspondence> for CorrespondenceRecord {
    fn from(c: &Correspondence) -> Self {
        Self {
            image_q: c.image_q,
            image_s: c.image_s,
            u_q: c.p_q.u,
            v_q: c.p_q.v,
            u_s: c.p_s.u,
            v_s: c.p_s.v,
            confidence: c.confidence,
            provenance: c.provenance,
        }
    }
}

impl CorrespondenceRecord {
    pub fn to_correspondence(&self) -> Result<Correspondence, CorresError> {
        Correspondence::new(
            self.image_q,
            self.image_s,
            PixelCoord::new(self.u_q, self.v_q),
            PixelCoord::new(self.u_s, self.v_s),
            self.confidence,
            self.provenance,
        )
    }
}

/// Reads JSON lines; blank lines are skipped. Line numbers are 1-based.
pub fn read_correspondences(reader: impl BufRead) -> Result<Vec<Correspondence>, IoError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorrespondenceRecord = serde_json::from_str(&line)
            .map_err(|e| IoError::Parse { line: i + 1, message: e.to_string() })?;
        out.push(rec.to_correspondence().map_err(|source| IoError::Invalid { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_correspondences(mut writer: impl Write, correspondences: &[Correspondence]) -> Result<(), IoError> {
    for c in correspondences {
        let line = serde_json::to_string(&CorrespondenceRecord::from(c)).map_err(|e| IoError::Format(e.to_string()))?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

/// One entry of a set manifest: a correspondence file and its pixel map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    #[serde(default)]
    pub map: PixelMap,
}

/// JSON array describing the augmented matcher outputs of one scene.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SetManifest {
    pub sets: Vec<ManifestEntry>,
}

impl SetManifest {
    /// Loads every listed file, resolving paths against `base`.
    pub fn load(&self, base: &std::path::Path) -> Result<Vec<AugmentedSet>, (std::path::PathBuf, IoError)> {
        self.sets
            .iter()
            .map(|e| {
                let path = base.join(&e.file);
                let f = std::fs::File::open(&path).map_err(|err| (path.clone(), err.into()))?;
                let corr = read_correspondences(std::io::BufReader::new(f)).map_err(|err| (path.clone(), err))?;
                Ok(AugmentedSet::new(corr, e.map))
            })
            .collect()
    }
}

/// Binary little-endian PLY with double `x y z confidence` vertices.
pub fn write_ply(mut writer: impl Write, points: &[Vec3<f64>], confidences: &[f64]) -> Result<(), IoError> {
    if points.len() != confidences.len() {
        return Err(IoError::Format("points and confidences differ in length".into()));
    }
    write!(
        writer,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\nproperty double confidence\nend_header\n",
        points.len()
    )?;
    for (p, c) in points.iter().zip(confidences) {
        for v in [p.0[0], p.0[1], p.0[2], *c] {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads files produced by [`write_ply`].
pub fn read_ply(mut reader: impl Read) -> Result<(Vec<Vec3<f64>>, Vec<f64>), IoError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| IoError::Format("missing end_header".into()))?
        + marker.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|e| IoError::Format(e.to_string()))?;
    if !header.starts_with("ply\nformat binary_little_endian 1.0\n") {
        return Err(IoError::Format("not a binary little-endian PLY".into()));
    }
    let count: usize = header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| IoError::Format("missing vertex count".into()))?;
    let body = &bytes[end..];
    if body.len() != count * 32 {
        return Err(IoError::Format(format!("expected {} body bytes, found {}", count * 32, body.len())));
    }
    let f = |i: usize| f64::from_le_bytes(body[i * 8..i * 8 + 8].try_into().unwrap());
    let points = (0..count).map(|i| Vec3::new(f(4 * i), f(4 * i + 1), f(4 * i + 2))).collect();
    let conf = (0..count).map(|i| f(4 * i + 3)).collect();
    Ok((points, conf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_and_extra_fields() {
        let c = Correspondence::new(
            0,
            2,
            PixelCoord::new(1.5, 2.25),
            PixelCoord::new(3.0, 4.0),
            0.8,
            Provenance::Propagated,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_correspondences(&mut buf, &[c]).unwrap();
        assert_eq!(read_correspondences(&buf[..]).unwrap(), vec![c]);

        let text = "{\"image_q\":1,\"image_s\":0,\"u_q\":1,\"v_q\":2,\"u_s\":3,\"v_s\":4,\"confidence\":0.9,\"score\":7}\n";
        let got = read_correspondences(text.as_bytes()).unwrap();
        assert_eq!(got[0].provenance, Provenance::Direct);
    }

    #[test]
    fn corrupt_line_reports_number() {
        let text = "{\"image_q\":1,\"image_s\":0,\"u_q\":1,\"v_q\":2,\"u_s\":3,\"v_s\":4,\"confidence\":0.9}\n\nnot json\n";
        match read_correspondences(text.as_bytes()) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let same = "{\"image_q\":1,\"image_s\":1,\"u_q\":1,\"v_q\":2,\"u_s\":3,\"v_s\":4,\"confidence\":0.9}\n";
        assert!(matches!(read_correspondences(same.as_bytes()), Err(IoError::Invalid { line: 1, .. })));
    }

    #[test]
    fn ply_round_trip() {
        let pts = vec![Vec3::new(1.0, -2.0, 3.5), Vec3::new(0.0, 0.0, 1e-3)];
        let conf = vec![0.9, 0.5];
        let mut buf = Vec::new();
        write_ply(&mut buf, &pts, &conf).unwrap();
        assert!(buf.starts_with(b"ply\nformat binary_little_endian 1.0\nelement vertex 2\n"));
        assert_eq!(read_ply(&buf[..]).unwrap(), (pts, conf));
    }
}
