//! Feature files and JSON-lines manifests.
//!
//! FSEQ layout (little-endian): `"FSEQ" | version: u32 | n_frames: u32 |
//! dim: u32 | values: f64 × n_frames·dim`, row-major.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Segment, Utterance};
use crate::error::{Error, Result};
use crate::params::ByteCursor;
use crate::tensor::Tensor;

pub const FSEQ_MAGIC: &[u8; 4] = b"FSEQ";
pub const FSEQ_VERSION: u32 = 1;

pub fn encode_fseq(x: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 8 * x.len());
    buf.extend_from_slice(FSEQ_MAGIC);
    buf.extend_from_slice(&FSEQ_VERSION.to_le_bytes());
    buf.extend_from_slice(&(x.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(x.cols() as u32).to_le_bytes());
    for v in x.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_fseq(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = ByteCursor::new(bytes);
    if cur.take(4, "magic")? != FSEQ_MAGIC {
        return Err(cur.error(0, "bad feature file magic"));
    }
    let version = cur.u32("version")?;
    if version != FSEQ_VERSION {
        return Err(cur.error(4, &format!("unsupported feature file version {version}")));
    }
    let frames = cur.u32("frame count")? as usize;
    let dim = cur.u32("dimension")? as usize;
    if frames == 0 || dim == 0 {
        return Err(cur.error(8, "empty feature matrix"));
    }
    let mut values = Vec::with_capacity(frames * dim);
    for _ in 0..frames * dim {
        values.push(cur.f64("value")?);
    }
    if !cur.at_end() {
        return Err(cur.error(cur.pos, "trailing bytes after feature data"));
    }
    Tensor::new(vec![frames, dim], values)
}

pub fn write_fseq(path: impl AsRef<Path>, x: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_fseq(x)).map_err(|e| Error::file(path, e))
}

pub fn read_fseq(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_fseq(&bytes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory unless absolute.
    pub feature_path: String,
    pub targets: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<Segment>>,
}

/// Writes `<dir>/<name>.jsonl` and one FSEQ file per utterance under
/// `<dir>/<name>/`. Returns the manifest path.
pub fn store_dataset(dir: impl AsRef<Path>, name: &str, utts: &[Utterance]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let feat_dir = dir.join(name);
    fs::create_dir_all(&feat_dir).map_err(|e| Error::file(&feat_dir, e))?;
    let manifest = dir.join(format!("{name}.jsonl"));
    let mut out = Vec::new();
    for u in utts {
        let rel = format!("{name}/{}.fseq", u.id);
        write_fseq(dir.join(&rel), &u.features)?;
        let entry = ManifestEntry {
            id: u.id.clone(),
            feature_path: rel,
            targets: u.targets.clone(),
            segments: u.segments.clone(),
        };
        serde_json::to_writer(&mut out, &entry)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(&manifest).map_err(|e| Error::file(&manifest, e))?;
    f.write_all(&out).map_err(|e| Error::file(&manifest, e))?;
    Ok(manifest)
}

pub fn load_dataset(manifest: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or(Path::new("."));
    let f = fs::File::open(manifest).map_err(|e| Error::file(manifest, e))?;
    let mut utts = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::file(manifest, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("{}:{}: {e}", manifest.display(), n + 1)))?;
        let path = base.join(&entry.feature_path);
        let features = read_fseq(&path).map_err(|e| match e {
            Error::Parse { offset, message } => Error::Parse {
                offset,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        let u = Utterance {
            id: entry.id,
            features,
            targets: entry.targets,
            segments: entry.segments,
        };
        u.validate()?;
        utts.push(u);
    }
    Ok(utts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Utterance> {
        vec![
            Utterance {
                id: "a".into(),
                features: Tensor::matrix(3, 2, vec![0.1, -2.0, 1e-300, 4.0, 5.5, f64::MIN_POSITIVE]).unwrap(),
                targets: vec![3, 4],
                segments: Some(vec![Segment { symbol: 3, start: 0, end: 0 }, Segment { symbol: 4, start: 1, end: 2 }]),
            },
            Utterance {
                id: "b".into(),
                features: Tensor::matrix(1, 2, vec![7.0, 8.0]).unwrap(),
                targets: vec![5],
                segments: None,
            },
        ]
    }

    #[test]
    fn dataset_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let m = store_dataset(dir.path(), "train", &sample()).unwrap();
        let text = fs::read_to_string(&m).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(load_dataset(&m).unwrap(), sample());
    }

    #[test]
    fn truncated_feature_file_is_an_error() {
        let bytes = encode_fseq(&sample()[0].features);
        for cut in [2, 10, 17, bytes.len() - 1] {
            match decode_fseq(&bytes[..cut]) {
                Err(Error::Parse { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("expected parse error, got {other:?}"),
            }
        }
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(decode_fseq(&bad), Err(Error::Parse { offset: 0, .. })));
    }
}
