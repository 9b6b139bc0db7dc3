//! File formats: robot motions, demonstrator recordings, dataset manifests,
//! JSON helpers and output-directory handling.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::kinematics::{JointState, MarkerFrame};
use crate::{Error, Result};

pub const DEMONSTRATOR_HEADER: [&str; 10] =
    ["t", "sx", "sy", "sz", "ex", "ey", "ez", "hx", "hy", "hz"];

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: e.to_string(),
    }
}

fn parse_row(path: &Path, record: &csv::StringRecord, expected: usize) -> Result<Vec<f64>> {
    let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
    if record.len() != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("expected {expected} columns, found {}", record.len()),
        });
    }
    record
        .iter()
        .map(|f| {
            f.trim().parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("bad number {f:?}: {e}"),
            })
        })
        .collect()
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `step,q1..qd` rows.
pub fn write_robot_motion(path: &Path, motion: &[JointState]) -> Result<()> {
    let d = motion.first().map(|q| q.dim()).unwrap_or(0);
    let header: Vec<String> = std::iter::once("step".to_string())
        .chain((1..=d).map(|i| format!("q{i}")))
        .collect();
    write_rows(
        path,
        &header,
        motion.iter().enumerate().map(|(i, q)| {
            std::iter::once(i.to_string())
                .chain(q.iter().map(|v| v.to_string()))
                .collect()
        }),
    )
}

pub fn read_robot_motion(path: &Path) -> Result<Vec<JointState>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.is_empty() || &header[0] != "step" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "header must start with `step`".into(),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = parse_row(path, &rec, header.len())?;
        out.push(JointState(row[1..].to_vec()));
    }
    Ok(out)
}

/// One demonstrator recording: timestamps and marker frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub times: Vec<f64>,
    pub frames: Vec<MarkerFrame>,
}

impl Recording {
    /// Median sample period, or 0 for fewer than two samples.
    pub fn sample_period(&self) -> f64 {
        let mut dts: Vec<f64> = self.times.windows(2).map(|w| w[1] - w[0]).collect();
        if dts.is_empty() {
            return 0.0;
        }
        dts.sort_by(f64::total_cmp);
        dts[dts.len() / 2]
    }
}

pub fn write_recording(path: &Path, rec: &Recording) -> Result<()> {
    let header: Vec<String> = DEMONSTRATOR_HEADER.iter().map(|s| s.to_string()).collect();
    write_rows(
        path,
        &header,
        rec.times.iter().zip(&rec.frames).map(|(t, f)| {
            std::iter::once(*t)
                .chain(f.shoulder.iter().copied())
                .chain(f.elbow.iter().copied())
                .chain(f.hand.iter().copied())
                .map(|v| v.to_string())
                .collect()
        }),
    )
}

pub fn read_recording(path: &Path) -> Result<Recording> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().map(str::trim).ne(DEMONSTRATOR_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("header must be {}", DEMONSTRATOR_HEADER.join(",")),
        });
    }
    let mut times = Vec::new();
    let mut frames = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let v = parse_row(path, &rec, 10)?;
        if let Some(prev) = times.last() {
            if v[0] < *prev {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: rec.position().map(|p| p.line() as usize).unwrap_or(0),
                    msg: "timestamps must be non-decreasing".into(),
                });
            }
        }
        times.push(v[0]);
        frames.push(MarkerFrame {
            shoulder: Vector3::new(v[1], v[2], v[3]),
            elbow: Vector3::new(v[4], v[5], v[6]),
            hand: Vector3::new(v[7], v[8], v[9]),
        });
    }
    Ok(Recording { times, frames })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Split,
}

/// Reads a manifest; relative paths are resolved against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries: Vec<ManifestEntry> = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for e in &mut entries {
        if e.path.is_relative() {
            e.path = base.join(&e.path);
        }
        if !e.path.is_file() {
            return Err(Error::Missing(format!(
                "recording {} listed in {} does not exist",
                e.path.display(),
                path.display()
            )));
        }
    }
    Ok(entries)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Missing(format!("{} does not exist", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Prepares an output directory. A non-empty existing directory is only
/// replaced when `force` is set.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty {
            if !force {
                return Err(Error::InvalidConfig(format!(
                    "{} already exists; pass --force to overwrite",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robot_motion_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = vec![
            JointState(vec![0.1, -0.2, 1.0 / 3.0]),
            JointState(vec![1e-17, 2.5, -0.0]),
        ];
        write_robot_motion(&p, &m).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("step,q1,q2,q3\n0,"));
        assert_eq!(read_robot_motion(&p).unwrap(), m);
    }

    #[test]
    fn recording_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let f = MarkerFrame {
            shoulder: Vector3::zeros(),
            elbow: Vector3::new(0.1, 0.2, 0.3),
            hand: Vector3::new(0.4, 0.5, 0.6),
        };
        let rec = Recording {
            times: vec![0.0, 0.01],
            frames: vec![f, f],
        };
        write_recording(&p, &rec).unwrap();
        assert_eq!(read_recording(&p).unwrap(), rec);
        assert!((rec.sample_period() - 0.01).abs() < 1e-15);

        fs::write(&p, "t,sx,sy,sz,ex,ey,ez,hx,hy,hz\n0,0,0,0,0,0,0,0,0,abc\n").unwrap();
        assert!(matches!(read_recording(&p), Err(Error::Parse { line: 2, .. })));
        fs::write(&p, "time,a\n0,1\n").unwrap();
        assert!(matches!(read_recording(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "").unwrap();
        let m = dir.path().join("manifest.json");
        fs::write(&m, r#"[{"path": "a.csv", "split": "train"}]"#).unwrap();
        let e = read_manifest(&m).unwrap();
        assert_eq!(e[0].path, dir.path().join("a.csv"));
        assert_eq!(e[0].split, Split::Train);
        fs::write(&m, r#"[{"path": "b.csv", "split": "test"}]"#).unwrap();
        assert!(matches!(read_manifest(&m), Err(Error::Missing(_))));
    }

    #[test]
    fn output_dir_requires_force() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        prepare_output_dir(&out, false).unwrap();
        fs::write(out.join("x"), "1").unwrap();
        assert!(prepare_output_dir(&out, false).is_err());
        prepare_output_dir(&out, true).unwrap();
        assert!(!out.join("x").exists());
    }
}
