//! CSV readers and writers for point clouds, manifests, census tables,
//! match reports and predictions.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! writer here is byte-deterministic and lossless.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::georef::CensusRecord;
use crate::pointcloud::{Point3, PointCloud};

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::format(path, format!("{kind:?}")),
    }
}

fn check_header(path: &Path, rdr: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::format(
            path,
            format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    Ok(())
}

fn finish(path: &Path, mut w: csv::Writer<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a header and string rows; for small tables with no reader.
pub fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

#[derive(Debug, Serialize, Deserialize)]
struct XyzRow {
    x: f64,
    y: f64,
    z: f64,
}

/// Reads an `x,y,z` file; the cloud id is the file stem.
pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &["x", "y", "z"])?;
    let points = rdr
        .deserialize::<XyzRow>()
        .map(|r| {
            r.map(|r| Point3::new(r.x, r.y, r.z))
                .map_err(|e| csv_err(path, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    PointCloud::new(id, points).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = writer(path)?;
    if cloud.points.is_empty() {
        w.write_record(["x", "y", "z"])
            .map_err(|e| csv_err(path, e))?;
    }
    for p in &cloud.points {
        w.serialize(XyzRow {
            x: p.x,
            y: p.y,
            z: p.z,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// One row of a dataset manifest. `path` is relative to the manifest's
/// directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub utm_x: Option<f64>,
    pub utm_y: Option<f64>,
    pub height: Option<f64>,
}

pub const MANIFEST_HEADER: [&str; 5] = ["id", "path", "utm_x", "utm_y", "height"];

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &MANIFEST_HEADER)?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = writer(path)?;
    if entries.is_empty() {
        w.write_record(MANIFEST_HEADER)
            .map_err(|e| csv_err(path, e))?;
    }
    for e in entries {
        w.serialize(e).map_err(|err| csv_err(path, err))?;
    }
    finish(path, w)
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new("")).join(p)
    }
}

/// Loads every cloud listed in a manifest. Ids and locations come from the
/// manifest, overriding the file stem.
pub fn load_manifest_clouds(manifest: &Path) -> Result<Vec<PointCloud>> {
    let entries = read_manifest(manifest)?;
    let mut seen = std::collections::HashSet::new();
    entries
        .iter()
        .map(|e| {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::format(
                    manifest,
                    format!("duplicate cloud id `{}`", e.id),
                ));
            }
            let mut cloud = read_xyz(&resolve(manifest, &e.path))?;
            cloud.id = e.id.clone();
            if let (Some(x), Some(y)) = (e.utm_x, e.utm_y) {
                cloud = cloud.with_location(x, y);
            }
            if let Some(h) = e.height {
                cloud = cloud.with_height(h);
            }
            Ok(cloud)
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CensusRow {
    tag: String,
    species: String,
    east_offset: f64,
    north_offset: f64,
    dbh: Option<f64>,
    alive: String,
}

pub const CENSUS_HEADER: [&str; 6] = [
    "tag",
    "species",
    "east_offset",
    "north_offset",
    "dbh",
    "alive",
];

fn parse_alive(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "alive" | "a" => Some(true),
        "false" | "0" | "dead" | "d" => Some(false),
        _ => None,
    }
}

/// Reads a census table. Offsets must be finite and non-negative and
/// species nonempty.
pub fn read_census(path: &Path) -> Result<Vec<CensusRecord>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &CENSUS_HEADER)?;
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<CensusRow>().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| Error::format(path, format!("record {}: {what}", line + 1));
        let offsets_ok = [row.east_offset, row.north_offset]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if !offsets_ok {
            return Err(bad("offsets must be finite and >= 0"));
        }
        if row.species.is_empty() {
            return Err(bad("empty species"));
        }
        let alive = parse_alive(&row.alive).ok_or_else(|| bad("alive must be true or false"))?;
        out.push(CensusRecord {
            tag: row.tag,
            species: row.species,
            east_offset: row.east_offset,
            north_offset: row.north_offset,
            dbh: row.dbh,
            alive,
        });
    }
    Ok(out)
}

pub fn write_census(path: &Path, records: &[CensusRecord]) -> Result<()> {
    let mut w = writer(path)?;
    if records.is_empty() {
        w.write_record(CENSUS_HEADER)
            .map_err(|e| csv_err(path, e))?;
    }
    for r in records {
        w.serialize(CensusRow {
            tag: r.tag.clone(),
            species: r.species.clone(),
            east_offset: r.east_offset,
            north_offset: r.north_offset,
            dbh: r.dbh,
            alive: r.alive.to_string(),
        })
        .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// A labeled match: which census stem a cloud was paired with and the class
/// that stem's species maps to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReportRow {
    pub cloud_id: String,
    pub census_tag: String,
    pub class_index: usize,
    pub class_name: String,
}

pub const MATCH_HEADER: [&str; 4] = ["cloud_id", "census_tag", "class_index", "class_name"];

pub fn read_match_report(path: &Path) -> Result<Vec<MatchReportRow>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &MATCH_HEADER)?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}

pub fn write_match_report(path: &Path, rows: &[MatchReportRow]) -> Result<()> {
    let mut w = writer(path)?;
    if rows.is_empty() {
        w.write_record(MATCH_HEADER).map_err(|e| csv_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// One predicted cloud: argmax class plus the full probability row.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub cloud_id: String,
    pub class_index: usize,
    pub probabilities: Vec<f32>,
}

/// Header `cloud_id,class_index,class_name,p_<class>...`.
pub fn write_predictions(path: &Path, class_names: &[String], preds: &[Prediction]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec![
        "cloud_id".to_string(),
        "class_index".into(),
        "class_name".into(),
    ];
    header.extend(class_names.iter().map(|c| format!("p_{c}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for p in preds {
        if p.probabilities.len() != class_names.len() {
            return Err(crate::error::shape_err!(
                "prediction for `{}` has {} probabilities for {} classes",
                p.cloud_id,
                p.probabilities.len(),
                class_names.len()
            ));
        }
        let name = class_names.get(p.class_index).cloned().unwrap_or_default();
        let mut rec = vec![p.cloud_id.clone(), p.class_index.to_string(), name];
        rec.extend(p.probabilities.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// Writes a `key=value` block, one pair per line, in the given order.
pub fn write_key_values(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in pairs {
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses a `key=value` block. Blank lines and `#` comments are skipped;
/// keys and values are trimmed. Later duplicates win.
pub fn parse_key_values(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(origin, format!("line {}: expected key=value", n + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(Error::format(origin, format!("line {}: empty key", n + 1)));
        }
        out.retain(|(existing, _)| *existing != k);
        out.push((k, v));
    }
    Ok(out)
}

pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_key_values(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xyz_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tree_7.csv");
        let cloud = PointCloud::new(
            "tree_7",
            vec![
                Point3::new(0.1, -2.5e-7, 13.0),
                Point3::new(1.0 / 3.0, 536201.4, 0.0),
            ],
        )
        .unwrap();
        write_xyz(&path, &cloud).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x,y,z\n"));
        assert_eq!(read_xyz(&path).unwrap(), cloud);
    }

    #[test]
    fn xyz_rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        std::fs::write(&path, "x,y\n1,2\n").unwrap();
        assert!(matches!(read_xyz(&path), Err(Error::Format { .. })));
        std::fs::write(&path, "x,y,z\n").unwrap();
        assert!(matches!(read_xyz(&path), Err(Error::Format { .. })));
        std::fs::write(&path, "x,y,z\n1,2,abc\n").unwrap();
        assert!(matches!(read_xyz(&path), Err(Error::Format { .. })));
        assert!(matches!(
            read_xyz(&dir.path().join("missing.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = PointCloud::new("x", vec![Point3::new(0.0, 0.0, 1.0)]).unwrap();
        write_xyz(&dir.path().join("clouds/a.csv"), &cloud).unwrap();
        let manifest = dir.path().join("manifest.csv");
        write_manifest(
            &manifest,
            &[ManifestEntry {
                id: "tree-a".into(),
                path: "clouds/a.csv".into(),
                utm_x: Some(10.5),
                utm_y: Some(-3.0),
                height: None,
            }],
        )
        .unwrap();
        let clouds = load_manifest_clouds(&manifest).unwrap();
        assert_eq!(clouds[0].id, "tree-a");
        assert_eq!(clouds[0].location, Some([10.5, -3.0]));
        assert_eq!(clouds[0].height, None);
    }

    #[test]
    fn census_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("census.csv");
        let recs = vec![
            CensusRecord {
                tag: "T1".into(),
                species: "Acacia etbaica".into(),
                east_offset: 3.2,
                north_offset: 4.5,
                dbh: Some(12.0),
                alive: true,
            },
            CensusRecord {
                tag: "T2".into(),
                species: "Croton".into(),
                east_offset: 0.0,
                north_offset: 0.0,
                dbh: None,
                alive: false,
            },
        ];
        write_census(&path, &recs).unwrap();
        assert_eq!(read_census(&path).unwrap(), recs);
        std::fs::write(
            &path,
            "tag,species,east_offset,north_offset,dbh,alive\nT,A,-1,0,,true\n",
        )
        .unwrap();
        assert!(read_census(&path).is_err());
        std::fs::write(
            &path,
            "tag,species,east_offset,north_offset,dbh,alive\nT,A,1,0,,maybe\n",
        )
        .unwrap();
        assert!(read_census(&path).is_err());
    }

    #[test]
    fn match_report_and_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![MatchReportRow {
            cloud_id: "c".into(),
            census_tag: "t".into(),
            class_index: 5,
            class_name: "other".into(),
        }];
        write_match_report(&path, &rows).unwrap();
        assert_eq!(read_match_report(&path).unwrap(), rows);

        let pred = dir.path().join("p.csv");
        let names = vec!["a".to_string(), "other".to_string()];
        write_predictions(
            &pred,
            &names,
            &[Prediction {
                cloud_id: "c".into(),
                class_index: 1,
                probabilities: vec![0.25, 0.75],
            }],
        )
        .unwrap();
        assert_eq!(
            std::fs::read_to_string(&pred).unwrap(),
            "cloud_id,class_index,class_name,p_a,p_other\nc,1,other,0.25,0.75\n"
        );
    }

    #[test]
    fn key_values() {
        let kv = parse_key_values("# c\n a = 1 \n\nb=x=y\na=2\n", Path::new("cfg")).unwrap();
        assert_eq!(
            kv,
            vec![("b".into(), "x=y".into()), ("a".into(), "2".into())]
        );
        assert!(parse_key_values("novalue\n", Path::new("cfg")).is_err());
    }
}
