//! File formats: CSV with a documented header comment, binary snapshots, JSON indices.
//!
//! A snapshot file is the 8-byte magic `HMFSNAP1`, then five little-endian
//! words (`t: f64`, `nx: u64`, `ny: u64`, `components: u64`, `target: u64`),
//! then `nx·ny·components` little-endian `f64` values in node order. The
//! directory's `index.json` lists the files with their times and carries the
//! domain and target descriptions needed to rebuild the states.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::corotational::CorotationalState;
use crate::geometry::{DomainSpec, TargetMetric, TargetSpec};
use crate::state::MapState;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"HMFSNAP1";
pub const INDEX_FILE: &str = "index.json";

/// Target code stored in the snapshot header.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    RoundSphere = 0,
    WarpedSphere = 1,
    /// Corotational profile `h(r)`; one component per radial node.
    Radial = 2,
}

impl TargetKind {
    fn from_code(c: u64) -> Result<Self> {
        match c {
            0 => Ok(Self::RoundSphere),
            1 => Ok(Self::WarpedSphere),
            2 => Ok(Self::Radial),
            _ => Err(Error::InvalidParameter(format!("unknown snapshot target code {c}"))),
        }
    }

    pub fn of(target: &TargetMetric) -> Self {
        match target {
            TargetMetric::RoundSphere => Self::RoundSphere,
            TargetMetric::Warped(_) => Self::WarpedSphere,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnapshotHeader {
    pub t: f64,
    pub nx: usize,
    pub ny: usize,
    pub components: usize,
    pub target: TargetKind,
}

pub fn write_snapshot(path: &Path, header: &SnapshotHeader, data: &[f64]) -> Result<()> {
    if data.len() != header.nx * header.ny * header.components {
        return Err(Error::InvalidParameter(format!(
            "snapshot holds {} values, header expects {}",
            data.len(),
            header.nx * header.ny * header.components
        )));
    }
    let mut f = BufWriter::new(create(path)?);
    f.write_all(SNAPSHOT_MAGIC)?;
    f.write_all(&header.t.to_le_bytes())?;
    for w in [header.nx as u64, header.ny as u64, header.components as u64, header.target as u64] {
        f.write_all(&w.to_le_bytes())?;
    }
    for v in data {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<(SnapshotHeader, Vec<f64>)> {
    let mut f = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::InvalidParameter(format!("{} is not a snapshot file", path.display())));
    }
    let mut word = [0u8; 8];
    f.read_exact(&mut word)?;
    let t = f64::from_le_bytes(word);
    let mut dims = [0usize; 4];
    for d in &mut dims {
        f.read_exact(&mut word)?;
        *d = u64::from_le_bytes(word) as usize;
    }
    let header = SnapshotHeader { t, nx: dims[0], ny: dims[1], components: dims[2], target: TargetKind::from_code(dims[3] as u64)? };
    let n = header.nx * header.ny * header.components;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * n {
        return Err(Error::InvalidParameter(format!("{}: expected {} values, found {} bytes", path.display(), n, bytes.len())));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, data))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub t: f64,
}

/// Contents of `index.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotIndex {
    pub format: String,
    pub target_kind: TargetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
    /// Corotational degree, for radial snapshots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<i32>,
    pub snapshots: Vec<IndexEntry>,
}

impl SnapshotIndex {
    pub fn load(dir: &Path) -> Result<Self> {
        let idx: Self = serde_json::from_reader(BufReader::new(File::open(dir.join(INDEX_FILE))?))?;
        if idx.format != "HMFSNAP1" {
            return Err(Error::InvalidParameter(format!("unsupported snapshot format {}", idx.format)));
        }
        Ok(idx)
    }
}

fn snapshot_name(k: usize) -> String {
    format!("snap_{k:05}.bin")
}

/// Writes planar states and their index; returns the files written.
pub fn write_map_snapshots(dir: &Path, states: &[MapState], target: Option<&TargetSpec>) -> Result<Vec<PathBuf>> {
    let Some(first) = states.first() else {
        return Err(Error::InvalidParameter("no snapshots to write".into()));
    };
    let kind = TargetKind::of(&first.target);
    let mut files = Vec::new();
    let mut entries = Vec::new();
    for (k, s) in states.iter().enumerate() {
        let d = &s.domain;
        let header = SnapshotHeader { t: s.t, nx: d.nx, ny: d.ny, components: 3, target: kind };
        let flat: Vec<f64> = s.values.iter().flatten().copied().collect();
        let name = snapshot_name(k);
        let path = dir.join(&name);
        write_snapshot(&path, &header, &flat)?;
        files.push(path);
        entries.push(IndexEntry { file: name, t: s.t });
    }
    let idx = SnapshotIndex {
        format: "HMFSNAP1".into(),
        target_kind: kind,
        domain: Some(first.domain.spec().clone()),
        target: target.cloned(),
        k: None,
        snapshots: entries,
    };
    files.push(write_json(&dir.join(INDEX_FILE), &idx)?);
    Ok(files)
}

/// Writes radial profiles `h(r_j)` and their index.
pub fn write_radial_snapshots(dir: &Path, states: &[CorotationalState]) -> Result<Vec<PathBuf>> {
    let Some(first) = states.first() else {
        return Err(Error::InvalidParameter("no snapshots to write".into()));
    };
    let mut files = Vec::new();
    let mut entries = Vec::new();
    for (k, s) in states.iter().enumerate() {
        let header = SnapshotHeader { t: s.t, nx: s.h.len(), ny: 1, components: 1, target: TargetKind::Radial };
        let name = snapshot_name(k);
        let path = dir.join(&name);
        write_snapshot(&path, &header, &s.h)?;
        files.push(path);
        entries.push(IndexEntry { file: name, t: s.t });
    }
    let idx = SnapshotIndex {
        format: "HMFSNAP1".into(),
        target_kind: TargetKind::Radial,
        domain: None,
        target: Some(TargetSpec::RoundSphere),
        k: Some(first.k),
        snapshots: entries,
    };
    files.push(write_json(&dir.join(INDEX_FILE), &idx)?);
    Ok(files)
}

/// Snapshots loaded from a directory.
#[derive(Clone, Debug)]
pub enum SnapshotSet {
    Planar(Vec<MapState>),
    Radial(Vec<CorotationalState>),
}

/// Reads every snapshot listed in `dir/index.json`. `target` overrides the
/// stored target description; warped targets need one of the two.
pub fn read_snapshots(dir: &Path, target: Option<&TargetSpec>) -> Result<SnapshotSet> {
    let idx = SnapshotIndex::load(dir)?;
    if idx.target_kind == TargetKind::Radial {
        let k = idx.k.ok_or_else(|| Error::InvalidParameter("radial index lacks k".into()))?;
        let mut out = Vec::new();
        for e in &idx.snapshots {
            let (h, data) = read_snapshot(&dir.join(&e.file))?;
            let mut s = CorotationalState::from_fn(data.len() - 1, k, |_| 0.0)?;
            s.h = data;
            s.t = h.t;
            out.push(s);
        }
        return Ok(SnapshotSet::Radial(out));
    }
    let spec = idx.domain.as_ref().ok_or_else(|| Error::InvalidParameter("planar index lacks a domain".into()))?;
    let domain = Arc::new(spec.build()?);
    let tspec = match (target, &idx.target, idx.target_kind) {
        (Some(t), _, _) => t.clone(),
        (None, Some(t), _) => t.clone(),
        (None, None, TargetKind::RoundSphere) => TargetSpec::RoundSphere,
        _ => return Err(Error::InvalidParameter("warped snapshots need a target description".into())),
    };
    let metric = Arc::new(tspec.build(Some(dir))?);
    let mut out = Vec::new();
    for e in &idx.snapshots {
        let (h, data) = read_snapshot(&dir.join(&e.file))?;
        if (h.nx, h.ny, h.components) != (domain.nx, domain.ny, 3) {
            return Err(Error::InvalidParameter(format!("{}: grid {}x{} does not match the index domain", e.file, h.nx, h.ny)));
        }
        let values = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        out.push(MapState::new(domain.clone(), metric.clone(), values, h.t)?);
    }
    Ok(SnapshotSet::Planar(out))
}

fn create(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(File::create(path)?)
}

/// CSV writer whose first line is `# <columns doc>`.
pub fn csv_writer(path: &Path, columns_doc: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut f = BufWriter::new(create(path)?);
    writeln!(f, "# {columns_doc}")?;
    Ok(csv::Writer::from_writer(f))
}

/// Pretty JSON with a trailing newline; returns `path` for manifest bookkeeping.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<PathBuf> {
    let mut f = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(path.to_path_buf())
}

/// Reads a CSV written by [`csv_writer`], skipping `#` comment lines.
pub fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(File::open(path)?))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let mut f = BufReader::new(File::open(path)?);
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SurfaceDomain;

    #[test]
    fn planar_snapshots_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let d = SurfaceDomain::unit_disk(16).unwrap();
        let states: Vec<MapState> = (0..3).map(|k| MapState::random_smooth(&d, k, 2, 0.4).with_time(0.1 * k as f64)).collect();
        write_map_snapshots(dir.path(), &states, Some(&TargetSpec::RoundSphere)).unwrap();
        let SnapshotSet::Planar(back) = read_snapshots(dir.path(), None).unwrap() else { panic!("expected planar") };
        assert_eq!(back.len(), 3);
        for (a, b) in states.iter().zip(&back) {
            assert_eq!(a.values, b.values);
            assert_eq!(a.t, b.t);
        }
    }

    #[test]
    fn radial_snapshots_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = CorotationalState::from_fn(32, 1, |r| 2.0 * r.atan()).unwrap();
        write_radial_snapshots(dir.path(), std::slice::from_ref(&s)).unwrap();
        let SnapshotSet::Radial(back) = read_snapshots(dir.path(), None).unwrap() else { panic!("expected radial") };
        assert_eq!(back[0].h, s.h);
        assert_eq!(back[0].dr, s.dr);
    }

    #[test]
    fn corrupt_snapshots_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        std::fs::write(&p, b"NOTSNAP!").unwrap();
        assert!(read_snapshot(&p).is_err());
        let h = SnapshotHeader { t: 0.0, nx: 2, ny: 2, components: 1, target: TargetKind::Radial };
        assert!(write_snapshot(&p, &h, &[1.0; 3]).is_err());
        write_snapshot(&p, &h, &[1.0; 4]).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, bytes).unwrap();
        assert!(read_snapshot(&p).is_err());
    }

    #[test]
    fn csv_comment_header_is_skipped_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let mut w = csv_writer(&p, "x: abscissa").unwrap();
        w.write_record(["x"]).unwrap();
        w.serialize(1.5).unwrap();
        w.flush().unwrap();
        drop(w);
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("# x: abscissa\n"));
        let rows: Vec<f64> = csv_reader(&p).unwrap().deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(rows, vec![1.5]);
    }
}
