//! On-disk dataset layout.
//!
//! A dataset directory holds `manifest.tsv` (one row per run: subject id,
//! modality, run index, relative path, then one column per label task) and
//! one array file per run. Arrays are raw little-endian `float32` with a
//! sidecar `<file>.hdr` text header naming dtype and shape. A small
//! `dataset.toml` records whether the runs are raw series or pre-built
//! per-domain inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::connectivity::graph_from_connectivity;
use crate::data::{
    build_subject_inputs, DataConfig, Modality, RoiTimeSeries, RunInputs, SubjectInputs,
    SubjectRecord,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{DType, Scalar};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const INFO_FILE: &str = "dataset.toml";
const MISSING_LABEL: &str = "NA";
const FIXED_COLUMNS: [&str; 4] = ["subject_id", "modality", "run", "path"];

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayHeader {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub sampling_rate: Option<f64>,
}

fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `m` as float32 plus its header.
pub fn write_array<T: Scalar>(
    path: &Path,
    m: &Matrix<T>,
    sampling_rate: Option<f64>,
) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.len() * 4);
    for &v in m.as_slice() {
        bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    write_file(path, &bytes)?;
    let mut header = format!(
        "dtype = {}\nshape = {} {}\n",
        DType::F32.name(),
        m.rows(),
        m.cols()
    );
    if let Some(sr) = sampling_rate {
        header.push_str(&format!("sampling_rate = {sr}\n"));
    }
    write_file(&header_path(path), header.as_bytes())
}

pub fn read_header(path: &Path) -> Result<ArrayHeader> {
    let hp = header_path(path);
    let text = read_text(&hp)?;
    let mut dtype = None;
    let mut shape = None;
    let mut sampling_rate = None;
    for line in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(&hp, format!("expected `key = value`, got `{line}`")))?;
        let value = value.trim();
        match key.trim() {
            "dtype" => {
                dtype = Some(
                    DType::from_name(value)
                        .ok_or_else(|| Error::format(&hp, format!("unknown dtype `{value}`")))?,
                )
            }
            "shape" => {
                let dims = value
                    .split_whitespace()
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::format(&hp, format!("bad shape: {e}")))?;
                shape = Some(dims);
            }
            "sampling_rate" => {
                sampling_rate = Some(
                    value
                        .parse::<f64>()
                        .map_err(|e| Error::format(&hp, format!("bad sampling_rate: {e}")))?,
                )
            }
            other => return Err(Error::format(&hp, format!("unknown header key `{other}`"))),
        }
    }
    Ok(ArrayHeader {
        dtype: dtype.ok_or_else(|| Error::format(&hp, "missing dtype"))?,
        shape: shape.ok_or_else(|| Error::format(&hp, "missing shape"))?,
        sampling_rate,
    })
}

/// Reads a rank-2 array written by [`write_array`] (or any float32/float64 file with a header).
pub fn read_array<T: Scalar>(path: &Path) -> Result<(Matrix<T>, ArrayHeader)> {
    let header = read_header(path)?;
    let (rows, cols) = match header.shape.as_slice() {
        [r, c] => (*r, *c),
        [n] => (1, *n),
        other => {
            return Err(Error::format(
                path,
                format!("expected rank 1 or 2, got shape {other:?}"),
            ))
        }
    };
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let size = header.dtype.size();
    if bytes.len() != rows * cols * size {
        return Err(Error::format(
            path,
            format!(
                "expected {} bytes for shape {:?}, found {}",
                rows * cols * size,
                header.shape,
                bytes.len()
            ),
        ));
    }
    let data: Vec<T> = bytes
        .chunks_exact(size)
        .map(|c| match header.dtype {
            DType::F32 => T::of(f32::read_le(c) as f64),
            DType::F64 => T::of(f64::read_le(c)),
        })
        .collect();
    Ok((Matrix::from_vec(rows, cols, data)?, header))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub subject_id: String,
    pub modality: Modality,
    pub run: usize,
    pub path: String,
    pub labels: BTreeMap<String, i64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub tasks: Vec<String>,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut out = FIXED_COLUMNS.join("\t");
        for t in &self.tasks {
            out.push('\t');
            out.push_str(t);
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}",
                r.subject_id, r.modality, r.run, r.path
            ));
            for t in &self.tasks {
                out.push('\t');
                match r.labels.get(t) {
                    Some(v) => out.push_str(&v.to_string()),
                    None => out.push_str(MISSING_LABEL),
                }
            }
            out.push('\n');
        }
        write_file(&dir.join(MANIFEST_FILE), out.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = read_text(&path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::format(&path, "empty manifest"))?
            .split('\t')
            .collect();
        if header.len() < FIXED_COLUMNS.len() || header[..4] != FIXED_COLUMNS {
            return Err(Error::format(
                &path,
                format!("header must start with {}", FIXED_COLUMNS.join(", ")),
            ));
        }
        let tasks: Vec<String> = header[4..].iter().map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != header.len() {
                return Err(Error::format(
                    &path,
                    format!(
                        "line {}: expected {} columns, got {}",
                        lineno + 2,
                        header.len(),
                        fields.len()
                    ),
                ));
            }
            let run = fields[2].parse().map_err(|e| {
                Error::format(&path, format!("line {}: bad run index: {e}", lineno + 2))
            })?;
            let mut labels = BTreeMap::new();
            for (t, v) in tasks.iter().zip(&fields[4..]) {
                if *v != MISSING_LABEL && !v.is_empty() {
                    let v = v.parse().map_err(|e| {
                        Error::format(&path, format!("line {}: bad label: {e}", lineno + 2))
                    })?;
                    labels.insert(t.clone(), v);
                }
            }
            rows.push(ManifestRow {
                subject_id: fields[0].to_string(),
                modality: fields[1].parse()?,
                run,
                path: fields[3].to_string(),
                labels,
            });
        }
        Ok(Manifest { tasks, rows })
    }

    /// Rows grouped per subject, in first-appearance order.
    pub fn by_subject(&self) -> Vec<(String, Vec<&ManifestRow>)> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<&str, Vec<&ManifestRow>> = BTreeMap::new();
        for r in &self.rows {
            if !groups.contains_key(r.subject_id.as_str()) {
                order.push(r.subject_id.clone());
            }
            groups.entry(&r.subject_id).or_default().push(r);
        }
        order
            .into_iter()
            .map(|id| {
                let mut rows = groups.remove(id.as_str()).unwrap_or_default();
                rows.sort_by_key(|r| (r.modality, r.run));
                (id, rows)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Raw,
    DomainInputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub kind: DatasetKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
}

impl DatasetInfo {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(INFO_FILE);
        if !path.exists() {
            // a bare manifest is treated as raw runs
            return Ok(DatasetInfo {
                kind: DatasetKind::Raw,
                data: None,
            });
        }
        toml::from_str(&read_text(&path)?).map_err(|e| Error::format(&path, e.to_string()))
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let text =
            toml::to_string(self).map_err(|e| Error::format(dir.join(INFO_FILE), e.to_string()))?;
        write_file(&dir.join(INFO_FILE), text.as_bytes())
    }
}

fn task_union<'a>(labels: impl Iterator<Item = &'a BTreeMap<String, i64>>) -> Vec<String> {
    let mut tasks: Vec<String> = labels.flat_map(|l| l.keys().cloned()).collect();
    tasks.sort();
    tasks.dedup();
    tasks
}

/// Writes raw run arrays plus manifest.
pub fn write_raw_dataset<T: Scalar>(dir: &Path, records: &[SubjectRecord<T>]) -> Result<()> {
    let mut manifest = Manifest {
        tasks: task_union(records.iter().map(|r| &r.labels)),
        rows: Vec::new(),
    };
    for rec in records {
        for (modality, runs) in [
            (Modality::Fmri, &rec.fmri_runs),
            (Modality::Eeg, &rec.eeg_runs),
        ] {
            for (i, run) in runs.iter().enumerate() {
                let rel = format!("runs/{}_{}_{}.f32", rec.subject_id, modality, i);
                write_array(&dir.join(&rel), run.values(), Some(run.sampling_rate()))?;
                manifest.rows.push(ManifestRow {
                    subject_id: rec.subject_id.clone(),
                    modality,
                    run: i,
                    path: rel,
                    labels: rec.labels.clone(),
                });
            }
        }
    }
    manifest.write(dir)?;
    DatasetInfo {
        kind: DatasetKind::Raw,
        data: None,
    }
    .write(dir)
}

fn subject_record<T: Scalar>(
    dir: &Path,
    id: &str,
    rows: &[&ManifestRow],
) -> Result<SubjectRecord<T>> {
    let mut rec = SubjectRecord::new(id);
    for r in rows {
        let (m, header) = read_array::<T>(&dir.join(&r.path))?;
        let sr = header.sampling_rate.unwrap_or(1.0);
        let series = RoiTimeSeries::new(m, sr, r.modality)?;
        match r.modality {
            Modality::Fmri => rec.fmri_runs.push(series),
            Modality::Eeg => rec.eeg_runs.push(series),
        }
        rec.labels
            .extend(r.labels.iter().map(|(k, v)| (k.clone(), *v)));
    }
    Ok(rec)
}

pub fn read_raw_dataset<T: Scalar>(dir: &Path) -> Result<Vec<SubjectRecord<T>>> {
    let manifest = Manifest::read(dir)?;
    manifest
        .by_subject()
        .iter()
        .map(|(id, rows)| subject_record(dir, id, rows))
        .collect()
}

const DOMAIN_SUFFIXES: [&str; 3] = ["spatial", "temporal", "frequency"];

/// Writes pre-built per-domain inputs (`<prefix>.{spatial,temporal,frequency}.f32`).
pub fn write_domain_dataset<T: Scalar>(
    dir: &Path,
    subjects: &[SubjectInputs<T>],
    cfg: &DataConfig,
) -> Result<()> {
    let mut manifest = Manifest {
        tasks: task_union(subjects.iter().map(|s| &s.labels)),
        rows: Vec::new(),
    };
    for s in subjects {
        for modality in Modality::ALL {
            for (i, run) in s.runs(modality).iter().enumerate() {
                let prefix = format!("derived/{}_{}_{}", s.subject_id, modality, i);
                let arrays = [&run.graph.adjacency, &run.temporal, &run.frequency];
                for (suffix, m) in DOMAIN_SUFFIXES.iter().zip(arrays) {
                    write_array(&dir.join(format!("{prefix}.{suffix}.f32")), m, None)?;
                }
                manifest.rows.push(ManifestRow {
                    subject_id: s.subject_id.clone(),
                    modality,
                    run: i,
                    path: prefix,
                    labels: s.labels.clone(),
                });
            }
        }
    }
    manifest.write(dir)?;
    DatasetInfo {
        kind: DatasetKind::DomainInputs,
        data: Some(cfg.clone()),
    }
    .write(dir)
}

/// Loads per-domain inputs from either a raw or a pre-built dataset directory.
/// Raw runs are converted one subject at a time with `cfg`.
pub fn load_subject_inputs<T: Scalar>(
    dir: &Path,
    cfg: &DataConfig,
) -> Result<Vec<SubjectInputs<T>>> {
    let info = DatasetInfo::read(dir)?;
    let manifest = Manifest::read(dir)?;
    let mut out = Vec::new();
    for (id, rows) in manifest.by_subject() {
        match info.kind {
            DatasetKind::Raw => {
                let rec = subject_record::<T>(dir, &id, &rows)?;
                out.push(build_subject_inputs(&rec, cfg)?);
            }
            DatasetKind::DomainInputs => {
                if let Some(stored) = &info.data {
                    if stored != cfg {
                        return Err(Error::config(
                            "data",
                            "dataset was built with a different data configuration",
                        ));
                    }
                }
                let mut s = SubjectInputs {
                    subject_id: id.clone(),
                    labels: BTreeMap::new(),
                    fmri: Vec::new(),
                    eeg: Vec::new(),
                };
                for r in rows {
                    let load = |suffix: &str| -> Result<Matrix<T>> {
                        Ok(read_array::<T>(&dir.join(format!("{}.{suffix}.f32", r.path)))?.0)
                    };
                    let run = RunInputs {
                        modality: r.modality,
                        graph: graph_from_connectivity(&load("spatial")?)?,
                        temporal: load("temporal")?,
                        frequency: load("frequency")?,
                    };
                    s.labels
                        .extend(r.labels.iter().map(|(k, v)| (k.clone(), *v)));
                    match r.modality {
                        Modality::Fmri => s.fmri.push(run),
                        Modality::Eeg => s.eeg.push(run),
                    }
                }
                out.push(s);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_cohort, SyntheticSpec};

    #[test]
    fn array_roundtrip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix::from_fn(3, 5, |i, j| (i as f32) * 0.5 - j as f32);
        let p = dir.path().join("a.f32");
        write_array(&p, &m, Some(250.0)).unwrap();
        let (back, header) = read_array::<f32>(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.shape, vec![3, 5]);
        assert_eq!(header.sampling_rate, Some(250.0));
        let text = fs::read_to_string(dir.path().join("a.f32.hdr")).unwrap();
        assert!(text.contains("dtype = float32"));
        assert_eq!(fs::metadata(&p).unwrap().len(), 60);
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.f32");
        write_array(&p, &Matrix::<f64>::zeros(2, 2), None).unwrap();
        fs::write(&p, [0u8; 12]).unwrap();
        assert!(matches!(read_array::<f64>(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn raw_and_domain_datasets_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SyntheticSpec::new(3, 2, 4, 1.0, 6);
        spec.eeg_min_length = 400;
        let cohort: Vec<SubjectRecord<f32>> = generate_synthetic_cohort(&spec).unwrap();
        write_raw_dataset(dir.path(), &cohort).unwrap();
        let back: Vec<SubjectRecord<f32>> = read_raw_dataset(dir.path()).unwrap();
        assert_eq!(back, cohort);

        let cfg = DataConfig {
            fmri_length: 200,
            eeg_unified_length: 400,
            segment_length: 200,
        };
        let built: Vec<SubjectInputs<f32>> = load_subject_inputs(dir.path(), &cfg).unwrap();
        assert_eq!(built.len(), 3);
        let out = dir.path().join("built");
        write_domain_dataset(&out, &built, &cfg).unwrap();
        let reloaded: Vec<SubjectInputs<f32>> = load_subject_inputs(&out, &cfg).unwrap();
        assert_eq!(reloaded, built);

        let other = DataConfig {
            eeg_unified_length: 800,
            ..cfg
        };
        assert!(load_subject_inputs::<f32>(&out, &other).is_err());
    }
}
