//! Dataset directory format.
//!
//! ```text
//! manifest.json            format version, scales, nestings
//! <scale>.f32              N x dim records, little-endian f32, column-major
//! <scale>.coords.f32       N x 2 positions (only for scales with coords)
//! <parent>__<child>.nest   per parent in order: u32 count, then count u32 child indices
//! labels.u32               optional per-base-record labels
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DataScale, MultiScaleDataset, NestingMap};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "1";
const MANIFEST: &str = "manifest.json";
const LABELS: &str = "labels.u32";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: String,
    name: String,
    scales: Vec<ScaleEntry>,
    nestings: Vec<NestingEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScaleEntry {
    id: String,
    dim: usize,
    count: usize,
    coords: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    units: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NestingEntry {
    parent: String,
    child: String,
    file: String,
}

fn records_file(id: &str) -> String {
    format!("{id}.f32")
}

fn coords_file(id: &str) -> String {
    format!("{id}.coords.f32")
}

fn nest_file(parent: &str, child: &str) -> String {
    format!("{parent}__{child}.nest")
}

pub fn write_dataset(ds: &MultiScaleDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut scales = Vec::new();
    for s in &ds.scales {
        write_bytes(&dir.join(records_file(&s.id)), &column_major_bytes(&s.records))?;
        if let Some(c) = &s.coords {
            write_bytes(&dir.join(coords_file(&s.id)), &column_major_bytes(c))?;
        }
        let mut meta = s.meta.clone();
        let units = meta.remove("units");
        scales.push(ScaleEntry {
            id: s.id.clone(),
            dim: s.dim(),
            count: s.len(),
            coords: s.coords.is_some(),
            units,
            meta,
        });
    }
    let mut nestings = Vec::new();
    for n in &ds.nestings {
        let file = nest_file(&n.parent, &n.child);
        let mut bytes = Vec::with_capacity(4 * (n.edges.len() + n.total_edges()));
        for list in &n.edges {
            bytes.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for &c in list {
                bytes.extend_from_slice(&(c as u32).to_le_bytes());
            }
        }
        write_bytes(&dir.join(&file), &bytes)?;
        nestings.push(NestingEntry {
            parent: n.parent.clone(),
            child: n.child.clone(),
            file,
        });
    }
    let labels_path = dir.join(LABELS);
    let manifest = Manifest {
        format_version: FORMAT_VERSION.into(),
        name: ds.name.clone(),
        scales,
        nestings,
        labels: labels_path.exists().then(|| LABELS.to_string()),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write_bytes(&dir.join(MANIFEST), text.as_bytes())
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<MultiScaleDataset> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let mut scales = Vec::with_capacity(manifest.scales.len());
    for entry in &manifest.scales {
        let records = read_matrix(&dir.join(records_file(&entry.id)), entry.count, entry.dim, &entry.id)?;
        let coords = if entry.coords {
            Some(read_matrix(&dir.join(coords_file(&entry.id)), entry.count, 2, &entry.id)?)
        } else {
            None
        };
        let mut scale = DataScale::new(entry.id.clone(), records, coords)
            .map_err(|e| Error::Format(format!("scale '{}': {e}", entry.id)))?;
        scale.meta = entry.meta.clone();
        if let Some(u) = &entry.units {
            scale.meta.insert("units".into(), u.clone());
        }
        scales.push(scale);
    }
    let mut nestings = Vec::with_capacity(manifest.nestings.len());
    for entry in &manifest.nestings {
        let n_parent = manifest
            .scales
            .iter()
            .find(|s| s.id == entry.parent)
            .ok_or_else(|| Error::Format(format!("nesting references unknown scale '{}'", entry.parent)))?
            .count;
        let words = read_u32s(&dir.join(&entry.file))?;
        let mut edges = Vec::with_capacity(n_parent);
        let mut pos = 0;
        for p in 0..n_parent {
            let count = *words
                .get(pos)
                .ok_or_else(|| Error::Format(format!("{}: truncated at parent {p}", entry.file)))?
                as usize;
            let list = words
                .get(pos + 1..pos + 1 + count)
                .ok_or_else(|| Error::Format(format!("{}: truncated child list at parent {p}", entry.file)))?;
            edges.push(list.iter().map(|&c| c as usize).collect());
            pos += 1 + count;
        }
        if pos != words.len() {
            return Err(Error::Format(format!("{}: {} trailing words", entry.file, words.len() - pos)));
        }
        // Edge lists are stored verbatim; ordering problems surface in validate().
        nestings.push(NestingMap {
            parent: entry.parent.clone(),
            child: entry.child.clone(),
            edges,
        });
    }
    MultiScaleDataset::new(manifest.name, scales, nestings).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_labels(labels: &[u32], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let bytes: Vec<u8> = labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    write_bytes(&dir.join(LABELS), &bytes)?;
    // Refresh the manifest reference when a dataset is already present.
    if dir.join(MANIFEST).exists() {
        let mut manifest = read_manifest(dir)?;
        manifest.labels = Some(LABELS.into());
        write_bytes(&dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    }
    Ok(())
}

pub fn read_labels(dir: impl AsRef<Path>) -> Result<Option<Vec<u32>>> {
    let path = dir.as_ref().join(LABELS);
    if !path.exists() {
        return Ok(None);
    }
    read_u32s(&path).map(Some)
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("malformed manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version '{}' (expected '{FORMAT_VERSION}')",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn column_major_bytes(m: &Array2<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * m.len());
    for col in m.columns() {
        for v in col {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_matrix(path: &Path, rows: usize, cols: usize, scale: &str) -> Result<Array2<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = 4 * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "scale '{scale}': {} holds {} bytes, manifest implies {rows}x{cols} ({expected} bytes)",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("?"),
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Array2::from_shape_fn((rows, cols), |(r, c)| values[c * rows + r]))
}

fn read_u32s(path: &Path) -> Result<Vec<u32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!("{}: length not a multiple of 4", path.display())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SynthConfig};

    #[test]
    fn round_trip_is_bit_exact() {
        let s = generate_synthetic(&SynthConfig {
            width: 16,
            height: 16,
            ..SynthConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&s.dataset, dir.path()).unwrap();
        write_labels(&s.labels, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, s.dataset);
        assert_eq!(read_labels(dir.path()).unwrap().unwrap(), s.labels);

        let dir2 = tempfile::tempdir().unwrap();
        write_dataset(&back, dir2.path()).unwrap();
        assert_eq!(read_dataset(dir2.path()).unwrap(), back);
        for f in ["manifest.json", "pixel.f32", "quant.f32", "quant__pixel.nest"] {
            let a = fs::read(dir.path().join(f)).unwrap();
            let b = fs::read(dir2.path().join(f)).unwrap();
            if f != "manifest.json" {
                assert_eq!(a, b, "{f}");
            }
        }
    }

    #[test]
    fn column_major_layout() {
        let m = ndarray::array![[1.0f32, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let bytes = column_major_bytes(&m);
        let vals: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        assert_eq!(vals, vec![1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn dim_mismatch_names_scale() {
        let s = generate_synthetic(&SynthConfig {
            width: 8,
            height: 8,
            parent_spacing: 60.0,
            ..SynthConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&s.dataset, dir.path()).unwrap();
        let path = dir.path().join("pixel.f32");
        let bytes = fs::read(&path).unwrap();
        // Drop one column: 64 rows x 15 columns.
        fs::write(&path, &bytes[..64 * 15 * 4]).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("'pixel'"), "{err}");
    }

    #[test]
    fn version_mismatch_rejected() {
        let s = generate_synthetic(&SynthConfig {
            width: 8,
            height: 8,
            parent_spacing: 60.0,
            ..SynthConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&s.dataset, dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        let text = fs::read_to_string(&path).unwrap().replace("\"format_version\": \"1\"", "\"format_version\": \"9\"");
        fs::write(&path, text).unwrap();
        assert!(read_dataset(dir.path()).unwrap_err().to_string().contains("version"));
        fs::write(&path, "{not json").unwrap();
        assert!(read_dataset(dir.path()).unwrap_err().to_string().contains("malformed"));
    }

    #[test]
    fn three_scale_dataset_accepted() {
        let sc = |id: &str, n: usize| {
            DataScale::new(id, Array2::from_shape_fn((n, 2), |(i, j)| (i + j) as f32), None).unwrap()
        };
        let ds = MultiScaleDataset::new(
            "deep",
            vec![sc("a", 1), sc("b", 2), sc("c", 3)],
            vec![
                NestingMap::new("a", "b", vec![vec![0, 1]]),
                NestingMap::new("b", "c", vec![vec![0, 1], vec![1, 2]]),
            ],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);
    }
}
