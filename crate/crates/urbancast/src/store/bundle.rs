//! Region bundle persistence.
//!
//! A bundle is a directory holding:
//! - `manifest.json` — `{ dim, count, coordinate_unit, entropy_cached }`
//! - `embeddings.f32` — little-endian f32, row-major, count x dim values,
//!   rows in ascending id order of `regions.jsonl`
//! - `regions.jsonl` — one `{ id, x, y, description, entropy? }` per line
//!
//! Round trips are exact: embeddings are stored as the same 32-bit floats
//! they hold in memory, coordinates and entropies as full-precision f64.

use crate::error::{Error, Result};
use crate::store::{region_entropy, GeoPoint, RegionDatabase, RegionRecord};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleManifest {
    pub dim: usize,
    pub count: usize,
    pub coordinate_unit: String,
    pub entropy_cached: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegionLine {
    id: u64,
    x: f64,
    y: f64,
    description: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    entropy: Option<f64>,
}

/// Writes `db` to `path` (created if missing). `load_bundle` restores it
/// field-for-field.
pub fn save_bundle(db: &RegionDatabase, path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    let manifest = BundleManifest {
        dim: db.dim(),
        count: db.len(),
        coordinate_unit: "meters".into(),
        entropy_cached: true,
    };
    fs::write(path.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;

    let mut emb = BufWriter::new(fs::File::create(path.join("embeddings.f32"))?);
    for rec in db.records() {
        for &v in &rec.embedding {
            emb.write_all(&v.to_le_bytes())?;
        }
    }
    emb.flush()?;

    let mut jsonl = BufWriter::new(fs::File::create(path.join("regions.jsonl"))?);
    for rec in db.records() {
        let line = RegionLine {
            id: rec.id,
            x: rec.centroid.x,
            y: rec.centroid.y,
            description: rec.description.clone(),
            entropy: Some(rec.entropy),
        };
        serde_json::to_writer(&mut jsonl, &line)?;
        jsonl.write_all(b"\n")?;
    }
    jsonl.flush()?;
    Ok(())
}

/// Loads a bundle directory into a validated database. Entropies are
/// computed and cached when the bundle does not carry them.
pub fn load_bundle(path: &Path) -> Result<RegionDatabase> {
    let manifest_path = path.join("manifest.json");
    let manifest_bytes = fs::read(&manifest_path)
        .map_err(|e| Error::Bundle(format!("missing or unreadable {}: {e}", manifest_path.display())))?;
    let manifest: BundleManifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Bundle(format!("malformed manifest.json: {e}")))?;

    let emb_path = path.join("embeddings.f32");
    let emb_bytes = fs::read(&emb_path)
        .map_err(|e| Error::Bundle(format!("missing or unreadable {}: {e}", emb_path.display())))?;
    let expected = manifest
        .count
        .checked_mul(manifest.dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Bundle("manifest count x dim overflows".into()))?;
    if emb_bytes.len() != expected {
        return Err(Error::PayloadSize { expected, got: emb_bytes.len() });
    }

    let regions_path = path.join("regions.jsonl");
    let file = fs::File::open(&regions_path)
        .map_err(|e| Error::Bundle(format!("missing or unreadable {}: {e}", regions_path.display())))?;
    let mut lines = Vec::with_capacity(manifest.count);
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RegionLine = serde_json::from_str(&line)
            .map_err(|e| Error::Bundle(format!("regions.jsonl line {}: {e}", lineno + 1)))?;
        lines.push(parsed);
    }
    if lines.len() != manifest.count {
        return Err(Error::Bundle(format!(
            "manifest count {} but regions.jsonl holds {} records",
            manifest.count,
            lines.len()
        )));
    }

    // Embedding rows follow ascending id order; sort the lines to match.
    lines.sort_by_key(|l| l.id);
    for pair in lines.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(Error::DuplicateId(pair[0].id));
        }
    }

    let mut records = Vec::with_capacity(lines.len());
    for (row, line) in lines.into_iter().enumerate() {
        let start = row * manifest.dim * 4;
        let embedding: Vec<f32> = emb_bytes[start..start + manifest.dim * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let entropy = match line.entropy {
            Some(h) => h,
            None => region_entropy(&embedding)?,
        };
        records.push(RegionRecord {
            id: line.id,
            centroid: GeoPoint::new(line.x, line.y),
            embedding,
            description: line.description,
            entropy,
        });
    }
    RegionDatabase::build(manifest.dim, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_db() -> RegionDatabase {
        let recs = vec![
            RegionRecord::new(
                3,
                GeoPoint::new(0.25, -1.5),
                vec![0.5, -0.25, 1.75, 0.0],
                "café & plaza — 公园".into(),
            )
            .unwrap(),
            RegionRecord::new(7, GeoPoint::new(100.0, 250.0), vec![1.0, 2.0, 3.0, 4.0], "rail yard".into())
                .unwrap(),
            RegionRecord::new(11, GeoPoint::new(-3.0, 9.0), vec![-1.0, -1.0, -1.0, -1.0], "houses".into())
                .unwrap(),
        ];
        RegionDatabase::build(4, recs).unwrap()
    }

    #[test]
    fn round_trip_is_identity_including_non_ascii_descriptions() {
        let dir = tempfile::tempdir().unwrap();
        let db = sample_db();
        save_bundle(&db, dir.path()).unwrap();
        let loaded = load_bundle(dir.path()).unwrap();
        assert_eq!(loaded.dim(), db.dim());
        assert_eq!(loaded.records(), db.records());
    }

    #[test]
    fn entropy_recomputed_when_absent_from_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let db = sample_db();
        save_bundle(&db, dir.path()).unwrap();
        // Strip the entropy fields and mark the manifest accordingly.
        let raw = fs::read_to_string(dir.path().join("regions.jsonl")).unwrap();
        let stripped: String = raw
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("entropy");
                format!("{v}\n")
            })
            .collect();
        fs::write(dir.path().join("regions.jsonl"), stripped).unwrap();
        let loaded = load_bundle(dir.path()).unwrap();
        assert_eq!(loaded.records(), db.records());
    }

    #[test]
    fn payload_size_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&sample_db(), dir.path()).unwrap();
        let mut bytes = fs::read(dir.path().join("embeddings.f32")).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(dir.path().join("embeddings.f32"), bytes).unwrap();
        match load_bundle(dir.path()) {
            Err(Error::PayloadSize { expected, got }) => {
                assert_eq!(expected, 3 * 4 * 4);
                assert_eq!(got, 3 * 4 * 4 - 4);
            }
            other => panic!("expected payload-size error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_reported_by_value() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&sample_db(), dir.path()).unwrap();
        let raw = fs::read_to_string(dir.path().join("regions.jsonl")).unwrap();
        let dup = raw.replace("\"id\":11", "\"id\":7");
        fs::write(dir.path().join("regions.jsonl"), dup).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::DuplicateId(7))));
    }

    #[test]
    fn missing_files_give_distinct_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        match load_bundle(dir.path()) {
            Err(Error::Bundle(msg)) => assert!(msg.contains("manifest.json"), "{msg}"),
            other => panic!("expected bundle error, got {other:?}"),
        }
        save_bundle(&sample_db(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("embeddings.f32")).unwrap();
        match load_bundle(dir.path()) {
            Err(Error::Bundle(msg)) => assert!(msg.contains("embeddings.f32"), "{msg}"),
            other => panic!("expected bundle error, got {other:?}"),
        }
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("not_a_dir");
        fs::write(&blocker, b"plain file").unwrap();
        let target = blocker.join("bundle");
        assert!(save_bundle(&sample_db(), &target).is_err());
    }
}
