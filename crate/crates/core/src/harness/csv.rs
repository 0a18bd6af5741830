//! CSV ingestion for empirical workflows and dataset export for
//! cross-implementation diffing.
//!
//! Input files are UTF-8, comma-separated, `.` decimal, with a header row.
//! Rows containing empty, `NA`, or non-parseable-but-missing cells in mapped
//! columns are dropped and counted; genuinely malformed numeric cells error
//! with their row and column.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::shac::{ell_from_eta, DistanceSet};
use crate::weights::{build_group, build_inverse_distance, SpatialWeights};

/// Column-role mapping for a CSV dataset.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub outcome: String,
    pub index_z: String,
    pub varying: Vec<String>,
    pub exogenous: Vec<String>,
    pub group: Option<String>,
    pub coords: Option<(String, String)>,
    /// Prepend a constant column to X.
    pub intercept: bool,
}

/// A parsed CSV dataset before weights/distances are attached.
#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub z: DVector<f64>,
    pub group_labels: Option<Vec<String>>,
    pub coords: Option<DMatrix<f64>>,
    pub dropped_rows: usize,
}

fn is_missing(tok: &str) -> bool {
    let t = tok.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

pub fn load_csv<P: AsRef<Path>>(path: P, schema: &CsvSchema) -> Result<LoadedCsv> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(&path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.as_ref().display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("bad header row: {e}")))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let index: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, name)| (name.as_str(), i))
        .collect();
    let col = |name: &str| -> Result<usize> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Data(format!("missing column {name:?}")))
    };
    let y_col = col(&schema.outcome)?;
    let z_col = col(&schema.index_z)?;
    let p_cols: Vec<usize> = schema
        .varying
        .iter()
        .map(|name| col(name))
        .collect::<Result<_>>()?;
    let x_cols: Vec<usize> = schema
        .exogenous
        .iter()
        .map(|name| col(name))
        .collect::<Result<_>>()?;
    let group_col = schema.group.as_deref().map(col).transpose()?;
    let coord_cols = schema
        .coords
        .as_ref()
        .map(|(a, b)| Ok::<_, Error>((col(a)?, col(b)?)))
        .transpose()?;

    let numeric_cols: Vec<usize> = {
        let mut cols = vec![y_col, z_col];
        cols.extend(&p_cols);
        cols.extend(&x_cols);
        if let Some((a, b)) = coord_cols {
            cols.push(a);
            cols.push(b);
        }
        cols
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut groups: Vec<String> = Vec::new();
    let mut dropped = 0usize;
    for (line_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("row {}: {e}", line_idx + 2)))?;
        let mut parsed = Vec::with_capacity(numeric_cols.len());
        let mut missing = false;
        for &c in &numeric_cols {
            let tok = record.get(c).unwrap_or("");
            if is_missing(tok) {
                missing = true;
                break;
            }
            match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => parsed.push(v),
                _ => {
                    return Err(Error::Data(format!(
                        "non-numeric cell at row {}, column {:?}: {tok:?}",
                        line_idx + 2,
                        headers[c]
                    )))
                }
            }
        }
        if missing {
            dropped += 1;
            continue;
        }
        if let Some(gc) = group_col {
            groups.push(record.get(gc).unwrap_or("").to_string());
        }
        rows.push(parsed);
    }
    if rows.is_empty() {
        return Err(Error::Data("no usable rows after dropping missing".into()));
    }

    let n = rows.len();
    let y = DVector::from_fn(n, |i, _| rows[i][0]);
    let z = DVector::from_fn(n, |i, _| rows[i][1]);
    let p = DMatrix::from_fn(n, p_cols.len(), |i, c| rows[i][2 + c]);
    let x_base = p_cols.len() + 2;
    let x_width = x_cols.len() + usize::from(schema.intercept);
    let x = DMatrix::from_fn(n, x_width, |i, c| {
        if schema.intercept {
            if c == 0 {
                1.0
            } else {
                rows[i][x_base + c - 1]
            }
        } else {
            rows[i][x_base + c]
        }
    });
    let coords = coord_cols.map(|_| {
        let base = x_base + x_cols.len();
        DMatrix::from_fn(n, 2, |i, c| rows[i][base + c])
    });
    Ok(LoadedCsv {
        y,
        x,
        p,
        z,
        group_labels: group_col.map(|_| groups),
        coords,
        dropped_rows: dropped,
    })
}

/// Pairwise Euclidean distances of 2-D coordinates.
pub fn coord_distances(coords: &DMatrix<f64>) -> DMatrix<f64> {
    let n = coords.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            let dx = coords[(i, 0)] - coords[(j, 0)];
            let dy = coords[(i, 1)] - coords[(j, 1)];
            (dx * dx + dy * dy).sqrt()
        }
    })
}

/// Quantile of the off-diagonal distances (linear interpolation).
pub fn offdiag_quantile(d: &DMatrix<f64>, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("quantile {q} outside [0,1]")));
    }
    let n = d.nrows();
    let mut vals: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            vals.push(d[(i, j)]);
        }
    }
    if vals.is_empty() {
        return Err(Error::InvalidArgument("no off-diagonal distances".into()));
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (vals.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(vals[lo] + (vals[hi] - vals[lo]) * (pos - lo as f64))
}

/// How to furnish the weight matrices of a CSV workflow.
#[derive(Debug, Clone)]
pub enum WeightsSource {
    None,
    Group,
    /// 1/d weights from the coordinate distances below the given quantile
    /// of all pairwise distances.
    InverseDistance { cutoff_quantile: f64 },
    DenseCsv(std::path::PathBuf),
}

/// Assemble a full dataset from a parsed CSV per the weight source. Distance
/// sets come from the coordinates (single measure, ℓ-nearest-neighbor
/// thresholds) when coordinates are mapped.
pub fn dataset_from_csv(
    loaded: &LoadedCsv,
    source: &WeightsSource,
    eta: f64,
) -> Result<Dataset> {
    let weights: Vec<SpatialWeights> = match source {
        WeightsSource::None => Vec::new(),
        WeightsSource::Group => {
            let labels = loaded.group_labels.as_ref().ok_or_else(|| {
                Error::Config("weights = group requires col.group".into())
            })?;
            vec![build_group(labels)?]
        }
        WeightsSource::InverseDistance { cutoff_quantile } => {
            let coords = loaded.coords.as_ref().ok_or_else(|| {
                Error::Config("weights = inverse-distance requires col.coord".into())
            })?;
            let d = coord_distances(coords);
            let cutoff = offdiag_quantile(&d, *cutoff_quantile)?;
            vec![build_inverse_distance(&d, cutoff)?]
        }
        WeightsSource::DenseCsv(path) => {
            let m = crate::weights::load_dense_csv(path)?;
            vec![SpatialWeights::from_dense(m, crate::weights::WeightsKind::Custom)?]
        }
    };
    let distances = match &loaded.coords {
        Some(coords) => {
            let d = coord_distances(coords);
            let ell = ell_from_eta(loaded.y.len(), eta)?;
            Some(DistanceSet::from_neighbor_rule(vec![d], ell, eta)?)
        }
        None => None,
    };
    let data = Dataset {
        y: loaded.y.clone(),
        x: loaded.x.clone(),
        p: loaded.p.clone(),
        z: loaded.z.clone(),
        weights,
        distances,
        truth: None,
    };
    data.validate()?;
    Ok(data)
}

fn write_vector<P: AsRef<Path>>(v: &DVector<f64>, path: P) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for val in v.iter() {
        writeln!(f, "{val}")?;
    }
    Ok(())
}

/// Export one file per matrix/vector plus a manifest listing them.
pub fn export_dataset<P: AsRef<Path>>(data: &Dataset, dir: P) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    write_vector(&data.y, dir.join("y.csv"))?;
    files.push("y.csv".to_string());
    crate::weights::save_dense_csv(&data.x, dir.join("x.csv"))?;
    files.push("x.csv".to_string());
    crate::weights::save_dense_csv(&data.p, dir.join("p.csv"))?;
    files.push("p.csv".to_string());
    write_vector(&data.z, dir.join("z.csv"))?;
    files.push("z.csv".to_string());
    for (i, w) in data.weights.iter().enumerate() {
        let name = format!("w_{i}.csv");
        crate::weights::save_dense_csv(&w.to_dense(), dir.join(&name))?;
        files.push(name);
    }
    if let Some(dist) = &data.distances {
        for (m, d) in dist.measures().iter().enumerate() {
            let name = format!("dstar_{m}.csv");
            crate::weights::save_dense_csv(d, dir.join(&name))?;
            files.push(name);
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("thresholds.csv"))?);
        for t in dist.thresholds() {
            writeln!(f, "{t}")?;
        }
        files.push("thresholds.csv".to_string());
    }
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.txt"))?);
    writeln!(manifest, "n = {}", data.n())?;
    for file in &files {
        writeln!(manifest, "{file}")?;
    }
    files.push("manifest.txt".to_string());
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path, body: &str) -> std::path::PathBuf {
        std::fs::create_dir_all(dir).unwrap();
        let path = dir.join("data.csv");
        std::fs::write(&path, body).unwrap();
        path
    }

    fn schema() -> CsvSchema {
        CsvSchema {
            outcome: "y".into(),
            index_z: "z".into(),
            varying: vec!["p1".into()],
            exogenous: vec!["x1".into()],
            group: None,
            coords: None,
            intercept: true,
        }
    }

    #[test]
    fn three_row_fixture_parses() {
        let dir = std::env::temp_dir().join("vcwald_csv_fixture");
        let path = fixture(&dir, "y,z,p1,x1\n1.0,0.1,2.0,3.0\n2.0,0.2,1.0,4.0\n3.0,0.9,0.5,5.0\n");
        let loaded = load_csv(&path, &schema()).unwrap();
        assert_eq!(loaded.y.len(), 3);
        assert_eq!(loaded.x.ncols(), 2);
        assert_eq!(loaded.x[(0, 0)], 1.0);
        assert_eq!(loaded.dropped_rows, 0);
    }

    #[test]
    fn missing_column_is_named() {
        let dir = std::env::temp_dir().join("vcwald_csv_missing");
        let path = fixture(&dir, "y,p1,x1\n1.0,2.0,3.0\n");
        let err = load_csv(&path, &schema()).unwrap_err();
        assert!(err.to_string().contains("\"z\""), "{err}");
    }

    #[test]
    fn na_rows_dropped_and_bad_cells_located() {
        let dir = std::env::temp_dir().join("vcwald_csv_na");
        let path = fixture(&dir, "y,z,p1,x1\n1.0,NA,2.0,3.0\n2.0,0.2,1.0,4.0\n");
        let loaded = load_csv(&path, &schema()).unwrap();
        assert_eq!(loaded.y.len(), 1);
        assert_eq!(loaded.dropped_rows, 1);

        let bad = fixture(
            &std::env::temp_dir().join("vcwald_csv_bad"),
            "y,z,p1,x1\n1.0,0.3,2.0,oops\n",
        );
        let err = load_csv(&bad, &schema()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("x1"), "{msg}");
    }

    #[test]
    fn export_then_load_roundtrips() {
        let config = crate::dgp::DgpConfig {
            seed: 21,
            ..crate::dgp::DgpConfig::mc_default(20, 1)
        };
        let data = crate::dgp::generate(&config).unwrap();
        let dir = std::env::temp_dir().join("vcwald_export_roundtrip");
        export_dataset(&data, &dir).unwrap();
        let y_back = crate::weights::load_dense_csv(dir.join("y.csv")).unwrap();
        for i in 0..data.n() {
            assert!((y_back[(i, 0)] - data.y[i]).abs() < 1e-12);
        }
        let w_back = crate::weights::load_dense_csv(dir.join("w_0.csv")).unwrap();
        assert_eq!(w_back, data.weights[0].to_dense());
    }

    #[test]
    fn quantile_and_coord_distances() {
        let coords = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 3.0, 4.0, 0.0, 1.0]);
        let d = coord_distances(&coords);
        assert!((d[(0, 1)] - 5.0).abs() < 1e-15);
        assert!((d[(0, 2)] - 1.0).abs() < 1e-15);
        let q0 = offdiag_quantile(&d, 0.0).unwrap();
        assert!((q0 - 1.0).abs() < 1e-15);
        let q1 = offdiag_quantile(&d, 1.0).unwrap();
        assert!((q1 - 5.0).abs() < 1e-15);
    }
}
