//! Measure CSV (`index,weight`, row-major) and grid sidecar JSON.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{DiscreteMeasure, UniformGrid};
use crate::error::{Error, Result};

/// `foo/bar.csv` → `foo/bar.grid.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("grid.json")
}

pub fn save_grid(grid: &UniformGrid, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, grid)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn load_grid(path: &Path) -> Result<UniformGrid> {
    let file = File::open(path)?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Format {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

/// Writes the measure as CSV plus its grid sidecar next to it.
///
/// Weights are printed in shortest round-trip exponent form, so a reload is bit-exact.
pub fn save_measure(measure: &DiscreteMeasure, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["index", "weight"])?;
    for (i, w) in measure.weights().iter().enumerate() {
        writer.write_record([i.to_string(), format!("{w:e}")])?;
    }
    writer.flush()?;
    save_grid(measure.grid(), &sidecar_path(path))
}

/// Reads a measure CSV for `grid`.
///
/// The weights are kept verbatim when they already sum to one within 1e-12,
/// and renormalized otherwise. No support floor is applied here.
pub fn load_measure(path: &Path, grid: &UniformGrid) -> Result<DiscreteMeasure> {
    let format_err = |message: String| Error::Format {
        path: path.to_owned(),
        message,
    };
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "index" || &headers[1] != "weight" {
        return Err(format_err(format!("expected header `index,weight`, got {headers:?}")));
    }
    let mut weights = Vec::with_capacity(grid.len());
    for (row, record) in reader.deserialize::<(usize, f64)>().enumerate() {
        let (index, weight) = record?;
        if index != row {
            return Err(format_err(format!("row {row} has index {index}")));
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(format_err(format!("invalid weight {weight} at index {index}")));
        }
        weights.push(weight);
    }
    if weights.len() != grid.len() {
        return Err(format_err(format!(
            "{} weights for a grid of {} bins",
            weights.len(),
            grid.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if total > 0.0 && (total - 1.0).abs() <= 1e-12 {
        Ok(DiscreteMeasure {
            grid: grid.clone(),
            weights,
        })
    } else {
        DiscreteMeasure::new(grid, weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::discretize_gaussian;

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let grid = UniformGrid::new(vec![7, 5], vec![-1.0, 0.0], vec![1.0, 3.0]).unwrap();
        let m = discretize_gaussian(&[0.1, 1.3], &[0.2, 0.7], &grid).unwrap();
        let path = dir.path().join("m.csv");
        save_measure(&m, &path).unwrap();
        let grid_back = load_grid(&sidecar_path(&path)).unwrap();
        assert_eq!(grid_back, grid);
        let back = load_measure(&path, &grid_back).unwrap();
        assert_eq!(back.weights(), m.weights());
    }

    #[test]
    fn short_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "index,weight\n0,0.5\n1,0.5\n").unwrap();
        let grid = UniformGrid::line(3, 0.0, 1.0).unwrap();
        assert!(load_measure(&path, &grid).is_err());
    }

    #[test]
    fn negative_weight_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "index,weight\n0,0.5\n1,-0.5\n2,1.0\n").unwrap();
        let grid = UniformGrid::line(3, 0.0, 1.0).unwrap();
        assert!(load_measure(&path, &grid).is_err());
    }

    #[test]
    fn unnormalized_file_is_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "index,weight\n0,1\n1,3\n").unwrap();
        let grid = UniformGrid::line(2, 0.0, 1.0).unwrap();
        assert_eq!(load_measure(&path, &grid).unwrap().weights(), &[0.25, 0.75]);
    }

    #[test]
    fn bad_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "i,w\n0,0.5\n1,0.5\n").unwrap();
        let grid = UniformGrid::line(2, 0.0, 1.0).unwrap();
        assert!(load_measure(&path, &grid).is_err());
    }
}
