use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::MultiViewDataset;
use crate::error::{Error, Result};
use crate::eval::csv_io;

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub name: String,
    pub views: usize,
    pub view_dims: Vec<usize>,
    pub classes: usize,
    pub samples: usize,
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| parse_err(path, 0, e.to_string()))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file))
}

fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(rows * cols);
    let mut count = 0;
    for record in reader(path)?.records() {
        let record =
            record.map_err(|e| parse_err(path, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record.position().map_or(count + 1, |p| p.line() as usize);
        if record.len() != cols {
            return Err(parse_err(
                path,
                line,
                format!("expected {cols} values, found {}", record.len()),
            ));
        }
        for cell in record.iter() {
            let x: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("not a number: {cell:?}")))?;
            if !x.is_finite() {
                return Err(parse_err(path, line, format!("non-finite value {cell:?}")));
            }
            data.push(x);
        }
        count += 1;
    }
    if count != rows {
        return Err(parse_err(path, count, format!("expected {rows} rows, found {count}")));
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("row lengths checked"))
}

fn read_labels(path: &Path, rows: usize, classes: usize) -> Result<Vec<usize>> {
    let mut labels = Vec::with_capacity(rows);
    for record in reader(path)?.records() {
        let record =
            record.map_err(|e| parse_err(path, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record.position().map_or(labels.len() + 1, |p| p.line() as usize);
        if record.len() != 1 {
            return Err(parse_err(path, line, "expected one class id per row"));
        }
        let y: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, format!("not a class id: {:?}", &record[0])))?;
        if y >= classes {
            return Err(parse_err(path, line, format!("class id {y} is not below {classes}")));
        }
        labels.push(y);
    }
    if labels.len() != rows {
        return Err(parse_err(
            path,
            labels.len(),
            format!("expected {rows} rows, found {}", labels.len()),
        ));
    }
    Ok(labels)
}

pub fn view_file(dir: &Path, v: usize) -> PathBuf {
    dir.join(format!("view_{v}.csv"))
}

/// Reads `meta.json`, `view_<v>.csv`, and `labels.csv` from `dir`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<MultiViewDataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| parse_err(&meta_path, 0, e.to_string()))?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| parse_err(&meta_path, e.line(), e.to_string()))?;
    if meta.view_dims.len() != meta.views {
        return Err(parse_err(&meta_path, 1, "view_dims length differs from views"));
    }
    let views = meta
        .view_dims
        .iter()
        .enumerate()
        .map(|(v, &d)| read_matrix(&view_file(dir, v), meta.samples, d))
        .collect::<Result<Vec<_>>>()?;
    let labels = read_labels(&dir.join("labels.csv"), meta.samples, meta.classes)?;
    MultiViewDataset::new(meta.name, views, labels, meta.classes)
}

/// Writes the directory layout read by [`load_dataset`]. Values use the
/// shortest decimal form that parses back to the same float.
pub fn save_dataset(dataset: &MultiViewDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let meta = DatasetMeta {
        name: dataset.name.clone(),
        views: dataset.views.len(),
        view_dims: dataset.view_dims(),
        classes: dataset.class_count,
        samples: dataset.len(),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    for (v, x) in dataset.views.iter().enumerate() {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(view_file(dir, v))
            .map_err(csv_io)?;
        for row in x.rows() {
            w.write_record(row.iter().map(|x| x.to_string())).map_err(csv_io)?;
        }
        w.flush()?;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(dir.join("labels.csv"))
        .map_err(csv_io)?;
    for y in &dataset.labels {
        w.write_record([y.to_string()]).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn dataset() -> MultiViewDataset {
        let spec = SyntheticSpec {
            known_classes: 2,
            unknown_classes: 1,
            samples_per_class: 5,
            views: 2,
            view_dims: vec![3, 2],
            latent_dim: 2,
            noise_std: 0.3,
            bias_view_index: None,
            bias_strength: 0.0,
        };
        generate_synthetic(&spec, 1).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let d = dataset();
        save_dataset(&d, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), d);
    }

    #[test]
    fn rejects_bad_labels_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&dataset(), dir.path()).unwrap();
        let labels = dir.path().join("labels.csv");
        let original = fs::read_to_string(&labels).unwrap();
        fs::write(&labels, original.replacen('0', "3", 1)).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Parse { file, line, .. }) => {
                assert_eq!(file, labels);
                assert_eq!(line, 1);
            }
            other => panic!("{other:?}"),
        }
        fs::write(&labels, &original).unwrap();

        let view = view_file(dir.path(), 1);
        let text = fs::read_to_string(&view).unwrap();
        let truncated: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        fs::write(&view, truncated).unwrap();
        match load_dataset(dir.path()) {
            Err(e @ Error::Parse { .. }) => assert!(e.to_string().contains("view_1.csv"), "{e}"),
            other => panic!("{other:?}"),
        }
        fs::write(&view, text.replacen(',', ",abc", 1)).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Parse { line: 1, .. })));
    }
}
