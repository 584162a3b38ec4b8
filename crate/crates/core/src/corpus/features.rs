//! Per-photo dense feature vectors loaded from JSON-lines.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// photo_id -> dense feature vector, all sharing one dimension.
#[derive(Debug, Clone, Default)]
pub struct FeatureTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct RawFeature {
    photo_id: String,
    vector: Vec<f64>,
}

/// Load a feature file: one JSON record `{"photo_id", "vector"}` per line.
/// All vectors must share one dimension (and match `expected_dim` when
/// given) and contain only finite values.
pub fn load_features(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<FeatureTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = FeatureTable {
        dim: expected_dim.unwrap_or(0),
        vectors: HashMap::new(),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawFeature = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, line_no, e.to_string()))?;
        if table.vectors.contains_key(&raw.photo_id) {
            return Err(Error::DuplicateKey {
                path: path.into(),
                line: line_no,
                key: raw.photo_id,
            });
        }
        table.insert(raw.photo_id, raw.vector)?;
    }
    Ok(table)
}

impl FeatureTable {
    /// Build a table from in-memory vectors, enforcing the same
    /// uniform-dimension and finiteness rules as the file loader.
    pub fn from_vectors(vectors: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<FeatureTable> {
        let mut table = FeatureTable::default();
        for (photo_id, vector) in vectors {
            table.insert(photo_id, vector)?;
        }
        Ok(table)
    }

    fn insert(&mut self, photo_id: String, vector: Vec<f64>) -> Result<()> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { photo_id });
        }
        if self.dim == 0 && self.vectors.is_empty() {
            if vector.is_empty() {
                return Err(Error::FeatureDimension {
                    photo_id,
                    expected: 1,
                    actual: 0,
                });
            }
            self.dim = vector.len();
        } else if vector.len() != self.dim {
            return Err(Error::FeatureDimension {
                photo_id,
                expected: self.dim,
                actual: vector.len(),
            });
        }
        self.vectors.insert(photo_id, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, photo_id: &str) -> Option<&[f64]> {
        self.vectors.get(photo_id).map(Vec::as_slice)
    }

    pub fn contains(&self, photo_id: &str) -> bool {
        self.vectors.contains_key(photo_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f
    }

    #[test]
    fn loads_uniform_dimension() {
        let f = write_lines(&[
            r#"{"photo_id":"p1","vector":[1,2,3,4,5,6,7,8]}"#,
            r#"{"photo_id":"p2","vector":[0,0,0,0,0,0,0,1]}"#,
            r#"{"photo_id":"p3","vector":[1,1,1,1,1,1,1,1]}"#,
        ]);
        let table = load_features(f.path(), None).unwrap();
        assert_eq!(table.dim(), 8);
        assert_eq!(table.len(), 3);
        assert_eq!(table.get("p2").unwrap()[7], 1.0);
    }

    #[test]
    fn mixed_dimensions_error_names_photo() {
        let f = write_lines(&[
            r#"{"photo_id":"p1","vector":[1,2,3,4,5,6,7,8]}"#,
            r#"{"photo_id":"p2","vector":[1,2,3,4,5,6,7]}"#,
        ]);
        match load_features(f.path(), None).unwrap_err() {
            Error::FeatureDimension { photo_id, expected, actual } => {
                assert_eq!(photo_id, "p2");
                assert_eq!((expected, actual), (8, 7));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_finite_value_is_rejected() {
        // JSON has no inf/nan literal and out-of-range numbers like
        // 1e999 fail at parse, so a file can only hit the malformed
        // path; the finiteness check guards programmatic construction.
        let f = write_lines(&[r#"{"photo_id":"p1","vector":[1e999,0]}"#]);
        match load_features(f.path(), None).unwrap_err() {
            Error::MalformedLine { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
        match FeatureTable::from_vectors(vec![("p1".into(), vec![f64::NAN])]).unwrap_err() {
            Error::NonFiniteFeature { photo_id } => assert_eq!(photo_id, "p1"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn expected_dim_is_enforced() {
        let f = write_lines(&[r#"{"photo_id":"p1","vector":[1,2]}"#]);
        assert!(load_features(f.path(), Some(2)).is_ok());
        let f = write_lines(&[r#"{"photo_id":"p1","vector":[1,2]}"#]);
        assert!(load_features(f.path(), Some(3)).is_err());
    }
}
