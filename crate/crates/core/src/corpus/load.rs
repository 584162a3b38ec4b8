//! JSON-lines loaders with line-accurate errors and duplicate detection.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::records::{BusinessRecord, Label, PhotoRecord, ReviewRecord};
use crate::error::{Error, Result};

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line)))
}

/// Load businesses from a JSON-lines file, preserving file order.
///
/// With `restaurant_filter` set, only records whose categories contain
/// "restaurants" (case-insensitive) are kept; duplicate detection still
/// covers every record in the file.
pub fn load_businesses(path: impl AsRef<Path>, restaurant_filter: bool) -> Result<Vec<BusinessRecord>> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: BusinessRecord = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, line_no, e.to_string()))?;
        if record.business_id.is_empty() {
            return Err(Error::malformed(path, line_no, "empty business_id"));
        }
        if !seen.insert(record.business_id.clone()) {
            return Err(Error::DuplicateKey {
                path: path.into(),
                line: line_no,
                key: record.business_id,
            });
        }
        if !restaurant_filter || record.is_restaurant() {
            out.push(record);
        }
    }
    Ok(out)
}

/// Load reviews from a JSON-lines file, preserving file order.
pub fn load_reviews(path: impl AsRef<Path>) -> Result<Vec<ReviewRecord>> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ReviewRecord = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, line_no, e.to_string()))?;
        record
            .validate()
            .map_err(|e| Error::malformed(path, line_no, e.to_string()))?;
        if !seen.insert(record.review_id.clone()) {
            return Err(Error::DuplicateKey {
                path: path.into(),
                line: line_no,
                key: record.review_id,
            });
        }
        out.push(record);
    }
    Ok(out)
}

/// Raw photo line; the label field stays a string so unknown values can
/// fall back to `none` instead of failing deserialization.
#[derive(Deserialize)]
struct RawPhoto {
    photo_id: String,
    business_id: String,
    #[serde(default)]
    caption: String,
    #[serde(default)]
    label: Option<String>,
}

/// Photos plus the count of unknown label strings that fell back to `none`.
#[derive(Debug, Clone, Serialize)]
pub struct LoadedPhotos {
    pub records: Vec<PhotoRecord>,
    pub unknown_label_count: usize,
}

/// Load photos from a JSON-lines file, preserving file order.
///
/// Unknown or missing label strings map to [`Label::None`] and bump
/// `unknown_label_count` rather than erroring.
pub fn load_photos(path: impl AsRef<Path>) -> Result<LoadedPhotos> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    let mut unknown_label_count = 0;
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPhoto = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, line_no, e.to_string()))?;
        if raw.photo_id.is_empty() {
            return Err(Error::malformed(path, line_no, "empty photo_id"));
        }
        if !seen.insert(raw.photo_id.clone()) {
            return Err(Error::DuplicateKey {
                path: path.into(),
                line: line_no,
                key: raw.photo_id,
            });
        }
        let (label, fell_back) = Label::parse_lossy(raw.label.as_deref());
        if fell_back {
            unknown_label_count += 1;
        }
        records.push(PhotoRecord {
            photo_id: raw.photo_id,
            business_id: raw.business_id,
            caption: raw.caption,
            label,
        });
    }
    Ok(LoadedPhotos {
        records,
        unknown_label_count,
    })
}

/// Corpus-level counts and ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_businesses: usize,
    pub n_reviews: usize,
    pub n_photos: usize,
    pub fraction_uncaptioned: f64,
    pub fraction_none_label: f64,
    pub avg_photos_per_business: f64,
}

pub fn corpus_stats(
    businesses: &[BusinessRecord],
    reviews: &[ReviewRecord],
    photos: &[PhotoRecord],
) -> CorpusStats {
    let n_photos = photos.len();
    let uncaptioned = photos.iter().filter(|p| !p.has_caption()).count();
    let none_label = photos.iter().filter(|p| p.label == Label::None).count();
    let ratio = |num: usize| {
        if n_photos == 0 {
            0.0
        } else {
            num as f64 / n_photos as f64
        }
    };
    CorpusStats {
        n_businesses: businesses.len(),
        n_reviews: reviews.len(),
        n_photos,
        fraction_uncaptioned: ratio(uncaptioned),
        fraction_none_label: ratio(none_label),
        avg_photos_per_business: if businesses.is_empty() {
            0.0
        } else {
            n_photos as f64 / businesses.len() as f64
        },
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
    fn businesses_filter_keeps_matching_records() {
        let f = write_lines(&[
            r#"{"business_id":"b1","name":"A","categories":["Restaurants","Bars"]}"#,
            r#"{"business_id":"b2","name":"B","categories":["Shopping"]}"#,
            r#"{"business_id":"b3","name":"C","categories":["Mexican Restaurants"]}"#,
        ]);
        let filtered = load_businesses(f.path(), true).unwrap();
        assert_eq!(
            filtered.iter().map(|b| b.business_id.as_str()).collect::<Vec<_>>(),
            ["b1", "b3"]
        );
        let all = load_businesses(f.path(), false).unwrap();
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_lines(&[
            r#"{"business_id":"b1","name":"A","categories":[]}"#,
            r#"{"business_id": 12}"#,
        ]);
        let err = load_businesses(f.path(), false).unwrap_err();
        match err {
            Error::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_business_id_is_an_error() {
        let f = write_lines(&[
            r#"{"business_id":"b1","name":"A","categories":[]}"#,
            r#"{"business_id":"b1","name":"B","categories":[]}"#,
        ]);
        let err = load_businesses(f.path(), false).unwrap_err();
        match err {
            Error::DuplicateKey { line, key, .. } => {
                assert_eq!(line, 2);
                assert_eq!(key, "b1");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn photos_unknown_label_falls_back_to_none() {
        let f = write_lines(&[
            r#"{"photo_id":"p1","business_id":"b1","caption":"a beer","label":"drink"}"#,
            r#"{"photo_id":"p2","business_id":"b1","caption":"","label":"food"}"#,
            r#"{"photo_id":"p3","business_id":"b1","caption":"me","label":"selfie"}"#,
            r#"{"photo_id":"p4","business_id":"b1","caption":"menu","label":"none"}"#,
        ]);
        let loaded = load_photos(f.path()).unwrap();
        assert_eq!(loaded.records.len(), 4);
        assert_eq!(loaded.records[0].label, Label::Drink);
        assert_eq!(loaded.records[2].label, Label::None);
        assert_eq!(loaded.unknown_label_count, 1);
    }

    #[test]
    fn review_with_blank_text_is_malformed() {
        let f = write_lines(&[r#"{"review_id":"r1","business_id":"b1","text":"  "}"#]);
        assert!(load_reviews(f.path()).is_err());
    }

    #[test]
    fn stats_counts_and_ratios() {
        let businesses = vec![
            BusinessRecord { business_id: "b1".into(), name: "A".into(), categories: vec![] },
            BusinessRecord { business_id: "b2".into(), name: "B".into(), categories: vec![] },
        ];
        let photos: Vec<PhotoRecord> = (0..4)
            .map(|i| PhotoRecord {
                photo_id: format!("p{i}"),
                business_id: "b1".into(),
                caption: if i == 0 { String::new() } else { "c".into() },
                label: if i < 2 { Label::None } else { Label::Food },
            })
            .collect();
        let stats = corpus_stats(&businesses, &[], &photos);
        assert_eq!(stats.n_businesses, 2);
        assert_eq!(stats.n_photos, 4);
        assert_eq!(stats.avg_photos_per_business, 2.0);
        assert_eq!(stats.fraction_uncaptioned, 0.25);
        assert_eq!(stats.fraction_none_label, 0.5);
    }
}
