//! Aggregation of participant caption-quality scores.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One participant judgment: a 1-10 score for one image's caption set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanScoreRecord {
    pub rater_id: String,
    pub image_id: String,
    pub score: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterStats {
    pub min: u8,
    pub max: u8,
    pub mean: f64,
    pub median: u8,
}

/// Per-rater and overall score statistics.
///
/// Medians use the lower-middle convention on even counts. The
/// `frac_score_ge_3` statistic is the fraction of all submitted scores
/// that are 3 or higher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanScoreSummary {
    pub per_rater: BTreeMap<String, RaterStats>,
    pub overall_mean: f64,
    pub overall_median: u8,
    pub frac_score_ge_3: f64,
    pub n_records: usize,
    pub n_images: usize,
}

/// Read `rater_id,image_id,score` CSV records; a score outside 1..=10 is
/// an error naming the offending line.
pub fn read_human_scores_csv(path: impl AsRef<Path>) -> Result<Vec<HumanScoreRecord>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => {
            Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
        }
        _ => Error::malformed(path, 0, e.to_string()),
    })?;
    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<HumanScoreRecord>().enumerate() {
        // +2: one for the header, one for 1-based numbering.
        let line = i + 2;
        let record = row.map_err(|e| Error::malformed(path, line, e.to_string()))?;
        if !(1..=10).contains(&record.score) {
            return Err(Error::malformed(
                path,
                line,
                format!("score {} outside 1..=10", record.score),
            ));
        }
        records.push(record);
    }
    Ok(records)
}

fn lower_median(sorted: &[u8]) -> u8 {
    sorted[(sorted.len() - 1) / 2]
}

fn stats_of(scores: &mut Vec<u8>) -> RaterStats {
    scores.sort_unstable();
    let n = scores.len();
    RaterStats {
        min: scores[0],
        max: scores[n - 1],
        mean: scores.iter().map(|&s| s as f64).sum::<f64>() / n as f64,
        median: lower_median(scores),
    }
}

/// Aggregate score records into per-rater and overall statistics.
pub fn aggregate_human_scores(records: &[HumanScoreRecord]) -> Result<HumanScoreSummary> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no human score records".into()));
    }
    for (i, record) in records.iter().enumerate() {
        if !(1..=10).contains(&record.score) {
            return Err(Error::invalid(format!(
                "record {i}: score {} outside 1..=10",
                record.score
            )));
        }
    }
    let mut per_rater_scores: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut images: Vec<&str> = Vec::new();
    let mut all: Vec<u8> = Vec::with_capacity(records.len());
    for record in records {
        per_rater_scores
            .entry(record.rater_id.clone())
            .or_default()
            .push(record.score);
        images.push(&record.image_id);
        all.push(record.score);
    }
    images.sort_unstable();
    images.dedup();

    let per_rater: BTreeMap<String, RaterStats> = per_rater_scores
        .into_iter()
        .map(|(rater, mut scores)| (rater, stats_of(&mut scores)))
        .collect();

    let ge3 = all.iter().filter(|&&s| s >= 3).count();
    all.sort_unstable();
    Ok(HumanScoreSummary {
        overall_mean: all.iter().map(|&s| s as f64).sum::<f64>() / all.len() as f64,
        overall_median: lower_median(&all),
        frac_score_ge_3: ge3 as f64 / all.len() as f64,
        n_records: records.len(),
        n_images: images.len(),
        per_rater,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn record(rater: &str, image: &str, score: u8) -> HumanScoreRecord {
        HumanScoreRecord {
            rater_id: rater.into(),
            image_id: image.into(),
            score,
        }
    }

    #[test]
    fn single_rater_stats() {
        let records = vec![record("r1", "i1", 2), record("r1", "i2", 4), record("r1", "i3", 6)];
        let summary = aggregate_human_scores(&records).unwrap();
        let stats = &summary.per_rater["r1"];
        assert_eq!((stats.min, stats.max), (2, 6));
        assert_eq!(stats.mean, 4.0);
        assert_eq!(stats.median, 4);
    }

    #[test]
    fn even_count_median_takes_lower_middle() {
        let records = vec![record("r1", "i1", 1), record("r1", "i2", 10)];
        let summary = aggregate_human_scores(&records).unwrap();
        assert_eq!(summary.per_rater["r1"].median, 1);
        assert_eq!(summary.overall_median, 1);
    }

    #[test]
    fn fraction_ge_3_counts_records() {
        let records = vec![
            record("r1", "i1", 2),
            record("r1", "i2", 3),
            record("r2", "i1", 5),
            record("r2", "i2", 1),
        ];
        let summary = aggregate_human_scores(&records).unwrap();
        assert_eq!(summary.frac_score_ge_3, 0.5);
        assert_eq!(summary.n_images, 2);
        assert_eq!(summary.n_records, 4);
    }

    #[test]
    fn out_of_range_score_is_an_error() {
        let records = vec![record("r1", "i1", 0)];
        assert!(aggregate_human_scores(&records).is_err());
        let records = vec![record("r1", "i1", 11)];
        assert!(aggregate_human_scores(&records).is_err());
        assert!(aggregate_human_scores(&[]).is_err());
    }

    #[test]
    fn csv_round_trip_and_line_errors() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "rater_id,image_id,score").unwrap();
        writeln!(f, "r1,i1,7").unwrap();
        writeln!(f, "r2,i1,3").unwrap();
        let records = read_human_scores_csv(f.path()).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0], record("r1", "i1", 7));

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "rater_id,image_id,score").unwrap();
        writeln!(bad, "r1,i1,7").unwrap();
        writeln!(bad, "r1,i2,11").unwrap();
        match read_human_scores_csv(bad.path()).unwrap_err() {
            Error::MalformedLine { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    // Oracle: recompute every statistic with independent sort-based code
    // over a larger synthetic set.
    #[test]
    fn matches_sort_oracle_on_synthetic_raters() {
        let mut records = Vec::new();
        let mut state = 9_u64;
        for rater in 0..5 {
            for i in 0..100 {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let score = (state >> 33) % 10 + 1;
                records.push(record(&format!("r{rater}"), &format!("i{i}"), score as u8));
            }
        }
        let summary = aggregate_human_scores(&records).unwrap();

        for rater in 0..5 {
            let rater_id = format!("r{rater}");
            let mut scores: Vec<u8> = records
                .iter()
                .filter(|r| r.rater_id == rater_id)
                .map(|r| r.score)
                .collect();
            scores.sort_unstable();
            let stats = &summary.per_rater[&rater_id];
            assert_eq!(stats.min, scores[0]);
            assert_eq!(stats.max, *scores.last().unwrap());
            assert_eq!(stats.median, scores[(scores.len() - 1) / 2]);
            let mean = scores.iter().map(|&s| s as f64).sum::<f64>() / scores.len() as f64;
            assert!((stats.mean - mean).abs() < 1e-12);
        }
        let expected_ge3 =
            records.iter().filter(|r| r.score >= 3).count() as f64 / records.len() as f64;
        assert_eq!(summary.frac_score_ge_3, expected_ge3);
    }
}
