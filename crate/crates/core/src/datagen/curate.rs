use serde::{Deserialize, Serialize};

use super::io::ManifestRecord;

/// Default person filter: detector score above 0.9 and both box sides above 300 px.
pub const DEFAULT_MIN_SCORE: f64 = 0.9;
pub const DEFAULT_MIN_BOX: f64 = 300.0;

/// Kept/dropped counts and the persons-per-image histogram over kept
/// records, binned as 1, 2, 3 and 4+ qualifying persons.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationStats {
    pub total: usize,
    pub kept: usize,
    pub dropped: usize,
    pub persons_histogram: [usize; 4],
}

pub const HISTOGRAM_BINS: [&str; 4] = ["1", "2", "3", "4+"];

/// Number of persons passing both thresholds (strict inequalities).
pub fn qualifying_persons(r: &ManifestRecord, min_score: f64, min_box: f64) -> usize {
    r.persons
        .iter()
        .filter(|p| p.score > min_score && p.bbox[2] > min_box && p.bbox[3] > min_box)
        .count()
}

/// Keeps records with at least one qualifying person, preserving order.
pub fn curate(records: &[ManifestRecord], min_score: f64, min_box: f64) -> (Vec<ManifestRecord>, CurationStats) {
    let mut stats = CurationStats {
        total: records.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for r in records {
        let q = qualifying_persons(r, min_score, min_box);
        if q == 0 {
            stats.dropped += 1;
            continue;
        }
        stats.kept += 1;
        stats.persons_histogram[q.min(4) - 1] += 1;
        kept.push(r.clone());
    }
    (kept, stats)
}
