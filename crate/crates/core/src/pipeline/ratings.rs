use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use super::manifest::Manifest;
use super::{layout, read_text, write_file, PipelineError};
use crate::abc::parse_abc;
use crate::listener::{ListenerGroup, RatingDataset, RatingItem};
use crate::pianoroll::piece_to_matrix;

pub const RATINGS_HEADER: [&str; 4] = ["piece_id", "group", "rater_id", "score"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingRecord {
    pub piece_id: String,
    pub group: ListenerGroup,
    pub rater_id: String,
    pub score: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportReport {
    /// `(piece_id, expert raters, regular raters)` in manifest order.
    pub rater_counts: Vec<(String, u32, u32)>,
    pub datasets: Vec<PathBuf>,
}

/// Parses and validates a ratings CSV against the manifest. Rows are numbered
/// as file lines, so the header is row 1.
pub fn read_ratings(text: &str, manifest: &Manifest) -> Result<Vec<RatingRecord>, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| PipelineError::Ratings {
        row: 1,
        reason: e.to_string(),
    })?;
    if header.iter().ne(RATINGS_HEADER) {
        return Err(PipelineError::Ratings {
            row: 1,
            reason: format!("expected header {}", RATINGS_HEADER.join(",")),
        });
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let bad = |reason: String| PipelineError::Ratings { row, reason };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let piece_id = rec[0].to_string();
        if manifest.get(&piece_id).is_none() {
            return Err(PipelineError::UnknownPieceId { row, piece_id });
        }
        let group: ListenerGroup = rec[1].parse().map_err(bad)?;
        let rater_id = rec[2].to_string();
        let score: i64 = rec[3]
            .parse()
            .map_err(|_| bad(format!("score {:?} is not an integer", &rec[3])))?;
        if !(0..=100).contains(&score) {
            return Err(PipelineError::ScoreOutOfRange { row, score });
        }
        if !seen.insert((piece_id.clone(), group, rater_id.clone())) {
            return Err(bad(format!(
                "{rater_id} already rated {piece_id} in the {} group",
                group.as_str()
            )));
        }
        out.push(RatingRecord {
            piece_id,
            group,
            rater_id,
            score: score as u8,
        });
    }
    Ok(out)
}

/// Averages ratings per (piece, group) and writes one dataset per group.
pub fn cmd_ratings_import(
    ratings_csv: &Path,
    manifest_path: &Path,
    work_dir: &Path,
) -> Result<ImportReport, PipelineError> {
    let manifest = Manifest::read(manifest_path)?;
    let records = read_ratings(&read_text(ratings_csv)?, &manifest)?;

    let mut sums: BTreeMap<(ListenerGroup, &str), (u64, u32)> = BTreeMap::new();
    for r in &records {
        let e = sums.entry((r.group, r.piece_id.as_str())).or_default();
        e.0 += r.score as u64;
        e.1 += 1;
    }
    for group in [ListenerGroup::Expert, ListenerGroup::Regular] {
        if !records.iter().any(|r| r.group == group) {
            return Err(PipelineError::EmptyGroup(group));
        }
    }

    let mut datasets = Vec::new();
    for group in [ListenerGroup::Expert, ListenerGroup::Regular] {
        let mut items = Vec::new();
        for entry in &manifest.entries {
            let Some(&(sum, n)) = sums.get(&(group, entry.id.as_str())) else {
                continue;
            };
            let file = Manifest::piece_path(manifest_path, entry);
            let piece = parse_abc(&read_text(&file)?).map_err(|source| PipelineError::Abc { file, source })?;
            items.push(RatingItem {
                id: entry.id.clone(),
                matrix: piece_to_matrix(&piece),
                score: sum as f64 / n as f64,
                raters: n,
            });
        }
        let path = layout::dataset(work_dir, group);
        let mut buf = Vec::new();
        RatingDataset { group, items }.write(&mut buf).expect("in-memory write");
        write_file(&path, buf)?;
        datasets.push(path);
    }

    let count = |g, id: &str| sums.get(&(g, id)).map_or(0, |s| s.1);
    let rater_counts = manifest
        .entries
        .iter()
        .map(|e| {
            (
                e.id.clone(),
                count(ListenerGroup::Expert, &e.id),
                count(ListenerGroup::Regular, &e.id),
            )
        })
        .collect();
    Ok(ImportReport { rater_counts, datasets })
}
