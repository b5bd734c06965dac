//! CSV ingestion for the two supported raw-log layouts.
//!
//! Both layouts have a header row. Rows are grouped by student; order
//! within a student is row order for `Assistments` and timestamp order for
//! `EdnetKt1`. Question tags are compacted into skill ids by sorting and
//! deduplicating each row's tag set and numbering the distinct sets in
//! lexicographic order, so the vocabulary does not depend on row order.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::{Dataset, DatasetError, Interaction, InteractionSequence, SkillVocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvFormat {
    /// Columns `user_id, skill_id, correct`; row order is presentation order.
    Assistments,
    /// Columns `user_id, timestamp, tags, correct`; rows sorted by timestamp
    /// per student; `tags` is semicolon-separated like `"77;179"`.
    EdnetKt1,
}

impl CsvFormat {
    pub fn parse(name: &str) -> Result<Self, DatasetError> {
        match name {
            "assistments" => Ok(CsvFormat::Assistments),
            "ednet_kt1" => Ok(CsvFormat::EdnetKt1),
            other => Err(DatasetError::Invalid(format!(
                "unknown format {other:?} (expected assistments or ednet_kt1)"
            ))),
        }
    }
}

/// Parse a semicolon-separated tag string into a sorted, deduplicated set.
pub fn compact_tags(tag_string: &str) -> Result<Vec<u32>, DatasetError> {
    let mut tags = Vec::new();
    for piece in tag_string.split(';') {
        let piece = piece.trim();
        if piece.is_empty() {
            return Err(DatasetError::Invalid(format!(
                "empty tag in {tag_string:?}"
            )));
        }
        let tag: u32 = piece.parse().map_err(|_| {
            DatasetError::Invalid(format!("non-numeric tag {piece:?} in {tag_string:?}"))
        })?;
        tags.push(tag);
    }
    tags.sort_unstable();
    tags.dedup();
    Ok(tags)
}

struct RawRow {
    user: String,
    tag_set: Vec<u32>,
    correct: u8,
    timestamp: Option<i64>,
}

fn parse_correct(field: &str, line: u64) -> Result<u8, DatasetError> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(DatasetError::Parse {
            line,
            message: format!("correct field must be 0 or 1, got {other:?}"),
        }),
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, DatasetError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| DatasetError::Invalid(format!("missing required column {name:?}")))
}

/// Read a raw CSV log into a validated [`Dataset`].
pub fn ingest_csv(path: &Path, format: CsvFormat) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DatasetError::Invalid(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::Invalid(format!("cannot read header: {e}")))?
        .clone();

    let user_col = column_index(&headers, "user_id")?;
    let (skill_col, ts_col, correct_col) = match format {
        CsvFormat::Assistments => (
            column_index(&headers, "skill_id")?,
            None,
            column_index(&headers, "correct")?,
        ),
        CsvFormat::EdnetKt1 => (
            column_index(&headers, "tags")?,
            Some(column_index(&headers, "timestamp")?),
            column_index(&headers, "correct")?,
        ),
    };

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, csv::Position::line);
            DatasetError::Parse {
                line,
                message: format!("malformed row: {e}"),
            }
        })?;
        let line = record.position().map_or(0, csv::Position::line);
        let field = |idx: usize| -> Result<&str, DatasetError> {
            record.get(idx).ok_or(DatasetError::Parse {
                line,
                message: format!("row has no column {idx}"),
            })
        };

        let tag_set = compact_tags(field(skill_col)?).map_err(|e| DatasetError::Parse {
            line,
            message: e.to_string(),
        })?;
        let timestamp = match ts_col {
            None => None,
            Some(idx) => Some(field(idx)?.parse::<i64>().map_err(|_| DatasetError::Parse {
                line,
                message: format!("bad timestamp {:?}", field(idx).unwrap_or("")),
            })?),
        };
        rows.push(RawRow {
            user: field(user_col)?.to_string(),
            tag_set,
            correct: parse_correct(field(correct_col)?, line)?,
            timestamp,
        });
    }
    if rows.is_empty() {
        return Err(DatasetError::Invalid(format!(
            "{} has no data rows",
            path.display()
        )));
    }

    // Vocabulary: distinct tag sets in lexicographic order.
    let sets: BTreeSet<Vec<u32>> = rows.iter().map(|r| r.tag_set.clone()).collect();
    let sets: Vec<Vec<u32>> = sets.into_iter().collect();
    let id_of: HashMap<&[u32], usize> = sets
        .iter()
        .enumerate()
        .map(|(id, tags)| (tags.as_slice(), id))
        .collect();
    let vocabulary = SkillVocabulary::from_sorted_tag_sets(sets.clone());

    // Group rows by student, keeping students in first-appearance order.
    let mut student_order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, row) in rows.iter().enumerate() {
        grouped
            .entry(row.user.clone())
            .or_insert_with(|| {
                student_order.push(row.user.clone());
                Vec::new()
            })
            .push(i);
    }

    let mut sequences = Vec::with_capacity(student_order.len());
    for user in student_order {
        let mut idx = grouped.remove(&user).unwrap();
        if matches!(format, CsvFormat::EdnetKt1) {
            idx.sort_by_key(|&i| rows[i].timestamp);
        }
        let interactions = idx
            .into_iter()
            .map(|i| Interaction {
                skill: id_of[rows[i].tag_set.as_slice()],
                correct: rows[i].correct,
                timestamp: rows[i].timestamp,
            })
            .collect();
        sequences.push(InteractionSequence {
            student_id: user,
            interactions,
        });
    }

    let ds = Dataset {
        vocabulary,
        sequences,
    };
    ds.validate()?;
    Ok(ds)
}
