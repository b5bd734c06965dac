//! Interaction datasets: ingestion, canonical storage, and transforms.
//!
//! A dataset is a skill vocabulary plus per-student interaction sequences.
//! Raw logs arrive as CSV in two layouts (see [`ingest::ingest_csv`]),
//! question tags are compacted into skill ids, and everything downstream
//! works on the canonical JSON-lines form. The transforms here — spread
//! shuffle, k-fold splitting by student, max-length chunking — are all
//! deterministic given their inputs and seed.

pub mod ingest;
pub mod synthetic;

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::Rng;

pub use ingest::{compact_tags, ingest_csv, CsvFormat};
pub use synthetic::{generate_synthetic, SkillBktParams, SkillOrdering, SyntheticSpec};

pub const SEQUENCES_FILE: &str = "sequences.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub enum DatasetError {
    Io(std::io::Error),
    /// A malformed input row; `line` is 1-based within the source file.
    Parse { line: u64, message: String },
    /// A structural violation (bad skill id, empty dataset, bad split).
    Invalid(String),
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::Io(e) => write!(f, "dataset io error: {e}"),
            DatasetError::Parse { line, message } => write!(f, "line {line}: {message}"),
            DatasetError::Invalid(msg) => write!(f, "invalid dataset: {msg}"),
        }
    }
}

impl std::error::Error for DatasetError {}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::Io(e)
    }
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// One graded attempt: which skill was asked and whether the answer was
/// right. Timestamps are carried through for ordering raw logs but models
/// never look at them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub skill: usize,
    pub correct: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<i64>,
}

impl Interaction {
    pub fn new(skill: usize, correct: u8) -> Self {
        Interaction {
            skill,
            correct,
            timestamp: None,
        }
    }
}

/// A student's attempts in presentation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionSequence {
    pub student_id: String,
    pub interactions: Vec<Interaction>,
}

/// One compact skill: its id and the sorted raw tag set it stands for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillEntry {
    pub id: usize,
    pub tags: Vec<u32>,
}

/// The tag-set → compact-id mapping. Ids are assigned by lexicographic
/// order of the sorted tag sets, so the vocabulary is a pure function of
/// the set of observed tag combinations, not of row order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillVocabulary {
    pub entries: Vec<SkillEntry>,
}

impl SkillVocabulary {
    /// Number of compact skills, the `N` every model is sized by.
    pub fn size(&self) -> usize {
        self.entries.len()
    }

    /// Build from a list of distinct sorted tag sets (sorted ascending).
    pub fn from_sorted_tag_sets(sets: Vec<Vec<u32>>) -> Self {
        let entries = sets
            .into_iter()
            .enumerate()
            .map(|(id, tags)| SkillEntry { id, tags })
            .collect();
        SkillVocabulary { entries }
    }

    /// Vocabulary for synthetic data: skill `i` carries the single tag `i`.
    pub fn synthetic(n: usize) -> Self {
        SkillVocabulary {
            entries: (0..n)
                .map(|id| SkillEntry {
                    id,
                    tags: vec![id as u32],
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.id != i {
                return Err(DatasetError::Invalid(format!(
                    "vocabulary entry {i} has id {}, expected dense ids",
                    e.id
                )));
            }
            if e.tags.is_empty() {
                return Err(DatasetError::Invalid(format!("skill {i} has no tags")));
            }
            if e.tags.windows(2).any(|w| w[0] >= w[1]) {
                return Err(DatasetError::Invalid(format!(
                    "skill {i} tag set is not strictly ascending: {:?}",
                    e.tags
                )));
            }
            if i > 0 && self.entries[i - 1].tags >= e.tags {
                return Err(DatasetError::Invalid(format!(
                    "vocabulary not in lexicographic tag order near entry {i}"
                )));
            }
        }
        Ok(())
    }
}

/// A vocabulary plus the sequences expressed in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub vocabulary: SkillVocabulary,
    pub sequences: Vec<InteractionSequence>,
}

impl Dataset {
    pub fn n_skills(&self) -> usize {
        self.vocabulary.size()
    }

    pub fn n_students(&self) -> usize {
        self.sequences.len()
    }

    pub fn total_interactions(&self) -> usize {
        self.sequences.iter().map(|s| s.interactions.len()).sum()
    }

    /// Check every structural invariant: valid vocabulary, nonempty
    /// sequences, skill ids in range, binary correctness.
    pub fn validate(&self) -> Result<(), DatasetError> {
        self.vocabulary.validate()?;
        let n = self.n_skills();
        for seq in &self.sequences {
            if seq.interactions.is_empty() {
                return Err(DatasetError::Invalid(format!(
                    "student {} has an empty sequence",
                    seq.student_id
                )));
            }
            for it in &seq.interactions {
                if it.skill >= n {
                    return Err(DatasetError::Invalid(format!(
                        "student {}: skill {} out of range (N={n})",
                        seq.student_id, it.skill
                    )));
                }
                if it.correct > 1 {
                    return Err(DatasetError::Invalid(format!(
                        "student {}: correct={} is not binary",
                        seq.student_id, it.correct
                    )));
                }
            }
        }
        Ok(())
    }

    /// Apply [`spread_shuffle`] to every sequence.
    pub fn spread(&self) -> Dataset {
        Dataset {
            vocabulary: self.vocabulary.clone(),
            sequences: self.sequences.iter().map(spread_shuffle).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Canonical JSON-lines storage
// ---------------------------------------------------------------------------

/// Write `sequences.jsonl` (one student per line) and `vocab.json` into
/// `dir`, creating it if needed. Output bytes are a pure function of the
/// dataset, so re-runs are byte-identical.
pub fn write_canonical(ds: &Dataset, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    let mut lines = Vec::new();
    for seq in &ds.sequences {
        serde_json::to_writer(&mut lines, seq)
            .map_err(|e| DatasetError::Invalid(format!("serialize: {e}")))?;
        lines.push(b'\n');
    }
    write_atomic(&dir.join(SEQUENCES_FILE), &lines)?;

    let vocab = serde_json::to_vec_pretty(&ds.vocabulary.entries)
        .map_err(|e| DatasetError::Invalid(format!("serialize vocabulary: {e}")))?;
    write_atomic(&dir.join(VOCAB_FILE), &vocab)?;
    Ok(())
}

/// Read a dataset back from its canonical directory and validate it.
pub fn read_canonical(dir: &Path) -> Result<Dataset, DatasetError> {
    let entries: Vec<SkillEntry> = serde_json::from_slice(&fs::read(dir.join(VOCAB_FILE))?)
        .map_err(|e| DatasetError::Invalid(format!("vocabulary json: {e}")))?;
    let vocabulary = SkillVocabulary { entries };

    let file = fs::File::open(dir.join(SEQUENCES_FILE))?;
    let mut sequences = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: InteractionSequence =
            serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                line: idx as u64 + 1,
                message: format!("bad sequence record: {e}"),
            })?;
        sequences.push(seq);
    }
    let ds = Dataset {
        vocabulary,
        sequences,
    };
    ds.validate()?;
    Ok(ds)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), std::io::Error> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

/// Interleave a sequence's skills while preserving each skill's internal
/// response order.
///
/// The sequence is partitioned by skill (keeping order), then rebuilt by
/// round-robin over the skills in order of first appearance, skipping
/// exhausted skills. The result is a permutation: for every skill, the
/// subsequence with that skill is unchanged.
pub fn spread_shuffle(seq: &InteractionSequence) -> InteractionSequence {
    let mut first_seen: Vec<usize> = Vec::new();
    let mut buckets: HashMap<usize, VecDeque<Interaction>> = HashMap::new();
    for it in &seq.interactions {
        let bucket = buckets.entry(it.skill).or_default();
        if bucket.is_empty() && !first_seen.contains(&it.skill) {
            first_seen.push(it.skill);
        }
        bucket.push_back(*it);
    }

    let total = seq.interactions.len();
    let mut out = Vec::with_capacity(total);
    while out.len() < total {
        for &skill in &first_seen {
            if let Some(it) = buckets.get_mut(&skill).and_then(VecDeque::pop_front) {
                out.push(it);
            }
        }
    }
    InteractionSequence {
        student_id: seq.student_id.clone(),
        interactions: out,
    }
}

/// Split by student into `k` disjoint folds, returning `(train, test)`
/// pairs whose test sets cover every student exactly once. Deterministic
/// under `seed`.
pub fn kfold_split(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>, DatasetError> {
    let n = ds.sequences.len();
    if k < 2 {
        return Err(DatasetError::Invalid(format!("k={k} must be at least 2")));
    }
    if k > n {
        return Err(DatasetError::Invalid(format!(
            "k={k} folds requested but only {n} students"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::derive(seed, "kfold");
    rng.shuffle(&mut order);

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let lo = f * n / k;
        let hi = (f + 1) * n / k;
        let test_idx = &order[lo..hi];
        let mut in_test = vec![false; n];
        for &i in test_idx {
            in_test[i] = true;
        }
        let mut train = Vec::with_capacity(n - test_idx.len());
        let mut test = Vec::with_capacity(test_idx.len());
        for (i, seq) in ds.sequences.iter().enumerate() {
            if in_test[i] {
                test.push(seq.clone());
            } else {
                train.push(seq.clone());
            }
        }
        folds.push((
            Dataset {
                vocabulary: ds.vocabulary.clone(),
                sequences: train,
            },
            Dataset {
                vocabulary: ds.vocabulary.clone(),
                sequences: test,
            },
        ));
    }
    Ok(folds)
}

/// Break sequences longer than `max_len` into consecutive windows so BPTT
/// cost stays bounded. Chunk ids get a `#<index>` suffix. Intended for
/// training data; evaluation walks full sequences.
pub fn chunk_max_len(ds: &Dataset, max_len: usize) -> Dataset {
    assert!(max_len >= 2, "max_len must allow at least one prediction");
    let mut sequences = Vec::with_capacity(ds.sequences.len());
    for seq in &ds.sequences {
        if seq.interactions.len() <= max_len {
            sequences.push(seq.clone());
            continue;
        }
        for (i, window) in seq.interactions.chunks(max_len).enumerate() {
            sequences.push(InteractionSequence {
                student_id: format!("{}#{i}", seq.student_id),
                interactions: window.to_vec(),
            });
        }
    }
    Dataset {
        vocabulary: ds.vocabulary.clone(),
        sequences,
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(skills: &[usize], correct: &[u8]) -> InteractionSequence {
        InteractionSequence {
            student_id: "s".into(),
            interactions: skills
                .iter()
                .zip(correct)
                .map(|(&s, &c)| Interaction::new(s, c))
                .collect(),
        }
    }

    #[test]
    fn spread_interleaves_three_skill_blocks() {
        // Three blocked skills with mixed correctness; the round-robin
        // rebuild cycles first-appearance order 9, 6, 24 until exhausted.
        let input = seq(&[9, 9, 9, 9, 6, 6, 6, 24, 24], &[1, 0, 0, 0, 1, 1, 1, 0, 0]);
        let out = spread_shuffle(&input);
        let skills: Vec<usize> = out.interactions.iter().map(|i| i.skill).collect();
        let correct: Vec<u8> = out.interactions.iter().map(|i| i.correct).collect();
        assert_eq!(skills, vec![9, 6, 24, 9, 6, 24, 9, 6, 9]);
        assert_eq!(correct, vec![1, 1, 0, 0, 1, 0, 0, 1, 0]);
    }

    #[test]
    fn spread_leaves_single_skill_sequence_unchanged() {
        let input = seq(&[3, 3, 3], &[1, 0, 1]);
        assert_eq!(spread_shuffle(&input), input);
    }

    #[test]
    fn spread_preserves_per_skill_subsequences() {
        let mut rng = Rng::new(11);
        for _ in 0..100 {
            let len = rng.range_inclusive(1, 40) as usize;
            let skills: Vec<usize> = (0..len).map(|_| rng.below(6)).collect();
            let correct: Vec<u8> = (0..len).map(|_| rng.below(2) as u8).collect();
            let input = seq(&skills, &correct);
            let out = spread_shuffle(&input);
            assert_eq!(out.interactions.len(), input.interactions.len());
            for s in 0..6 {
                let before: Vec<_> = input
                    .interactions
                    .iter()
                    .filter(|i| i.skill == s)
                    .collect();
                let after: Vec<_> =
                    out.interactions.iter().filter(|i| i.skill == s).collect();
                assert_eq!(before, after, "skill {s} projection changed");
            }
        }
    }

    #[test]
    fn spread_keeps_the_first_interaction_first() {
        // Evaluation excludes each sequence's first interaction as a target,
        // so orderings that agree on the first element keep the target sets
        // aligned.
        let mut rng = Rng::new(13);
        for _ in 0..50 {
            let len = rng.range_inclusive(1, 30) as usize;
            let skills: Vec<usize> = (0..len).map(|_| rng.below(4)).collect();
            let correct: Vec<u8> = (0..len).map(|_| rng.below(2) as u8).collect();
            let input = seq(&skills, &correct);
            let out = spread_shuffle(&input);
            assert_eq!(out.interactions[0], input.interactions[0]);
        }
    }

    #[test]
    fn kfold_sizes_and_partition() {
        let ds = Dataset {
            vocabulary: SkillVocabulary::synthetic(3),
            sequences: (0..10)
                .map(|i| InteractionSequence {
                    student_id: format!("u{i}"),
                    interactions: vec![Interaction::new(0, 1)],
                })
                .collect(),
        };
        let folds = kfold_split(&ds, 5, 7).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen = Vec::new();
        for (train, test) in &folds {
            assert_eq!(test.sequences.len(), 2);
            assert_eq!(train.sequences.len(), 8);
            for s in &test.sequences {
                assert!(
                    !train.sequences.iter().any(|t| t.student_id == s.student_id),
                    "student leaked between halves"
                );
                seen.push(s.student_id.clone());
            }
        }
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 10, "test folds must cover all students");
    }

    #[test]
    fn kfold_is_deterministic_under_seed() {
        let ds = Dataset {
            vocabulary: SkillVocabulary::synthetic(1),
            sequences: (0..17)
                .map(|i| InteractionSequence {
                    student_id: format!("u{i}"),
                    interactions: vec![Interaction::new(0, 1)],
                })
                .collect(),
        };
        let a = kfold_split(&ds, 4, 99).unwrap();
        let b = kfold_split(&ds, 4, 99).unwrap();
        for ((ta, sa), (tb, sb)) in a.iter().zip(&b) {
            assert_eq!(ta, tb);
            assert_eq!(sa, sb);
        }
        let c = kfold_split(&ds, 4, 100).unwrap();
        assert!(a.iter().zip(&c).any(|((_, sa), (_, sc))| sa != sc));
    }

    #[test]
    fn kfold_rejects_more_folds_than_students() {
        let ds = Dataset {
            vocabulary: SkillVocabulary::synthetic(1),
            sequences: (0..3)
                .map(|i| InteractionSequence {
                    student_id: format!("u{i}"),
                    interactions: vec![Interaction::new(0, 1)],
                })
                .collect(),
        };
        assert!(kfold_split(&ds, 5, 0).is_err());
    }

    #[test]
    fn chunking_splits_long_sequences_into_windows() {
        let ds = Dataset {
            vocabulary: SkillVocabulary::synthetic(2),
            sequences: vec![seq(&[0; 7], &[1; 7]), seq(&[1; 3], &[0; 3])],
        };
        let chunked = chunk_max_len(&ds, 3);
        let lens: Vec<usize> = chunked
            .sequences
            .iter()
            .map(|s| s.interactions.len())
            .collect();
        assert_eq!(lens, vec![3, 3, 1, 3]);
        assert_eq!(chunked.sequences[0].student_id, "s#0");
        assert_eq!(chunked.sequences[2].student_id, "s#2");
        // Short sequence keeps its original id.
        assert_eq!(chunked.sequences[3].student_id, "s");
        assert_eq!(chunked.total_interactions(), ds.total_interactions());
    }

    #[test]
    fn canonical_roundtrip_is_exact_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset {
            vocabulary: SkillVocabulary::from_sorted_tag_sets(vec![vec![77], vec![77, 179]]),
            sequences: vec![
                seq(&[0, 1, 0], &[1, 0, 1]),
                InteractionSequence {
                    student_id: "t".into(),
                    interactions: vec![Interaction {
                        skill: 1,
                        correct: 0,
                        timestamp: Some(12345),
                    }],
                },
            ],
        };
        write_canonical(&ds, dir.path()).unwrap();
        let back = read_canonical(dir.path()).unwrap();
        assert_eq!(back, ds);

        let first = fs::read(dir.path().join(SEQUENCES_FILE)).unwrap();
        write_canonical(&ds, dir.path()).unwrap();
        let second = fs::read(dir.path().join(SEQUENCES_FILE)).unwrap();
        assert_eq!(first, second, "re-run must be byte-identical");
    }

    #[test]
    fn validate_catches_out_of_range_skill() {
        let ds = Dataset {
            vocabulary: SkillVocabulary::synthetic(2),
            sequences: vec![seq(&[2], &[1])],
        };
        assert!(ds.validate().is_err());
    }
}
