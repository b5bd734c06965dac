//! Evaluation metrics (AUC, r²) and the cross-validated model comparison
//! driver.
//!
//! AUC uses the Mann–Whitney formulation,
//! `(concordant pairs + 0.5 * tied pairs) / (positives * negatives)`,
//! computed exactly in O(n log n) via midranks: every tie group contributes
//! half-integer rank sums, so the result matches the O(n²) pairwise count
//! bit for bit. r² is the squared Pearson correlation between predicted
//! probability and binary label. Both metrics sort their input internally
//! and are therefore pure functions of the prediction *multiset* — feeding
//! records in any order yields bitwise identical values.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::baselines::{bkt_fit, bkt_trace, pfa_fit, pfa_trace};
use crate::dataset::{kfold_split, Dataset, DatasetError};
use crate::dkt::{DktError, DktMode, DktModel};
use crate::dkvmn::{DkvmnError, DkvmnModel};
use crate::numerics::TrainConfig;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub enum MetricsError {
    /// AUC needs at least one positive and one negative label.
    SingleClass,
    /// r² needs variance in both scores and labels.
    ZeroVariance { what: &'static str },
    TooFewRecords { needed: usize, got: usize },
    NonFiniteScore,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::SingleClass => {
                write!(f, "AUC undefined: records contain only one label class")
            }
            MetricsError::ZeroVariance { what } => {
                write!(f, "r² undefined: {what} have zero variance")
            }
            MetricsError::TooFewRecords { needed, got } => {
                write!(f, "need at least {needed} records, got {got}")
            }
            MetricsError::NonFiniteScore => write!(f, "scores must be finite"),
        }
    }
}

impl std::error::Error for MetricsError {}

#[derive(Debug)]
pub enum EvalError {
    Metrics(MetricsError),
    Dataset(DatasetError),
    Dkt(DktError),
    Dkvmn(DkvmnError),
    /// No sequence in a test fold produced a single prediction target.
    NoTargets,
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::Metrics(e) => write!(f, "{e}"),
            EvalError::Dataset(e) => write!(f, "{e}"),
            EvalError::Dkt(e) => write!(f, "{e}"),
            EvalError::Dkvmn(e) => write!(f, "{e}"),
            EvalError::NoTargets => write!(f, "no prediction targets in any test fold"),
        }
    }
}

impl std::error::Error for EvalError {}

impl From<MetricsError> for EvalError {
    fn from(e: MetricsError) -> Self {
        EvalError::Metrics(e)
    }
}
impl From<DatasetError> for EvalError {
    fn from(e: DatasetError) -> Self {
        EvalError::Dataset(e)
    }
}
impl From<DktError> for EvalError {
    fn from(e: DktError) -> Self {
        EvalError::Dkt(e)
    }
}
impl From<DkvmnError> for EvalError {
    fn from(e: DkvmnError) -> Self {
        EvalError::Dkvmn(e)
    }
}

// ---------------------------------------------------------------------------
// Records and metrics
// ---------------------------------------------------------------------------

/// One next-step prediction paired with its observed outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub student_id: String,
    /// Index of the predicted interaction within the student's sequence.
    pub step: usize,
    pub skill: usize,
    pub probability: f64,
    pub correct: u8,
}

/// Area under the ROC curve via midranks. Exactly equals the pairwise
/// count `(concordant + 0.5 * tied) / (P * N)`.
pub fn auc(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    let mut pairs: Vec<(f64, u8)> = records
        .iter()
        .map(|r| (r.probability, r.correct))
        .collect();
    if pairs.iter().any(|(s, _)| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore);
    }
    let positives = pairs.iter().filter(|(_, c)| *c == 1).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass);
    }
    // Sorting by (score, label) makes the result independent of input order.
    pairs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());

    // Midranks: a tie group spanning ranks i+1..=j gets rank (i+1+j)/2 —
    // a half-integer, exact in f64. The Mann–Whitney statistic is then
    // sum of positive ranks minus P(P+1)/2.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j + 1 < pairs.len() && pairs[j + 1].0 == pairs[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for pair in &pairs[i..=j] {
            if pair.1 == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (positives * (positives + 1)) as f64 / 2.0;
    Ok(u / (positives as f64 * negatives as f64))
}

/// Square of the Pearson correlation between scores and labels.
pub fn r_squared(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    if records.len() < 2 {
        return Err(MetricsError::TooFewRecords {
            needed: 2,
            got: records.len(),
        });
    }
    let mut pairs: Vec<(f64, f64)> = records
        .iter()
        .map(|r| (r.probability, f64::from(r.correct)))
        .collect();
    if pairs.iter().any(|(s, _)| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore);
    }
    pairs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = pairs.len() as f64;
    let mean_s: f64 = pairs.iter().map(|(s, _)| s).sum::<f64>() / n;
    let mean_l: f64 = pairs.iter().map(|(_, l)| l).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_s = 0.0;
    let mut var_l = 0.0;
    for (s, l) in &pairs {
        let ds = s - mean_s;
        let dl = l - mean_l;
        cov += ds * dl;
        var_s += ds * ds;
        var_l += dl * dl;
    }
    if var_l == 0.0 {
        return Err(MetricsError::ZeroVariance { what: "labels" });
    }
    if var_s == 0.0 {
        return Err(MetricsError::ZeroVariance { what: "scores" });
    }
    Ok(cov * cov / (var_s * var_l))
}

// ---------------------------------------------------------------------------
// Cross-validated evaluation driver
// ---------------------------------------------------------------------------

/// Sequence ordering applied before fitting and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    Original,
    /// Round-robin interleaving of each student's per-skill subsequences,
    /// applied to train and test alike.
    Spread,
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ordering::Original => write!(f, "original"),
            Ordering::Spread => write!(f, "spread"),
        }
    }
}

/// Which model the evaluation driver fits per fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelKind {
    Pfa,
    Bkt,
    Dkt { hidden: usize, train: TrainConfig },
    DktFrozen { hidden: usize, train: TrainConfig },
    /// Freshly initialized DKT, never trained — the random-network column.
    DktUntrained { hidden: usize, seed: u64 },
    Dkvmn {
        slots: usize,
        d_k: usize,
        d_v: usize,
        d_f: usize,
        train: TrainConfig,
    },
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Pfa => "pfa",
            ModelKind::Bkt => "bkt",
            ModelKind::Dkt { .. } => "dkt",
            ModelKind::DktFrozen { .. } => "dkt_frozen",
            ModelKind::DktUntrained { .. } => "dkt_untrained",
            ModelKind::Dkvmn { .. } => "dkvmn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub auc: f64,
    pub r_squared: f64,
    pub records: usize,
}

/// Cross-validation results for one (model, dataset, ordering) cell of the
/// comparison tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub dataset_tag: String,
    pub ordering: Ordering,
    pub folds: Vec<FoldMetrics>,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub mean_r_squared: f64,
    pub std_r_squared: f64,
}

fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Fit `kind` on each training fold and score pooled next-step predictions
/// on the matching test fold. Every interaction except each sequence's
/// first is a prediction target. `ordering == Spread` rewrites all
/// sequences (train and test) before splitting.
pub fn evaluate(
    kind: &ModelKind,
    dataset: &Dataset,
    tag: &str,
    ordering: Ordering,
    k: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let transformed;
    let data = match ordering {
        Ordering::Original => dataset,
        Ordering::Spread => {
            transformed = dataset.spread();
            &transformed
        }
    };
    let mut folds = Vec::with_capacity(k);
    for (train, test) in kfold_split(data, k, seed)? {
        let records = fold_records(kind, &train, &test)?;
        if records.is_empty() {
            return Err(EvalError::NoTargets);
        }
        folds.push(FoldMetrics {
            auc: auc(&records)?,
            r_squared: r_squared(&records)?,
            records: records.len(),
        });
    }
    let aucs: Vec<f64> = folds.iter().map(|f| f.auc).collect();
    let r2s: Vec<f64> = folds.iter().map(|f| f.r_squared).collect();
    let (mean_auc, std_auc) = mean_and_sample_std(&aucs);
    let (mean_r_squared, std_r_squared) = mean_and_sample_std(&r2s);
    Ok(EvalReport {
        model: kind.name().to_string(),
        dataset_tag: tag.to_string(),
        ordering,
        folds,
        mean_auc,
        std_auc,
        mean_r_squared,
        std_r_squared,
    })
}

/// Train on one fold and collect test-fold prediction records (t >= 1).
fn fold_records(
    kind: &ModelKind,
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<PredictionRecord>, EvalError> {
    // Each model yields, per test sequence, the probability assigned to
    // interaction t using only interactions before t.
    let per_sequence: Box<dyn Fn(&crate::dataset::InteractionSequence) -> Result<Vec<f64>, EvalError>> =
        match kind {
            ModelKind::Pfa => {
                let params = pfa_fit(train);
                Box::new(move |seq| Ok(pfa_trace(&params, seq)))
            }
            ModelKind::Bkt => {
                let params = bkt_fit(train);
                Box::new(move |seq| Ok(bkt_trace(&params, seq)))
            }
            ModelKind::Dkt { hidden, train: cfg } => {
                let mut model = DktModel::new(train.n_skills(), *hidden, cfg.seed, DktMode::Full);
                model.train(train, cfg)?;
                Box::new(move |seq| Ok(dkt_next_step_probs(&model, seq)?))
            }
            ModelKind::DktFrozen { hidden, train: cfg } => {
                let mut model =
                    DktModel::new(train.n_skills(), *hidden, cfg.seed, DktMode::FrozenRecurrent);
                model.train(train, cfg)?;
                Box::new(move |seq| Ok(dkt_next_step_probs(&model, seq)?))
            }
            ModelKind::DktUntrained { hidden, seed } => {
                let model = DktModel::new(train.n_skills(), *hidden, *seed, DktMode::Full);
                Box::new(move |seq| Ok(dkt_next_step_probs(&model, seq)?))
            }
            ModelKind::Dkvmn {
                slots,
                d_k,
                d_v,
                d_f,
                train: cfg,
            } => {
                let mut model =
                    DkvmnModel::new(train.n_skills(), *slots, *d_k, *d_v, *d_f, cfg.seed);
                model.train(train, cfg)?;
                Box::new(move |seq| Ok(model.forward(seq, false)?.probabilities))
            }
        };

    let mut records = Vec::new();
    for seq in &test.sequences {
        if seq.interactions.len() < 2 {
            continue; // no history, no targets
        }
        let probs = per_sequence(seq)?;
        debug_assert_eq!(probs.len(), seq.interactions.len());
        for (t, it) in seq.interactions.iter().enumerate().skip(1) {
            records.push(PredictionRecord {
                student_id: seq.student_id.clone(),
                step: t,
                skill: it.skill,
                probability: probs[t],
                correct: it.correct,
            });
        }
    }
    Ok(records)
}

/// Per-interaction probabilities from a DKT model: entry `t` is the
/// model's probability for interaction `t` given interactions `0..t`.
/// Entry 0 has no history and is a placeholder (never a target).
fn dkt_next_step_probs(model: &DktModel, seq: &crate::dataset::InteractionSequence) -> Result<Vec<f64>, DktError> {
    let run = model.forward(seq, false)?;
    let mut out = Vec::with_capacity(seq.interactions.len());
    for (t, it) in seq.interactions.iter().enumerate() {
        if t == 0 {
            out.push(0.5);
        } else {
            out.push(run.probabilities[t - 1][it.skill]);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Table emission
// ---------------------------------------------------------------------------

/// Render reports as a CSV block with one column per model variant and one
/// row per (dataset, metric), mirroring the comparison-table layout. The
/// canonical columns come first; any other model/ordering combinations are
/// appended in first-appearance order.
pub fn table_csv(reports: &[EvalReport]) -> String {
    let canon = [
        ("pfa", Ordering::Original),
        ("bkt", Ordering::Original),
        ("dkt", Ordering::Original),
        ("dkt", Ordering::Spread),
        ("dkt_untrained", Ordering::Original),
    ];
    let column_name = |model: &str, ordering: Ordering| -> String {
        match ordering {
            Ordering::Original => model.to_string(),
            Ordering::Spread => format!("{model}_spread"),
        }
    };
    let mut columns: Vec<(String, Ordering)> = canon
        .iter()
        .map(|&(m, o)| (m.to_string(), o))
        .collect();
    for r in reports {
        if !columns.iter().any(|(m, o)| *m == r.model && *o == r.ordering) {
            columns.push((r.model.clone(), r.ordering));
        }
    }

    let mut tags: Vec<String> = Vec::new();
    for r in reports {
        if !tags.contains(&r.dataset_tag) {
            tags.push(r.dataset_tag.clone());
        }
    }

    let mut by_cell: BTreeMap<(String, String, String), &EvalReport> = BTreeMap::new();
    for r in reports {
        by_cell.insert(
            (
                r.dataset_tag.clone(),
                r.model.clone(),
                r.ordering.to_string(),
            ),
            r,
        );
    }

    let mut out = String::from("dataset,metric");
    for (m, o) in &columns {
        out.push(',');
        out.push_str(&column_name(m, *o));
    }
    out.push('\n');
    for tag in &tags {
        for metric in ["auc", "r2"] {
            out.push_str(tag);
            out.push(',');
            out.push_str(metric);
            for (m, o) in &columns {
                out.push(',');
                if let Some(r) = by_cell.get(&(tag.clone(), m.clone(), o.to_string())) {
                    let (mean, std) = if metric == "auc" {
                        (r.mean_auc, r.std_auc)
                    } else {
                        (r.mean_r_squared, r.std_r_squared)
                    };
                    out.push_str(&format!("{mean:.4}±{std:.4}"));
                }
            }
            out.push('\n');
        }
    }
    out
}

// ---------------------------------------------------------------------------
