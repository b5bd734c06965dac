//! Probes that open up trained sequence models for inspection.
//!
//! Each probe produces a plain data structure plus `csv()` / `svg()`
//! serializers so results can be archived and eyeballed without extra
//! tooling:
//!
//! - [`first_step_activations`] + [`Embedding2D`]: embed the recurrent
//!   activation after every possible first interaction into 2-D with
//!   exact t-SNE, labeled by skill and correctness.
//! - [`prediction_deltas`]: per-step changes in the full prediction
//!   vector over one student's history, telescoping bitwise back to the
//!   raw forward probabilities.
//! - [`oracle_simulation`] / [`post_streak_predictions`]: feed scripted
//!   response streams (all-correct or all-incorrect oracles, single-skill
//!   streaks) and watch trajectories settle.
//! - [`memory_change_map`]: attention and value-memory writes of a
//!   key-value memory model for one skill under both outcomes.
//! - [`svg`]: deterministic renderers (diverging heatmap, labeled
//!   scatter, polyline curves) shared by the probes above.

pub mod activations;
pub mod deltas;
pub mod memory;
pub mod oracle;
pub mod svg;
pub mod tsne;

pub use activations::{first_step_activations, ActivationPoint};
pub use deltas::{prediction_deltas, DeltaMatrix};
pub use memory::{memory_change_map, support_jaccard, MemoryChangeMap, MemoryWriteVariant};
pub use oracle::{
    oracle_simulation, post_streak_predictions, ConvergenceCurve, OracleDirection, StreakProbe,
};
pub use svg::{curves_svg, heatmap_svg, scatter_svg};
pub use tsne::{tsne, Embedding2D, EmbeddedPoint, TsneConfig, TsneRun};

// ── rendering glue ─────────────────────────────────────────────────────
//
// Thin adapters from each probe's data to the shared renderers, so every
// probe can be dumped as a standalone SVG with one call.

impl Embedding2D {
    /// Scatter plot: blue = correct, orange = incorrect, skill-id labels.
    pub fn svg(&self) -> String {
        scatter_svg(self)
    }
}

impl DeltaMatrix {
    /// Heatmap of the per-step delta rows (first row is the raw prediction
    /// vector), one row per interaction, labeled `t<step> s<skill> c<0|1>`.
    pub fn svg(&self) -> String {
        let labels: Vec<String> = self
            .annotations
            .iter()
            .enumerate()
            .map(|(t, (skill, correct))| format!("t{t} s{skill} c{correct}"))
            .collect();
        heatmap_svg(&self.rows, &labels)
    }
}

impl ConvergenceCurve {
    /// One settling curve per simulated skill: step-to-step activation
    /// distance against step number.
    pub fn svg(&self) -> String {
        let series: Vec<(String, Vec<f64>)> = self
            .skills
            .iter()
            .zip(&self.step_distances)
            .map(|(s, d)| (format!("skill {s}"), d.clone()))
            .collect();
        curves_svg(&series)
    }
}

impl StreakProbe {
    /// Post-streak prediction vector against the no-history baseline,
    /// indexed by skill id.
    pub fn svg(&self) -> String {
        let series = vec![
            (
                format!("after {} correct on skill {}", self.streak, self.skill),
                self.probabilities.clone(),
            ),
            ("baseline".to_string(), self.baseline.clone()),
        ];
        curves_svg(&series)
    }
}

impl MemoryChangeMap {
    /// Heatmap of the value-memory delta for each write variant, one row
    /// per memory slot, labeled `c<0|1> m<slot>`.
    pub fn svg(&self) -> String {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for variant in &self.variants {
            for slot in 0..variant.delta.rows {
                rows.push(variant.delta.row(slot).to_vec());
                labels.push(format!("c{} m{slot}", variant.correct));
            }
        }
        heatmap_svg(&rows, &labels)
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dkt::{DktMode, DktModel};
    use crate::dkvmn::DkvmnModel;

    #[test]
    fn every_probe_renders_a_nonempty_svg() {
        let dkt = DktModel::new(6, 10, 5, DktMode::Full);
        let dkvmn = DkvmnModel::new(6, 4, 8, 8, 8, 5);

        let activations = first_step_activations(&dkt).unwrap();
        let mut config = TsneConfig::new(3);
        config.iters = 60;
        config.perplexity = 3.0;
        let embedding = Embedding2D::from_activations(&activations, &config);
        assert!(embedding.svg().contains("<circle"));

        let seq = crate::dataset::InteractionSequence {
            student_id: "probe".to_string(),
            interactions: vec![
                crate::dataset::Interaction::new(0, 1),
                crate::dataset::Interaction::new(1, 0),
                crate::dataset::Interaction::new(2, 1),
            ],
        };
        let deltas = prediction_deltas(&dkt, &seq).unwrap();
        assert!(deltas.svg().contains("class=\"cell\""));

        let curve = oracle_simulation(&dkt, &[0, 2], 5, OracleDirection::Correct).unwrap();
        assert_eq!(curve.svg().matches("<polyline").count(), 2);

        let streak = post_streak_predictions(&dkt, 1, 4).unwrap();
        assert_eq!(streak.svg().matches("<polyline").count(), 2);

        let map = memory_change_map(&dkvmn, 2).unwrap();
        // Two variants x four slots.
        assert_eq!(map.svg().matches("m0\"").count(), 0); // labels are text, not attrs
        assert_eq!(map.svg().matches("class=\"cell\"").count(), 2 * 4 * 8);
    }
}
