//! Dynamic key-value memory network for knowledge tracing.
//!
//! A static key memory `M_k` (M x d_k) is attended by the queried skill's
//! key embedding, and a dynamic value memory `M_v` (M x d_v) holds the
//! student state, updated after every observed response:
//!
//! ```text
//! k        = A[q]                              key embedding of skill q
//! w(i)     = softmax_i(k . M_k(i))             correlation weight
//! r        = sum_i w(i) M_v(i)                 read vector
//! p        = sigmoid(W_2 tanh(W_1 [r, k] + b_1) + b_2)
//! v        = B[q + N(1-correct)]               value embedding of the response
//! e        = sigmoid(W_e v + b_e)              erase vector
//! add      = tanh(W_a v + b_a)                 add vector
//! M~(i)    = M_v(i) * (1 - w(i) e)             erase
//! M_v'(i)  = M~(i) + w(i) add                  add
//! ```
//!
//! `w` depends only on the skill, never on correctness — that invariant
//! (the "same memory locations activate for the same skill") is enforced
//! by construction here and tested bitwise. At each step the model first
//! predicts the current response from the pre-write memory, then writes
//! the observed response; training minimizes the mean per-step binary
//! cross-entropy with gradients backpropagated through every read, write,
//! head, both embeddings, the key memory, and the learned initial value
//! memory.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{chunk_max_len, Dataset, InteractionSequence};
use crate::numerics::matrix::{dot, matvec_into};
use crate::numerics::{
    binary_cross_entropy, clip_global_norm, fnv1a64, init_params, load_params, save_params,
    sigmoid, softmax, CheckpointError, InitScheme, Matrix, NumericsError, Optimizer,
    OptimizerKind, Rng, TrainConfig,
};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub enum DkvmnError {
    SkillOutOfRange { skill: usize, n: usize },
    EmptySequence,
    Numerics(NumericsError),
    Checkpoint(CheckpointError),
}

impl fmt::Display for DkvmnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DkvmnError::SkillOutOfRange { skill, n } => {
                write!(f, "skill {skill} out of range (N={n})")
            }
            DkvmnError::EmptySequence => write!(f, "sequence has no interactions"),
            DkvmnError::Numerics(e) => write!(f, "{e}"),
            DkvmnError::Checkpoint(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DkvmnError {}

impl From<NumericsError> for DkvmnError {
    fn from(e: NumericsError) -> Self {
        DkvmnError::Numerics(e)
    }
}

impl From<CheckpointError> for DkvmnError {
    fn from(e: CheckpointError) -> Self {
        DkvmnError::Checkpoint(e)
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct DkvmnModel {
    pub n_skills: usize,
    /// Memory slot count M.
    pub slots: usize,
    pub d_k: usize,
    pub d_v: usize,
    /// Width of the prediction head's hidden layer.
    pub d_f: usize,
    pub seed: u64,
    /// Static key memory, M x d_k. Constant across time within any forward
    /// pass; it only moves between optimizer steps.
    pub key_memory: Matrix,
    /// Skill key embeddings A, N x d_k.
    pub key_embed: Matrix,
    /// Response value embeddings B, 2N x d_v: row `q` for a correct answer
    /// on skill q, row `q + N` for an incorrect one.
    pub value_embed: Matrix,
    /// Learned initial value memory M_v0, M x d_v, copied fresh per sequence.
    pub init_value_memory: Matrix,
    /// Erase head, d_v x d_v and d_v x 1.
    pub w_e: Matrix,
    pub b_e: Matrix,
    /// Add head, d_v x d_v and d_v x 1.
    pub w_a: Matrix,
    pub b_a: Matrix,
    /// Prediction head: d_f x (d_v + d_k), d_f x 1, 1 x d_f, 1 x 1.
    pub w_1: Matrix,
    pub b_1: Matrix,
    pub w_2: Matrix,
    pub b_2: Matrix,
}

/// The memory state around one step: attention, post-write memory, and the
/// change the write made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySnapshot {
    pub step: usize,
    /// Correlation weights w_t, length M.
    pub attention: Vec<f64>,
    /// Value memory after this step's write, M x d_v.
    pub value_memory: Matrix,
    /// `value_memory - previous value_memory` (step 0 diffs against M_v0).
    pub delta: Matrix,
}

/// Forward-pass output: per-step probabilities (each computed before that
/// step's write) and, on request, memory snapshots.
#[derive(Debug, Clone)]
pub struct DkvmnForward {
    pub probabilities: Vec<f64>,
    pub snapshots: Vec<MemorySnapshot>,
    pub final_memory: Matrix,
}

/// Per-epoch training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Cached intermediates of one step, for the reverse pass.
struct StepCache {
    skill: usize,
    value_row: usize,
    w: Vec<f64>,
    feat: Vec<f64>,
    head_hidden: Vec<f64>,
    p: f64,
    erase: Vec<f64>,
    add: Vec<f64>,
}

impl DkvmnModel {
    pub const DEFAULT_SLOTS: usize = 20;
    pub const DEFAULT_D_K: usize = 50;
    pub const DEFAULT_D_V: usize = 50;
    pub const DEFAULT_D_F: usize = 50;

    pub fn new(n_skills: usize, slots: usize, d_k: usize, d_v: usize, d_f: usize, seed: u64) -> Self {
        assert!(n_skills > 0 && slots > 0 && d_k > 0 && d_v > 0 && d_f > 0);
        let mut rng = Rng::derive(seed, "dkvmn-init");
        let u = InitScheme::UniformScaled;
        DkvmnModel {
            n_skills,
            slots,
            d_k,
            d_v,
            d_f,
            seed,
            key_memory: init_params(slots, d_k, u, &mut rng),
            key_embed: init_params(n_skills, d_k, u, &mut rng),
            value_embed: init_params(2 * n_skills, d_v, u, &mut rng),
            init_value_memory: init_params(slots, d_v, u, &mut rng),
            w_e: init_params(d_v, d_v, u, &mut rng),
            b_e: Matrix::zeros(d_v, 1),
            w_a: init_params(d_v, d_v, u, &mut rng),
            b_a: Matrix::zeros(d_v, 1),
            w_1: init_params(d_f, d_v + d_k, u, &mut rng),
            b_1: Matrix::zeros(d_f, 1),
            w_2: init_params(1, d_f, u, &mut rng),
            b_2: Matrix::zeros(1, 1),
        }
    }

    // ── parameter plumbing ──────────────────────────────────────────

    pub fn param_names() -> [&'static str; 12] {
        [
            "key_memory",
            "key_embed",
            "value_embed",
            "init_value_memory",
            "w_e",
            "b_e",
            "w_a",
            "b_a",
            "w_1",
            "b_1",
            "w_2",
            "b_2",
        ]
    }

    pub fn params(&self) -> [&Matrix; 12] {
        [
            &self.key_memory,
            &self.key_embed,
            &self.value_embed,
            &self.init_value_memory,
            &self.w_e,
            &self.b_e,
            &self.w_a,
            &self.b_a,
            &self.w_1,
            &self.b_1,
            &self.w_2,
            &self.b_2,
        ]
    }

    pub fn with_params(&self, ps: &[Matrix]) -> DkvmnModel {
        assert_eq!(ps.len(), 12);
        let mut m = self.clone();
        for (dst, src) in [
            &mut m.key_memory,
            &mut m.key_embed,
            &mut m.value_embed,
            &mut m.init_value_memory,
            &mut m.w_e,
            &mut m.b_e,
            &mut m.w_a,
            &mut m.b_a,
            &mut m.w_1,
            &mut m.b_1,
            &mut m.w_2,
            &mut m.b_2,
        ]
        .into_iter()
        .zip(ps)
        {
            assert_eq!(dst.shape(), src.shape(), "parameter shape changed");
            *dst = src.clone();
        }
        m
    }

    pub fn model_hash(&self) -> u64 {
        let mut bytes = Vec::new();
        for m in self.params() {
            for v in &m.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fnv1a64(&bytes)
    }

    pub fn save(&self, dir: &Path) -> Result<u64, DkvmnError> {
        let hyper = serde_json::json!({
            "model": "dkvmn",
            "n_skills": self.n_skills,
            "slots": self.slots,
            "d_k": self.d_k,
            "d_v": self.d_v,
            "d_f": self.d_f,
        });
        let names = Self::param_names();
        let params = self.params();
        let pairs: Vec<(&str, &Matrix)> = names.into_iter().zip(params).collect();
        Ok(save_params(dir, &pairs, self.seed, &hyper)?)
    }

    pub fn load(dir: &Path) -> Result<DkvmnModel, DkvmnError> {
        let mut loaded = load_params(dir)?;
        let dim = |name: &str| -> Result<usize, DkvmnError> {
            loaded.hyperparameters[name]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| {
                    DkvmnError::Checkpoint(CheckpointError::Corrupt(format!("missing {name}")))
                })
        };
        let (n, slots, d_k, d_v, d_f) = (
            dim("n_skills")?,
            dim("slots")?,
            dim("d_k")?,
            dim("d_v")?,
            dim("d_f")?,
        );
        let seed = loaded.seed;
        let mut take = |name: &str| {
            loaded.take(name).ok_or_else(|| {
                DkvmnError::Checkpoint(CheckpointError::Corrupt(format!("missing param {name}")))
            })
        };
        let model = DkvmnModel {
            n_skills: n,
            slots,
            d_k,
            d_v,
            d_f,
            seed,
            key_memory: take("key_memory")?,
            key_embed: take("key_embed")?,
            value_embed: take("value_embed")?,
            init_value_memory: take("init_value_memory")?,
            w_e: take("w_e")?,
            b_e: take("b_e")?,
            w_a: take("w_a")?,
            b_a: take("b_a")?,
            w_1: take("w_1")?,
            b_1: take("b_1")?,
            w_2: take("w_2")?,
            b_2: take("b_2")?,
        };
        for (m, want) in [
            (&model.key_memory, (slots, d_k)),
            (&model.key_embed, (n, d_k)),
            (&model.value_embed, (2 * n, d_v)),
            (&model.init_value_memory, (slots, d_v)),
            (&model.w_e, (d_v, d_v)),
            (&model.w_a, (d_v, d_v)),
            (&model.w_1, (d_f, d_v + d_k)),
            (&model.w_2, (1, d_f)),
        ] {
            if m.shape() != want {
                return Err(DkvmnError::Checkpoint(CheckpointError::Corrupt(format!(
                    "parameter shape {:?} does not match header {want:?}",
                    m.shape()
                ))));
            }
        }
        Ok(model)
    }

    // ── the four core operations ────────────────────────────────────

    /// Attention over memory slots for skill `q`. Depends only on the
    /// skill id — correctness never enters.
    pub fn correlation_weight(&self, q: usize) -> Result<Vec<f64>, DkvmnError> {
        if q >= self.n_skills {
            return Err(DkvmnError::SkillOutOfRange {
                skill: q,
                n: self.n_skills,
            });
        }
        let k = self.key_embed.row(q);
        let logits: Vec<f64> = (0..self.slots)
            .map(|i| dot(self.key_memory.row(i), k))
            .collect();
        Ok(softmax(&logits))
    }

    /// Attention-weighted sum of value-memory rows.
    pub fn read(&self, m_v: &Matrix, w: &[f64]) -> Vec<f64> {
        debug_assert_eq!(m_v.shape(), (self.slots, self.d_v));
        debug_assert_eq!(w.len(), self.slots);
        let mut r = vec![0.0; self.d_v];
        for (i, &wi) in w.iter().enumerate() {
            let row = m_v.row(i);
            for j in 0..self.d_v {
                r[j] += wi * row[j];
            }
        }
        r
    }

    /// Probability of a correct response on skill `q` given memory `m_v`.
    pub fn predict(&self, m_v: &Matrix, q: usize) -> Result<f64, DkvmnError> {
        let w = self.correlation_weight(q)?;
        Ok(self.predict_cached(m_v, q, &w).p)
    }

    fn predict_cached(&self, m_v: &Matrix, q: usize, w: &[f64]) -> StepCache {
        let mut feat = Vec::with_capacity(self.d_v + self.d_k);
        feat.extend_from_slice(&self.read(m_v, w));
        feat.extend_from_slice(self.key_embed.row(q));
        let mut z1 = vec![0.0; self.d_f];
        matvec_into(&self.w_1, &feat, &mut z1);
        let head_hidden: Vec<f64> = z1
            .iter()
            .zip(&self.b_1.data)
            .map(|(z, b)| (z + b).tanh())
            .collect();
        let p = sigmoid(dot(self.w_2.row(0), &head_hidden) + self.b_2.data[0]);
        StepCache {
            skill: q,
            value_row: 0,
            w: w.to_vec(),
            feat,
            head_hidden,
            p,
            erase: Vec::new(),
            add: Vec::new(),
        }
    }

    fn erase_add(&self, value_row: usize) -> (Vec<f64>, Vec<f64>) {
        let v = self.value_embed.row(value_row);
        let mut ze = vec![0.0; self.d_v];
        matvec_into(&self.w_e, v, &mut ze);
        let erase: Vec<f64> = ze
            .iter()
            .zip(&self.b_e.data)
            .map(|(z, b)| sigmoid(z + b))
            .collect();
        let mut za = vec![0.0; self.d_v];
        matvec_into(&self.w_a, v, &mut za);
        let add: Vec<f64> = za
            .iter()
            .zip(&self.b_a.data)
            .map(|(z, b)| (z + b).tanh())
            .collect();
        (erase, add)
    }

    /// Erase–add update of the value memory for an observed response.
    pub fn write(&self, m_v: &Matrix, q: usize, correct: u8) -> Result<Matrix, DkvmnError> {
        let w = self.correlation_weight(q)?;
        Ok(self.write_with(m_v, &w, q, correct))
    }

    /// Write with an explicit attention vector. This is the locality
    /// probe's entry point: passing a weight of exactly zero for a slot
    /// must leave that slot bitwise untouched.
    pub fn write_with(&self, m_v: &Matrix, w: &[f64], q: usize, correct: u8) -> Matrix {
        let (erase, add) = self.erase_add(value_row(q, correct, self.n_skills));
        self.apply_write(m_v, w, &erase, &add)
    }

    fn apply_write(&self, m_v: &Matrix, w: &[f64], erase: &[f64], add: &[f64]) -> Matrix {
        let mut out = m_v.clone();
        for i in 0..self.slots {
            let wi = w[i];
            if wi == 0.0 {
                continue; // exact no-op slot
            }
            let row = out.row_mut(i);
            for j in 0..self.d_v {
                row[j] = row[j] * (1.0 - wi * erase[j]) + wi * add[j];
            }
        }
        out
    }

    // ── forward / loss / train ──────────────────────────────────────

    /// Run a sequence from the initial memory. Each step predicts the
    /// current response from the pre-write memory, then writes it.
    pub fn forward(
        &self,
        seq: &InteractionSequence,
        snapshots: bool,
    ) -> Result<DkvmnForward, DkvmnError> {
        if seq.interactions.is_empty() {
            return Err(DkvmnError::EmptySequence);
        }
        let mut memory = self.init_value_memory.clone();
        let mut probabilities = Vec::with_capacity(seq.interactions.len());
        let mut snaps = Vec::new();
        for (t, it) in seq.interactions.iter().enumerate() {
            let w = self.correlation_weight(it.skill)?;
            let cache = self.predict_cached(&memory, it.skill, &w);
            if !cache.p.is_finite() {
                return Err(DkvmnError::Numerics(NumericsError::NonFinite {
                    context: format!("dkvmn prediction at step {t}"),
                }));
            }
            probabilities.push(cache.p);
            let next = self.write_with(&memory, &w, it.skill, it.correct);
            if snapshots {
                let delta = Matrix {
                    rows: next.rows,
                    cols: next.cols,
                    data: next
                        .data
                        .iter()
                        .zip(&memory.data)
                        .map(|(a, b)| a - b)
                        .collect(),
                };
                snaps.push(MemorySnapshot {
                    step: t,
                    attention: w,
                    value_memory: next.clone(),
                    delta,
                });
            }
            memory = next;
        }
        Ok(DkvmnForward {
            probabilities,
            snapshots: snaps,
            final_memory: memory,
        })
    }

    /// Mean per-step binary cross-entropy of p_t against correct_t.
    pub fn loss(&self, seq: &InteractionSequence) -> Result<f64, DkvmnError> {
        let run = self.forward(seq, false)?;
        let total: f64 = run
            .probabilities
            .iter()
            .zip(&seq.interactions)
            .map(|(&p, it)| binary_cross_entropy(p, f64::from(it.correct)))
            .sum();
        Ok(total / seq.interactions.len() as f64)
    }

    /// One snapshot per step; `delta` is the write's change, step 0
    /// measured against the learned initial memory.
    pub fn snapshot_run(&self, seq: &InteractionSequence) -> Result<Vec<MemorySnapshot>, DkvmnError> {
        Ok(self.forward(seq, true)?.snapshots)
    }

    /// Per-sequence loss and analytic gradients in canonical parameter
    /// order — the unit the gradient check verifies.
    pub fn loss_and_gradients(
        &self,
        seq: &InteractionSequence,
    ) -> Result<(f64, Vec<Matrix>), DkvmnError> {
        let mut grads: Vec<Matrix> = self.params().iter().map(|m| m.zeros_like()).collect();
        let loss = self.accumulate_gradients(seq, &mut grads)?;
        Ok((loss, grads))
    }

    /// BPTT through every step's read, write, and heads, adding into
    /// `grads` (canonical order).
    fn accumulate_gradients(
        &self,
        seq: &InteractionSequence,
        grads: &mut [Matrix],
    ) -> Result<f64, DkvmnError> {
        if seq.interactions.is_empty() {
            return Err(DkvmnError::EmptySequence);
        }
        let t_len = seq.interactions.len();
        let (m_slots, d_v, d_k, d_f) = (self.slots, self.d_v, self.d_k, self.d_f);

        // Forward, caching the memory before each write plus per-step
        // intermediates. memories[t] is the state entering step t.
        let mut memories: Vec<Matrix> = Vec::with_capacity(t_len + 1);
        memories.push(self.init_value_memory.clone());
        let mut caches: Vec<StepCache> = Vec::with_capacity(t_len);
        let mut loss = 0.0;
        for (t, it) in seq.interactions.iter().enumerate() {
            let w = self.correlation_weight(it.skill)?;
            let mut cache = self.predict_cached(&memories[t], it.skill, &w);
            let row = value_row(it.skill, it.correct, self.n_skills);
            let (erase, add) = self.erase_add(row);
            let next = self.apply_write(&memories[t], &w, &erase, &add);
            loss += binary_cross_entropy(cache.p, f64::from(it.correct));
            cache.value_row = row;
            cache.erase = erase;
            cache.add = add;
            caches.push(cache);
            memories.push(next);
        }
        loss /= t_len as f64;
        if !loss.is_finite() {
            return Err(DkvmnError::Numerics(NumericsError::NonFinite {
                context: "dkvmn loss".into(),
            }));
        }

        let (g_mk, g_a, g_b, g_mv0) = (0, 1, 2, 3);
        let (g_we, g_be, g_wa, g_ba) = (4, 5, 6, 7);
        let (g_w1, g_b1, g_w2, g_b2) = (8, 9, 10, 11);

        // dmem holds dL/d(memories[t+1]) entering the step-t backward.
        let mut dmem = Matrix::zeros(m_slots, d_v);
        for t in (0..t_len).rev() {
            let s = &caches[t];
            let pre = &memories[t];
            let label = f64::from(seq.interactions[t].correct);

            let mut dw = vec![0.0; m_slots];
            let mut dpre = Matrix::zeros(m_slots, d_v);

            // Write backward: M'(i,j) = M(i,j)(1 - w_i e_j) + w_i add_j.
            let mut de = vec![0.0; d_v];
            let mut dadd = vec![0.0; d_v];
            for i in 0..m_slots {
                let wi = s.w[i];
                let dnext = dmem.row(i);
                let prev = pre.row(i);
                let dpre_row = dpre.row_mut(i);
                let mut dwi = 0.0;
                for j in 0..d_v {
                    let g = dnext[j];
                    dpre_row[j] += g * (1.0 - wi * s.erase[j]);
                    dwi += g * (s.add[j] - prev[j] * s.erase[j]);
                    de[j] += g * (-prev[j] * wi);
                    dadd[j] += g * wi;
                }
                dw[i] += dwi;
            }

            // Erase/add heads backward, collecting the value-embedding grad.
            let v = self.value_embed.row(s.value_row);
            let mut dv = vec![0.0; d_v];
            {
                let dze: Vec<f64> = (0..d_v)
                    .map(|j| de[j] * s.erase[j] * (1.0 - s.erase[j]))
                    .collect();
                let dza: Vec<f64> = (0..d_v)
                    .map(|j| dadd[j] * (1.0 - s.add[j] * s.add[j]))
                    .collect();
                for j in 0..d_v {
                    let we_row = grads[g_we].row_mut(j);
                    for (x, &vx) in we_row.iter_mut().zip(v) {
                        *x += dze[j] * vx;
                    }
                    grads[g_be].data[j] += dze[j];
                    let wa_row = grads[g_wa].row_mut(j);
                    for (x, &vx) in wa_row.iter_mut().zip(v) {
                        *x += dza[j] * vx;
                    }
                    grads[g_ba].data[j] += dza[j];
                }
                for j in 0..d_v {
                    let we_row = self.w_e.row(j);
                    let wa_row = self.w_a.row(j);
                    for x in 0..d_v {
                        dv[x] += we_row[x] * dze[j] + wa_row[x] * dza[j];
                    }
                }
            }
            for (x, g) in grads[g_b].row_mut(s.value_row).iter_mut().zip(&dv) {
                *x += g;
            }

            // Prediction head backward: p = sigmoid(W_2 u + b_2),
            // u = tanh(W_1 feat + b_1), feat = [read, k].
            let dz2 = (s.p - label) / t_len as f64;
            for (x, &u) in grads[g_w2].row_mut(0).iter_mut().zip(&s.head_hidden) {
                *x += dz2 * u;
            }
            grads[g_b2].data[0] += dz2;
            let dz1: Vec<f64> = (0..d_f)
                .map(|j| {
                    let du = self.w_2.data[j] * dz2;
                    du * (1.0 - s.head_hidden[j] * s.head_hidden[j])
                })
                .collect();
            let mut dfeat = vec![0.0; d_v + d_k];
            for j in 0..d_f {
                let w1_row = self.w_1.row(j);
                let gw1_row = grads[g_w1].row_mut(j);
                for x in 0..d_v + d_k {
                    gw1_row[x] += dz1[j] * s.feat[x];
                    dfeat[x] += w1_row[x] * dz1[j];
                }
                grads[g_b1].data[j] += dz1[j];
            }
            let dread = &dfeat[..d_v];
            let dk_pred = &dfeat[d_v..];

            // Read backward: r = sum_i w_i M(i).
            for i in 0..m_slots {
                let prev = pre.row(i);
                let dpre_row = dpre.row_mut(i);
                let wi = s.w[i];
                let mut dwi = 0.0;
                for j in 0..d_v {
                    dpre_row[j] += wi * dread[j];
                    dwi += prev[j] * dread[j];
                }
                dw[i] += dwi;
            }

            // Softmax backward: du_i = w_i (dw_i - sum_j w_j dw_j), then
            // logits u_i = k . M_k(i).
            let inner: f64 = s.w.iter().zip(&dw).map(|(a, b)| a * b).sum();
            let mut dk = vec![0.0; d_k];
            for (x, &g) in dk.iter_mut().zip(dk_pred) {
                *x += g;
            }
            for i in 0..m_slots {
                let du = s.w[i] * (dw[i] - inner);
                let k = self.key_embed.row(s.skill);
                let mk_row = self.key_memory.row(i);
                let gmk_row = grads[g_mk].row_mut(i);
                for x in 0..d_k {
                    gmk_row[x] += du * k[x];
                    dk[x] += du * mk_row[x];
                }
            }
            for (x, g) in grads[g_a].row_mut(s.skill).iter_mut().zip(&dk) {
                *x += g;
            }

            dmem = dpre;
        }
        // What remains is the gradient w.r.t. the learned initial memory.
        for (x, g) in grads[g_mv0].data.iter_mut().zip(&dmem.data) {
            *x += g;
        }
        Ok(loss)
    }

    /// Mini-batch training over sequences (chunked to `config.max_len`).
    pub fn train(&mut self, dataset: &Dataset, config: &TrainConfig) -> Result<TrainLog, DkvmnError> {
        let data = chunk_max_len(dataset, config.max_len);
        let usable: Vec<&InteractionSequence> = data
            .sequences
            .iter()
            .filter(|s| !s.interactions.is_empty())
            .collect();
        if usable.is_empty() {
            return Err(DkvmnError::EmptySequence);
        }
        let mut optimizer = match config.optimizer {
            OptimizerKind::Sgd => Optimizer::sgd(config.learning_rate),
            OptimizerKind::Adam => Optimizer::adam(config.learning_rate),
        };
        let mut rng = Rng::derive(config.seed, "dkvmn-train");
        let mut order: Vec<usize> = (0..usable.len()).collect();
        let batch = config.batch_size.max(1);

        let mut grads: Vec<Matrix> = self.params().iter().map(|m| m.zeros_like()).collect();
        let mut epoch_losses = Vec::with_capacity(config.epochs);
        for _epoch in 0..config.epochs {
            rng.shuffle(&mut order);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch) {
                for g in grads.iter_mut() {
                    g.fill(0.0);
                }
                for &idx in chunk {
                    epoch_loss += self.accumulate_gradients(usable[idx], &mut grads)?;
                }
                let scale = 1.0 / chunk.len() as f64;
                for g in grads.iter_mut() {
                    for v in g.data.iter_mut() {
                        *v *= scale;
                    }
                }
                let mut gs: Vec<&mut Matrix> = grads.iter_mut().collect();
                clip_global_norm(&mut gs, config.clip_norm);
                let gs: Vec<&Matrix> = gs.into_iter().map(|g| &*g).collect();
                let mut ps = [
                    &mut self.key_memory,
                    &mut self.key_embed,
                    &mut self.value_embed,
                    &mut self.init_value_memory,
                    &mut self.w_e,
                    &mut self.b_e,
                    &mut self.w_a,
                    &mut self.b_a,
                    &mut self.w_1,
                    &mut self.b_1,
                    &mut self.w_2,
                    &mut self.b_2,
                ];
                optimizer.step(&mut ps, &gs)?;
            }
            epoch_losses.push(epoch_loss / usable.len() as f64);
        }
        Ok(TrainLog {
            epoch_losses,
            warnings: Vec::new(),
        })
    }
}

#[inline]
fn value_row(q: usize, correct: u8, n: usize) -> usize {
    // Correct response -> row q; incorrect -> row q + N.
    q + n * usize::from(correct == 0)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, Interaction, SkillOrdering, SyntheticSpec};
    use crate::numerics::{finite_diff_check, GradCheckConfig};

    fn seq_of(pairs: &[(usize, u8)]) -> InteractionSequence {
        InteractionSequence {
            student_id: "t".into(),
            interactions: pairs.iter().map(|&(s, c)| Interaction::new(s, c)).collect(),
        }
    }

    #[test]
    fn identical_key_rows_give_uniform_attention() {
        let mut m = DkvmnModel::new(3, 4, 5, 5, 5, 0);
        for i in 0..4 {
            let row: Vec<f64> = (0..5).map(|j| 0.1 * j as f64).collect();
            m.key_memory.row_mut(i).copy_from_slice(&row);
        }
        let w = m.correlation_weight(1).unwrap();
        for &x in &w {
            assert_eq!(x, 0.25);
        }
    }

    #[test]
    fn single_slot_attention_is_one() {
        let m = DkvmnModel::new(2, 1, 3, 3, 3, 1);
        assert_eq!(m.correlation_weight(0).unwrap(), vec![1.0]);
    }

    #[test]
    fn attention_sums_to_one_for_every_skill() {
        let m = DkvmnModel::new(10, 6, 8, 8, 8, 2);
        for q in 0..10 {
            let w = m.correlation_weight(q).unwrap();
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
        assert!(m.correlation_weight(10).is_err());
    }

    #[test]
    fn read_examples() {
        let m = DkvmnModel::new(2, 2, 2, 2, 2, 0);
        let mem = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.read(&mem, &[1.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(m.read(&mem, &[0.5, 0.5]), vec![0.5, 0.5]);
        let zeros = Matrix::zeros(2, 2);
        assert_eq!(m.read(&zeros, &[0.3, 0.7]), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_head_weights_predict_half() {
        let mut m = DkvmnModel::new(3, 4, 5, 5, 5, 3);
        m.w_1.fill(0.0);
        m.b_1.fill(0.0);
        m.w_2.fill(0.0);
        m.b_2.fill(0.0);
        let p = m.predict(&m.init_value_memory, 2).unwrap();
        assert_eq!(p, 0.5);
    }

    /// Independent evaluation of the whole read-and-predict path using
    /// only Matrix primitives.
    #[test]
    fn predict_matches_matrix_level_reference() {
        let m = DkvmnModel::new(4, 3, 5, 6, 7, 9);
        let mem = {
            let mut rng = Rng::new(10);
            init_params(3, 6, InitScheme::Gaussian, &mut rng)
        };
        for q in 0..4 {
            // softmax(M_k k) -> wᵀ M_v -> heads, all via matmul.
            let k = Matrix::col_vec(m.key_embed.row(q));
            let logits = m.key_memory.matmul(&k).unwrap();
            let w = softmax(&logits.data);
            let w_row = Matrix::from_vec(1, 3, w.clone());
            let r = w_row.matmul(&mem).unwrap();
            let feat = Matrix::col_vec(r.row(0))
                .concat_rows(&Matrix::col_vec(m.key_embed.row(q)))
                .unwrap();
            let u: Vec<f64> = m
                .w_1
                .matmul(&feat)
                .unwrap()
                .add(&m.b_1)
                .unwrap()
                .data
                .iter()
                .map(|z| z.tanh())
                .collect();
            let z2 = m
                .w_2
                .matmul(&Matrix::col_vec(&u))
                .unwrap()
                .add(&m.b_2)
                .unwrap()
                .data[0];
            let want = sigmoid(z2);
            let got = m.predict(&mem, q).unwrap();
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            assert!(got > 0.0 && got < 1.0);
        }
    }

    #[test]
    fn near_zero_erase_and_add_leave_memory_unchanged() {
        let mut m = DkvmnModel::new(3, 4, 5, 5, 5, 4);
        m.w_e.fill(0.0);
        m.b_e.fill(-30.0); // erase = sigmoid(-30) ~ 1e-13
        m.w_a.fill(0.0);
        m.b_a.fill(0.0); // add = tanh(0) = 0
        let before = m.init_value_memory.clone();
        let after = m.write(&before, 1, 1).unwrap();
        for (a, b) in after.data.iter().zip(&before.data) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn zero_weight_slots_are_bitwise_untouched() {
        let m = DkvmnModel::new(3, 4, 5, 5, 5, 5);
        let before = m.init_value_memory.clone();
        let w = [0.0, 0.7, 0.0, 0.3];
        let after = m.write_with(&before, &w, 2, 0);
        for i in [0usize, 2] {
            for (a, b) in after.row(i).iter().zip(before.row(i)) {
                assert_eq!(a.to_bits(), b.to_bits(), "slot {i} moved");
            }
        }
        for (a, b) in after.row(1).iter().zip(before.row(1)) {
            assert_ne!(a.to_bits(), b.to_bits(), "slot 1 should move");
        }
    }

    #[test]
    fn saturated_erase_with_one_hot_attention_replaces_the_slot() {
        let mut m = DkvmnModel::new(2, 3, 4, 4, 4, 6);
        m.w_e.fill(0.0);
        m.b_e.fill(40.0); // sigmoid(40) rounds to exactly 1.0
        m.w_a.fill(0.0);
        m.b_a.fill(0.25); // add = tanh(0.25) everywhere
        let before = m.init_value_memory.clone();
        let w = [0.0, 1.0, 0.0];
        let after = m.write_with(&before, &w, 0, 1);
        let add = (0.25f64).tanh();
        for &x in after.row(1) {
            assert!((x - add).abs() < 1e-15);
        }
        for i in [0usize, 2] {
            assert_eq!(after.row(i), before.row(i));
        }
    }

    #[test]
    fn attention_is_independent_of_correctness() {
        let m = DkvmnModel::new(5, 6, 7, 7, 7, 7);
        let correct = m.snapshot_run(&seq_of(&[(3, 1)])).unwrap();
        let incorrect = m.snapshot_run(&seq_of(&[(3, 0)])).unwrap();
        // Bit-equality, not approximate: the weight computation never sees
        // the response.
        for (a, b) in correct[0].attention.iter().zip(&incorrect[0].attention) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // Same support set under the 1/(2M) threshold.
        let support = |w: &[f64]| -> Vec<usize> {
            w.iter()
                .enumerate()
                .filter(|(_, &x)| x > 1.0 / 12.0)
                .map(|(i, _)| i)
                .collect()
        };
        assert_eq!(
            support(&correct[0].attention),
            support(&incorrect[0].attention)
        );
        // The value memories must differ, though: different response rows.
        assert_ne!(correct[0].value_memory, incorrect[0].value_memory);
    }

    #[test]
    fn snapshot_deltas_telescope_bitwise() {
        let m = DkvmnModel::new(4, 5, 6, 6, 6, 8);
        let seq = seq_of(&[(0, 1), (2, 0), (1, 1), (0, 0), (3, 1)]);
        let snaps = m.snapshot_run(&seq).unwrap();
        assert_eq!(snaps.len(), 5);
        let mut prev = m.init_value_memory.clone();
        for snap in &snaps {
            for ((d, cur), before) in snap
                .delta
                .data
                .iter()
                .zip(&snap.value_memory.data)
                .zip(&prev.data)
            {
                assert_eq!(d.to_bits(), (cur - before).to_bits());
            }
            prev = snap.value_memory.clone();
        }
    }

    #[test]
    fn key_memory_is_static_across_a_forward_pass() {
        let m = DkvmnModel::new(4, 5, 6, 6, 6, 11);
        let before = m.key_memory.clone();
        let _ = m
            .forward(&seq_of(&[(0, 1), (1, 0), (2, 1), (3, 0)]), true)
            .unwrap();
        assert_eq!(m.key_memory, before);
    }

    #[test]
    fn loss_matches_hand_rolled_bce() {
        let m = DkvmnModel::new(5, 4, 6, 6, 6, 12);
        let seq = seq_of(&[(0, 1), (4, 0), (2, 1), (2, 0)]);
        let run = m.forward(&seq, false).unwrap();
        let mut want = 0.0;
        for (p, it) in run.probabilities.iter().zip(&seq.interactions) {
            let label = f64::from(it.correct);
            want += -(label * p.ln() + (1.0 - label) * (1.0 - p).ln());
        }
        want /= 4.0;
        let got = m.loss(&seq).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        // The acceptance-suite shape: M=4, d_k=d_v=6, N=5, six steps.
        let m = DkvmnModel::new(5, 4, 6, 6, 6, 21);
        let seq = seq_of(&[(0, 1), (3, 0), (2, 1), (0, 0), (4, 1), (2, 0)]);
        let (_, grads) = m.loss_and_gradients(&seq).unwrap();
        let params: Vec<Matrix> = m.params().iter().map(|&p| p.clone()).collect();
        let err = finite_diff_check(
            |ps| m.with_params(ps).loss(&seq).unwrap(),
            &params,
            &grads,
            &GradCheckConfig::default(),
        );
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let spec = SyntheticSpec::with_varied_skills(10, 4, (3, 8), SkillOrdering::Random, 14);
        let data = generate_synthetic(&spec).unwrap();
        let mut m = DkvmnModel::new(4, 3, 5, 5, 5, 15);
        let before = m.clone();
        let config = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            optimizer: OptimizerKind::Sgd,
            seed: 15,
            ..TrainConfig::default()
        };
        m.train(&data, &config).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let spec = SyntheticSpec::with_varied_skills(40, 5, (5, 12), SkillOrdering::Blocked, 16);
        let data = generate_synthetic(&spec).unwrap();
        let config = TrainConfig {
            epochs: 6,
            learning_rate: 5e-3,
            batch_size: 8,
            seed: 16,
            ..TrainConfig::default()
        };
        let mut a = DkvmnModel::new(5, 4, 8, 8, 8, 17);
        let log = a.train(&data, &config).unwrap();
        assert!(
            log.epoch_losses.last().unwrap() < &log.epoch_losses[0],
            "loss did not fall: {:?}",
            log.epoch_losses
        );
        let mut b = DkvmnModel::new(5, 4, 8, 8, 8, 17);
        b.train(&data, &config).unwrap();
        assert_eq!(a.model_hash(), b.model_hash());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DkvmnModel::new(4, 3, 5, 6, 7, 23);
        let hash = m.save(dir.path()).unwrap();
        assert_eq!(hash, m.model_hash());
        let loaded = DkvmnModel::load(dir.path()).unwrap();
        assert_eq!(loaded, m);
    }
}
