//! The recognition network and its hand-written backward pass.
//!
//! Layout: a bidirectional LSTM encodes each observed series into a
//! fixed-width embedding; a multi-head attention block with a learnable
//! query matrix pools the per-series embeddings of one process into a
//! global representation whose width is independent of the path count;
//! three feed-forward heads map that representation to the log rates,
//! log rate variances and initial-distribution logits.
//!
//! Series are packed by descending length, so padded positions are never
//! touched: embeddings are exactly independent of padding, and the
//! recurrence cost tracks the true token count. Gradients for every
//! parameter tensor are validated against central finite differences in
//! the tests.

use mjp_core::{AdjacencyMatrix, ObservedSeries, ProbabilityVector, RateMatrix};
use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{InferError, Result};
use crate::series::{normalize_inputs, write_tokens};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// (token_width, 4H): input projection, gate order i, f, g, o.
    pub wx: Array2<f64>,
    /// (H, 4H): recurrent projection.
    pub wh: Array2<f64>,
    /// (1, 4H).
    pub b: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnHeadParams {
    /// (2H, d_k)
    pub w_key: Array2<f64>,
    /// (2H, d_k)
    pub w_value: Array2<f64>,
    /// (q, d_k): the learnable query matrix.
    pub query: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// Weight per layer; tanh after every layer except the last.
    pub weights: Vec<Array2<f64>>,
    /// (1, width) biases.
    pub biases: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub attn: Vec<AttnHeadParams>,
    pub phi_rate: MlpParams,
    pub phi_var: MlpParams,
    pub phi_init: MlpParams,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
}

fn lstm_init(rng: &mut ChaCha8Rng, d_in: usize, hidden: usize) -> LstmParams {
    let mut b = Array2::zeros((1, 4 * hidden));
    // Forget-gate bias starts at one.
    b.slice_mut(s![0, hidden..2 * hidden]).fill(1.0);
    LstmParams {
        wx: glorot(rng, d_in, 4 * hidden),
        wh: glorot(rng, hidden, 4 * hidden),
        b,
    }
}

fn mlp_init(rng: &mut ChaCha8Rng, d_in: usize, hidden: &[usize], d_out: usize) -> MlpParams {
    let mut widths = vec![d_in];
    widths.extend_from_slice(hidden);
    widths.push(d_out);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in widths.windows(2) {
        weights.push(glorot(rng, w[0], w[1]));
        biases.push(Array2::zeros((1, w[1])));
    }
    MlpParams { weights, biases }
}

impl NetParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_in = config.token_width();
        let h = config.encoder_hidden;
        let d_model = config.embedding_width();
        let rep = config.representation_width();
        let fwd = lstm_init(&mut rng, d_in, h);
        let bwd = lstm_init(&mut rng, d_in, h);
        let attn = (0..config.head_count)
            .map(|_| AttnHeadParams {
                w_key: glorot(&mut rng, d_model, config.key_width),
                w_value: glorot(&mut rng, d_model, config.key_width),
                query: glorot(&mut rng, config.query_count, config.key_width),
            })
            .collect();
        let phi_rate = mlp_init(&mut rng, rep, &config.head_widths, config.off_diagonal_count());
        let phi_var = mlp_init(&mut rng, rep, &config.head_widths, config.off_diagonal_count());
        let phi_init = mlp_init(&mut rng, rep, &config.head_widths, config.c_max);
        Self {
            fwd,
            bwd,
            attn,
            phi_rate,
            phi_var,
            phi_init,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let zl = |l: &LstmParams| LstmParams {
            wx: z(&l.wx),
            wh: z(&l.wh),
            b: z(&l.b),
        };
        let zm = |m: &MlpParams| MlpParams {
            weights: m.weights.iter().map(&z).collect(),
            biases: m.biases.iter().map(&z).collect(),
        };
        Self {
            fwd: zl(&self.fwd),
            bwd: zl(&self.bwd),
            attn: self
                .attn
                .iter()
                .map(|h| AttnHeadParams {
                    w_key: z(&h.w_key),
                    w_value: z(&h.w_value),
                    query: z(&h.query),
                })
                .collect(),
            phi_rate: zm(&self.phi_rate),
            phi_var: zm(&self.phi_var),
            phi_init: zm(&self.phi_init),
        }
    }

    /// Canonical tensor ordering shared by the optimizer, checkpoints and
    /// the gradient checks.
    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![
            ("encoder.fwd.wx".into(), &self.fwd.wx),
            ("encoder.fwd.wh".into(), &self.fwd.wh),
            ("encoder.fwd.b".into(), &self.fwd.b),
            ("encoder.bwd.wx".into(), &self.bwd.wx),
            ("encoder.bwd.wh".into(), &self.bwd.wh),
            ("encoder.bwd.b".into(), &self.bwd.b),
        ];
        for (i, h) in self.attn.iter().enumerate() {
            out.push((format!("attn.{i}.w_key"), &h.w_key));
            out.push((format!("attn.{i}.w_value"), &h.w_value));
            out.push((format!("attn.{i}.query"), &h.query));
        }
        for (name, mlp) in [
            ("phi_rate", &self.phi_rate),
            ("phi_var", &self.phi_var),
            ("phi_init", &self.phi_init),
        ] {
            for (i, (w, b)) in mlp.weights.iter().zip(&mlp.biases).enumerate() {
                out.push((format!("{name}.{i}.w"), w));
                out.push((format!("{name}.{i}.b"), b));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = vec![
            &mut self.fwd.wx,
            &mut self.fwd.wh,
            &mut self.fwd.b,
            &mut self.bwd.wx,
            &mut self.bwd.wh,
            &mut self.bwd.b,
        ];
        for h in self.attn.iter_mut() {
            out.push(&mut h.w_key);
            out.push(&mut h.w_value);
            out.push(&mut h.query);
        }
        for mlp in [&mut self.phi_rate, &mut self.phi_var, &mut self.phi_init] {
            for (w, b) in mlp.weights.iter_mut().zip(mlp.biases.iter_mut()) {
                out.push(w);
                out.push(b);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

/// Ground truth attached to a record when assembling training batches.
pub struct RecordTruth<'a> {
    pub rate_matrix: &'a RateMatrix,
    pub adjacency: &'a AdjacencyMatrix,
    pub pi0: &'a ProbabilityVector,
}

/// One record's contribution to a batch: its selected series (raw time
/// scale) and optional ground truth.
pub struct RecordEntry<'a> {
    pub series: Vec<&'a ObservedSeries>,
    pub truth: Option<RecordTruth<'a>>,
}

/// Training targets in normalized units, padded to `c_max`.
pub struct BatchTargets {
    /// (B, M) normalized rates; zero where absent.
    pub rates: Array2<f64>,
    /// (B, M) 1.0 where the link is present.
    pub present: Array2<f64>,
    /// (B, c_max) zero-padded initial distributions.
    pub pi0: Array2<f64>,
}

/// A fully packed batch ready for the network.
pub struct AssembledBatch {
    /// (t_max * S, token_width), time-major over sorted series.
    tokens: Array2<f64>,
    /// Active series count per time step (sorted by length, descending).
    n_active: Vec<usize>,
    /// Sorted position of each original series index (record-major).
    sorted_pos: Vec<usize>,
    pub n_records: usize,
    pub paths_per_record: usize,
    /// Per-record normalization scale.
    pub tau_max: Vec<f64>,
    pub targets: Option<BatchTargets>,
}

/// Row-major off-diagonal enumeration: (i, j), i != j.
pub fn off_diagonal_index(i: usize, j: usize, c_max: usize) -> usize {
    debug_assert!(i != j && i < c_max && j < c_max);
    i * (c_max - 1) + if j < i { j } else { j - 1 }
}

/// Normalize per record, featurize and pack a batch. All records must
/// carry the same number of series; series must fit the model grid cap.
pub fn assemble_batch(records: &[RecordEntry<'_>], config: &ModelConfig) -> Result<AssembledBatch> {
    if records.is_empty() {
        return Err(InferError::Empty("record batch"));
    }
    let k = records[0].series.len();
    if k == 0 {
        return Err(InferError::Empty("paths in record"));
    }
    if records.iter().any(|r| r.series.len() != k) {
        return Err(InferError::BadConfig(
            "all records in a batch must hold the same path count".into(),
        ));
    }

    let n_records = records.len();
    let s_total = n_records * k;
    let width = config.token_width();

    let mut normalized: Vec<ObservedSeries> = Vec::with_capacity(s_total);
    let mut tau_max = Vec::with_capacity(n_records);
    for rec in records {
        let owned: Vec<ObservedSeries> = rec.series.iter().map(|&s| s.clone()).collect();
        let (norm, tm) = normalize_inputs(&owned)?;
        tau_max.push(tm);
        normalized.extend(norm);
    }
    for s in &normalized {
        if s.len() > config.l_max {
            return Err(InferError::SeriesTooLong {
                len: s.len(),
                l_max: config.l_max,
            });
        }
    }

    // Sort series by length, descending (stable for determinism).
    let mut order: Vec<usize> = (0..s_total).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(normalized[i].len()));
    let mut sorted_pos = vec![0usize; s_total];
    for (pos, &orig) in order.iter().enumerate() {
        sorted_pos[orig] = pos;
    }

    let t_max = normalized[order[0]].len();
    let mut n_active = vec![0usize; t_max];
    for s in &normalized {
        for t in 0..s.len() {
            n_active[t] += 1;
        }
    }

    let mut tokens = Array2::zeros((t_max * s_total, width));
    for (pos, &orig) in order.iter().enumerate() {
        let series = &normalized[orig];
        // Scatter the series' token rows over the time-major layout.
        let mut block = Array2::zeros((series.len(), width));
        write_tokens(series, config.c_max, &mut block.view_mut())?;
        for t in 0..series.len() {
            tokens
                .row_mut(t * s_total + pos)
                .assign(&block.row(t));
        }
    }

    let targets = if records.iter().all(|r| r.truth.is_some()) {
        let m = config.off_diagonal_count();
        let mut rates = Array2::zeros((n_records, m));
        let mut present = Array2::zeros((n_records, m));
        let mut pi0 = Array2::zeros((n_records, config.c_max));
        for (b, rec) in records.iter().enumerate() {
            let truth = rec.truth.as_ref().unwrap();
            let c = truth.rate_matrix.dim();
            if c > config.c_max {
                return Err(InferError::StateIndexTooLarge {
                    state: c - 1,
                    c_max: config.c_max,
                });
            }
            for i in 0..c {
                for j in 0..c {
                    if i == j {
                        continue;
                    }
                    if truth.adjacency.get(i, j) {
                        let idx = off_diagonal_index(i, j, config.c_max);
                        present[[b, idx]] = 1.0;
                        rates[[b, idx]] = truth.rate_matrix.get(i, j) * tau_max[b];
                    }
                }
            }
            for i in 0..c {
                pi0[[b, i]] = truth.pi0.get(i);
            }
        }
        Some(BatchTargets { rates, present, pi0 })
    } else {
        None
    };

    Ok(AssembledBatch {
        tokens,
        n_active,
        sorted_pos,
        n_records,
        paths_per_record: k,
        tau_max,
        targets,
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-step stash of one LSTM direction (rows = active series).
struct StepStash {
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    c: Array2<f64>,
    h: Array2<f64>,
}

struct LstmRun {
    /// (S, H): hidden state after each series' last processed token.
    final_h: Array2<f64>,
    steps: Vec<StepStash>,
}

fn lstm_forward(
    p: &LstmParams,
    tokens: &Array2<f64>,
    n_active: &[usize],
    s_total: usize,
    reverse: bool,
) -> LstmRun {
    let t_max = n_active.len();
    let hidden = p.wh.nrows();
    let mut h = Array2::zeros((s_total, hidden));
    let mut c = Array2::zeros((s_total, hidden));
    let mut steps: Vec<StepStash> = Vec::with_capacity(t_max);

    let visit: Vec<usize> = if reverse {
        (0..t_max).rev().collect()
    } else {
        (0..t_max).collect()
    };

    for &t in &visit {
        let n = n_active[t];
        let x = tokens.slice(s![t * s_total..t * s_total + n, ..]);
        let mut z = x.dot(&p.wx);
        z = z + h.slice(s![0..n, ..]).dot(&p.wh);
        z = z + &p.b;

        let gi = z.slice(s![.., 0..hidden]).mapv(sigmoid);
        let gf = z.slice(s![.., hidden..2 * hidden]).mapv(sigmoid);
        let gg = z.slice(s![.., 2 * hidden..3 * hidden]).mapv(f64::tanh);
        let go = z.slice(s![.., 3 * hidden..4 * hidden]).mapv(sigmoid);

        let c_new = &gf * &c.slice(s![0..n, ..]) + &gi * &gg;
        let h_new = &go * &c_new.mapv(f64::tanh);

        c.slice_mut(s![0..n, ..]).assign(&c_new);
        h.slice_mut(s![0..n, ..]).assign(&h_new);
        steps.push(StepStash {
            i: gi,
            f: gf,
            g: gg,
            o: go,
            c: c_new,
            h: h_new,
        });
    }

    LstmRun { final_h: h, steps }
}

fn lstm_backward(
    p: &LstmParams,
    grad: &mut LstmParams,
    tokens: &Array2<f64>,
    n_active: &[usize],
    s_total: usize,
    reverse: bool,
    run: &LstmRun,
    d_final_h: &Array2<f64>,
) {
    let t_max = n_active.len();
    let hidden = p.wh.nrows();
    let mut dh = d_final_h.clone();
    let mut dc = Array2::<f64>::zeros((s_total, hidden));

    // Visit steps in the reverse of the forward order; `steps[k]` was
    // produced at visit index k.
    let visit: Vec<usize> = if reverse {
        (0..t_max).rev().collect()
    } else {
        (0..t_max).collect()
    };

    for k in (0..t_max).rev() {
        let t = visit[k];
        let n = n_active[t];
        let st = &run.steps[k];

        // Previous-step state for the active rows (zeros where the row
        // had not yet entered the recurrence).
        let mut h_prev = Array2::<f64>::zeros((n, hidden));
        let mut c_prev = Array2::<f64>::zeros((n, hidden));
        if k > 0 {
            let prev = &run.steps[k - 1];
            let n_prev = prev.h.nrows().min(n);
            h_prev
                .slice_mut(s![0..n_prev, ..])
                .assign(&prev.h.slice(s![0..n_prev, ..]));
            c_prev
                .slice_mut(s![0..n_prev, ..])
                .assign(&prev.c.slice(s![0..n_prev, ..]));
        }

        let dh_t = dh.slice(s![0..n, ..]).to_owned();
        let mut dc_t = dc.slice(s![0..n, ..]).to_owned();

        let tanh_c = st.c.mapv(f64::tanh);
        let d_o = &dh_t * &tanh_c;
        dc_t = dc_t + &dh_t * &st.o * tanh_c.mapv(|x| 1.0 - x * x);

        let d_i = &dc_t * &st.g;
        let d_f = &dc_t * &c_prev;
        let d_g = &dc_t * &st.i;

        let mut dz = Array2::<f64>::zeros((n, 4 * hidden));
        dz.slice_mut(s![.., 0..hidden])
            .assign(&(&d_i * &st.i * &st.i.mapv(|x| 1.0 - x)));
        dz.slice_mut(s![.., hidden..2 * hidden])
            .assign(&(&d_f * &st.f * &st.f.mapv(|x| 1.0 - x)));
        dz.slice_mut(s![.., 2 * hidden..3 * hidden])
            .assign(&(&d_g * &st.g.mapv(|x| 1.0 - x * x)));
        dz.slice_mut(s![.., 3 * hidden..4 * hidden])
            .assign(&(&d_o * &st.o * &st.o.mapv(|x| 1.0 - x)));

        let x = tokens.slice(s![t * s_total..t * s_total + n, ..]);
        grad.wx = &grad.wx + &x.t().dot(&dz);
        grad.wh = &grad.wh + &h_prev.t().dot(&dz);
        let db = dz.sum_axis(Axis(0));
        grad.b = &grad.b + &db.insert_axis(Axis(0));

        // Gradients flowing to the previous step.
        dh.slice_mut(s![0..n, ..]).assign(&dz.dot(&p.wh.t()));
        dc.slice_mut(s![0..n, ..]).assign(&(&dc_t * &st.f));
    }
}

struct HeadStash {
    /// (K, d_k)
    keys: Array2<f64>,
    /// (K, d_k)
    values: Array2<f64>,
    /// (q, K) softmax attention weights.
    probs: Array2<f64>,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct Forward {
    fwd_run: LstmRun,
    bwd_run: LstmRun,
    /// (S, 2H) in original (record-major) series order.
    pub emb: Array2<f64>,
    attn_stash: Vec<Vec<HeadStash>>,
    /// (B, representation_width)
    pub rep: Array2<f64>,
    mlp_rate: Vec<Array2<f64>>,
    mlp_var: Vec<Array2<f64>>,
    mlp_init: Vec<Array2<f64>>,
    /// (B, M) log normalized rates.
    pub phi_rate: Array2<f64>,
    /// (B, M) log normalized rate variances.
    pub phi_var: Array2<f64>,
    /// (B, c_max) initial-distribution logits.
    pub phi_init: Array2<f64>,
}

fn mlp_forward(p: &MlpParams, input: &Array2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
    let n_layers = p.weights.len();
    let mut acts = Vec::with_capacity(n_layers);
    let mut a = input.clone();
    for (l, (w, b)) in p.weights.iter().zip(&p.biases).enumerate() {
        acts.push(a.clone());
        let mut z = a.dot(w);
        z = z + b;
        a = if l + 1 < n_layers { z.mapv(f64::tanh) } else { z };
    }
    (acts, a)
}

fn mlp_backward(
    p: &MlpParams,
    grad: &mut MlpParams,
    acts: &[Array2<f64>],
    d_out: &Array2<f64>,
) -> Array2<f64> {
    let n_layers = p.weights.len();
    let mut dz = d_out.clone();
    let mut d_input = Array2::zeros((0, 0));
    for l in (0..n_layers).rev() {
        if l + 1 < n_layers {
            // dz currently holds the gradient on the tanh output of
            // layer l; convert through the activation. The activation
            // value is the input stored for layer l + 1.
            let a = &acts[l + 1];
            dz = &dz * &a.mapv(|x| 1.0 - x * x);
        }
        grad.weights[l] = &grad.weights[l] + &acts[l].t().dot(&dz);
        let db = dz.sum_axis(Axis(0));
        grad.biases[l] = &grad.biases[l] + &db.insert_axis(Axis(0));
        dz = dz.dot(&p.weights[l].t());
        if l == 0 {
            d_input = dz.clone();
        }
    }
    d_input
}

/// Full forward pass over an assembled batch.
pub fn forward(params: &NetParams, config: &ModelConfig, batch: &AssembledBatch) -> Result<Forward> {
    let s_total = batch.n_records * batch.paths_per_record;

    let fwd_run = lstm_forward(&params.fwd, &batch.tokens, &batch.n_active, s_total, false);
    let bwd_run = lstm_forward(&params.bwd, &batch.tokens, &batch.n_active, s_total, true);

    // Embeddings back in original series order.
    let h = config.encoder_hidden;
    let mut emb = Array2::zeros((s_total, 2 * h));
    for orig in 0..s_total {
        let pos = batch.sorted_pos[orig];
        emb.slice_mut(s![orig, 0..h]).assign(&fwd_run.final_h.row(pos));
        emb.slice_mut(s![orig, h..2 * h]).assign(&bwd_run.final_h.row(pos));
    }

    // Learnable-query attention per record and head.
    let (q, dk) = (config.query_count, config.key_width);
    let scale = 1.0 / (dk as f64).sqrt();
    let mut rep = Array2::zeros((batch.n_records, config.representation_width()));
    let mut attn_stash = Vec::with_capacity(batch.n_records);
    for b in 0..batch.n_records {
        let rows = emb.slice(s![
            b * batch.paths_per_record..(b + 1) * batch.paths_per_record,
            ..
        ]);
        let mut heads = Vec::with_capacity(params.attn.len());
        for (hd, head) in params.attn.iter().enumerate() {
            let keys = rows.dot(&head.w_key);
            let values = rows.dot(&head.w_value);
            let mut scores = head.query.dot(&keys.t());
            scores.mapv_inplace(|x| x * scale);
            // Stable row softmax over the path axis.
            let mut probs = scores;
            for mut row in probs.rows_mut() {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|x| (x - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|x| x / sum);
            }
            let pooled = probs.dot(&values); // (q, d_k)
            let offset = hd * q * dk;
            for qi in 0..q {
                rep.slice_mut(s![b, offset + qi * dk..offset + (qi + 1) * dk])
                    .assign(&pooled.row(qi));
            }
            heads.push(HeadStash { keys, values, probs });
        }
        attn_stash.push(heads);
    }

    let (mlp_rate, phi_rate) = mlp_forward(&params.phi_rate, &rep);
    let (mlp_var, phi_var) = mlp_forward(&params.phi_var, &rep);
    let (mlp_init, phi_init) = mlp_forward(&params.phi_init, &rep);

    for (name, out) in [
        ("phi_rate", &phi_rate),
        ("phi_var", &phi_var),
        ("phi_init", &phi_init),
    ] {
        if out.iter().any(|x| !x.is_finite()) {
            return Err(InferError::NonFinite(match name {
                "phi_rate" => "rate head output",
                "phi_var" => "variance head output",
                _ => "initial-distribution head output",
            }));
        }
    }

    Ok(Forward {
        fwd_run,
        bwd_run,
        emb,
        attn_stash,
        rep,
        mlp_rate,
        mlp_var,
        mlp_init,
        phi_rate,
        phi_var,
        phi_init,
    })
}

/// Backward pass: gradients of a scalar loss with respect to every
/// parameter, given the loss gradients on the three head outputs.
pub fn backward(
    params: &NetParams,
    config: &ModelConfig,
    batch: &AssembledBatch,
    fx: &Forward,
    d_phi_rate: &Array2<f64>,
    d_phi_var: &Array2<f64>,
    d_phi_init: &Array2<f64>,
) -> NetParams {
    let mut grads = params.zeros_like();
    let s_total = batch.n_records * batch.paths_per_record;
    let h = config.encoder_hidden;
    let (q, dk) = (config.query_count, config.key_width);
    let scale = 1.0 / (dk as f64).sqrt();

    let mut d_rep = mlp_backward(&params.phi_rate, &mut grads.phi_rate, &fx.mlp_rate, d_phi_rate);
    d_rep = d_rep + mlp_backward(&params.phi_var, &mut grads.phi_var, &fx.mlp_var, d_phi_var);
    d_rep = d_rep + mlp_backward(&params.phi_init, &mut grads.phi_init, &fx.mlp_init, d_phi_init);

    let mut d_emb = Array2::<f64>::zeros((s_total, 2 * h));
    for b in 0..batch.n_records {
        let rows = fx.emb.slice(s![
            b * batch.paths_per_record..(b + 1) * batch.paths_per_record,
            ..
        ]);
        for (hd, head) in params.attn.iter().enumerate() {
            let stash = &fx.attn_stash[b][hd];
            let offset = hd * q * dk;
            let mut d_pooled = Array2::<f64>::zeros((q, dk));
            for qi in 0..q {
                d_pooled
                    .row_mut(qi)
                    .assign(&d_rep.slice(s![b, offset + qi * dk..offset + (qi + 1) * dk]));
            }
            let d_values = stash.probs.t().dot(&d_pooled);
            let d_probs = d_pooled.dot(&stash.values.t());
            // Softmax backward per query row.
            let mut d_scores = Array2::<f64>::zeros(d_probs.raw_dim());
            for qi in 0..q {
                let p = stash.probs.row(qi);
                let dp = d_probs.row(qi);
                let dot: f64 = p.iter().zip(dp).map(|(&a, &b)| a * b).sum();
                for kx in 0..p.len() {
                    d_scores[[qi, kx]] = p[kx] * (dp[kx] - dot) * scale;
                }
            }
            let attn_grad = &mut grads.attn[hd];
            attn_grad.query = &attn_grad.query + &d_scores.dot(&stash.keys);
            let d_keys = d_scores.t().dot(&head.query);
            attn_grad.w_key = &attn_grad.w_key + &rows.t().dot(&d_keys);
            attn_grad.w_value = &attn_grad.w_value + &rows.t().dot(&d_values);

            let d_rows = d_keys.dot(&head.w_key.t()) + d_values.dot(&head.w_value.t());
            let mut target = d_emb.slice_mut(s![
                b * batch.paths_per_record..(b + 1) * batch.paths_per_record,
                ..
            ]);
            target += &d_rows;
        }
    }

    // Scatter embedding gradients back to sorted order, split directions.
    let mut d_final_fwd = Array2::<f64>::zeros((s_total, h));
    let mut d_final_bwd = Array2::<f64>::zeros((s_total, h));
    for orig in 0..s_total {
        let pos = batch.sorted_pos[orig];
        d_final_fwd.row_mut(pos).assign(&d_emb.slice(s![orig, 0..h]));
        d_final_bwd.row_mut(pos).assign(&d_emb.slice(s![orig, h..2 * h]));
    }

    lstm_backward(
        &params.fwd,
        &mut grads.fwd,
        &batch.tokens,
        &batch.n_active,
        s_total,
        false,
        &fx.fwd_run,
        &d_final_fwd,
    );
    lstm_backward(
        &params.bwd,
        &mut grads.bwd,
        &batch.tokens,
        &batch.n_active,
        s_total,
        true,
        &fx.bwd_run,
        &d_final_bwd,
    );

    grads
}

/// Encode a single series (already normalized) into its embedding.
pub fn encode_series(
    params: &NetParams,
    config: &ModelConfig,
    series: &ObservedSeries,
) -> Result<Vec<f64>> {
    if series.len() > config.l_max {
        return Err(InferError::SeriesTooLong {
            len: series.len(),
            l_max: config.l_max,
        });
    }
    let mut tokens = Array2::zeros((series.len(), config.token_width()));
    write_tokens(series, config.c_max, &mut tokens.view_mut())?;
    let n_active = vec![1usize; series.len()];
    let fwd = lstm_forward(&params.fwd, &tokens, &n_active, 1, false);
    let bwd = lstm_forward(&params.bwd, &tokens, &n_active, 1, true);
    let mut out = Vec::with_capacity(config.embedding_width());
    out.extend(fwd.final_h.row(0).iter());
    out.extend(bwd.final_h.row(0).iter());
    Ok(out)
}

/// Pool a set of series embeddings (rows of `embeddings`) into the
/// global representation; permutation-invariant in the rows, output
/// width independent of the row count.
pub fn attend_paths(
    params: &NetParams,
    config: &ModelConfig,
    embeddings: &Array2<f64>,
) -> Result<Vec<f64>> {
    if embeddings.nrows() == 0 {
        return Err(InferError::Empty("path embeddings"));
    }
    let (qn, dk) = (config.query_count, config.key_width);
    let scale = 1.0 / (dk as f64).sqrt();
    let mut rep = Vec::with_capacity(config.representation_width());
    for head in &params.attn {
        let keys = embeddings.dot(&head.w_key);
        let values = embeddings.dot(&head.w_value);
        let mut probs = head.query.dot(&keys.t());
        probs.mapv_inplace(|x| x * scale);
        for mut row in probs.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        let pooled = probs.dot(&values);
        for qi in 0..qn {
            rep.extend(pooled.row(qi).iter());
        }
    }
    Ok(rep)
}
