//! Token-sequence encoder: Bi-GRU over one-hot tokens, pre-LN Transformer
//! blocks whose attention logits take an additive per-key bias, mean pooling.

use rand::Rng;
use thiserror::Error;

use crate::diff::{DiffError, Gru, LayerNorm, Linear, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeqError {
    #[error("invalid sequence encoder config: {0}")]
    InvalidConfig(String),
    #[error("empty token sequence")]
    EmptySequence,
    #[error("sequence of {len} tokens exceeds the maximum length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqConfig {
    pub vocab_size: usize,
    pub gru_hidden: usize,
    /// Stacked Bi-GRU layers; layer `l > 0` reads the `2·gru_hidden` states of layer `l - 1`.
    pub gru_layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_len: usize,
    /// Inner width of the position-wise feed-forward sublayer.
    pub ffn_dim: usize,
}

impl SeqConfig {
    pub fn validate(&self) -> Result<(), SeqError> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("gru_hidden", self.gru_hidden),
            ("gru_layers", self.gru_layers),
            ("model_dim", self.model_dim),
            ("heads", self.heads),
            ("max_len", self.max_len),
            ("ffn_dim", self.ffn_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(SeqError::InvalidConfig(format!("{name} must be positive")));
        }
        if self.model_dim % self.heads != 0 {
            return Err(SeqError::InvalidConfig(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockParams {
    pub ln_attn: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub ln_ffn: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl BlockParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, ffn: usize, rng: &mut R) -> Self {
        Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d, rng),
            query: Linear::new(store, &format!("{name}.W_Q"), d, d, false, rng),
            key: Linear::new(store, &format!("{name}.W_K"), d, d, false, rng),
            value: Linear::new(store, &format!("{name}.W_V"), d, d, false, rng),
            out: Linear::new(store, &format!("{name}.W_O"), d, d, true, rng),
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), d, rng),
            ffn_in: Linear::new(store, &format!("{name}.ffn_in"), d, ffn, true, rng),
            ffn_out: Linear::new(store, &format!("{name}.ffn_out"), ffn, d, true, rng),
        }
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.ln_attn.gain, self.ln_attn.bias, self.ln_ffn.gain, self.ln_ffn.bias];
        for l in [self.query, self.key, self.value, self.out, self.ffn_in, self.ffn_out] {
            ids.extend(l.params());
        }
        ids
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqParams {
    pub config: SeqConfig,
    /// `(forward, backward)` GRU per stacked layer.
    pub grus: Vec<(Gru, Gru)>,
    pub proj: Linear,
    pub blocks: Vec<BlockParams>,
}

impl SeqParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, config: SeqConfig, rng: &mut R) -> Result<Self, SeqError> {
        config.validate()?;
        let (v, g, d) = (config.vocab_size, config.gru_hidden, config.model_dim);
        Ok(Self {
            config,
            grus: (0..config.gru_layers)
                .map(|l| {
                    let input = if l == 0 { v } else { 2 * g };
                    (
                        Gru::new(store, &format!("{name}.gru{l}_fwd"), input, g, rng),
                        Gru::new(store, &format!("{name}.gru{l}_bwd"), input, g, rng),
                    )
                })
                .collect(),
            proj: Linear::new(store, &format!("{name}.proj"), 2 * g, d, true, rng),
            blocks: (0..config.layers)
                .map(|l| BlockParams::new(store, &format!("{name}.block{l}"), d, config.ffn_dim, rng))
                .collect(),
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for g in self.grus.iter().flat_map(|&(f, b)| [f, b]) {
            ids.extend(g.input.params());
            ids.extend(g.hidden.params());
        }
        ids.extend(self.proj.params());
        for b in &self.blocks {
            ids.extend(b.param_ids());
        }
        ids
    }
}

/// Learned map from the bond readout `H_E` to `heads x max_len` key-position
/// biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiasProjection {
    pub linear: Linear,
    pub heads: usize,
    pub max_len: usize,
}

impl BiasProjection {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, heads: usize, max_len: usize, rng: &mut R) -> Self {
        Self {
            linear: Linear::new(store, name, in_dim, heads * max_len, true, rng),
            heads,
            max_len,
        }
    }

    /// One row of `heads · max_len` values per molecule; head `h` owns
    /// columns `h·max_len .. (h+1)·max_len`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h_e: Var) -> Result<Var, DiffError> {
        self.linear.forward(tape, store, h_e)
    }
}

/// Per-head key-position biases of one molecule with `n` active tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBias {
    pub heads: usize,
    pub max_len: usize,
    pub n: usize,
    values: Vec<f64>,
}

impl AttentionBias {
    pub fn new(values: &[f64], heads: usize, max_len: usize, n: usize) -> Result<Self, SeqError> {
        if values.len() != heads * max_len {
            return Err(DiffError::ShapeMismatch {
                op: "attention bias",
                left: [heads, max_len],
                right: [1, values.len()],
            }
            .into());
        }
        if n > max_len {
            return Err(SeqError::SequenceTooLong { len: n, max: max_len });
        }
        Ok(Self { heads, max_len, n, values: values.to_vec() })
    }

    /// Length-`max_len` bias row for `head` with positions `>= n` set to `-inf`.
    pub fn masked(&self, head: usize) -> Vec<f64> {
        let row = &self.values[head * self.max_len..(head + 1) * self.max_len];
        row.iter()
            .enumerate()
            .map(|(i, &v)| if i < self.n { v } else { f64::NEG_INFINITY })
            .collect()
    }
}

/// One-hot token matrix for a batch of sequences, stacked molecule by molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    pub one_hot: Tensor,
    pub spans: Vec<(usize, usize)>,
    pub token_mol: Vec<usize>,
}

impl SeqBatch {
    pub fn new(sequences: &[&[u32]], vocab_size: usize, max_len: usize) -> Result<Self, SeqError> {
        let total: usize = sequences.iter().map(|s| s.len()).sum();
        let mut one_hot = Tensor::zeros(total, vocab_size);
        let mut spans = Vec::with_capacity(sequences.len());
        let mut token_mol = Vec::with_capacity(total);
        let mut row = 0;
        for (m, seq) in sequences.iter().enumerate() {
            if seq.is_empty() {
                return Err(SeqError::EmptySequence);
            }
            if seq.len() > max_len {
                return Err(SeqError::SequenceTooLong { len: seq.len(), max: max_len });
            }
            spans.push((row, seq.len()));
            for &id in seq.iter() {
                if id as usize >= vocab_size {
                    return Err(SeqError::TokenOutOfRange { id, vocab: vocab_size });
                }
                one_hot.set(row, id as usize, 1.0);
                token_mol.push(m);
                row += 1;
            }
        }
        Ok(Self { one_hot, spans, token_mol })
    }

    pub fn num_molecules(&self) -> usize {
        self.spans.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.token_mol.len()
    }
}

/// Concatenated forward and backward GRU states `(→h_i, ←h_i)`, `2·gru_hidden` wide.
pub fn bigru_states(tape: &mut Tape, store: &ParamStore, params: &SeqParams, batch: &SeqBatch) -> Result<Var, DiffError> {
    let mut x = tape.constant(batch.one_hot.clone());
    for (fwd_gru, bwd_gru) in &params.grus {
        let fwd = fwd_gru.run_packed(tape, store, x, &batch.spans, false)?;
        let bwd = bwd_gru.run_packed(tape, store, x, &batch.spans, true)?;
        x = tape.concat_cols(&[fwd, bwd])?;
    }
    Ok(x)
}

/// Bi-GRU states projected to the model dimension.
pub fn bigru_contextualize(tape: &mut Tape, store: &ParamStore, params: &SeqParams, batch: &SeqBatch) -> Result<Var, DiffError> {
    let states = bigru_states(tape, store, params, batch)?;
    params.proj.forward(tape, store, states)
}

/// `softmax(Q Kᵀ / √d_K + bias) V` per molecule and head, heads
/// concatenated and passed through the output projection. `bias` holds one
/// row of `heads · max_len` values per molecule.
pub fn biased_attention(
    tape: &mut Tape,
    store: &ParamStore,
    config: &SeqConfig,
    block: &BlockParams,
    h: Var,
    spans: &[(usize, usize)],
    bias: Option<Var>,
) -> Result<Var, DiffError> {
    let q_all = block.query.forward(tape, store, h)?;
    let k_all = block.key.forward(tape, store, h)?;
    let v_all = block.value.forward(tape, store, h)?;
    let dk = config.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut per_mol = Vec::with_capacity(spans.len());
    for (m, &(start, n)) in spans.iter().enumerate() {
        let q = tape.slice_rows(q_all, start, n)?;
        let k = tape.slice_rows(k_all, start, n)?;
        let v = tape.slice_rows(v_all, start, n)?;
        let bias_row = match bias {
            Some(b) => Some(tape.slice_rows(b, m, 1)?),
            None => None,
        };
        let mut heads = Vec::with_capacity(config.heads);
        for hd in 0..config.heads {
            let (qh, kh, vh) = if config.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, hd * dk, dk)?,
                    tape.slice_cols(k, hd * dk, dk)?,
                    tape.slice_cols(v, hd * dk, dk)?,
                )
            };
            let scores = tape.matmul_bt(qh, kh)?;
            let mut logits = tape.scale(scores, scale);
            if let Some(row) = bias_row {
                let b = tape.slice_cols(row, hd * config.max_len, n)?;
                logits = tape.add_row(logits, b)?;
            }
            let weights = tape.softmax_rows(logits);
            heads.push(tape.matmul(weights, vh)?);
        }
        per_mol.push(if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? });
    }
    let joined = if per_mol.len() == 1 { per_mol[0] } else { tape.concat_rows(&per_mol)? };
    block.out.forward(tape, store, joined)
}

/// `H' = MHA(LN(H)) + H`, then `FFN(LN(H')) + H'`.
pub fn transformer_block(
    tape: &mut Tape,
    store: &ParamStore,
    config: &SeqConfig,
    block: &BlockParams,
    h: Var,
    spans: &[(usize, usize)],
    bias: Option<Var>,
) -> Result<Var, DiffError> {
    let normed = block.ln_attn.forward(tape, store, h)?;
    let attn = biased_attention(tape, store, config, block, normed, spans, bias)?;
    let h1 = tape.add(attn, h)?;
    let normed = block.ln_ffn.forward(tape, store, h1)?;
    let inner = block.ffn_in.forward(tape, store, normed)?;
    let inner = tape.relu(inner);
    let ffn = block.ffn_out.forward(tape, store, inner)?;
    tape.add(ffn, h1)
}

/// Mean over each molecule's token rows.
pub fn pool_tokens(tape: &mut Tape, tokens: Var, batch: &SeqBatch) -> Result<Var, DiffError> {
    tape.segment_mean(tokens, &batch.token_mol, batch.num_molecules())
}

#[derive(Debug, Clone, Copy)]
pub struct SeqTrace {
    /// Per-token encoder output.
    pub tokens: Var,
    /// Pooled `H_S`, one row per molecule.
    pub pooled: Var,
}

pub fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    params: &SeqParams,
    batch: &SeqBatch,
    bias: Option<Var>,
) -> Result<SeqTrace, DiffError> {
    let mut h = bigru_contextualize(tape, store, params, batch)?;
    for block in &params.blocks {
        h = transformer_block(tape, store, &params.config, block, h, &batch.spans, bias)?;
    }
    let pooled = pool_tokens(tape, h, batch)?;
    Ok(SeqTrace { tokens: h, pooled })
}
