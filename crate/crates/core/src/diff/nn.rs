use rand::Rng;

use super::{DiffError, Init, ParamId, ParamStore, Tape, Tensor, Var};

/// Dense layer `y = x·Wᵀ + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut R) -> Self {
        let weight = store.add(&format!("{name}.weight"), out_dim, in_dim, Init::GlorotUniform, rng);
        let bias = bias.then(|| store.add(&format!("{name}.bias"), 1, out_dim, Init::Zeros, rng));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        Self {
            gain: store.add(&format!("{name}.gain"), 1, dim, Init::Ones, rng),
            bias: store.add(&format!("{name}.bias"), 1, dim, Init::Zeros, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Single-layer GRU with gate blocks ordered `[reset | update | candidate]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gru {
    pub input: Linear,
    pub hidden: Linear,
    pub hidden_dim: usize,
}

impl Gru {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            input: Linear::new(store, &format!("{name}.ih"), in_dim, 3 * hidden_dim, true, rng),
            hidden: Linear::new(store, &format!("{name}.hh"), hidden_dim, 3 * hidden_dim, true, rng),
            hidden_dim,
        }
    }

    /// One step for a batch of rows.
    pub fn cell(&self, tape: &mut Tape, store: &ParamStore, x: Var, h_prev: Var) -> Result<Var, DiffError> {
        let xg = self.input.forward(tape, store, x)?;
        let hg = self.hidden.forward(tape, store, h_prev)?;
        tape.gru_cell(xg, hg, h_prev)
    }

    /// Runs the GRU over many sequences at once, starting from a zero state.
    /// `x` holds the rows of every sequence; sequence `s` occupies rows
    /// `spans[s].0 .. spans[s].0 + spans[s].1`. Row `i` of the result is the
    /// hidden state produced when row `i` of `x` was consumed. With `reverse`
    /// each sequence is read from its last row to its first.
    pub fn run_packed(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        spans: &[(usize, usize)],
        reverse: bool,
    ) -> Result<Var, DiffError> {
        let rows = tape.shape(x)[0];
        let mut order: Vec<usize> = (0..spans.len()).filter(|&s| spans[s].1 > 0).collect();
        // longest first so that the active sequences at every step form a prefix
        order.sort_by(|&a, &b| spans[b].1.cmp(&spans[a].1).then(a.cmp(&b)));
        let steps = order.first().map_or(0, |&s| spans[s].1);

        let mut perm = Vec::with_capacity(rows);
        let mut counts = Vec::with_capacity(steps);
        for t in 0..steps {
            let before = perm.len();
            for &s in &order {
                let (start, len) = spans[s];
                if len <= t {
                    break;
                }
                perm.push(start + if reverse { len - 1 - t } else { t });
            }
            counts.push(perm.len() - before);
        }
        if perm.len() != rows {
            return Err(DiffError::ShapeMismatch {
                op: "gru run_packed",
                left: [rows, 0],
                right: [perm.len(), 0],
            });
        }
        if rows == 0 {
            return Ok(tape.constant(Tensor::zeros(0, self.hidden_dim)));
        }

        let xp = tape.gather_rows(x, &perm)?;
        let xg_all = self.input.forward(tape, store, xp)?;
        let mut h = tape.constant(Tensor::zeros(counts[0], self.hidden_dim));
        let mut outputs = Vec::with_capacity(steps);
        let mut offset = 0;
        for &active in &counts {
            let xg = tape.slice_rows(xg_all, offset, active)?;
            if tape.shape(h)[0] != active {
                h = tape.slice_rows(h, 0, active)?;
            }
            let hg = self.hidden.forward(tape, store, h)?;
            h = tape.gru_cell(xg, hg, h)?;
            outputs.push(h);
            offset += active;
        }
        let stacked = tape.concat_rows(&outputs)?;
        let mut inverse = vec![0; rows];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        tape.gather_rows(stacked, &inverse)
    }
}
