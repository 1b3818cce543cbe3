//! Bidirectional message communication over atoms and directed bonds.
//!
//! Node hiddens are refreshed from `MAX ⊙ SUM` of incoming edge hiddens,
//! edge hiddens from the mean of their endpoints; the reverse edge's
//! communicated message is subtracted before every edge update.

use rand::Rng;
use thiserror::Error;

use crate::chem::MolGraph;
use crate::diff::{DiffError, Gru, Linear, ParamId, ParamStore, Tape, Tensor, Var};
use crate::featurize::{featurize, GraphFeatures, ATOM_FEATURES, BOND_FEATURES};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BmcError {
    #[error("message passing depth must be at least 1")]
    ZeroDepth,
    #[error("hidden dimension must be at least 1")]
    ZeroHidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BmcConfig {
    hidden_dim: usize,
    depth: usize,
}

impl BmcConfig {
    pub fn new(hidden_dim: usize, depth: usize) -> Result<Self, BmcError> {
        if depth == 0 {
            return Err(BmcError::ZeroDepth);
        }
        if hidden_dim == 0 {
            return Err(BmcError::ZeroHidden);
        }
        Ok(Self { hidden_dim, depth })
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BmcParams {
    pub config: BmcConfig,
    pub atom_in: Linear,
    pub bond_in: Linear,
    pub w_v: Linear,
    pub w_e: Linear,
    pub node_readout: Gru,
    pub edge_readout: Gru,
}

impl BmcParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, config: BmcConfig, rng: &mut R) -> Self {
        let h = config.hidden_dim;
        Self {
            config,
            atom_in: Linear::new(store, &format!("{name}.atom_in"), ATOM_FEATURES, h, false, rng),
            bond_in: Linear::new(store, &format!("{name}.bond_in"), BOND_FEATURES, h, false, rng),
            w_v: Linear::new(store, &format!("{name}.W_v"), h, h, false, rng),
            w_e: Linear::new(store, &format!("{name}.W_e"), h, h, false, rng),
            node_readout: Gru::new(store, &format!("{name}.readout_v"), h, h, rng),
            edge_readout: Gru::new(store, &format!("{name}.readout_e"), h, h, rng),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in [self.atom_in, self.bond_in, self.w_v, self.w_e] {
            ids.extend(l.params());
        }
        for g in [self.node_readout, self.edge_readout] {
            ids.extend(g.input.params());
            ids.extend(g.hidden.params());
        }
        ids
    }
}

/// Disjoint union of molecular graphs with global atom and edge indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub atom_features: Tensor,
    pub bond_features: Tensor,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    pub rev: Vec<usize>,
    /// Molecule index of every atom / edge.
    pub atom_mol: Vec<usize>,
    pub edge_mol: Vec<usize>,
    /// `(first row, row count)` per molecule.
    pub atom_spans: Vec<(usize, usize)>,
    pub edge_spans: Vec<(usize, usize)>,
}

impl GraphBatch {
    pub fn new(items: &[(&MolGraph, &GraphFeatures)]) -> Self {
        let n_atoms: usize = items.iter().map(|(g, _)| g.num_atoms()).sum();
        let n_edges: usize = items.iter().map(|(g, _)| g.num_edges()).sum();
        let mut atom_data = Vec::with_capacity(n_atoms * ATOM_FEATURES);
        let mut bond_data = Vec::with_capacity(n_edges * BOND_FEATURES);
        let mut b = GraphBatch {
            atom_features: Tensor::zeros(0, 0),
            bond_features: Tensor::zeros(0, 0),
            sources: Vec::with_capacity(n_edges),
            targets: Vec::with_capacity(n_edges),
            rev: Vec::with_capacity(n_edges),
            atom_mol: Vec::with_capacity(n_atoms),
            edge_mol: Vec::with_capacity(n_edges),
            atom_spans: Vec::with_capacity(items.len()),
            edge_spans: Vec::with_capacity(items.len()),
        };
        let (mut a0, mut e0) = (0, 0);
        for (m, (g, f)) in items.iter().enumerate() {
            atom_data.extend_from_slice(&f.atoms);
            bond_data.extend_from_slice(&f.edges);
            for e in &g.edges {
                b.sources.push(a0 + e.source);
                b.targets.push(a0 + e.target);
            }
            b.rev.extend(g.rev.iter().map(|r| e0 + r));
            b.atom_mol.extend(std::iter::repeat(m).take(g.num_atoms()));
            b.edge_mol.extend(std::iter::repeat(m).take(g.num_edges()));
            b.atom_spans.push((a0, g.num_atoms()));
            b.edge_spans.push((e0, g.num_edges()));
            a0 += g.num_atoms();
            e0 += g.num_edges();
        }
        b.atom_features = Tensor::new(n_atoms, ATOM_FEATURES, atom_data).expect("featurizer row width");
        b.bond_features = Tensor::new(n_edges, BOND_FEATURES, bond_data).expect("featurizer row width");
        b
    }

    pub fn single(graph: &MolGraph) -> Self {
        let f = featurize(graph);
        Self::new(&[(graph, &f)])
    }

    pub fn num_molecules(&self) -> usize {
        self.atom_spans.len()
    }

    pub fn num_atoms(&self) -> usize {
        self.atom_mol.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_mol.len()
    }
}

/// `MAX ⊙ SUM` over the hiddens of edges entering each atom; zero for atoms
/// without incoming edges.
pub fn aggregate_edges_to_node(tape: &mut Tape, h_e: Var, targets: &[usize], n_atoms: usize) -> Result<Var, DiffError> {
    let max = tape.segment_max(h_e, targets, n_atoms)?;
    let sum = tape.segment_sum(h_e, targets, n_atoms)?;
    tape.mul(max, sum)
}

/// Mean of the two endpoint hiddens of every directed edge.
pub fn aggregate_nodes_to_edge(tape: &mut Tape, h_v: Var, sources: &[usize], targets: &[usize]) -> Result<Var, DiffError> {
    let hs = tape.gather_rows(h_v, sources)?;
    let ht = tape.gather_rows(h_v, targets)?;
    let sum = tape.add(hs, ht)?;
    Ok(tape.scale(sum, 0.5))
}

pub fn communicate(tape: &mut Tape, message: Var, hidden: Var) -> Result<Var, DiffError> {
    tape.add(message, hidden)
}

/// `p_e(v→w) = p_v − p_e(w→v)` using the pre-subtraction edge messages.
pub fn subtract_reverse(tape: &mut Tape, p_v: Var, p_e: Var, sources: &[usize], rev: &[usize]) -> Result<Var, DiffError> {
    let from_node = tape.gather_rows(p_v, sources)?;
    let reverse = tape.gather_rows(p_e, rev)?;
    tape.sub(from_node, reverse)
}

/// `ReLU(h0 + W·p)`.
pub fn update_hidden(tape: &mut Tape, store: &ParamStore, p: Var, h0: Var, w: &Linear) -> Result<Var, DiffError> {
    let wp = w.forward(tape, store, p)?;
    let pre = tape.add(h0, wp)?;
    Ok(tape.relu(pre))
}

/// Every intermediate of one forward pass, recorded on the tape.
#[derive(Debug, Clone)]
pub struct BmcTrace {
    /// `h_v^t` for `t = 0..=T`.
    pub node_steps: Vec<Var>,
    /// `h_e^t` for `t = 0..=T`.
    pub edge_steps: Vec<Var>,
    /// Graph-level readouts, one row per molecule.
    pub h_v: Var,
    pub h_e: Var,
}

impl BmcTrace {
    pub fn final_nodes(&self) -> Var {
        *self.node_steps.last().expect("at least h^0")
    }

    pub fn final_edges(&self) -> Var {
        *self.edge_steps.last().expect("at least h^0")
    }
}

pub fn bmc_forward_batch(tape: &mut Tape, store: &ParamStore, params: &BmcParams, batch: &GraphBatch) -> Result<BmcTrace, DiffError> {
    let n_atoms = batch.num_atoms();
    let x_v = tape.constant(batch.atom_features.clone());
    let x_e = tape.constant(batch.bond_features.clone());
    let h_v0 = params.atom_in.forward(tape, store, x_v)?;
    let h_e0 = params.bond_in.forward(tape, store, x_e)?;
    let (src, tgt, rev) = (&batch.sources, &batch.targets, &batch.rev);

    let mut node_steps = vec![h_v0];
    let mut edge_steps = vec![h_e0];
    let (mut h_v, mut h_e) = (h_v0, h_e0);
    for _ in 0..params.config.depth - 1 {
        let m_v = aggregate_edges_to_node(tape, h_e, tgt, n_atoms)?;
        let p_v = communicate(tape, m_v, h_v)?;
        let m_e = aggregate_nodes_to_edge(tape, h_v, src, tgt)?;
        let p_e = communicate(tape, m_e, h_e)?;
        let p_e = subtract_reverse(tape, p_v, p_e, src, rev)?;
        h_e = update_hidden(tape, store, p_e, h_e0, &params.w_e)?;
        h_v = update_hidden(tape, store, p_v, h_v0, &params.w_v)?;
        node_steps.push(h_v);
        edge_steps.push(h_e);
    }

    // final gathering pass: the raw attributes re-enter through the step-0 projections
    let m_v = aggregate_edges_to_node(tape, h_e, tgt, n_atoms)?;
    let node_final = communicate(tape, m_v, h_v)?;
    let node_final = tape.add(node_final, h_v0)?;
    let m_e = aggregate_nodes_to_edge(tape, h_v, src, tgt)?;
    let edge_final = communicate(tape, m_e, h_e)?;
    let edge_final = tape.add(edge_final, h_e0)?;
    node_steps.push(node_final);
    edge_steps.push(edge_final);

    let b = batch.num_molecules();
    let node_out = params.node_readout.run_packed(tape, store, node_final, &batch.atom_spans, false)?;
    let h_v_read = tape.segment_sum(node_out, &batch.atom_mol, b)?;
    let edge_out = params.edge_readout.run_packed(tape, store, edge_final, &batch.edge_spans, false)?;
    let h_e_read = tape.segment_sum(edge_out, &batch.edge_mol, b)?;
    Ok(BmcTrace { node_steps, edge_steps, h_v: h_v_read, h_e: h_e_read })
}

/// Graph-level and final per-atom / per-edge representations of one molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEmbeddings {
    pub h_v: Vec<f64>,
    pub h_e: Vec<f64>,
    pub node_hidden: Tensor,
    pub edge_hidden: Tensor,
}

pub fn bmc_forward(graph: &MolGraph, features: &GraphFeatures, store: &ParamStore, params: &BmcParams) -> Result<GraphEmbeddings, DiffError> {
    let batch = GraphBatch::new(&[(graph, features)]);
    let mut tape = Tape::new();
    let trace = bmc_forward_batch(&mut tape, store, params, &batch)?;
    Ok(GraphEmbeddings {
        h_v: tape.value(trace.h_v).data().to_vec(),
        h_e: tape.value(trace.h_e).data().to_vec(),
        node_hidden: tape.value(trace.final_nodes()).clone(),
        edge_hidden: tape.value(trace.final_edges()).clone(),
    })
}
