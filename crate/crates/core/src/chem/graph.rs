use serde::{Deserialize, Serialize};

use super::elements;
use super::token::Chirality;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub atomic_number: u8,
    pub formal_charge: i8,
    /// Hydrogen count written inside a bracket atom; `None` for organic-subset atoms.
    pub explicit_h: Option<u8>,
    /// Total attached hydrogens (bracket count or implied by valence).
    pub total_h: u8,
    pub aromatic: bool,
    pub chirality: Chirality,
    pub isotope: Option<u16>,
}

impl Atom {
    pub fn symbol(&self) -> &'static str {
        elements::symbol(self.atomic_number)
    }

    pub fn is_hydrogen(&self) -> bool {
        self.atomic_number == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution toward valence; aromatic bonds count 1.5.
    pub fn valence(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }

    pub fn is_multiple(self) -> bool {
        !matches!(self, BondOrder::Single)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BondStereo {
    None,
    Any,
    E,
    Z,
    Cis,
    Trans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub order: BondOrder,
    pub stereo: BondStereo,
    pub in_ring: bool,
    pub conjugated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirectedEdge {
    pub source: usize,
    pub target: usize,
    pub bond: Bond,
}

/// Molecule as a directed graph: every bond is stored as two directed edges
/// that point at each other through `rev`.
#[derive(Debug, Clone, PartialEq)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub edges: Vec<DirectedEdge>,
    pub rev: Vec<usize>,
    pub incoming: Vec<Vec<usize>>,
}

impl MolGraph {
    /// Build from atoms and undirected bonds. Bond `k` becomes directed edges
    /// `2k` (a -> b) and `2k + 1` (b -> a).
    pub fn from_bonds(atoms: Vec<Atom>, bonds: &[(usize, usize, Bond)]) -> Self {
        let mut edges = Vec::with_capacity(bonds.len() * 2);
        let mut rev = Vec::with_capacity(bonds.len() * 2);
        for (k, &(a, b, bond)) in bonds.iter().enumerate() {
            edges.push(DirectedEdge { source: a, target: b, bond });
            edges.push(DirectedEdge { source: b, target: a, bond });
            rev.push(2 * k + 1);
            rev.push(2 * k);
        }
        let incoming = incoming_lists(atoms.len(), &edges);
        Self { atoms, edges, rev, incoming }
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_bonds(&self) -> usize {
        self.edges.len() / 2
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.incoming[atom].len()
    }

    /// Neighbor atoms, each paired with the edge pointing into `atom`.
    pub fn neighbors(&self, atom: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.incoming[atom]
            .iter()
            .map(move |&e| (self.edges[e].source, e))
    }

    pub fn heavy_degree(&self, atom: usize) -> usize {
        self.neighbors(atom)
            .filter(|&(n, _)| !self.atoms[n].is_hydrogen())
            .count()
    }

    /// One representative edge per bond (the lower-id direction).
    pub fn bonds(&self) -> impl Iterator<Item = (usize, &DirectedEdge)> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(e, _)| *e < self.rev[*e])
    }

    pub fn sources(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.source).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.target).collect()
    }

    /// Relabel atoms and edges: atom `i` moves to `atom_perm[i]`, edge `e`
    /// moves to `edge_perm[e]`.
    pub fn permuted(&self, atom_perm: &[usize], edge_perm: &[usize]) -> Self {
        assert_eq!(atom_perm.len(), self.num_atoms());
        assert_eq!(edge_perm.len(), self.num_edges());
        let mut atoms = self.atoms.clone();
        for (i, a) in self.atoms.iter().enumerate() {
            atoms[atom_perm[i]] = a.clone();
        }
        let mut edges = self.edges.clone();
        let mut rev = self.rev.clone();
        for (e, edge) in self.edges.iter().enumerate() {
            edges[edge_perm[e]] = DirectedEdge {
                source: atom_perm[edge.source],
                target: atom_perm[edge.target],
                bond: edge.bond,
            };
            rev[edge_perm[e]] = edge_perm[self.rev[e]];
        }
        let incoming = incoming_lists(atoms.len(), &edges);
        Self { atoms, edges, rev, incoming }
    }

    /// Subgraph on the atoms with `keep[i]`, preserving relative order of
    /// atoms and bonds.
    pub fn induced_subgraph(&self, keep: &[bool]) -> Self {
        let mut new_index = vec![usize::MAX; self.num_atoms()];
        let mut atoms = Vec::new();
        for (i, a) in self.atoms.iter().enumerate() {
            if keep[i] {
                new_index[i] = atoms.len();
                atoms.push(a.clone());
            }
        }
        let bonds: Vec<_> = self
            .bonds()
            .filter(|(_, e)| keep[e.source] && keep[e.target])
            .map(|(_, e)| (new_index[e.source], new_index[e.target], e.bond))
            .collect();
        Self::from_bonds(atoms, &bonds)
    }
}

fn incoming_lists(n: usize, edges: &[DirectedEdge]) -> Vec<Vec<usize>> {
    let mut incoming = vec![Vec::new(); n];
    for (e, edge) in edges.iter().enumerate() {
        incoming[edge.target].push(e);
    }
    incoming
}

/// Marks every bond (indexed by representative edge id / 2 order of
/// `bonds()`) that lies on at least one cycle, i.e. is not a bridge.
pub(crate) fn ring_bonds(n_atoms: usize, bonds: &[(usize, usize)]) -> Vec<bool> {
    let mut adj = vec![Vec::new(); n_atoms];
    for (k, &(a, b)) in bonds.iter().enumerate() {
        adj[a].push((b, k));
        adj[b].push((a, k));
    }
    let mut disc = vec![usize::MAX; n_atoms];
    let mut low = vec![0usize; n_atoms];
    let mut is_bridge = vec![false; bonds.len()];
    let mut timer = 0;

    // Iterative lowlink DFS; the stack holds (atom, bond used to enter, next adjacency slot).
    for root in 0..n_atoms {
        if disc[root] != usize::MAX {
            continue;
        }
        let mut stack = vec![(root, usize::MAX, 0usize)];
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        while let Some(&mut (v, via, ref mut slot)) = stack.last_mut() {
            if *slot < adj[v].len() {
                let (w, k) = adj[v][*slot];
                *slot += 1;
                if k == via {
                    continue;
                }
                if disc[w] == usize::MAX {
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    stack.push((w, k, 0));
                } else {
                    low[v] = low[v].min(disc[w]);
                }
            } else {
                stack.pop();
                if let Some(&(parent, _, _)) = stack.last() {
                    low[parent] = low[parent].min(low[v]);
                    if low[v] > disc[parent] {
                        is_bridge[via] = true;
                    }
                }
            }
        }
    }
    is_bridge.into_iter().map(|b| !b).collect()
}
