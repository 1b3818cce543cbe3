//! Fixed-width atom and bond attribute vectors.
//!
//! Atom layout (127): atom type 100 | degree 6 | formal charge 5 |
//! chirality 4 | hydrogens 5 | hybridization 5 | aromatic 1 | mass/100 1.
//! Bond layout (12): bond type 4 | stereo 6 | in ring 1 | conjugated 1.

use thiserror::Error;

use crate::chem::{elements, Atom, Bond, BondOrder, BondStereo, Chirality, MolGraph};

pub const ATOM_FEATURES: usize = 127;
pub const BOND_FEATURES: usize = 12;

const TYPE_OFFSET: usize = 0;
const TYPE_SLOTS: usize = 100;
const DEGREE_OFFSET: usize = 100;
const DEGREE_SLOTS: usize = 6;
const CHARGE_OFFSET: usize = 106;
const CHIRALITY_OFFSET: usize = 111;
const HYDROGEN_OFFSET: usize = 115;
const HYDROGEN_SLOTS: usize = 5;
const HYBRID_OFFSET: usize = 120;
const AROMATIC_INDEX: usize = 125;
const MASS_INDEX: usize = 126;

const STEREO_OFFSET: usize = 4;
const RING_INDEX: usize = 10;
const CONJUGATED_INDEX: usize = 11;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("unknown element '{0}'")]
pub struct UnknownElement(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct AtomFeatureVector(pub [f64; ATOM_FEATURES]);

#[derive(Debug, Clone, PartialEq)]
pub struct BondFeatureVector(pub [f64; BOND_FEATURES]);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hybridization {
    Sp,
    Sp2,
    Sp3,
    Sp3d,
    Sp3d2,
}

/// Slot in the atom-type block: atomic number - 1, with slot 99 collecting
/// everything past einsteinium.
pub fn atom_type_index(symbol: &str) -> Result<usize, UnknownElement> {
    let z = elements::atomic_number(symbol).ok_or_else(|| UnknownElement(symbol.to_string()))?;
    Ok(type_slot(z))
}

fn type_slot(atomic_number: u8) -> usize {
    (atomic_number as usize - 1).min(TYPE_SLOTS - 1)
}

pub fn hybridization(graph: &MolGraph, atom: usize) -> Hybridization {
    let heavy = graph.heavy_degree(atom);
    if heavy >= 6 {
        return Hybridization::Sp3d2;
    }
    if heavy == 5 {
        return Hybridization::Sp3d;
    }
    let (mut doubles, mut triple, mut aromatic) = (0, false, graph.atoms[atom].aromatic);
    for &e in &graph.incoming[atom] {
        match graph.edges[e].bond.order {
            BondOrder::Double => doubles += 1,
            BondOrder::Triple => triple = true,
            BondOrder::Aromatic => aromatic = true,
            BondOrder::Single => {}
        }
    }
    if triple || doubles >= 2 {
        Hybridization::Sp
    } else if doubles == 1 || aromatic {
        Hybridization::Sp2
    } else {
        Hybridization::Sp3
    }
}

pub fn atom_features(atom: &Atom, graph: &MolGraph, atom_index: usize) -> AtomFeatureVector {
    let mut v = [0.0; ATOM_FEATURES];
    v[TYPE_OFFSET + type_slot(atom.atomic_number)] = 1.0;
    v[DEGREE_OFFSET + graph.heavy_degree(atom_index).min(DEGREE_SLOTS - 1)] = 1.0;
    v[CHARGE_OFFSET + (atom.formal_charge.clamp(-2, 2) + 2) as usize] = 1.0;
    let chirality = match atom.chirality {
        Chirality::Unspecified => 0,
        Chirality::Clockwise => 1,
        Chirality::CounterClockwise => 2,
        Chirality::Other => 3,
    };
    v[CHIRALITY_OFFSET + chirality] = 1.0;
    v[HYDROGEN_OFFSET + (atom.total_h as usize).min(HYDROGEN_SLOTS - 1)] = 1.0;
    let hybrid = match hybridization(graph, atom_index) {
        Hybridization::Sp => 0,
        Hybridization::Sp2 => 1,
        Hybridization::Sp3 => 2,
        Hybridization::Sp3d => 3,
        Hybridization::Sp3d2 => 4,
    };
    v[HYBRID_OFFSET + hybrid] = 1.0;
    v[AROMATIC_INDEX] = if atom.aromatic { 1.0 } else { 0.0 };
    v[MASS_INDEX] = elements::atomic_mass(atom.atomic_number) / 100.0;
    AtomFeatureVector(v)
}

pub fn bond_features(bond: &Bond) -> BondFeatureVector {
    let mut v = [0.0; BOND_FEATURES];
    let order = match bond.order {
        BondOrder::Single => 0,
        BondOrder::Double => 1,
        BondOrder::Triple => 2,
        BondOrder::Aromatic => 3,
    };
    v[order] = 1.0;
    let stereo = match bond.stereo {
        BondStereo::None => 0,
        BondStereo::Any => 1,
        BondStereo::E => 2,
        BondStereo::Z => 3,
        BondStereo::Cis => 4,
        BondStereo::Trans => 5,
    };
    v[STEREO_OFFSET + stereo] = 1.0;
    v[RING_INDEX] = if bond.in_ring { 1.0 } else { 0.0 };
    v[CONJUGATED_INDEX] = if bond.conjugated { 1.0 } else { 0.0 };
    BondFeatureVector(v)
}

/// Row-major feature matrices for a whole graph: one row per atom and one
/// row per directed edge (in edge-id order).
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFeatures {
    pub atoms: Vec<f64>,
    pub edges: Vec<f64>,
}

pub fn featurize(graph: &MolGraph) -> GraphFeatures {
    let mut atoms = Vec::with_capacity(graph.num_atoms() * ATOM_FEATURES);
    for (i, a) in graph.atoms.iter().enumerate() {
        atoms.extend_from_slice(&atom_features(a, graph, i).0);
    }
    let mut edges = Vec::with_capacity(graph.num_edges() * BOND_FEATURES);
    for e in &graph.edges {
        edges.extend_from_slice(&bond_features(&e.bond).0);
    }
    GraphFeatures { atoms, edges }
}
