//! Murcko scaffolds and a canonical key for grouping molecules by framework.

use sha2::{Digest, Sha256};

use super::graph::{BondOrder, MolGraph};

/// Ring systems plus linkers: repeatedly strip non-ring atoms with at most
/// one remaining neighbor.
pub fn murcko_scaffold_graph(graph: &MolGraph) -> MolGraph {
    let n = graph.num_atoms();
    let mut in_ring = vec![false; n];
    for e in &graph.edges {
        if e.bond.in_ring {
            in_ring[e.source] = true;
        }
    }
    let mut keep = vec![true; n];
    let mut degree: Vec<usize> = (0..n).map(|v| graph.degree(v)).collect();
    let mut stack: Vec<usize> = (0..n).filter(|&v| !in_ring[v] && degree[v] <= 1).collect();
    while let Some(v) = stack.pop() {
        if !keep[v] {
            continue;
        }
        keep[v] = false;
        for (w, _) in graph.neighbors(v) {
            if keep[w] {
                degree[w] -= 1;
                if !in_ring[w] && degree[w] <= 1 {
                    stack.push(w);
                }
            }
        }
    }
    graph.induced_subgraph(&keep)
}

/// Canonical key of the Murcko scaffold; empty for acyclic molecules.
pub fn murcko_scaffold(graph: &MolGraph) -> String {
    graph_key(&murcko_scaffold_graph(graph))
}

/// Isomorphism-invariant key from Weisfeiler-Lehman refinement over
/// (element, aromaticity) atom labels and bond orders, run for as many rounds
/// as there are atoms, then digesting the sorted label multiset.
pub fn graph_key(graph: &MolGraph) -> String {
    let n = graph.num_atoms();
    if n == 0 {
        return String::new();
    }
    let mut labels: Vec<u64> = graph
        .atoms
        .iter()
        .map(|a| mix(a.atomic_number as u64, a.aromatic as u64))
        .collect();
    let mut neigh = Vec::new();
    for _ in 0..n {
        let next: Vec<u64> = (0..n)
            .map(|v| {
                neigh.clear();
                neigh.extend(
                    graph
                        .neighbors(v)
                        .map(|(w, e)| mix(order_code(graph.edges[e].bond.order), labels[w])),
                );
                neigh.sort_unstable();
                neigh.iter().fold(mix(labels[v], neigh.len() as u64), |h, &x| mix(h, x))
            })
            .collect();
        labels = next;
    }
    labels.sort_unstable();
    let mut hasher = Sha256::new();
    hasher.update((n as u64).to_le_bytes());
    hasher.update((graph.num_bonds() as u64).to_le_bytes());
    for l in &labels {
        hasher.update(l.to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn order_code(order: BondOrder) -> u64 {
    match order {
        BondOrder::Single => 1,
        BondOrder::Double => 2,
        BondOrder::Triple => 3,
        BondOrder::Aromatic => 4,
    }
}

// splitmix64-style combiner; stable across platforms and releases.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b)
        .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
