//! SMILES to [`MolGraph`].
//!
//! Aromaticity is taken as written (lowercase atoms, `:` bonds). Implicit
//! bonds between two aromatic atoms are aromatic only when they close a ring;
//! otherwise they are single bonds (as in biphenyl written `c1ccccc1c1ccccc1`).

use std::collections::BTreeMap;

use super::elements;
use super::graph::{ring_bonds, Atom, Bond, BondOrder, BondStereo, MolGraph};
use super::token::{lex, parse_bracket, Chirality, TokenKind};
use super::{ChemError, ValenceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Up,
    Down,
}

impl Direction {
    fn sign(self) -> i8 {
        match self {
            Direction::Up => 1,
            Direction::Down => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BondSymbol {
    Single,
    Double,
    Triple,
    Aromatic,
    Directional(Direction),
}

impl BondSymbol {
    fn parse(s: &str, position: usize) -> Result<Self, ChemError> {
        Ok(match s {
            "-" => BondSymbol::Single,
            "=" => BondSymbol::Double,
            "#" => BondSymbol::Triple,
            ":" => BondSymbol::Aromatic,
            "/" => BondSymbol::Directional(Direction::Up),
            "\\" => BondSymbol::Directional(Direction::Down),
            _ => {
                return Err(ChemError::Syntax {
                    position,
                    reason: format!("unsupported bond '{s}'"),
                })
            }
        })
    }
}

/// Bond as written: `first` appears before `second` in the string.
struct RawBond {
    first: usize,
    second: usize,
    symbol: Option<BondSymbol>,
}

struct OpenRing {
    atom: usize,
    symbol: Option<BondSymbol>,
    position: usize,
}

pub fn parse(smiles: &str) -> Result<MolGraph, ChemError> {
    let tokens = lex(smiles)?;
    let mut atoms: Vec<Atom> = Vec::new();
    let mut raw: Vec<RawBond> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut pending: Option<(BondSymbol, usize)> = None;
    let mut branches: Vec<Option<usize>> = Vec::new();
    let mut rings: BTreeMap<u16, OpenRing> = BTreeMap::new();

    let syntax = |position: usize, reason: &str| ChemError::Syntax {
        position,
        reason: reason.to_string(),
    };

    for tok in &tokens {
        match tok.kind {
            TokenKind::Atom | TokenKind::BracketAtom => {
                let atom = if tok.kind == TokenKind::Atom {
                    organic_atom(&tok.text)
                } else {
                    let b = parse_bracket(&tok.text[1..tok.text.len() - 1]).map_err(|reason| {
                        ChemError::Tokenize {
                            position: tok.start,
                            smiles: smiles.to_string(),
                            reason,
                        }
                    })?;
                    Atom {
                        atomic_number: b.atomic_number,
                        formal_charge: b.charge,
                        explicit_h: Some(b.hydrogens),
                        total_h: b.hydrogens,
                        aromatic: b.aromatic,
                        chirality: b.chirality,
                        isotope: b.isotope,
                    }
                };
                let idx = atoms.len();
                atoms.push(atom);
                match prev {
                    Some(p) => raw.push(RawBond {
                        first: p,
                        second: idx,
                        symbol: pending.take().map(|(s, _)| s),
                    }),
                    None => {
                        if let Some((_, pos)) = pending {
                            return Err(syntax(pos, "bond without a preceding atom"));
                        }
                    }
                }
                prev = Some(idx);
            }
            TokenKind::Bond => {
                if prev.is_none() {
                    return Err(syntax(tok.start, "bond without a preceding atom"));
                }
                if pending.is_some() {
                    return Err(syntax(tok.start, "two consecutive bond symbols"));
                }
                pending = Some((BondSymbol::parse(&tok.text, tok.start)?, tok.start));
            }
            TokenKind::RingClosure => {
                let atom = prev.ok_or_else(|| syntax(tok.start, "ring closure without an atom"))?;
                let digits = tok.text.trim_start_matches('%');
                let label: u16 = digits.parse().expect("lexer guarantees digits");
                let symbol = pending.take().map(|(s, _)| s);
                match rings.remove(&label) {
                    Some(open) => {
                        if open.atom == atom {
                            return Err(syntax(tok.start, "ring closure onto the same atom"));
                        }
                        let duplicate = raw.iter().any(|r| {
                            (r.first == open.atom && r.second == atom)
                                || (r.first == atom && r.second == open.atom)
                        });
                        if duplicate {
                            return Err(syntax(tok.start, "ring closure duplicates an existing bond"));
                        }
                        let symbol = match (open.symbol, symbol) {
                            (Some(a), Some(b)) if a != b && !directional_pair(a, b) => {
                                return Err(syntax(tok.start, "conflicting ring-closure bond symbols"))
                            }
                            (a, b) => b.or(a),
                        };
                        raw.push(RawBond {
                            first: open.atom,
                            second: atom,
                            symbol,
                        });
                    }
                    None => {
                        rings.insert(
                            label,
                            OpenRing {
                                atom,
                                symbol,
                                position: tok.start,
                            },
                        );
                    }
                }
            }
            TokenKind::BranchOpen => {
                if prev.is_none() {
                    return Err(syntax(tok.start, "branch without a preceding atom"));
                }
                if pending.is_some() {
                    return Err(syntax(tok.start, "bond symbol before '('"));
                }
                branches.push(prev);
            }
            TokenKind::BranchClose => {
                if pending.is_some() {
                    return Err(syntax(tok.start, "dangling bond before ')'"));
                }
                prev = branches
                    .pop()
                    .ok_or(ChemError::UnbalancedParentheses { position: tok.start })?;
            }
            TokenKind::Dot => {
                if pending.is_some() {
                    return Err(syntax(tok.start, "dangling bond before '.'"));
                }
                prev = None;
            }
        }
    }

    if !branches.is_empty() {
        return Err(ChemError::UnbalancedParentheses {
            position: smiles.len(),
        });
    }
    if let Some((&label, open)) = rings.iter().next() {
        let _ = open.position;
        return Err(ChemError::UnclosedRing(label));
    }
    if let Some((_, pos)) = pending {
        return Err(syntax(pos, "dangling bond at end of input"));
    }

    assemble(atoms, &raw)
}

fn directional_pair(a: BondSymbol, b: BondSymbol) -> bool {
    matches!(
        (a, b),
        (BondSymbol::Directional(_), BondSymbol::Directional(_))
    )
}

fn organic_atom(text: &str) -> Atom {
    let aromatic = text.chars().next().is_some_and(|c| c.is_ascii_lowercase());
    let symbol = if aromatic {
        text.to_ascii_uppercase()
    } else {
        text.to_string()
    };
    Atom {
        atomic_number: elements::atomic_number(&symbol).expect("lexer only emits organic subset"),
        formal_charge: 0,
        explicit_h: None,
        total_h: 0,
        aromatic,
        chirality: Chirality::Unspecified,
        isotope: None,
    }
}

fn assemble(mut atoms: Vec<Atom>, raw: &[RawBond]) -> Result<MolGraph, ChemError> {
    let n = atoms.len();
    let pairs: Vec<(usize, usize)> = raw.iter().map(|r| (r.first, r.second)).collect();
    let in_ring = ring_bonds(n, &pairs);

    let mut orders = Vec::with_capacity(raw.len());
    for (k, r) in raw.iter().enumerate() {
        let order = match r.symbol {
            Some(BondSymbol::Double) => BondOrder::Double,
            Some(BondSymbol::Triple) => BondOrder::Triple,
            Some(BondSymbol::Aromatic) => {
                if !in_ring[k] {
                    return Err(ChemError::NonRingAromatic { atom: r.first });
                }
                BondOrder::Aromatic
            }
            Some(BondSymbol::Single) | Some(BondSymbol::Directional(_)) => BondOrder::Single,
            None => {
                if atoms[r.first].aromatic && atoms[r.second].aromatic && in_ring[k] {
                    BondOrder::Aromatic
                } else {
                    BondOrder::Single
                }
            }
        };
        orders.push(order);
    }

    let mut atom_orders: Vec<Vec<BondOrder>> = vec![Vec::new(); n];
    for (r, &order) in raw.iter().zip(&orders) {
        atom_orders[r.first].push(order);
        atom_orders[r.second].push(order);
    }

    for (i, atom) in atoms.iter_mut().enumerate() {
        if atom.aromatic && !atom_orders[i].contains(&BondOrder::Aromatic) {
            return Err(ChemError::NonRingAromatic { atom: i });
        }
        atom.total_h = implicit_hydrogen_count(atom, &atom_orders[i])
            .map_err(|source| ChemError::Valence { atom: i, source })?;
    }

    // A bond is conjugated when aromatic, or when both ends carry another
    // multiple bond.
    let has_other_multiple = |atom: usize, skip: usize| {
        raw.iter()
            .zip(&orders)
            .enumerate()
            .any(|(k, (r, o))| k != skip && (r.first == atom || r.second == atom) && o.is_multiple())
    };

    let stereo = double_bond_stereo(raw, &orders);

    let bonds: Vec<(usize, usize, Bond)> = raw
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let order = orders[k];
            let conjugated = order == BondOrder::Aromatic
                || (has_other_multiple(r.first, k) && has_other_multiple(r.second, k));
            (
                r.first,
                r.second,
                Bond {
                    order,
                    stereo: stereo[k],
                    in_ring: in_ring[k],
                    conjugated,
                },
            )
        })
        .collect();

    Ok(MolGraph::from_bonds(atoms, &bonds))
}

/// E/Z from slash pairs. For a double bond `a=b`, a directional bond on each
/// side is read as "up" or "down" relative to the double-bond atom it touches;
/// equal senses on both sides are E, opposite senses Z.
fn double_bond_stereo(raw: &[RawBond], orders: &[BondOrder]) -> Vec<BondStereo> {
    let mut stereo = vec![BondStereo::None; raw.len()];
    let sense = |atom: usize, skip: usize, left: bool| -> Option<i8> {
        raw.iter().enumerate().find_map(|(k, r)| {
            let dir = match r.symbol {
                Some(BondSymbol::Directional(d)) if k != skip => d,
                _ => return None,
            };
            // Left side reads the bond as written toward the atom; right side
            // as written away from it. Writing order flips the sense.
            let toward = if r.second == atom {
                true
            } else if r.first == atom {
                false
            } else {
                return None;
            };
            let s = dir.sign();
            Some(if toward == left { s } else { -s })
        })
    };
    for (k, r) in raw.iter().enumerate() {
        if orders[k] != BondOrder::Double {
            continue;
        }
        if let (Some(a), Some(b)) = (sense(r.first, k, true), sense(r.second, k, false)) {
            stereo[k] = if a == b { BondStereo::E } else { BondStereo::Z };
        }
    }
    stereo
}

/// Hydrogens attached to `atom` given the orders of its bonds.
///
/// Bracket atoms report their written count. Organic-subset atoms take the
/// lowest normal valence that accommodates the bond-order sum, with aromatic
/// bonds counting 1.5 (sum rounded down), clamped at zero. The valence check
/// counts aromatic bonds as 1 so that aromatic O/S/N and exocyclic `c(=O)`
/// are accepted.
pub fn implicit_hydrogen_count(atom: &Atom, orders: &[BondOrder]) -> Result<u8, ValenceError> {
    if let Some(h) = atom.explicit_h {
        return Ok(h);
    }
    let valences = elements::normal_valences(atom.atomic_number);
    if valences.is_empty() {
        return Ok(0);
    }
    let sum = orders.iter().map(|o| o.valence()).sum::<f64>().floor() as u32;
    let lower: u32 = orders
        .iter()
        .map(|o| match o {
            BondOrder::Aromatic => 1,
            o => o.valence() as u32,
        })
        .sum();
    let max = *valences.last().unwrap() as u32;
    if lower > max {
        return Err(ValenceError {
            bond_order_sum: sum,
            max_valence: max as u8,
        });
    }
    let target = if atom.aromatic {
        valences[0] as u32
    } else {
        valences
            .iter()
            .map(|&v| v as u32)
            .find(|&v| v >= sum)
            .unwrap_or(max)
    };
    Ok(target.saturating_sub(sum) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h_counts(s: &str) -> Vec<u8> {
        parse(s).unwrap().atoms.iter().map(|a| a.total_h).collect()
    }

    #[test]
    fn ethane() {
        let g = parse("CC").unwrap();
        assert_eq!(g.num_atoms(), 2);
        assert_eq!(g.num_bonds(), 1);
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.edges[0].bond.order, BondOrder::Single);
        assert_eq!(h_counts("CC"), [3, 3]);
    }

    #[test]
    fn benzene() {
        let g = parse("c1ccccc1").unwrap();
        assert_eq!(g.num_atoms(), 6);
        assert_eq!(g.num_bonds(), 6);
        for (_, e) in g.bonds() {
            assert_eq!(e.bond.order, BondOrder::Aromatic);
            assert!(e.bond.in_ring && e.bond.conjugated);
        }
        for v in 0..6 {
            assert_eq!(g.degree(v), 2);
            assert!(g.atoms[v].aromatic);
        }
        assert_eq!(h_counts("c1ccccc1"), [1; 6]);
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(parse("C1CC"), Err(ChemError::UnclosedRing(1))));
        assert!(matches!(parse("C(C"), Err(ChemError::UnbalancedParentheses { .. })));
        assert!(matches!(parse("CC)C"), Err(ChemError::UnbalancedParentheses { .. })));
        assert!(matches!(parse("=CC"), Err(ChemError::Syntax { .. })));
        assert!(matches!(parse("CC="), Err(ChemError::Syntax { .. })));
        assert!(matches!(parse("C11"), Err(ChemError::Syntax { .. })));
        assert!(matches!(parse("C12CC12"), Err(ChemError::Syntax { .. })));
        assert!(matches!(parse("C(=C)(=C)(=C)"), Err(ChemError::Valence { atom: 0, .. })));
        assert!(matches!(parse("cc"), Err(ChemError::NonRingAromatic { .. })));
        assert!(matches!(parse("C$C"), Err(ChemError::Syntax { .. })));
    }

    #[test]
    fn hydrogen_counts() {
        assert_eq!(h_counts("CCO"), [3, 2, 1]);
        assert_eq!(h_counts("C=O"), [2, 0]);
        assert_eq!(h_counts("C#N"), [1, 0]);
        assert_eq!(h_counts("c1cc[nH]c1"), [1, 1, 1, 1, 1]);
        assert_eq!(h_counts("c1ccncc1"), [1, 1, 1, 0, 1, 1]);
        assert_eq!(h_counts("c1ccoc1"), [1, 1, 1, 0, 1]);
        assert_eq!(h_counts("O=c1cccc[nH]1"), [0, 0, 1, 1, 1, 1, 1]);
        assert_eq!(h_counts("Cn1cccc1"), [3, 0, 1, 1, 1, 1]);
        assert_eq!(h_counts("CS(=O)(=O)C"), [3, 0, 0, 0, 3]);
        assert_eq!(h_counts("CP(C)=O"), [3, 1, 3, 0]);
        assert_eq!(h_counts("[NH4+]"), [4]);
        assert_eq!(h_counts("[Na+].[Cl-]"), [0, 0]);
        assert_eq!(h_counts("c1ccc2ccccc2c1"), [1, 1, 1, 0, 1, 1, 1, 1, 0, 1]);
    }

    #[test]
    fn implicit_h_rule() {
        let c = organic_atom("C");
        assert_eq!(implicit_hydrogen_count(&c, &[BondOrder::Single; 2]).unwrap(), 2);
        let ar = organic_atom("c");
        assert_eq!(implicit_hydrogen_count(&ar, &[BondOrder::Aromatic; 2]).unwrap(), 1);
        let nh = parse("[nH]1cccc1").unwrap();
        assert_eq!(implicit_hydrogen_count(&nh.atoms[0], &[]).unwrap(), 1);
        assert!(implicit_hydrogen_count(&organic_atom("F"), &[BondOrder::Double]).is_err());
    }

    #[test]
    fn biaryl_link_is_single() {
        let g = parse("c1ccccc1c1ccccc1").unwrap();
        let link = g
            .bonds()
            .find(|(_, e)| e.source == 5 && e.target == 6)
            .unwrap()
            .1;
        assert_eq!(link.bond.order, BondOrder::Single);
        assert!(!link.bond.in_ring);
        assert!(link.bond.conjugated);
    }

    #[test]
    fn ring_closure_bond_symbols() {
        let g = parse("C=1CCCC1").unwrap();
        let closure = g.bonds().last().unwrap().1;
        assert_eq!(closure.bond.order, BondOrder::Double);
        let g = parse("C1CCCC=1").unwrap();
        assert_eq!(g.bonds().last().unwrap().1.bond.order, BondOrder::Double);
        assert!(parse("C=1CCCC#1").is_err());
        let g = parse("C%10CC%10").unwrap();
        assert_eq!(g.num_bonds(), 3);
    }

    #[test]
    fn dot_disconnects() {
        let g = parse("CC.O").unwrap();
        assert_eq!(g.num_atoms(), 3);
        assert_eq!(g.num_bonds(), 1);
        assert_eq!(g.degree(2), 0);
    }

    #[test]
    fn conjugation_rule() {
        // butadiene: only the central single bond has multiple bonds on both ends
        let g = parse("C=CC=C").unwrap();
        let conj: Vec<bool> = g.bonds().map(|(_, e)| e.bond.conjugated).collect();
        assert_eq!(conj, [false, true, false]);
        let g = parse("C=C").unwrap();
        assert!(!g.edges[0].bond.conjugated);
    }

    #[test]
    fn slash_stereo() {
        let stereo = |s: &str| -> Vec<BondStereo> {
            parse(s).unwrap().bonds().map(|(_, e)| e.bond.stereo).collect()
        };
        assert_eq!(stereo("F/C=C/F")[1], BondStereo::E);
        assert_eq!(stereo("F/C=C\\F")[1], BondStereo::Z);
        assert_eq!(stereo("F\\C=C\\F")[1], BondStereo::E);
        assert_eq!(stereo("C(\\F)=C/F")[1], BondStereo::E);
        assert_eq!(stereo("C(/F)=C/F")[1], BondStereo::Z);
        assert_eq!(stereo("FC=CF")[1], BondStereo::None);
        assert_eq!(stereo("F/C=CF")[1], BondStereo::None);
    }

    #[test]
    fn bracket_atom_fields() {
        let g = parse("[13CH3][C@@H](N)[O-]").unwrap();
        assert_eq!(g.atoms[0].isotope, Some(13));
        assert_eq!(g.atoms[0].explicit_h, Some(3));
        assert_eq!(g.atoms[1].chirality, Chirality::Clockwise);
        assert_eq!(g.atoms[3].formal_charge, -1);
        assert_eq!(g.atoms[2].explicit_h, None);
    }
}
