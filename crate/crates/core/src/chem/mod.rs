//! SMILES lexing, graph construction and scaffold extraction.

pub mod elements;
mod graph;
mod scaffold;
mod smiles;
mod token;

use thiserror::Error;

pub use graph::{Atom, Bond, BondOrder, BondStereo, DirectedEdge, MolGraph};
pub use scaffold::{graph_key, murcko_scaffold, murcko_scaffold_graph};
pub use smiles::{implicit_hydrogen_count, parse};
pub use token::{
    lex, Chirality, Token, TokenDictionary, TokenKind, TokenSequence, UnknownPolicy, PAD_ID,
    PAD_TOKEN, UNK_ID, UNK_TOKEN,
};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("bond order sum {bond_order_sum} exceeds maximum valence {max_valence}")]
pub struct ValenceError {
    pub bond_order_sum: u32,
    pub max_valence: u8,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChemError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty SMILES string")]
    EmptySmiles,
    #[error("cannot tokenize '{smiles}' at {position}: {reason}")]
    Tokenize {
        position: usize,
        smiles: String,
        reason: String,
    },
    #[error("token '{token}' at {position} is not in the dictionary")]
    UnknownToken { position: usize, token: String },
    #[error("ring closure {0} is never closed")]
    UnclosedRing(u16),
    #[error("unbalanced parentheses at {position}")]
    UnbalancedParentheses { position: usize },
    #[error("SMILES syntax error at {position}: {reason}")]
    Syntax { position: usize, reason: String },
    #[error("valence error on atom {atom}: {source}")]
    Valence {
        atom: usize,
        #[source]
        source: ValenceError,
    },
    #[error("aromatic atom {atom} is not part of a ring")]
    NonRingAromatic { atom: usize },
    #[error("invalid dictionary: {0}")]
    BadDictionary(String),
}
