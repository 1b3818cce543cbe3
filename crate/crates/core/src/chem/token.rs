//! SMILES lexing and the corpus-derived token vocabulary.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::elements;
use super::ChemError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Atom,
    BracketAtom,
    Bond,
    RingClosure,
    BranchOpen,
    BranchClose,
    Dot,
}

/// One lexical unit of a SMILES string. `start` is the byte offset in the
/// source string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
    pub start: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Chirality {
    Unspecified,
    Clockwise,
    CounterClockwise,
    Other,
}

/// Decoded contents of a `[...]` atom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BracketAtom {
    pub isotope: Option<u16>,
    pub atomic_number: u8,
    pub aromatic: bool,
    pub chirality: Chirality,
    pub hydrogens: u8,
    pub charge: i8,
}

/// Split a SMILES string into tokens. Bracket contents are validated here so
/// that malformed or unknown elements are rejected before graph building.
pub fn lex(smiles: &str) -> Result<Vec<Token>, ChemError> {
    if smiles.is_empty() {
        return Err(ChemError::EmptySmiles);
    }
    let bytes = smiles.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    let err = |position: usize, reason: &str| ChemError::Tokenize {
        position,
        smiles: smiles.to_string(),
        reason: reason.to_string(),
    };
    while i < bytes.len() {
        let c = bytes[i];
        let (len, kind) = match c {
            b'[' => {
                let close = smiles[i..]
                    .find(']')
                    .ok_or_else(|| err(i, "unterminated bracket atom"))?;
                parse_bracket(&smiles[i + 1..i + close])
                    .map_err(|reason| err(i, &reason))?;
                (close + 1, TokenKind::BracketAtom)
            }
            b'B' if bytes.get(i + 1) == Some(&b'r') => (2, TokenKind::Atom),
            b'C' if bytes.get(i + 1) == Some(&b'l') => (2, TokenKind::Atom),
            b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I' => (1, TokenKind::Atom),
            b'b' | b'c' | b'n' | b'o' | b'p' | b's' => (1, TokenKind::Atom),
            b'-' | b'=' | b'#' | b'$' | b':' | b'/' | b'\\' => (1, TokenKind::Bond),
            b'0'..=b'9' => (1, TokenKind::RingClosure),
            b'%' => {
                let ok = bytes.len() >= i + 3
                    && bytes[i + 1].is_ascii_digit()
                    && bytes[i + 2].is_ascii_digit();
                if !ok {
                    return Err(err(i, "'%' must be followed by two digits"));
                }
                (3, TokenKind::RingClosure)
            }
            b'(' => (1, TokenKind::BranchOpen),
            b')' => (1, TokenKind::BranchClose),
            b'.' => (1, TokenKind::Dot),
            _ => return Err(err(i, "unexpected character")),
        };
        tokens.push(Token {
            text: smiles[i..i + len].to_string(),
            kind,
            start: i,
        });
        i += len;
    }
    Ok(tokens)
}

/// Parse the inside of a bracket atom: `isotope? symbol chirality? hcount? charge? class?`.
pub fn parse_bracket(body: &str) -> Result<BracketAtom, String> {
    let b = body.as_bytes();
    let mut i = 0;

    let digits_at = |mut j: usize| {
        let s = j;
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
        (s, j)
    };

    let (s, e) = digits_at(i);
    let isotope = if e > s {
        Some(body[s..e].parse::<u16>().map_err(|_| "isotope out of range")?)
    } else {
        None
    };
    i = e;

    // Element symbol. Aromatic two-letter forms first, then element symbols
    // with an optional lowercase second letter.
    let rest = &body[i..];
    let (atomic_number, aromatic, sym_len) = if let Some(z) = ["se", "as", "te"]
        .iter()
        .find(|p| rest.starts_with(**p))
        .and_then(|p| elements::atomic_number(&capitalize(p)))
    {
        (z, true, 2)
    } else if let Some(&first) = rest.as_bytes().first() {
        if first.is_ascii_lowercase() {
            let sym = capitalize(&rest[..1]);
            let z = elements::atomic_number(&sym)
                .filter(|z| elements::can_be_aromatic(*z))
                .ok_or_else(|| format!("invalid aromatic symbol '{}'", &rest[..1]))?;
            (z, true, 1)
        } else if first.is_ascii_uppercase() {
            let two = rest
                .get(..2)
                .filter(|t| t.as_bytes()[1].is_ascii_lowercase())
                .and_then(elements::atomic_number);
            match two {
                Some(z) => (z, false, 2),
                None => {
                    let z = elements::atomic_number(&rest[..1])
                        .ok_or_else(|| format!("invalid element '{}'", &rest[..1]))?;
                    (z, false, 1)
                }
            }
        } else {
            return Err(format!("invalid element in '[{body}]'"));
        }
    } else {
        return Err("empty bracket atom".to_string());
    };
    i += sym_len;

    let mut chirality = Chirality::Unspecified;
    if i < b.len() && b[i] == b'@' {
        i += 1;
        if i < b.len() && b[i] == b'@' {
            chirality = Chirality::Clockwise;
            i += 1;
        } else if i + 1 < b.len() && b[i].is_ascii_uppercase() && b[i + 1].is_ascii_uppercase() {
            // @TH1, @AL2, @SP3, @TB12, @OH20 ...
            chirality = Chirality::Other;
            i += 2;
            i = digits_at(i).1;
        } else {
            chirality = Chirality::CounterClockwise;
        }
    }

    let mut hydrogens = 0u8;
    if i < b.len() && b[i] == b'H' {
        i += 1;
        let (s, e) = digits_at(i);
        hydrogens = if e > s {
            body[s..e].parse().map_err(|_| "hydrogen count out of range")?
        } else {
            1
        };
        i = e;
    }

    let mut charge = 0i8;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        let sign = b[i];
        let unit: i8 = if sign == b'+' { 1 } else { -1 };
        i += 1;
        let (s, e) = digits_at(i);
        if e > s {
            let mag: i8 = body[s..e].parse().map_err(|_| "charge out of range")?;
            charge = unit * mag;
            i = e;
        } else {
            charge = unit;
            while i < b.len() && b[i] == sign {
                charge += unit;
                i += 1;
            }
        }
    }

    if i < b.len() && b[i] == b':' {
        let (s, e) = digits_at(i + 1);
        if e == s {
            return Err("atom class needs digits".to_string());
        }
        i = e;
    }

    if i != b.len() {
        return Err(format!("unexpected '{}' in bracket atom", &body[i..]));
    }

    Ok(BracketAtom {
        isotope,
        atomic_number,
        aromatic,
        chirality,
        hydrogens,
        charge,
    })
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

/// What to do with a token the dictionary has never seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownPolicy {
    Substitute,
    Reject,
}

/// Ordered vocabulary: PAD and UNK first, then corpus tokens in order of
/// first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TokenDictionary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl TokenDictionary {
    pub fn build<S: AsRef<str>>(corpus: &[S]) -> Result<Self, ChemError> {
        if corpus.is_empty() {
            return Err(ChemError::EmptyCorpus);
        }
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        for smiles in corpus {
            for tok in lex(smiles.as_ref())? {
                if !tokens.contains(&tok.text) {
                    tokens.push(tok.text);
                }
            }
        }
        Self::from_tokens(tokens)
    }

    /// Rebuild from an ordered token list, as written by [`Self::tokens`].
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, ChemError> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(ChemError::BadDictionary(
                "dictionary must start with <pad> and <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(ChemError::BadDictionary(format!("duplicate token '{t}'")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, smiles: &str, policy: UnknownPolicy) -> Result<TokenSequence, ChemError> {
        let ids = lex(smiles)?
            .into_iter()
            .map(|t| match (self.id(&t.text), policy) {
                (Some(id), _) => Ok(id),
                (None, UnknownPolicy::Substitute) => Ok(UNK_ID),
                (None, UnknownPolicy::Reject) => Err(ChemError::UnknownToken {
                    position: t.start,
                    token: t.text,
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TokenSequence { ids })
    }
}

impl TryFrom<Vec<String>> for TokenDictionary {
    type Error = ChemError;

    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        Self::from_tokens(tokens)
    }
}

impl From<TokenDictionary> for Vec<String> {
    fn from(d: TokenDictionary) -> Self {
        d.tokens
    }
}

/// Token ids of one SMILES string. Never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(s: &str) -> Vec<String> {
        lex(s).unwrap().into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn benzene_tokens() {
        assert_eq!(texts("c1ccccc1"), ["c", "1", "c", "c", "c", "c", "c", "1"]);
    }

    #[test]
    fn two_letter_halogens_are_single_tokens() {
        assert_eq!(texts("CCl"), ["C", "Cl"]);
        assert_eq!(texts("BrCBr"), ["Br", "C", "Br"]);
    }

    #[test]
    fn bracket_and_percent_tokens() {
        assert_eq!(
            texts("[13CH3][C@@H](N)C%12CC%12"),
            ["[13CH3]", "[C@@H]", "(", "N", ")", "C", "%12", "C", "C", "%12"]
        );
        let t = lex("C.[Na+]").unwrap();
        assert_eq!(t[1].kind, TokenKind::Dot);
        assert_eq!(t[2].kind, TokenKind::BracketAtom);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(lex("C[X]"), Err(ChemError::Tokenize { position: 1, .. })));
        assert!(matches!(lex("C[CH3"), Err(ChemError::Tokenize { .. })));
        assert!(matches!(lex("C%1"), Err(ChemError::Tokenize { .. })));
        assert!(matches!(lex("C?C"), Err(ChemError::Tokenize { position: 1, .. })));
        assert!(matches!(lex(""), Err(ChemError::EmptySmiles)));
        assert!(lex("[x]").is_err());
    }

    #[test]
    fn bracket_contents() {
        let a = parse_bracket("13CH3").unwrap();
        assert_eq!((a.isotope, a.atomic_number, a.hydrogens), (Some(13), 6, 3));
        let a = parse_bracket("nH").unwrap();
        assert!(a.aromatic);
        assert_eq!((a.atomic_number, a.hydrogens), (7, 1));
        let a = parse_bracket("C@@H").unwrap();
        assert_eq!(a.chirality, Chirality::Clockwise);
        let a = parse_bracket("C@H").unwrap();
        assert_eq!(a.chirality, Chirality::CounterClockwise);
        let a = parse_bracket("C@TH2").unwrap();
        assert_eq!(a.chirality, Chirality::Other);
        assert_eq!(parse_bracket("Ca++").unwrap().charge, 2);
        assert_eq!(parse_bracket("Fe+3").unwrap().charge, 3);
        assert_eq!(parse_bracket("O-").unwrap().charge, -1);
        assert_eq!(parse_bracket("NH4+:7").unwrap().hydrogens, 4);
        assert_eq!(parse_bracket("se").unwrap().atomic_number, 34);
        assert_eq!(parse_bracket("Sc").unwrap().atomic_number, 21);
        assert_eq!(parse_bracket("H+").unwrap().atomic_number, 1);
    }

    #[test]
    fn dictionary_first_appearance_order() {
        let d = TokenDictionary::build(&["CC", "C=O"]).unwrap();
        assert_eq!(d.tokens(), [PAD_TOKEN, UNK_TOKEN, "C", "=", "O"]);
        assert_eq!(d.id("O"), Some(4));
        let d = TokenDictionary::build(&["c1ccccc1"]).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.tokens()[2..], ["c", "1"]);
    }

    #[test]
    fn dictionary_errors() {
        let empty: [&str; 0] = [];
        assert!(matches!(TokenDictionary::build(&empty), Err(ChemError::EmptyCorpus)));
        assert!(matches!(
            TokenDictionary::build(&["C[X]"]),
            Err(ChemError::Tokenize { .. })
        ));
        assert!(TokenDictionary::from_tokens(vec!["C".into()]).is_err());
    }

    #[test]
    fn encode_policies() {
        let d = TokenDictionary::build(&["CC"]).unwrap();
        assert_eq!(d.encode("CCN", UnknownPolicy::Substitute).unwrap().ids, [2, 2, UNK_ID]);
        assert!(matches!(
            d.encode("CCN", UnknownPolicy::Reject),
            Err(ChemError::UnknownToken { position: 2, .. })
        ));
    }
}
