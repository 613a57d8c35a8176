//! Character-level vocabulary with reserved special tokens.

use std::fmt;
use std::fs;
use std::path::Path;

use super::CorpusError;

pub type TokenId = u32;

/// Reserved tokens. Their ids are fixed: they occupy the first slots of every
/// vocabulary in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Special {
    Bos,
    Eos,
    Pad,
    Sep,
    RefBegin,
    RefEnd,
}

impl Special {
    pub const ALL: [Special; 6] = [
        Special::Bos,
        Special::Eos,
        Special::Pad,
        Special::Sep,
        Special::RefBegin,
        Special::RefEnd,
    ];

    pub const fn id(self) -> TokenId {
        self as TokenId
    }

    pub const fn marker(self) -> &'static str {
        match self {
            Special::Bos => "<bos>",
            Special::Eos => "<eos>",
            Special::Pad => "<pad>",
            Special::Sep => "<sep>",
            Special::RefBegin => "<ref>",
            Special::RefEnd => "</ref>",
        }
    }
}

pub const BOS: TokenId = Special::Bos.id();
pub const EOS: TokenId = Special::Eos.id();
pub const PAD: TokenId = Special::Pad.id();
pub const SEP: TokenId = Special::Sep.id();
pub const REF_BEGIN: TokenId = Special::RefBegin.id();
pub const REF_END: TokenId = Special::RefEnd.id();

/// Symbols used by the default vocabulary, after the specials.
pub const DEFAULT_SYMBOLS: &str = "0123456789+=abcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<char>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new(DEFAULT_SYMBOLS.chars()).expect("default symbols are valid")
    }
}

impl Vocab {
    /// Builds a vocabulary from plain symbols; specials are prepended.
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Self, CorpusError> {
        let symbols: Vec<char> = symbols.into_iter().collect();
        for (i, c) in symbols.iter().enumerate() {
            if *c == '<' || *c == '>' || c.is_control() || c.is_whitespace() {
                return Err(CorpusError::InvalidVocab(format!(
                    "symbol {c:?} at index {i} is reserved"
                )));
            }
            if symbols[..i].contains(c) {
                return Err(CorpusError::InvalidVocab(format!("duplicate symbol {c:?}")));
            }
        }
        Ok(Self { symbols })
    }

    pub fn size(&self) -> usize {
        Special::ALL.len() + self.symbols.len()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn id_of(&self, c: char) -> Option<TokenId> {
        self.symbols
            .iter()
            .position(|s| *s == c)
            .map(|p| (p + Special::ALL.len()) as TokenId)
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < Special::ALL.len()
    }

    /// Encodes text. Special markers such as `<eos>` are recognized.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, CorpusError> {
        let mut ids = Vec::with_capacity(text.len());
        let mut rest = text;
        let mut pos = 0;
        'outer: while let Some(c) = rest.chars().next() {
            if c == '<' {
                for special in Special::ALL {
                    if rest.starts_with(special.marker()) {
                        ids.push(special.id());
                        pos += special.marker().chars().count();
                        rest = &rest[special.marker().len()..];
                        continue 'outer;
                    }
                }
            }
            match self.id_of(c) {
                Some(id) => ids.push(id),
                None => return Err(CorpusError::UnknownChar { ch: c, position: pos }),
            }
            pos += 1;
            rest = &rest[c.len_utf8()..];
        }
        Ok(ids)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String, CorpusError> {
        let mut out = String::with_capacity(ids.len());
        for (position, &id) in ids.iter().enumerate() {
            let idx = id as usize;
            if idx < Special::ALL.len() {
                out.push_str(Special::ALL[idx].marker());
            } else if let Some(c) = self.symbols.get(idx - Special::ALL.len()) {
                out.push(*c);
            } else {
                return Err(CorpusError::IdOutOfRange {
                    id,
                    position,
                    vocab_size: self.size(),
                });
            }
        }
        Ok(out)
    }

    /// Writes one entry per line, specials first.
    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        fs::write(path, self.to_string())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        for (n, special) in Special::ALL.iter().enumerate() {
            match lines.next() {
                Some(l) if l == special.marker() => {}
                other => {
                    return Err(CorpusError::Parse {
                        line: n + 1,
                        message: format!(
                            "expected special {}, found {:?}",
                            special.marker(),
                            other.unwrap_or("")
                        ),
                    })
                }
            }
        }
        let mut symbols = Vec::new();
        for (i, l) in lines.enumerate() {
            let mut chars = l.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => symbols.push(c),
                _ => {
                    return Err(CorpusError::Parse {
                        line: Special::ALL.len() + i + 1,
                        message: format!("expected a single symbol, found {l:?}"),
                    })
                }
            }
        }
        Self::new(symbols)
    }
}

impl fmt::Display for Vocab {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for special in Special::ALL {
            writeln!(f, "{}", special.marker())?;
        }
        for c in &self.symbols {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}
