use std::collections::BTreeMap;

use super::elements;
use super::{rings, Atom, Bond, BondOrder, Chirality, GraphError, MolGraph};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SmilesError {
    #[error("empty SMILES string")]
    Empty,
    #[error("ring closure {label} opened at byte {offset} is never closed")]
    UnclosedRing { label: u32, offset: usize },
    #[error("unbalanced parenthesis at byte {offset}")]
    UnbalancedParen { offset: usize },
    #[error("unknown element symbol '{symbol}' at byte {offset}")]
    UnknownElement { symbol: String, offset: usize },
    #[error("bracket atom syntax error at byte {offset}: {reason}")]
    Bracket { offset: usize, reason: &'static str },
    #[error("unexpected character '{ch}' at byte {offset}")]
    Unexpected { ch: char, offset: usize },
    #[error("bond symbol at byte {offset} is not followed by an atom")]
    DanglingBond { offset: usize },
    #[error("invalid ring bond at byte {offset}: {reason}")]
    RingBond { offset: usize, reason: &'static str },
    #[error("unsupported bond symbol '{ch}' at byte {offset}")]
    UnsupportedBond { ch: char, offset: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy)]
struct PendingBond {
    order: BondOrder,
    offset: usize,
}

struct OpenRing {
    atom: usize,
    bond: Option<PendingBond>,
    offset: usize,
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    /// bonds whose order came from adjacency rather than a bond symbol
    implicit: Vec<bool>,
    prev: Option<usize>,
    pending: Option<PendingBond>,
    branches: Vec<(Option<usize>, usize)>,
    rings: BTreeMap<u32, OpenRing>,
}

/// Reads a SMILES string into a [`MolGraph`].
///
/// Lowercase atoms are aromatic; implicit hydrogens on organic-subset atoms
/// come from the default valence table, bracket atoms carry only the
/// hydrogens they declare. Stereo bond marks (`/`, `\`) read as single bonds.
pub fn parse_smiles(text: &str) -> Result<MolGraph, SmilesError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(SmilesError::Empty);
    }
    let mut parser = Parser {
        text: trimmed.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        implicit: Vec::new(),
        prev: None,
        pending: None,
        branches: Vec::new(),
        rings: BTreeMap::new(),
    };
    parser.run()?;
    parser.finish(trimmed)
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn unexpected(&self, at: usize) -> SmilesError {
        let ch = std::str::from_utf8(&self.text[at..])
            .ok()
            .and_then(|s| s.chars().next())
            .unwrap_or(self.text[at] as char);
        SmilesError::Unexpected { ch, offset: at }
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            let at = self.pos;
            match c {
                b'(' => {
                    if self.prev.is_none() {
                        return Err(self.unexpected(at));
                    }
                    if let Some(p) = self.pending {
                        return Err(SmilesError::DanglingBond { offset: p.offset });
                    }
                    self.branches.push((self.prev, at));
                    self.pos += 1;
                }
                b')' => {
                    let Some((prev, _)) = self.branches.pop() else {
                        return Err(SmilesError::UnbalancedParen { offset: at });
                    };
                    if let Some(p) = self.pending {
                        return Err(SmilesError::DanglingBond { offset: p.offset });
                    }
                    self.prev = prev;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' | b'$' => {
                    if self.pending.is_some() || self.prev.is_none() {
                        return Err(self.unexpected(at));
                    }
                    let order = match c {
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        b':' => BondOrder::Aromatic,
                        b'$' => return Err(SmilesError::UnsupportedBond { ch: '$', offset: at }),
                        _ => BondOrder::Single,
                    };
                    self.pending = Some(PendingBond { order, offset: at });
                    self.pos += 1;
                }
                b'.' => {
                    if let Some(p) = self.pending {
                        return Err(SmilesError::DanglingBond { offset: p.offset });
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => self.ring_bond()?,
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom)?;
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.add_atom(atom)?;
                }
            }
        }
        Ok(())
    }

    fn finish(mut self, source: &str) -> Result<MolGraph, SmilesError> {
        if let Some(p) = self.pending {
            return Err(SmilesError::DanglingBond { offset: p.offset });
        }
        if let Some(&(_, offset)) = self.branches.last() {
            return Err(SmilesError::UnbalancedParen { offset });
        }
        if let Some((label, ring)) = self.rings.iter().min_by_key(|(_, r)| r.offset) {
            return Err(SmilesError::UnclosedRing {
                label: *label,
                offset: ring.offset,
            });
        }
        // Adjacent aromatic atoms in different rings (e.g. biphenyl written
        // without '-') are joined by a single bond.
        let probe = MolGraph {
            atoms: vec![Atom::default(); self.atoms.len()],
            bonds: self.bonds.clone(),
            smiles: String::new(),
        };
        let in_ring = rings::ring_bonds(&probe);
        for (k, bond) in self.bonds.iter_mut().enumerate() {
            if self.implicit[k] && bond.order == BondOrder::Aromatic && !in_ring[k] {
                bond.order = BondOrder::Single;
            }
        }
        Ok(MolGraph::from_parts(self.atoms, self.bonds, source.to_string())?)
    }

    fn add_atom(&mut self, atom: Atom) -> Result<(), SmilesError> {
        let idx = self.atoms.len();
        let aromatic = atom.aromatic;
        self.atoms.push(atom);
        match self.prev {
            Some(p) => {
                let (order, implicit) = match self.pending.take() {
                    Some(b) => (b.order, false),
                    None => (implicit_order(self.atoms[p].aromatic, aromatic), true),
                };
                self.push_bond(p, idx, order, implicit);
            }
            None => {
                if let Some(p) = self.pending {
                    return Err(SmilesError::DanglingBond { offset: p.offset });
                }
            }
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn push_bond(&mut self, a: usize, b: usize, order: BondOrder, implicit: bool) {
        self.bonds.push(Bond { a, b, order });
        self.implicit.push(implicit);
    }

    fn ring_bond(&mut self) -> Result<(), SmilesError> {
        let at = self.pos;
        let Some(current) = self.prev else {
            return Err(self.unexpected(at));
        };
        let label = if self.text[at] == b'%' {
            self.pos += 1;
            if self.peek() == Some(b'(') {
                self.pos += 1;
                let digits = self.digits();
                if digits.is_none() || self.peek() != Some(b')') {
                    return Err(SmilesError::RingBond {
                        offset: at,
                        reason: "malformed %(n) label",
                    });
                }
                self.pos += 1;
                digits.unwrap()
            } else {
                let two = self.text.get(self.pos..self.pos + 2);
                match two {
                    Some(d) if d.iter().all(u8::is_ascii_digit) => {
                        self.pos += 2;
                        ((d[0] - b'0') * 10 + (d[1] - b'0')) as u32
                    }
                    _ => {
                        return Err(SmilesError::RingBond {
                            offset: at,
                            reason: "'%' must be followed by two digits",
                        })
                    }
                }
            }
        } else {
            self.pos += 1;
            (self.text[at] - b'0') as u32
        };
        let pending = self.pending.take();
        match self.rings.remove(&label) {
            None => {
                self.rings.insert(
                    label,
                    OpenRing {
                        atom: current,
                        bond: pending,
                        offset: at,
                    },
                );
            }
            Some(open) => {
                if open.atom == current {
                    return Err(SmilesError::RingBond {
                        offset: at,
                        reason: "ring closes on its own atom",
                    });
                }
                let (order, implicit) = match (open.bond, pending) {
                    (Some(x), Some(y)) if x.order != y.order => {
                        return Err(SmilesError::RingBond {
                            offset: at,
                            reason: "conflicting bond symbols at ring ends",
                        })
                    }
                    (Some(x), _) | (None, Some(x)) => (x.order, false),
                    (None, None) => (
                        implicit_order(self.atoms[open.atom].aromatic, self.atoms[current].aromatic),
                        true,
                    ),
                };
                let exists = self.bonds.iter().any(|b| {
                    (b.a == open.atom && b.b == current) || (b.a == current && b.b == open.atom)
                });
                if exists {
                    return Err(SmilesError::RingBond {
                        offset: at,
                        reason: "ring bond duplicates an existing bond",
                    });
                }
                self.push_bond(open.atom, current, order, implicit);
            }
        }
        Ok(())
    }

    fn digits(&mut self) -> Option<u32> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.text[start..self.pos]).ok()?.parse().ok()
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let at = self.pos;
        let c = self.text[at];
        let next = self.text.get(at + 1).copied();
        let (element, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => (17, false, 2),
            (b'B', Some(b'r')) => (35, false, 2),
            (b'B', _) => (5, false, 1),
            (b'C', _) => (6, false, 1),
            (b'N', _) => (7, false, 1),
            (b'O', _) => (8, false, 1),
            (b'P', _) => (15, false, 1),
            (b'S', _) => (16, false, 1),
            (b'F', _) => (9, false, 1),
            (b'I', _) => (53, false, 1),
            (b'b', _) => (5, true, 1),
            (b'c', _) => (6, true, 1),
            (b'n', _) => (7, true, 1),
            (b'o', _) => (8, true, 1),
            (b'p', _) => (15, true, 1),
            (b's', _) => (16, true, 1),
            (b'*', _) => (elements::WILDCARD, false, 1),
            _ if c.is_ascii_alphabetic() => {
                let end = if next.is_some_and(|n| n.is_ascii_lowercase()) { at + 2 } else { at + 1 };
                return Err(SmilesError::UnknownElement {
                    symbol: String::from_utf8_lossy(&self.text[at..end]).into_owned(),
                    offset: at,
                });
            }
            _ => return Err(self.unexpected(at)),
        };
        self.pos += len;
        let mut atom = Atom::new(element);
        atom.aromatic = aromatic;
        Ok(atom)
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        let err = |offset, reason| SmilesError::Bracket { offset, reason };
        let isotope = match self.digits() {
            Some(v) if v <= u16::MAX as u32 => Some(v as u16),
            Some(_) => return Err(err(open + 1, "isotope out of range")),
            None => None,
        };
        let (element, aromatic) = self.bracket_symbol()?;
        let mut atom = Atom::new(element);
        atom.aromatic = aromatic;
        atom.isotope = isotope;
        if self.peek() == Some(b'@') {
            self.pos += 1;
            atom.chirality = if self.peek() == Some(b'@') {
                self.pos += 1;
                Chirality::Clockwise
            } else {
                let class = self.text.get(self.pos..self.pos + 2);
                match class {
                    Some(b"TH") | Some(b"AL") | Some(b"SP") | Some(b"TB") | Some(b"OH") => {
                        let class = [class.unwrap()[0], class.unwrap()[1]];
                        self.pos += 2;
                        let n = self.digits().ok_or(err(self.pos, "chirality class needs a number"))?;
                        match (&class, n) {
                            (b"TH", 1) => Chirality::CounterClockwise,
                            (b"TH", 2) => Chirality::Clockwise,
                            _ => Chirality::Other,
                        }
                    }
                    _ => Chirality::CounterClockwise,
                }
            };
        }
        let mut h = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            h = match self.digits() {
                Some(v) if v <= 16 => v as u8,
                Some(_) => return Err(err(self.pos, "hydrogen count out of range")),
                None => 1,
            };
        }
        atom.explicit_h = Some(h);
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let unit: i32 = if sign == b'+' { 1 } else { -1 };
            let magnitude = match self.digits() {
                Some(v) => v as i32,
                None => {
                    let mut m = 1;
                    while self.peek() == Some(sign) {
                        self.pos += 1;
                        m += 1;
                    }
                    m
                }
            };
            if magnitude > 15 {
                return Err(err(self.pos, "charge out of range"));
            }
            atom.formal_charge = (unit * magnitude) as i8;
        }
        if self.peek() == Some(b':') {
            self.pos += 1;
            self.digits().ok_or(err(self.pos, "atom class needs a number"))?;
        }
        match self.peek() {
            Some(b']') => {
                self.pos += 1;
                Ok(atom)
            }
            Some(_) => Err(err(self.pos, "unexpected character inside brackets")),
            None => Err(err(open, "missing ']'")),
        }
    }

    fn bracket_symbol(&mut self) -> Result<(u8, bool), SmilesError> {
        let at = self.pos;
        let Some(c) = self.peek() else {
            return Err(SmilesError::Bracket {
                offset: at,
                reason: "missing element symbol",
            });
        };
        if c == b'*' {
            self.pos += 1;
            return Ok((elements::WILDCARD, false));
        }
        if c.is_ascii_lowercase() {
            let two = self.text.get(at..at + 2);
            let (sym, len) = match two {
                Some(b"se") => ("Se", 2),
                Some(b"as") => ("As", 2),
                Some(b"te") => ("Te", 2),
                _ => match c {
                    b'b' => ("B", 1),
                    b'c' => ("C", 1),
                    b'n' => ("N", 1),
                    b'o' => ("O", 1),
                    b'p' => ("P", 1),
                    b's' => ("S", 1),
                    _ => {
                        return Err(SmilesError::UnknownElement {
                            symbol: (c as char).to_string(),
                            offset: at,
                        })
                    }
                },
            };
            self.pos += len;
            return Ok((elements::atomic_number(sym).expect("aromatic symbol"), true));
        }
        if !c.is_ascii_uppercase() {
            return Err(SmilesError::Bracket {
                offset: at,
                reason: "expected element symbol",
            });
        }
        if let Some(&l) = self.text.get(at + 1) {
            if l.is_ascii_lowercase() {
                let sym = std::str::from_utf8(&self.text[at..at + 2]).unwrap_or("");
                if let Some(z) = elements::atomic_number(sym) {
                    self.pos += 2;
                    return Ok((z, false));
                }
            }
        }
        let sym = (c as char).to_string();
        match elements::atomic_number(&sym) {
            Some(z) => {
                self.pos += 1;
                Ok((z, false))
            }
            None => {
                let end = if self.text.get(at + 1).is_some_and(u8::is_ascii_lowercase) { at + 2 } else { at + 1 };
                Err(SmilesError::UnknownElement {
                    symbol: String::from_utf8_lossy(&self.text[at..end]).into_owned(),
                    offset: at,
                })
            }
        }
    }
}

fn implicit_order(a_aromatic: bool, b_aromatic: bool) -> BondOrder {
    if a_aromatic && b_aromatic {
        BondOrder::Aromatic
    } else {
        BondOrder::Single
    }
}
