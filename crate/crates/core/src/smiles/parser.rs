use std::collections::BTreeMap;

use super::{Atom, Bond, BondOrder, Element, MolGraph, SmilesError};

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    text: &'a str,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    prev: Option<usize>,
    pending: Option<(BondOrder, usize)>,
    branches: Vec<(Option<usize>, usize)>,
    rings: BTreeMap<u32, (usize, Option<BondOrder>)>,
}

/// Parses a SMILES string into an unfeaturized [`MolGraph`].
pub fn parse_smiles(text: &str) -> Result<MolGraph, SmilesError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(SmilesError::EmptyInput);
    }
    let mut p = Parser {
        chars: text.chars().collect(),
        pos: 0,
        text,
        atoms: Vec::new(),
        bonds: Vec::new(),
        prev: None,
        pending: None,
        branches: Vec::new(),
        rings: BTreeMap::new(),
    };
    p.run()?;
    MolGraph::from_parts(p.atoms, p.bonds, text.to_string())
}

impl Parser<'_> {
    fn unknown(&self, start: usize, len: usize) -> SmilesError {
        let token: String = self.chars[start..(start + len).min(self.chars.len())].iter().collect();
        SmilesError::UnknownToken {
            token,
            position: start,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                '(' => {
                    if self.prev.is_none() {
                        return Err(self.unknown(start, 1));
                    }
                    self.branches.push((self.prev, start));
                    self.pos += 1;
                }
                ')' => {
                    let (atom, _) = self
                        .branches
                        .pop()
                        .ok_or(SmilesError::UnmatchedParenthesis(start))?;
                    if self.pending.is_some() {
                        return Err(self.unknown(start, 1));
                    }
                    self.prev = atom;
                    self.pos += 1;
                }
                '-' | '=' | '#' | ':' => {
                    if self.pending.is_some() || self.prev.is_none() {
                        return Err(self.unknown(start, 1));
                    }
                    let order = match c {
                        '-' => BondOrder::Single,
                        '=' => BondOrder::Double,
                        '#' => BondOrder::Triple,
                        _ => BondOrder::Aromatic,
                    };
                    self.pending = Some((order, start));
                    self.pos += 1;
                }
                '.' => {
                    if self.pending.is_some() || self.prev.is_none() {
                        return Err(self.unknown(start, 1));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                '0'..='9' => {
                    self.pos += 1;
                    self.ring_closure(c.to_digit(10).unwrap(), start)?;
                }
                '%' => {
                    let d1 = self.chars.get(start + 1).and_then(|c| c.to_digit(10));
                    let d2 = self.chars.get(start + 2).and_then(|c| c.to_digit(10));
                    match (d1, d2) {
                        (Some(a), Some(b)) => {
                            self.pos += 3;
                            self.ring_closure(a * 10 + b, start)?;
                        }
                        _ => return Err(self.unknown(start, 3)),
                    }
                }
                '[' => {
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom, start)?;
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.add_atom(atom, start)?;
                }
            }
        }
        if let Some(&(_, pos)) = self.branches.last() {
            return Err(SmilesError::UnmatchedParenthesis(pos));
        }
        if let Some((&label, _)) = self.rings.iter().next() {
            return Err(SmilesError::UnmatchedRingClosure(label));
        }
        if let Some((_, pos)) = self.pending {
            return Err(self.unknown(pos, 1));
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let start = self.pos;
        let c = self.chars[start];
        let next = self.chars.get(start + 1).copied();
        let (symbol, aromatic, len) = match (c, next) {
            ('C', Some('l')) => ("Cl", false, 2),
            ('B', Some('r')) => ("Br", false, 2),
            ('B', _) => ("B", false, 1),
            ('C', _) => ("C", false, 1),
            ('N', _) => ("N", false, 1),
            ('O', _) => ("O", false, 1),
            ('S', _) => ("S", false, 1),
            ('P', _) => ("P", false, 1),
            ('F', _) => ("F", false, 1),
            ('I', _) => ("I", false, 1),
            ('b', _) => ("B", true, 1),
            ('c', _) => ("C", true, 1),
            ('n', _) => ("N", true, 1),
            ('o', _) => ("O", true, 1),
            ('s', _) => ("S", true, 1),
            ('p', _) => ("P", true, 1),
            _ => return Err(self.unknown(start, 1)),
        };
        self.pos += len;
        Ok(Atom {
            element: Element::from_symbol(symbol),
            symbol: symbol.to_string(),
            formal_charge: 0,
            aromatic,
            implicit_h: 0,
            degree: 0,
            bracket_h: None,
        })
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        let close = self.chars[open..]
            .iter()
            .position(|&c| c == ']')
            .map(|i| open + i)
            .ok_or_else(|| self.unknown(open, 1))?;
        let body = &self.chars[open + 1..close];
        let mut i = 0;
        let err = |i: usize| SmilesError::UnknownToken {
            token: self.text.chars().skip(open).take(close - open + 1).collect(),
            position: open + 1 + i,
        };
        if body.first().is_some_and(|c| c.is_ascii_digit()) {
            return Err(err(0));
        }
        // element symbol
        let first = *body.first().ok_or_else(|| err(0))?;
        let (symbol, aromatic) = if first.is_ascii_uppercase() {
            i += 1;
            let mut s = first.to_string();
            if let Some(&c) = body.get(1) {
                if c.is_ascii_lowercase() {
                    s.push(c);
                    i += 1;
                }
            }
            (s, false)
        } else if first.is_ascii_lowercase() {
            let two: String = body.iter().take(2).collect();
            if two == "se" || two == "as" {
                i += 2;
                (capitalize(&two), true)
            } else if matches!(first, 'b' | 'c' | 'n' | 'o' | 's' | 'p') {
                i += 1;
                (first.to_ascii_uppercase().to_string(), true)
            } else {
                return Err(err(0));
            }
        } else {
            return Err(err(0));
        };
        let mut h = 0;
        if body.get(i) == Some(&'H') {
            i += 1;
            h = 1;
            if let Some(d) = body.get(i).and_then(|c| c.to_digit(10)) {
                h = d;
                i += 1;
            }
        }
        let mut charge = 0i32;
        if let Some(&sign) = body.get(i).filter(|c| **c == '+' || **c == '-') {
            let unit = if sign == '+' { 1 } else { -1 };
            i += 1;
            if let Some(d) = body.get(i).and_then(|c| c.to_digit(10)) {
                charge = unit * d as i32;
                i += 1;
            } else {
                charge = unit;
                while body.get(i) == Some(&sign) {
                    charge += unit;
                    i += 1;
                }
            }
        }
        if i != body.len() {
            // chirality, atom classes and anything else unsupported
            return Err(err(i));
        }
        self.pos = close + 1;
        Ok(Atom {
            element: Element::from_symbol(&symbol),
            symbol,
            formal_charge: charge,
            aromatic,
            implicit_h: 0,
            degree: 0,
            bracket_h: Some(h),
        })
    }

    fn add_atom(&mut self, atom: Atom, start: usize) -> Result<(), SmilesError> {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        if let Some(prev) = self.prev {
            let order = match self.pending.take() {
                Some((o, _)) => o,
                None => self.implicit_order(prev, idx),
            };
            self.bonds.push(Bond {
                endpoints: (prev, idx),
                order,
                in_ring: false,
            });
        } else if self.pending.is_some() {
            return Err(self.unknown(start, 1));
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn implicit_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn ring_closure(&mut self, label: u32, start: usize) -> Result<(), SmilesError> {
        let current = self.prev.ok_or_else(|| self.unknown(start, 1))?;
        let explicit = self.pending.take().map(|(o, _)| o);
        match self.rings.remove(&label) {
            None => {
                self.rings.insert(label, (current, explicit));
            }
            Some((other, opened_with)) => {
                if other == current
                    || self.bonds.iter().any(|b| {
                        b.endpoints == (other, current) || b.endpoints == (current, other)
                    })
                {
                    return Err(self.unknown(start, 1));
                }
                let order = explicit
                    .or(opened_with)
                    .unwrap_or_else(|| self.implicit_order(other, current));
                self.bonds.push(Bond {
                    endpoints: (other, current),
                    order,
                    in_ring: false,
                });
            }
        }
        Ok(())
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}
