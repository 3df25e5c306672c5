//! A toy autoregressive model over fixed-length token codes.
//!
//! Each item is a sequence of `depth` tokens from an alphabet of size
//! `alphabet`. The model stores, for every reachable prefix, a conditional
//! distribution over the next token, so an item's probability is the product
//! of its per-step conditionals. This is what beam search walks.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DecodeRequest, ItemId};
use crate::uncertainty::renormalize;

pub type TokenSeq = Vec<u8>;

/// Assignment of fixed-length token codes to item ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    alphabet: usize,
    depth: usize,
    codes: BTreeMap<ItemId, TokenSeq>,
}

/// Base-`alphabet` digits of `index`, most significant first.
pub fn index_code(mut index: usize, alphabet: usize, depth: usize) -> TokenSeq {
    let mut code = vec![0u8; depth];
    for slot in code.iter_mut().rev() {
        *slot = (index % alphabet) as u8;
        index /= alphabet;
    }
    code
}

/// Smallest alphabet `a` (at least 2) with `a^depth >= n`.
pub fn alphabet_for(n: usize, depth: usize) -> usize {
    let mut a = 2usize;
    while a.checked_pow(depth as u32).is_none_or(|cap| cap < n) {
        a += 1;
    }
    a
}

impl Codebook {
    /// Codes items by their position in `ids`.
    pub fn sequential(ids: &[ItemId], depth: usize) -> Self {
        assert!(depth >= 1, "token depth must be at least 1");
        let alphabet = alphabet_for(ids.len(), depth);
        assert!(alphabet <= 256, "alphabet does not fit in u8 tokens");
        let codes = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), index_code(i, alphabet, depth)))
            .collect();
        Codebook { alphabet, depth, codes }
    }

    pub fn from_codes(alphabet: usize, depth: usize, codes: BTreeMap<ItemId, TokenSeq>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (id, code) in &codes {
            if code.len() != depth || code.iter().any(|t| usize::from(*t) >= alphabet) {
                return Err(Error::Internal(format!("bad token code for {id}")));
            }
            if let Some(other) = seen.insert(code.clone(), id) {
                return Err(Error::Internal(format!("{id} and {other} share a token code")));
            }
        }
        Ok(Codebook { alphabet, depth, codes })
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn code(&self, id: &ItemId) -> Option<&TokenSeq> {
        self.codes.get(id)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenFactoredModel {
    alphabet: usize,
    depth: usize,
    tables: BTreeMap<TokenSeq, Vec<f64>>,
    items: BTreeMap<TokenSeq, ItemId>,
}

impl TokenFactoredModel {
    /// Checks that every table is a distribution within 1e-9, that codes have
    /// the right shape, and that no two items share a code.
    pub fn new(
        alphabet: usize,
        depth: usize,
        tables: BTreeMap<TokenSeq, Vec<f64>>,
        items: BTreeMap<TokenSeq, ItemId>,
    ) -> Result<Self> {
        for (prefix, table) in &tables {
            if prefix.len() >= depth || table.len() != alphabet {
                return Err(Error::Internal(format!("malformed table at prefix {prefix:?}")));
            }
            let total: f64 = table.iter().sum();
            if table.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::Internal(format!("table at prefix {prefix:?} sums to {total}")));
            }
        }
        let mut ids = std::collections::HashSet::new();
        for (seq, id) in &items {
            if seq.len() != depth || seq.iter().any(|t| usize::from(*t) >= alphabet) {
                return Err(Error::Internal(format!("bad token code for {id}")));
            }
            if !ids.insert(id) {
                return Err(Error::Internal(format!("item {id} has two token codes")));
            }
        }
        Ok(TokenFactoredModel {
            alphabet,
            depth,
            tables,
            items,
        })
    }

    /// Random positive tables for every prefix; every path is a catalog item
    /// named `t` followed by its digits.
    pub fn random<R: Rng>(alphabet: usize, depth: usize, rng: &mut R) -> Self {
        let mut tables = BTreeMap::new();
        for len in 0..depth {
            for idx in 0..alphabet.pow(len as u32) {
                let prefix = index_code(idx, alphabet, len);
                let raw: Vec<f64> = (0..alphabet).map(|_| rng.gen_range(0.05..1.0)).collect();
                let total: f64 = raw.iter().sum();
                tables.insert(prefix, raw.into_iter().map(|p| p / total).collect());
            }
        }
        let items = (0..alphabet.pow(depth as u32))
            .map(|idx| {
                let seq = index_code(idx, alphabet, depth);
                let name: String = seq.iter().map(|t| t.to_string()).collect();
                (seq, ItemId::new(format!("t{name}")))
            })
            .collect();
        TokenFactoredModel {
            alphabet,
            depth,
            tables,
            items,
        }
    }

    /// Factors a request's renormalized candidate distribution over the
    /// codebook's prefix tree: `p(t | prefix) = mass(prefix + t) / mass(prefix)`.
    pub fn from_request(req: &DecodeRequest, codebook: &Codebook) -> Result<Self> {
        let (alphabet, depth) = (codebook.alphabet, codebook.depth);
        let mut prefix_mass: BTreeMap<TokenSeq, Vec<f64>> = BTreeMap::new();
        let mut items = BTreeMap::new();
        for c in renormalize(&req.candidates) {
            let code = codebook
                .code(&c.id)
                .ok_or_else(|| Error::MissingTokenCode(c.id.clone()))?;
            for t in 0..depth {
                let next = prefix_mass
                    .entry(code[..t].to_vec())
                    .or_insert_with(|| vec![0.0; alphabet]);
                next[usize::from(code[t])] += c.prob;
            }
            items.insert(code.clone(), c.id);
        }
        let tables = prefix_mass
            .into_iter()
            .map(|(prefix, masses)| {
                let total: f64 = masses.iter().sum();
                (prefix, masses.into_iter().map(|m| m / total).collect())
            })
            .collect();
        TokenFactoredModel::new(alphabet, depth, tables, items)
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Next-token distribution after `prefix`, if the prefix is reachable.
    pub fn conditional(&self, prefix: &[u8]) -> Option<&[f64]> {
        self.tables.get(prefix).map(Vec::as_slice)
    }

    pub fn item(&self, seq: &[u8]) -> Option<&ItemId> {
        self.items.get(seq)
    }

    pub fn path_count(&self) -> usize {
        self.alphabet.pow(self.depth as u32)
    }

    /// Product of the per-step conditionals along `seq`.
    pub fn path_prob(&self, seq: &[u8]) -> f64 {
        (0..seq.len())
            .map(|t| {
                self.conditional(&seq[..t])
                    .map_or(0.0, |table| table[usize::from(seq[t])])
            })
            .product()
    }
}
