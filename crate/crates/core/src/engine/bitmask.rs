//! Word-packed predicate bitmaps over a probe sample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::{CmpOp, Predicate};

pub const WORD_BITS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bitmap {
    pub words: Vec<u64>,
    pub len: usize,
}

impl Bitmap {
    pub fn zeros(len: usize) -> Self {
        Bitmap {
            words: vec![0; len.div_ceil(WORD_BITS)],
            len,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut b = Bitmap {
            words: vec![u64::MAX; len.div_ceil(WORD_BITS)],
            len,
        };
        b.clear_tail();
        b
    }

    fn clear_tail(&mut self) {
        let rem = self.len % WORD_BITS;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn from_values(values: &[i64], op: &CmpOp) -> Self {
        let mut words = Vec::with_capacity(values.len().div_ceil(WORD_BITS));
        match op.interval() {
            None => words.resize(values.len().div_ceil(WORD_BITS), 0),
            Some((lo, hi)) => {
                for chunk in values.chunks(WORD_BITS) {
                    let mut w = 0u64;
                    for (b, &v) in chunk.iter().enumerate() {
                        w |= (((v >= lo) & (v <= hi)) as u64) << b;
                    }
                    words.push(w);
                }
            }
        }
        Bitmap {
            words,
            len: values.len(),
        }
    }

    pub fn and_assign(&mut self, other: &Bitmap) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= *b;
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }
}

/// Key-only (or full-width) copy of the sampled rows.
#[derive(Debug, Clone, Default)]
pub struct KeyBuffer {
    pub columns: Vec<(String, Vec<i64>)>,
    pub n_rows: usize,
}

impl KeyBuffer {
    pub fn cells(&self) -> usize {
        self.columns.len() * self.n_rows
    }

    pub fn column(&self, name: &str) -> Result<&[i64]> {
        self.columns
            .iter()
            .find(|(c, _)| c == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| {
                Error::InvalidParameter(format!("predicate column `{name}` not present in probe buffer"))
            })
    }
}

/// Predicate bitmaps, one per distinct predicate across all candidate sets.
#[derive(Debug, Clone)]
pub struct BitmaskBlock {
    pub predicates: Vec<Predicate>,
    pub bitmaps: Vec<Bitmap>,
}

#[derive(Debug, Clone)]
pub struct BitmaskEval {
    pub block: BitmaskBlock,
    /// For every candidate set, indices into `block.predicates`.
    pub members: Vec<Vec<usize>>,
    pub conjunctions: Vec<Bitmap>,
}

impl BitmaskEval {
    pub fn set_counts(&self) -> Vec<u64> {
        self.conjunctions.iter().map(Bitmap::count_ones).collect()
    }

    pub fn predicate_counts(&self) -> Vec<u64> {
        self.block.bitmaps.iter().map(Bitmap::count_ones).collect()
    }
}

/// Distinct predicates across `sets` (first-seen order) and each set's member indices.
pub fn dedup_predicates(sets: &[Vec<Predicate>]) -> (Vec<Predicate>, Vec<Vec<usize>>) {
    let mut unique: Vec<Predicate> = Vec::new();
    let members = sets
        .iter()
        .map(|set| {
            set.iter()
                .map(|p| match unique.iter().position(|u| u == p) {
                    Some(i) => i,
                    None => {
                        unique.push(p.clone());
                        unique.len() - 1
                    }
                })
                .collect()
        })
        .collect();
    (unique, members)
}

/// Evaluates each distinct predicate once, then ANDs member bitmaps per set.
pub fn evaluate_bitmasks(keys: &KeyBuffer, sets: &[Vec<Predicate>]) -> Result<BitmaskEval> {
    let (predicates, members) = dedup_predicates(sets);
    let mut bitmaps = Vec::with_capacity(predicates.len());
    for p in &predicates {
        bitmaps.push(Bitmap::from_values(keys.column(&p.column)?, &p.op));
    }
    let conjunctions = members
        .iter()
        .map(|idx| {
            let mut acc = Bitmap::ones(keys.n_rows);
            for &i in idx {
                acc.and_assign(&bitmaps[i]);
            }
            acc
        })
        .collect();
    Ok(BitmaskEval {
        block: BitmaskBlock { predicates, bitmaps },
        members,
        conjunctions,
    })
}
