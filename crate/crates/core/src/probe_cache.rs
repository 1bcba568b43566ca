//! Probe results cached by predicate shape and (quantized) bind values.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::query::{CmpOp, Predicate};

pub const DEFAULT_CAPACITY: usize = 4096;
pub const DEFAULT_RANGE_BUCKETS: u32 = 64;

/// Bind abstraction for one conjunct.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BindBucket {
    Exact(Vec<i64>),
    /// Equal-width bucket ids of each range bound.
    Range(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub table: String,
    /// `(column, operator, bind bucket)` sorted, so conjunct order does not matter.
    pub conjuncts: Vec<(String, String, BindBucket)>,
}

/// Maps range binds onto equal-width buckets of each column's value domain.
#[derive(Debug, Clone, Default)]
pub struct BindQuantizer {
    pub buckets: u32,
    domains: HashMap<String, (i64, i64)>,
}

impl BindQuantizer {
    pub fn new(buckets: u32) -> Self {
        BindQuantizer {
            buckets: buckets.max(1),
            domains: HashMap::new(),
        }
    }

    pub fn with_domain(mut self, column: &str, min: i64, max: i64) -> Self {
        self.set_domain(column, min, max);
        self
    }

    pub fn set_domain(&mut self, column: &str, min: i64, max: i64) {
        self.domains.insert(column.to_string(), (min.min(max), max.max(min)));
    }

    fn bucket_of(&self, column: &str, v: i64) -> u32 {
        let Some(&(min, max)) = self.domains.get(column) else {
            // unknown domain: one bucket per value
            return v as u32;
        };
        if v <= min {
            return 0;
        }
        if v >= max {
            return self.buckets - 1;
        }
        let width = (max as i128 - min as i128 + 1) as f64;
        let b = ((v as i128 - min as i128) as f64 * self.buckets as f64 / width) as u32;
        b.min(self.buckets - 1)
    }

    pub fn bucket(&self, p: &Predicate) -> BindBucket {
        match p.op {
            CmpOp::Eq(v) => BindBucket::Exact(vec![v]),
            op => BindBucket::Range(op.binds().iter().map(|&v| self.bucket_of(&p.column, v)).collect()),
        }
    }

    pub fn key(&self, table: &str, predicates: &[Predicate]) -> CacheKey {
        let mut conjuncts: Vec<_> = predicates
            .iter()
            .map(|p| (p.column.clone(), p.op.symbol().to_string(), self.bucket(p)))
            .collect();
        conjuncts.sort();
        CacheKey {
            table: table.to_string(),
            conjuncts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    /// Selectivity of every candidate set, in the probe's set order.
    pub set_sel: Vec<f64>,
    /// Selectivity of every conjunct in normalized predicate order.
    pub marginal_sel: Vec<f64>,
    pub pcs: Option<f64>,
    pub n_sample: usize,
    pub seq: u64,
    pub hits: u64,
}

impl CacheEntry {
    pub fn new(set_sel: Vec<f64>, marginal_sel: Vec<f64>, pcs: Option<f64>, n_sample: usize) -> Self {
        CacheEntry {
            set_sel,
            marginal_sel,
            pcs,
            n_sample,
            seq: 0,
            hits: 0,
        }
    }

    /// Selectivity of the full conjunction (the last set).
    pub fn joint(&self) -> f64 {
        *self.set_sel.last().unwrap_or(&0.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub inserts: u64,
    pub evictions: u64,
    pub invalidations: u64,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeCache {
    capacity: usize,
    entries: HashMap<CacheKey, CacheEntry>,
    order: BTreeMap<u64, CacheKey>,
    next_seq: u64,
    stats: CacheStats,
}

impl Default for ProbeCache {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

impl ProbeCache {
    pub fn new(capacity: usize) -> Self {
        ProbeCache {
            capacity: capacity.max(1),
            entries: HashMap::new(),
            order: BTreeMap::new(),
            next_seq: 0,
            stats: CacheStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn lookup(&mut self, key: &CacheKey) -> Option<CacheEntry> {
        match self.entries.get_mut(key) {
            Some(e) => {
                e.hits += 1;
                self.stats.hits += 1;
                Some(e.clone())
            }
            None => {
                self.stats.misses += 1;
                None
            }
        }
    }

    /// Inserts or replaces; evicts the least recently inserted entry beyond capacity.
    pub fn put(&mut self, key: CacheKey, mut entry: CacheEntry) {
        if let Some(old) = self.entries.remove(&key) {
            self.order.remove(&old.seq);
        }
        entry.seq = self.next_seq;
        self.next_seq += 1;
        self.order.insert(entry.seq, key.clone());
        self.entries.insert(key, entry);
        self.stats.inserts += 1;
        while self.entries.len() > self.capacity {
            let (_, oldest) = self.order.pop_first().expect("order tracks entries");
            self.entries.remove(&oldest);
            self.stats.evictions += 1;
        }
    }

    /// Drops every entry keyed on `table`.
    pub fn invalidate_on_mutation(&mut self, table: &str) {
        let before = self.entries.len();
        self.entries.retain(|k, _| k.table != table);
        let live: std::collections::HashSet<u64> = self.entries.values().map(|e| e.seq).collect();
        self.order.retain(|seq, _| live.contains(seq));
        self.stats.invalidations += (before - self.entries.len()) as u64;
    }
}
