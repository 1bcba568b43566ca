//! Row sampling: uniform without replacement, or contiguous blocks.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::rng;
use crate::error::{Error, Result};

pub const DEFAULT_BLOCK_ROWS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    UniformRow,
    Block,
}

/// Partial Fisher–Yates over `0..n` keeping only the displaced slots.
fn partial_shuffle(n: usize, take: usize, seed: u64) -> Vec<u32> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(take);
    if take.saturating_mul(8) < n {
        let mut moved: HashMap<usize, usize> = HashMap::with_capacity(take * 2);
        for i in 0..take {
            let j = r.gen_range(i..n);
            let vi = *moved.get(&i).unwrap_or(&i);
            let vj = *moved.get(&j).unwrap_or(&j);
            moved.insert(j, vi);
            out.push(vj as u32);
        }
    } else {
        let mut a: Vec<u32> = (0..n as u32).collect();
        for i in 0..take {
            let j = r.gen_range(i..n);
            a.swap(i, j);
        }
        a.truncate(take);
        out = a;
    }
    out
}

/// Simple random sample of `n` distinct row ids, ascending.
pub fn sample_uniform(n_rows: usize, n: usize, seed: u64) -> Result<Vec<u32>> {
    if n > n_rows {
        return Err(Error::SampleTooLarge { requested: n, rows: n_rows });
    }
    if n == n_rows {
        return Ok((0..n_rows as u32).collect());
    }
    let mut rows = partial_shuffle(n_rows, n, seed);
    rows.sort_unstable();
    Ok(rows)
}

/// Random whole blocks of `block` rows until `n` rows are covered; the last
/// block drawn is truncated. Ascending.
pub fn sample_blocks(n_rows: usize, n: usize, block: usize, seed: u64) -> Result<Vec<u32>> {
    if n > n_rows {
        return Err(Error::SampleTooLarge { requested: n, rows: n_rows });
    }
    if block == 0 {
        return Err(Error::InvalidParameter("block size must be >= 1".into()));
    }
    if n == n_rows {
        return Ok((0..n_rows as u32).collect());
    }
    let n_blocks = n_rows.div_ceil(block);
    let mut rows = Vec::with_capacity(n);
    for b in partial_shuffle(n_blocks, n_blocks, seed) {
        let start = b as usize * block;
        let end = (start + block).min(n_rows);
        let take = (end - start).min(n - rows.len());
        rows.extend(start as u32..(start + take) as u32);
        if rows.len() == n {
            break;
        }
    }
    rows.sort_unstable();
    Ok(rows)
}

pub fn draw_sample(n_rows: usize, n: usize, mode: SampleMode, seed: u64) -> Result<Vec<u32>> {
    match mode {
        SampleMode::UniformRow => sample_uniform(n_rows, n, seed),
        SampleMode::Block => sample_blocks(n_rows, n, DEFAULT_BLOCK_ROWS, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_sample_is_identity() {
        for mode in [SampleMode::UniformRow, SampleMode::Block] {
            let s = draw_sample(5000, 5000, mode, 3).unwrap();
            assert_eq!(s, (0..5000).collect::<Vec<u32>>());
        }
    }

    #[test]
    fn too_large_rejected() {
        assert!(matches!(
            draw_sample(10, 11, SampleMode::UniformRow, 0),
            Err(Error::SampleTooLarge { .. })
        ));
    }

    #[test]
    fn uniform_is_distinct_sorted_deterministic() {
        for (rows, n) in [(1_000_000, 1000), (1000, 900), (10, 1)] {
            let a = sample_uniform(rows, n, 42).unwrap();
            assert_eq!(a.len(), n);
            assert!(a.windows(2).all(|w| w[0] < w[1]));
            assert!(a.iter().all(|&r| (r as usize) < rows));
            assert_eq!(a, sample_uniform(rows, n, 42).unwrap());
        }
        assert_ne!(sample_uniform(1000, 10, 1).unwrap(), sample_uniform(1000, 10, 2).unwrap());
    }

    #[test]
    fn blocks_are_contiguous_runs() {
        let s = sample_blocks(100_000, 3000, 1024, 9).unwrap();
        assert_eq!(s.len(), 3000);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        let runs = s.windows(2).filter(|w| w[1] != w[0] + 1).count() + 1;
        assert!(runs <= 4, "{runs} runs");
    }

    #[test]
    fn blocks_handle_short_tail() {
        // last block has 5 rows
        let s = sample_blocks(1029, 1028, 1024, 1).unwrap();
        assert_eq!(s.len(), 1028);
        let mut d = s.clone();
        d.dedup();
        assert_eq!(d.len(), 1028);
    }
}
