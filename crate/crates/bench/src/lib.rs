//! Fixtures shared by the benchmarks.

use cardgate::datagen::{build_table, TableSpec};
use cardgate::engine::ProbeRequest;
use cardgate::harness::experiments::timing_request;
use cardgate::ColumnTable;

pub fn orders(n_rows: usize) -> ColumnTable {
    build_table(&TableSpec::orders(n_rows, 0.8, 7)).expect("orders fixture")
}

/// `m` candidate sets of `k` payload-range conjuncts over an `n`-row sample.
pub fn request(table: &ColumnTable, n: usize, k: usize, m: usize) -> ProbeRequest {
    timing_request(table, n, k, m, 11).expect("payload columns")
}
