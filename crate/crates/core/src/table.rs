//! In-memory columnar relation with optional sorted secondary indexes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::query::CmpOp;

/// Sorted `(value, row id)` index over one column.
#[derive(Debug, Clone)]
pub struct SortedIndex {
    values: Vec<i64>,
    rows: Vec<u32>,
}

impl SortedIndex {
    pub fn build(column: &[i64]) -> Self {
        let mut rows: Vec<u32> = (0..column.len() as u32).collect();
        rows.sort_by_key(|&r| (column[r as usize], r));
        let values = rows.iter().map(|&r| column[r as usize]).collect();
        SortedIndex { values, rows }
    }

    /// Row ids whose value satisfies `op`, ascending by (value, row).
    pub fn lookup(&self, op: &CmpOp) -> &[u32] {
        match op.interval() {
            None => &[],
            Some((lo, hi)) => {
                let start = self.values.partition_point(|&v| v < lo);
                let end = self.values.partition_point(|&v| v <= hi);
                &self.rows[start..end.max(start)]
            }
        }
    }

    pub fn count(&self, op: &CmpOp) -> usize {
        self.lookup(op).len()
    }

    pub fn row_ids(&self) -> &[u32] {
        &self.rows
    }

    pub fn sorted_values(&self) -> &[i64] {
        &self.values
    }
}

#[derive(Debug, Clone)]
pub struct ColumnTable {
    name: String,
    n_rows: usize,
    columns: Vec<(String, Vec<i64>)>,
    indexes: BTreeMap<String, SortedIndex>,
    generation: u64,
}

impl ColumnTable {
    pub fn new(name: impl Into<String>, columns: Vec<(String, Vec<i64>)>) -> Result<Self> {
        let name = name.into();
        let n_rows = columns.first().map(|(_, c)| c.len()).unwrap_or(0);
        for (col, values) in &columns {
            if values.len() != n_rows {
                return Err(Error::InvalidParameter(format!(
                    "column `{col}` has {} values, expected {n_rows}",
                    values.len()
                )));
            }
        }
        for (i, (col, _)) in columns.iter().enumerate() {
            if columns[..i].iter().any(|(c, _)| c == col) {
                return Err(Error::InvalidParameter(format!("duplicate column `{col}`")));
            }
        }
        Ok(ColumnTable {
            name,
            n_rows,
            columns,
            indexes: BTreeMap::new(),
            generation: 0,
        })
    }

    pub fn with_indexes<S: AsRef<str>>(mut self, columns: &[S]) -> Result<Self> {
        for c in columns {
            self.create_index(c.as_ref())?;
        }
        Ok(self)
    }

    pub fn create_index(&mut self, column: &str) -> Result<()> {
        let idx = SortedIndex::build(self.column(column)?);
        self.indexes.insert(column.to_string(), idx);
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Bumped on every mutation; caches key their validity on it.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|(n, _)| n == name)
    }

    pub fn column(&self, name: &str) -> Result<&[i64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::UnknownColumn {
                table: self.name.clone(),
                column: name.to_string(),
            })
    }

    pub fn index(&self, column: &str) -> Option<&SortedIndex> {
        self.indexes.get(column)
    }

    pub fn is_indexed(&self, column: &str) -> bool {
        self.indexes.contains_key(column)
    }

    pub fn indexed_columns(&self) -> impl Iterator<Item = &str> {
        self.indexes.keys().map(|s| s.as_str())
    }

    /// Appends rows given per-column values; every column must be supplied.
    pub(crate) fn append_rows(&mut self, mut new: BTreeMap<String, Vec<i64>>) -> Result<()> {
        let added = new.values().next().map(|v| v.len()).unwrap_or(0);
        for (col, values) in &mut self.columns {
            let extra = new.remove(col.as_str()).ok_or_else(|| {
                Error::InvalidParameter(format!("append is missing column `{col}`"))
            })?;
            if extra.len() != added {
                return Err(Error::InvalidParameter(format!(
                    "append column `{col}` has {} values, expected {added}",
                    extra.len()
                )));
            }
            values.extend(extra);
        }
        if let Some(col) = new.keys().next() {
            return Err(Error::UnknownColumn {
                table: self.name.clone(),
                column: col.clone(),
            });
        }
        self.n_rows += added;
        self.rebuild_indexes();
        Ok(())
    }

    pub(crate) fn column_mut(&mut self, name: &str) -> Result<&mut Vec<i64>> {
        let table = self.name.clone();
        self.columns
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or(Error::UnknownColumn {
                table,
                column: name.to_string(),
            })
    }

    pub(crate) fn rebuild_indexes(&mut self) {
        let cols: Vec<String> = self.indexes.keys().cloned().collect();
        for c in cols {
            let idx = SortedIndex::build(self.column(&c).expect("indexed column exists"));
            self.indexes.insert(c, idx);
        }
        self.generation += 1;
    }

    /// Writes the table as CSV with a header row of column names.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.column_names())?;
        let mut row = Vec::with_capacity(self.columns.len());
        for r in 0..self.n_rows {
            row.clear();
            row.extend(self.columns.iter().map(|(_, c)| c[r].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ColumnTable {
        ColumnTable::new(
            "t",
            vec![
                ("a".into(), vec![3, 1, 2, 1, 5]),
                ("b".into(), vec![0, 0, 1, 1, 1]),
            ],
        )
        .unwrap()
        .with_indexes(&["a"])
        .unwrap()
    }

    #[test]
    fn index_is_sorted_bijection() {
        let t = small();
        let idx = t.index("a").unwrap();
        let mut seen = idx.row_ids().to_vec();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert!(idx.sorted_values().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn index_lookup_ranges() {
        let t = small();
        let idx = t.index("a").unwrap();
        assert_eq!(idx.lookup(&CmpOp::Eq(1)), &[1, 3]);
        assert_eq!(idx.count(&CmpOp::Between(2, 3)), 2);
        assert_eq!(idx.count(&CmpOp::Lt(1)), 0);
        assert_eq!(idx.count(&CmpOp::Ge(2)), 3);
        assert_eq!(idx.count(&CmpOp::Between(4, 2)), 0);
    }

    #[test]
    fn ragged_columns_rejected() {
        let err = ColumnTable::new("t", vec![("a".into(), vec![1]), ("b".into(), vec![])]);
        assert!(err.is_err());
    }

    #[test]
    fn unknown_column_reported() {
        assert!(matches!(
            small().column("zzz"),
            Err(Error::UnknownColumn { .. })
        ));
    }

    #[test]
    fn append_rebuilds_indexes_and_bumps_generation() {
        let mut t = small();
        let mut extra = BTreeMap::new();
        extra.insert("a".to_string(), vec![1]);
        extra.insert("b".to_string(), vec![9]);
        t.append_rows(extra).unwrap();
        assert_eq!(t.n_rows(), 6);
        assert_eq!(t.generation(), 1);
        assert_eq!(t.index("a").unwrap().count(&CmpOp::Eq(1)), 3);
    }

    #[test]
    fn csv_has_header() {
        let mut buf = Vec::new();
        small().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("a,b\n3,0\n"));
    }
}
