//! In-memory relations and the schema catalog.
//!
//! The catalog is declarative: tables, typed columns, per-column average
//! encoded width, and row counts. The width/count fields feed the cost
//! model; nothing here introspects a live backend.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::collections::BTreeMap;

use crate::value::{Value, ValueType};

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub ty: ValueType,
}

/// A plain relation: named typed columns plus a row multiset. Row order is
/// meaningful only as the deterministic tie-breaker for ORDER BY/LIMIT.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: Vec<Column>) -> Table {
        Table { columns, rows: Vec::new() }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn push_row(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Base tables addressable by name. Temp tables created during script
/// execution live in a separate namespace owned by the backend.
#[derive(Clone, Debug, Default)]
pub struct Database {
    pub tables: BTreeMap<String, Table>,
}

impl Database {
    pub fn new() -> Database {
        Database { tables: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, table: Table) {
        self.tables.insert(name.to_ascii_lowercase(), table);
    }

    pub fn get(&self, name: &str) -> Option<&Table> {
        self.tables.get(&name.to_ascii_lowercase())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnDef {
    pub name: String,
    pub ty: ValueType,
    /// Average encoded width in bytes; drives billed-byte estimates.
    pub avg_width: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableSchema {
    pub name: String,
    pub row_count: u64,
    pub columns: Vec<ColumnDef>,
}

impl TableSchema {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Total encoded bytes of one column: row count times average width.
    pub fn column_bytes(&self, name: &str) -> Option<u64> {
        self.column(name).map(|c| c.avg_width * self.row_count)
    }

    pub fn to_table_columns(&self) -> Vec<Column> {
        self.columns
            .iter()
            .map(|c| Column { name: c.name.clone(), ty: c.ty })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Catalog {
    pub tables: BTreeMap<String, TableSchema>,
}

impl Catalog {
    pub fn new() -> Catalog {
        Catalog { tables: BTreeMap::new() }
    }

    pub fn add_table(&mut self, schema: TableSchema) {
        let mut schema = schema;
        schema.name = schema.name.to_ascii_lowercase();
        for c in &mut schema.columns {
            c.name = c.name.to_ascii_lowercase();
        }
        self.tables.insert(schema.name.clone(), schema);
    }

    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.get(&name.to_ascii_lowercase())
    }

    /// Resolve a possibly qualified column against the tables in scope.
    /// Returns the owning table name. `Err` carries a description of the
    /// failure (unknown or ambiguous).
    pub fn resolve_column(
        &self,
        scope: &[(String, String)], // (alias, table name)
        qualifier: Option<&str>,
        column: &str,
    ) -> Result<(String, ValueType), String> {
        let column = column.to_ascii_lowercase();
        let mut hits: Vec<(String, ValueType)> = Vec::new();
        for (alias, table_name) in scope {
            if let Some(q) = qualifier {
                if !q.eq_ignore_ascii_case(alias) && !q.eq_ignore_ascii_case(table_name) {
                    continue;
                }
            }
            if let Some(schema) = self.table(table_name) {
                if let Some(def) = schema.column(&column) {
                    hits.push((table_name.clone(), def.ty));
                }
            }
        }
        match hits.len() {
            0 => Err(match qualifier {
                Some(q) => alloc::format!("unknown column {q}.{column}"),
                None => alloc::format!("unknown column {column}"),
            }),
            1 => Ok(hits.remove(0)),
            _ => Err(alloc::format!("ambiguous column {column}")),
        }
    }
}

/// Helper used by tests and the workload generator to build tables inline.
pub fn table_from_rows(cols: &[(&str, ValueType)], rows: Vec<Vec<Value>>) -> Table {
    let mut t = Table::new(
        cols.iter()
            .map(|(n, ty)| Column { name: n.to_string(), ty: *ty })
            .collect(),
    );
    for r in rows {
        t.push_row(r);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn catalog() -> Catalog {
        let mut c = Catalog::new();
        c.add_table(TableSchema {
            name: "employees".into(),
            row_count: 100,
            columns: vec![
                ColumnDef { name: "id".into(), ty: ValueType::Int, avg_width: 4 },
                ColumnDef { name: "name".into(), ty: ValueType::Str, avg_width: 12 },
                ColumnDef { name: "dept_id".into(), ty: ValueType::Int, avg_width: 4 },
            ],
        });
        c.add_table(TableSchema {
            name: "departments".into(),
            row_count: 10,
            columns: vec![
                ColumnDef { name: "dept_id".into(), ty: ValueType::Int, avg_width: 4 },
                ColumnDef { name: "city".into(), ty: ValueType::Str, avg_width: 10 },
            ],
        });
        c
    }

    #[test]
    fn resolves_unqualified_unique_columns() {
        let c = catalog();
        let scope = vec![
            ("e".to_string(), "employees".to_string()),
            ("d".to_string(), "departments".to_string()),
        ];
        let (table, ty) = c.resolve_column(&scope, None, "city").unwrap();
        assert_eq!(table, "departments");
        assert_eq!(ty, ValueType::Str);
    }

    #[test]
    fn ambiguous_and_unknown_columns_error() {
        let c = catalog();
        let scope = vec![
            ("e".to_string(), "employees".to_string()),
            ("d".to_string(), "departments".to_string()),
        ];
        assert!(c.resolve_column(&scope, None, "dept_id").unwrap_err().contains("ambiguous"));
        assert!(c.resolve_column(&scope, None, "salary").unwrap_err().contains("unknown"));
    }

    #[test]
    fn qualifier_matches_alias_or_table() {
        let c = catalog();
        let scope = vec![("e".to_string(), "employees".to_string())];
        assert!(c.resolve_column(&scope, Some("e"), "id").is_ok());
        assert!(c.resolve_column(&scope, Some("employees"), "id").is_ok());
        assert!(c.resolve_column(&scope, Some("x"), "id").is_err());
    }

    #[test]
    fn column_bytes_is_rows_times_width() {
        let c = catalog();
        assert_eq!(c.table("employees").unwrap().column_bytes("name"), Some(1200));
    }
}
