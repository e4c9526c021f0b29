//! Desk-scale decision-support workload: LINEITEM/ORDERS/CUSTOMER-shaped
//! tables plus five query templates that together cover every shared
//! operator the rewriter implements (scan, join, grouping, order/limit,
//! multi-attribute predicates).
//!
//! LINEITEM carries an extra column of densely increasing integers
//! (`l_seq`) so scan selectivity can be dialed exactly: a predicate
//! `l_seq BETWEEN a AND a+k-1` matches exactly k of n rows.

use anyhow::{bail, Result};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::io::BatchRecord;
use shareq_core::table::{Catalog, ColumnDef, Database, Table, TableSchema};
use shareq_core::value::{Value, ValueType};

pub const TEMPLATE_NAMES: [&str; 5] =
    ["pricing-summary", "segment-volume", "forecast-revenue", "top-customers", "seq-search"];

#[derive(Clone, Debug)]
pub struct WorkloadSpec {
    /// Fraction of the full-size benchmark tables (6M/1.5M/150K rows).
    pub scale_factor: f64,
    /// Subset of [`TEMPLATE_NAMES`].
    pub templates: Vec<String>,
    pub instances_per_template: usize,
    pub seed: u64,
    /// Per-query selectivity of the seq-search template's dense interval.
    pub search_selectivity: f64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            scale_factor: 0.001,
            templates: TEMPLATE_NAMES.iter().map(|s| s.to_string()).collect(),
            instances_per_template: 32,
            seed: 42,
            search_selectivity: 0.01,
        }
    }
}

impl WorkloadSpec {
    pub fn lineitem_rows(&self) -> u64 {
        ((6_000_000.0 * self.scale_factor) as u64).max(100)
    }

    pub fn orders_rows(&self) -> u64 {
        ((1_500_000.0 * self.scale_factor) as u64).max(25)
    }

    pub fn customer_rows(&self) -> u64 {
        ((150_000.0 * self.scale_factor) as u64).max(10)
    }
}

const SEGMENTS: [&str; 5] = ["AUTOMOBILE", "BUILDING", "FURNITURE", "HOUSEHOLD", "MACHINERY"];
const PRIORITIES: [&str; 5] = ["1-URGENT", "2-HIGH", "3-MEDIUM", "4-NOT SPECIFIED", "5-LOW"];
const SHIP_MODES: [&str; 7] = ["AIR", "FOB", "MAIL", "RAIL", "REG AIR", "SHIP", "TRUCK"];
const RETURN_FLAGS: [&str; 3] = ["A", "N", "R"];
const LINE_STATUS: [&str; 2] = ["F", "O"];

pub fn catalog_for(spec: &WorkloadSpec) -> Catalog {
    let mut c = Catalog::new();
    c.add_table(TableSchema {
        name: "lineitem".into(),
        row_count: spec.lineitem_rows(),
        columns: vec![
            ColumnDef { name: "l_orderkey".into(), ty: ValueType::Int, avg_width: 8 },
            ColumnDef { name: "l_seq".into(), ty: ValueType::Int, avg_width: 8 },
            ColumnDef { name: "l_quantity".into(), ty: ValueType::Int, avg_width: 4 },
            ColumnDef { name: "l_extendedprice".into(), ty: ValueType::Float, avg_width: 8 },
            ColumnDef { name: "l_discount".into(), ty: ValueType::Float, avg_width: 8 },
            ColumnDef { name: "l_shipdate".into(), ty: ValueType::Date, avg_width: 10 },
            ColumnDef { name: "l_returnflag".into(), ty: ValueType::Str, avg_width: 1 },
            ColumnDef { name: "l_linestatus".into(), ty: ValueType::Str, avg_width: 1 },
            ColumnDef { name: "l_shipmode".into(), ty: ValueType::Str, avg_width: 7 },
        ],
    });
    c.add_table(TableSchema {
        name: "orders".into(),
        row_count: spec.orders_rows(),
        columns: vec![
            ColumnDef { name: "o_orderkey".into(), ty: ValueType::Int, avg_width: 8 },
            ColumnDef { name: "o_custkey".into(), ty: ValueType::Int, avg_width: 8 },
            ColumnDef { name: "o_orderdate".into(), ty: ValueType::Date, avg_width: 10 },
            ColumnDef { name: "o_orderpriority".into(), ty: ValueType::Str, avg_width: 15 },
        ],
    });
    c.add_table(TableSchema {
        name: "customer".into(),
        row_count: spec.customer_rows(),
        columns: vec![
            ColumnDef { name: "c_custkey".into(), ty: ValueType::Int, avg_width: 8 },
            ColumnDef { name: "c_name".into(), ty: ValueType::Str, avg_width: 18 },
            ColumnDef { name: "c_mktsegment".into(), ty: ValueType::Str, avg_width: 10 },
            ColumnDef { name: "c_nationkey".into(), ty: ValueType::Int, avg_width: 4 },
        ],
    });
    c
}

fn date(rng: &mut StdRng, lo_year: i32, hi_year: i32) -> String {
    let y = rng.gen_range(lo_year..=hi_year);
    let m = rng.gen_range(1..=12);
    let d = rng.gen_range(1..=28);
    format!("{y:04}-{m:02}-{d:02}")
}

/// Deterministic data generation; identical spec gives identical tables.
pub fn generate_data(spec: &WorkloadSpec) -> (Catalog, Database) {
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let catalog = catalog_for(spec);
    let mut db = Database::new();

    let customers = spec.customer_rows() as i64;
    let mut t = Table::new(catalog.table("customer").unwrap().to_table_columns());
    for k in 1..=customers {
        t.push_row(vec![
            Value::Int(k),
            Value::Str(format!("Customer#{k:09}")),
            Value::Str(SEGMENTS[rng.gen_range(0..SEGMENTS.len())].to_string()),
            Value::Int(rng.gen_range(0..25)),
        ]);
    }
    db.insert("customer", t);

    let orders = spec.orders_rows() as i64;
    let mut t = Table::new(catalog.table("orders").unwrap().to_table_columns());
    for k in 1..=orders {
        t.push_row(vec![
            Value::Int(k),
            Value::Int(rng.gen_range(1..=customers)),
            Value::Date(date(&mut rng, 1992, 1998)),
            Value::Str(PRIORITIES[rng.gen_range(0..PRIORITIES.len())].to_string()),
        ]);
    }
    db.insert("orders", t);

    let lines = spec.lineitem_rows() as i64;
    let mut t = Table::new(catalog.table("lineitem").unwrap().to_table_columns());
    for seq in 1..=lines {
        let qty = rng.gen_range(1..=50);
        let price = (rng.gen_range(90_000..=1_100_000) as f64) / 100.0;
        t.push_row(vec![
            Value::Int(rng.gen_range(1..=orders)),
            Value::Int(seq), // densely increasing
            Value::Int(qty),
            Value::Float(price),
            Value::Float((rng.gen_range(0..=10) as f64) / 100.0),
            Value::Date(date(&mut rng, 1992, 1998)),
            Value::Str(RETURN_FLAGS[rng.gen_range(0..RETURN_FLAGS.len())].to_string()),
            Value::Str(LINE_STATUS[rng.gen_range(0..LINE_STATUS.len())].to_string()),
            Value::Str(SHIP_MODES[rng.gen_range(0..SHIP_MODES.len())].to_string()),
        ]);
    }
    db.insert("lineitem", t);

    (catalog, db)
}

/// Template texts with `?` placeholders, in [`TEMPLATE_NAMES`] order.
pub fn template_sql(name: &str) -> Option<&'static str> {
    match name {
        // scan + wide group (pricing summary report shape)
        "pricing-summary" => Some(
            "SELECT l_returnflag, l_linestatus, SUM(l_quantity) AS sum_qty, \
             SUM(l_extendedprice) AS sum_base_price, AVG(l_discount) AS avg_disc, \
             COUNT(*) AS count_order FROM lineitem WHERE l_shipdate <= ? \
             GROUP BY l_returnflag, l_linestatus",
        ),
        // three-way join + group (shipping volume by priority)
        "segment-volume" => Some(
            "SELECT o_orderpriority, COUNT(*) AS order_count, \
             SUM(l_extendedprice * (1 - l_discount)) AS revenue \
             FROM customer JOIN orders ON c_custkey = o_custkey \
             JOIN lineitem ON o_orderkey = l_orderkey \
             WHERE c_mktsegment = ? AND o_orderdate < ? \
             GROUP BY o_orderpriority",
        ),
        // the multi-attribute scan aggregate (revenue forecast shape)
        "forecast-revenue" => Some(
            "SELECT SUM(l_extendedprice * l_discount) AS revenue FROM lineitem \
             WHERE l_shipdate >= ? AND l_shipdate < ? \
             AND l_discount BETWEEN ? AND ? AND l_quantity < ?",
        ),
        // join + group + order/limit (top customers by revenue)
        "top-customers" => Some(
            "SELECT c_custkey, c_name, SUM(l_extendedprice * (1 - l_discount)) AS revenue \
             FROM customer JOIN orders ON c_custkey = o_custkey \
             JOIN lineitem ON o_orderkey = l_orderkey \
             WHERE o_orderdate >= ? AND o_orderdate < ? \
             GROUP BY c_custkey, c_name ORDER BY revenue DESC LIMIT 20",
        ),
        // selectivity-controlled multi-predicate search scan
        "seq-search" => Some(
            "SELECT l_seq, l_quantity, l_extendedprice FROM lineitem \
             WHERE l_seq BETWEEN ? AND ? AND l_shipmode LIKE ?",
        ),
        _ => None,
    }
}

/// Parameter bindings for one instance, drawn per template.
fn draw_bindings(
    name: &str,
    rng: &mut StdRng,
    spec: &WorkloadSpec,
) -> Vec<serde_json::Value> {
    match name {
        "pricing-summary" => {
            vec![serde_json::json!(date(rng, 1997, 1998))]
        }
        "segment-volume" => vec![
            serde_json::json!(SEGMENTS[rng.gen_range(0..SEGMENTS.len())]),
            serde_json::json!(date(rng, 1995, 1998)),
        ],
        "forecast-revenue" => {
            // the classic parameter domains: a one-year window starting
            // Jan 1 of 1993..1997, discount center 0.02..0.09 +/- 0.01,
            // quantity cap 24 or 25
            let year = rng.gen_range(1993..=1997);
            let disc = rng.gen_range(2..=9) as f64 / 100.0;
            vec![
                serde_json::json!(format!("{year}-01-01")),
                serde_json::json!(format!("{}-01-01", year + 1)),
                serde_json::json!(disc - 0.01),
                serde_json::json!(disc + 0.01),
                serde_json::json!(rng.gen_range(24..=25)),
            ]
        }
        "top-customers" => {
            let year = rng.gen_range(1993..=1997);
            let month = rng.gen_range(1..=10);
            let end_month = month + 3;
            let (end_year, end_month) =
                if end_month > 12 { (year + 1, end_month - 12) } else { (year, end_month) };
            vec![
                serde_json::json!(format!("{year:04}-{month:02}-01")),
                serde_json::json!(format!("{end_year:04}-{end_month:02}-01")),
            ]
        }
        "seq-search" => {
            let n = spec.lineitem_rows() as i64;
            let width = ((spec.search_selectivity * n as f64).ceil() as i64).max(1);
            let start = rng.gen_range(1..=(n - width + 1).max(1));
            let mode = SHIP_MODES[rng.gen_range(0..SHIP_MODES.len())];
            vec![
                serde_json::json!(start),
                serde_json::json!(start + width - 1),
                serde_json::json!(format!("{}%", &mode[..1])),
            ]
        }
        _ => Vec::new(),
    }
}

/// Emit parameterized instances per template with seeded random bindings.
/// The batch-record ids are `<template>-<ordinal>`.
pub fn generate_queries(spec: &WorkloadSpec) -> Result<Vec<BatchRecord>> {
    // parameters draw from a stream separated from data generation so
    // query workloads can be re-drawn without regenerating data
    let mut rng = StdRng::seed_from_u64(spec.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut out = Vec::new();
    for name in &spec.templates {
        let Some(sql) = template_sql(name) else {
            bail!("unknown template {name}; known: {}", TEMPLATE_NAMES.join(", "));
        };
        for i in 0..spec.instances_per_template {
            out.push(BatchRecord {
                id: format!("{name}-{i}"),
                sql: sql.to_string(),
                bindings: Some(draw_bindings(name, &mut rng, spec)),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::parse_record;
    use shareq_core::ir;

    #[test]
    fn generation_is_deterministic() {
        let spec = WorkloadSpec { scale_factor: 0.0001, ..WorkloadSpec::default() };
        let (c1, d1) = generate_data(&spec);
        let (c2, d2) = generate_data(&spec);
        assert_eq!(c1, c2);
        assert_eq!(
            d1.get("lineitem").unwrap().rows,
            d2.get("lineitem").unwrap().rows
        );
        let q1 = generate_queries(&spec).unwrap();
        let q2 = generate_queries(&spec).unwrap();
        assert_eq!(
            serde_json::to_string(&q1).unwrap(),
            serde_json::to_string(&q2).unwrap()
        );
    }

    #[test]
    fn dense_column_counts_rows_exactly() {
        let spec = WorkloadSpec { scale_factor: 0.0001, ..WorkloadSpec::default() };
        let (_, db) = generate_data(&spec);
        let t = db.get("lineitem").unwrap();
        let seq = t.column_index("l_seq").unwrap();
        let vals: Vec<i64> = t
            .rows
            .iter()
            .map(|r| match &r[seq] {
                Value::Int(i) => *i,
                other => panic!("{other:?}"),
            })
            .collect();
        let n = vals.len() as i64;
        assert_eq!(vals, (1..=n).collect::<Vec<_>>());
        // selectivity s on the dense column matches ceil(s*n) rows
        let s = 0.05;
        let width = ((s * n as f64).ceil() as i64).max(1);
        let matched = vals.iter().filter(|&&v| v >= 10 && v < 10 + width).count() as i64;
        assert_eq!(matched, width.min(n - 9));
    }

    #[test]
    fn every_generated_query_parses_and_templates_stay_constant() {
        let spec = WorkloadSpec {
            scale_factor: 0.0001,
            instances_per_template: 8,
            ..WorkloadSpec::default()
        };
        let catalog = catalog_for(&spec);
        let records = generate_queries(&spec).unwrap();
        assert_eq!(records.len(), 5 * 8);
        let mut per_template: std::collections::BTreeMap<String, Vec<u64>> = Default::default();
        for r in &records {
            let spec_q = parse_record(r, &catalog).unwrap_or_else(|e| panic!("{}: {e}", r.id));
            let (tid, _) = ir::extract_template(&spec_q);
            let tmpl = r.id.rsplit_once('-').unwrap().0.to_string();
            per_template.entry(tmpl).or_default().push(tid);
        }
        assert_eq!(per_template.len(), 5);
        for (name, tids) in per_template {
            assert!(tids.windows(2).all(|w| w[0] == w[1]), "{name} hash drifted");
        }
    }

    #[test]
    fn single_instance_is_runnable() {
        let spec = WorkloadSpec {
            scale_factor: 0.0001,
            instances_per_template: 1,
            templates: vec!["forecast-revenue".into()],
            ..WorkloadSpec::default()
        };
        let (catalog, db) = generate_data(&spec);
        let records = generate_queries(&spec).unwrap();
        let q = parse_record(&records[0], &catalog).unwrap();
        let result = shareq_core::dq::oracle::eval_spec(&q, &db).unwrap();
        assert_eq!(result.rows.len(), 1); // scalar aggregate
    }
}
