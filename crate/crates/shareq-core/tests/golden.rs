//! Golden-file checks for the indexed-evaluation expression tree and the
//! executable closed loop around it: the frozen rendering must come back
//! byte-identical, its point evaluations must hit the documented regions,
//! and the reference backend must agree with the native scan semantics
//! when executing a statement that embeds the expression.

use std::collections::BTreeMap;

use shareq_core::dq::{shared_scan, SetEncoding};
use shareq_core::engine::RefEngine;
use shareq_core::ir::{Atom, AtomArg, AtomOp, ColRef, Conjunction, PredicateNf};
use shareq_core::predidx::{
    build_index_tree, eval_tree, render_expr, to_intervals, tree_stats, RenderStyle,
};
use shareq_core::table::{table_from_rows, Database};
use shareq_core::value::{Value, ValueType};

fn pred(op: AtomOp, args: Vec<Value>) -> PredicateNf {
    PredicateNf {
        disjuncts: vec![Conjunction {
            atoms: vec![Atom {
                column: ColRef::new("employees", "id"),
                column_type: ValueType::Int,
                op,
                args: args.into_iter().map(AtomArg::Const).collect(),
            }],
        }],
    }
}

fn listing_preds() -> Vec<PredicateNf> {
    vec![
        pred(AtomOp::Gt, vec![Value::Int(35)]),
        pred(AtomOp::Between, vec![Value::Int(10), Value::Int(20)]),
        pred(AtomOp::Lt, vec![Value::Int(51)]),
        pred(AtomOp::Between, vec![Value::Int(40), Value::Int(50)]),
    ]
}

#[test]
fn listing5_renders_byte_identically() {
    let input = to_intervals(&listing_preds()).unwrap();
    let tree = build_index_tree(&input, None).unwrap();
    let rendered = render_expr(&tree, &RenderStyle::default());
    let golden = include_str!("golden/listing5.sql");
    assert_eq!(rendered, golden);
}

#[test]
fn listing5_point_evaluations_cover_all_regions() {
    let input = to_intervals(&listing_preds()).unwrap();
    let tree = build_index_tree(&input, None).unwrap();
    // one probe per region of the expression tree
    for (id, expect) in [
        (5i64, vec![3u32]),
        (15, vec![2, 3]),
        (38, vec![1, 3]),
        (45, vec![1, 3, 4]),
        (55, vec![1]),
    ] {
        let mut tuple = BTreeMap::new();
        tuple.insert("id".to_string(), Value::Int(id));
        let got: Vec<u32> = eval_tree(&tree, &tuple).unwrap().iter().map(|q| q.0).collect();
        assert_eq!(got, expect, "id={id}");
    }
    let stats = tree_stats(&tree, &RenderStyle::default());
    assert_eq!(stats.max_comparisons, 3, "counted from the rendered expression");
}

#[test]
fn backend_executing_the_golden_expression_matches_native_scan() {
    let ids = [1i64, 5, 9, 10, 15, 20, 21, 35, 36, 39, 40, 45, 50, 51, 52, 90];
    let table = table_from_rows(
        &[("id", ValueType::Int)],
        ids.iter().map(|&i| vec![Value::Int(i)]).collect(),
    );
    let mut db = Database::new();
    db.insert("employees", table.clone());
    let engine = RefEngine::new(db);

    let golden = include_str!("golden/listing5.sql");
    let sql = format!(
        "SELECT *,\n{golden}\nFROM employees\nWHERE (id > 35) OR (id BETWEEN 10 AND 20) OR \
         (id < 51) OR (id BETWEEN 40 AND 50)"
    );
    let via_engine = engine.execute(&sql).unwrap();

    let native = shared_scan(&table, &listing_preds(), SetEncoding::Array).unwrap();
    assert_eq!(via_engine.rows.len(), native.len());
    for (row, (nrow, ann)) in via_engine
        .rows
        .iter()
        .zip(native.table.rows.iter().zip(native.anns.iter()))
    {
        assert_eq!(row[0], nrow[0]);
        let Value::IntArray(set) = &row[1] else { panic!("no set in {row:?}") };
        let native_ids: Vec<i64> = ann.ids().iter().map(|q| q.0 as i64).collect();
        assert_eq!(set, &native_ids, "row {row:?}");
    }
}
