//! Acceptance suite. Each test implements one release criterion at its
//! stated tolerance and prints a PASS line (visible with --nocapture):
//!
//!  1. shared-vs-individual equivalence over >= 1000 seeded random
//!     batches, both annotation encodings, zero mismatches
//!  2. predicate-index equivalence on >= 200 random workloads over a
//!     10^4-point sweep, plus the frozen expression-tree golden
//!  3. index depth bound <= ceil(log2 m) + 1 for m up to 256
//!  4. flat batched cost under columns-billed pricing; bytes-scanned
//!     clamp at 99% selectivity
//!  5. combined selectivity value and monotonicity
//!  6. 128 indexed scan-aggregate queries render under 256 KiB
//!  7. all three DAG split policies preserve results on the five-template
//!     workload; materialized intermediates carry no annotation column
//!  8. gateway replies match direct execution for burst/trickle/mixed
//!     arrival traces, with the expected number of shared executions
//!  9. linear scan / shared join / shared grouping renderings match the
//!     canonical rewrite shapes (whitespace-normalized)

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use shareq_cli::gateway::{self, GatewayConfig};
use shareq_cli::io::{parse_record, BatchRecord};
use shareq_cli::{script_footprint, workload};
use shareq_core::cost::{
    combined_selectivity, compare_batch_vs_qat, estimate_bytes, PricingScheme, TableStats,
};
use shareq_core::dq::SetEncoding;
use shareq_core::engine::RefEngine;
use shareq_core::exec::{self, multiset_diff, ExecConfig, RefBackend};
use shareq_core::ir::{
    self, Atom, AtomArg, AtomOp, ColRef, Conjunction, GroupPolicy, PredicateNf, QueryBatch,
    QuerySpec,
};
use shareq_core::plan::{self, SplitConfig, SplitPolicy, Step};
use shareq_core::predidx;
use shareq_core::sqlgen::{self, DialectProfile, RenderContext, ScanMode};
use shareq_core::table::{table_from_rows, Catalog, ColumnDef, Database, TableSchema};
use shareq_core::value::{Value, ValueType};

// ---------------------------------------------------------------------------
// Criterion 1: oracle equivalence at scale
// ---------------------------------------------------------------------------

const SEGMENTS: [&str; 4] = ["AUTO", "BUILD", "HOME", "MACH"];

fn random_catalog() -> Catalog {
    let mut c = Catalog::new();
    c.add_table(TableSchema {
        name: "facts".into(),
        row_count: 1000,
        columns: vec![
            ColumnDef { name: "fid".into(), ty: ValueType::Int, avg_width: 8 },
            ColumnDef { name: "dim".into(), ty: ValueType::Int, avg_width: 4 },
            ColumnDef { name: "qty".into(), ty: ValueType::Int, avg_width: 4 },
            ColumnDef { name: "price".into(), ty: ValueType::Float, avg_width: 8 },
            ColumnDef { name: "tag".into(), ty: ValueType::Str, avg_width: 6 },
            ColumnDef { name: "day".into(), ty: ValueType::Date, avg_width: 10 },
        ],
    });
    c.add_table(TableSchema {
        name: "dims".into(),
        row_count: 20,
        columns: vec![
            ColumnDef { name: "dim".into(), ty: ValueType::Int, avg_width: 4 },
            ColumnDef { name: "seg".into(), ty: ValueType::Str, avg_width: 6 },
            ColumnDef { name: "rank_no".into(), ty: ValueType::Int, avg_width: 4 },
        ],
    });
    c
}

fn random_db(rng: &mut StdRng) -> Database {
    let rows = rng.gen_range(20..=1000);
    let dims = rng.gen_range(2..=20);
    let mut db = Database::new();
    let mut fact_rows = Vec::with_capacity(rows);
    for i in 0..rows {
        let m = rng.gen_range(1..=12);
        let d = rng.gen_range(1..=28);
        fact_rows.push(vec![
            Value::Int(i as i64 + 1),
            Value::Int(rng.gen_range(0..dims)),
            Value::Int(rng.gen_range(0..50)),
            Value::Float(rng.gen_range(0..100_000) as f64 / 100.0),
            Value::Str(SEGMENTS[rng.gen_range(0..SEGMENTS.len())].to_string()),
            Value::Date(format!("2024-{m:02}-{d:02}")),
        ]);
    }
    db.insert(
        "facts",
        table_from_rows(
            &[
                ("fid", ValueType::Int),
                ("dim", ValueType::Int),
                ("qty", ValueType::Int),
                ("price", ValueType::Float),
                ("tag", ValueType::Str),
                ("day", ValueType::Date),
            ],
            fact_rows,
        ),
    );
    let mut dim_rows = Vec::new();
    for g in 0..dims {
        dim_rows.push(vec![
            Value::Int(g),
            Value::Str(SEGMENTS[rng.gen_range(0..SEGMENTS.len())].to_string()),
            Value::Int(rng.gen_range(0..100)),
        ]);
    }
    db.insert(
        "dims",
        table_from_rows(
            &[("dim", ValueType::Int), ("seg", ValueType::Str), ("rank_no", ValueType::Int)],
            dim_rows,
        ),
    );
    db
}

fn rand_atom(rng: &mut StdRng, rows: i64, qualify: bool, attrs: usize) -> String {
    let q = if qualify { "f." } else { "" };
    match rng.gen_range(0..attrs) {
        0 => {
            let a = rng.gen_range(1..=rows);
            let b = (a + rng.gen_range(0..=rows / 3)).min(rows);
            format!("{q}fid BETWEEN {a} AND {b}")
        }
        1 => format!("{q}qty < {}", rng.gen_range(1..50)),
        2 => format!("{q}day >= DATE '2024-{:02}-01'", rng.gen_range(1..=12)),
        3 => format!("{q}price >= {}.25", rng.gen_range(0..900)),
        _ => format!("{q}tag LIKE '{}%'", &SEGMENTS[rng.gen_range(0..SEGMENTS.len())][..1]),
    }
}

fn rand_pred(rng: &mut StdRng, rows: i64, qualify: bool, attrs: usize) -> String {
    let mut conj = |rng: &mut StdRng| {
        let k = rng.gen_range(1..=2);
        (0..k).map(|_| rand_atom(rng, rows, qualify, attrs)).collect::<Vec<_>>().join(" AND ")
    };
    if rng.gen_bool(0.25) {
        format!("({}) OR ({})", conj(rng), conj(rng))
    } else {
        conj(rng)
    }
}

fn rand_instance(rng: &mut StdRng, shape: usize, rows: i64, limit: u64, attrs: usize) -> String {
    match shape {
        // scan
        0 => format!("SELECT fid, price FROM facts WHERE {}", rand_pred(rng, rows, false, attrs)),
        // scan + group
        1 => format!(
            "SELECT dim, COUNT(*) AS n, SUM(price) AS s, AVG(qty) AS a FROM facts WHERE {} \
             GROUP BY dim",
            rand_pred(rng, rows, false, attrs)
        ),
        // scalar aggregate
        2 => format!(
            "SELECT COUNT(*) AS n, MAX(price) AS hi FROM facts WHERE {}",
            rand_pred(rng, rows, false, attrs)
        ),
        // join
        3 => format!(
            "SELECT f.fid, d.seg FROM facts f JOIN dims d ON f.dim = d.dim WHERE {} \
             AND d.rank_no < {}",
            rand_pred(rng, rows, true, attrs),
            rng.gen_range(1..100)
        ),
        // join + group
        4 => format!(
            "SELECT d.seg, COUNT(*) AS n, SUM(f.price * (1 - 0.1)) AS rev FROM facts f \
             JOIN dims d ON f.dim = d.dim WHERE {} GROUP BY d.seg",
            rand_pred(rng, rows, true, attrs)
        ),
        // order/limit
        5 => format!(
            "SELECT fid, price FROM facts WHERE {} ORDER BY price DESC LIMIT {limit}",
            rand_pred(rng, rows, false, attrs)
        ),
        // group + order/limit
        _ => format!(
            "SELECT dim, SUM(price) AS rev FROM facts WHERE {} GROUP BY dim \
             ORDER BY rev DESC LIMIT {limit}",
            rand_pred(rng, rows, false, attrs)
        ),
    }
}

fn random_batch(
    rng: &mut StdRng,
    catalog: &Catalog,
    rows: i64,
    attrs: usize,
) -> (QueryBatch, usize) {
    let shape = rng.gen_range(0..7);
    let members = rng.gen_range(1..=16);
    let limit = rng.gen_range(1..=8);
    let queries: Vec<(String, QuerySpec)> = (0..members)
        .map(|i| {
            let sql = rand_instance(rng, shape, rows, limit, attrs);
            let spec = ir::parse_query(&sql, catalog)
                .unwrap_or_else(|e| panic!("generated SQL invalid: {sql}: {e}"));
            (format!("q{i}"), spec)
        })
        .collect();
    let (mut batches, _) = ir::group_batch(&queries, GroupPolicy::Global, 64).unwrap();
    (batches.remove(0), shape)
}

#[test]
fn acceptance_1_oracle_equivalence_master() {
    let catalog = random_catalog();
    let master_seed: u64 = std::env::var("SHAREQ_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(20_260_809);
    let mut mismatches: Vec<String> = Vec::new();
    let mut checked = 0usize;
    const BATCHES: usize = 1000;
    const BATCHES_PER_FIXTURE: usize = 10;

    for chunk in 0..(BATCHES / BATCHES_PER_FIXTURE) {
        let seed = master_seed + chunk as u64;
        let mut rng = StdRng::seed_from_u64(seed);
        let db = random_db(&mut rng);
        let rows = db.get("facts").unwrap().rows.len() as i64;
        for t in 0..BATCHES_PER_FIXTURE {
            let (batch, shape) = random_batch(&mut rng, &catalog, rows, 5);
            let (dialect, mode) = match (checked % 2, checked % 4 < 2) {
                (0, true) => (DialectProfile::reference(), ScanMode::Linear),
                (0, false) => (DialectProfile::reference(), ScanMode::Indexed),
                (_, true) => (DialectProfile::reference_bitmask(), ScanMode::Linear),
                (_, false) => (DialectProfile::reference_bitmask(), ScanMode::Indexed),
            };
            // the indexed tree multiplies in size over many wide random
            // attributes; keep indexed trials at the three-attribute shape
            let (batch, shape) = if mode == ScanMode::Indexed {
                random_batch(&mut rng, &catalog, rows, 3)
            } else {
                (batch, shape)
            };
            checked += 1;
            let mut backend = RefBackend::with_dialect(db.clone(), dialect);
            let cfg = ExecConfig { mode, ..ExecConfig::default() };
            match exec::equivalence_check(&batch, &catalog, &mut backend, &cfg) {
                Ok(report) => {
                    for o in report.mismatches() {
                        mismatches.push(format!(
                            "seed {seed} trial {t} shape {shape} query {}: {}",
                            o.query,
                            o.detail.clone().unwrap_or_default()
                        ));
                    }
                }
                Err(e) => mismatches.push(format!("seed {seed} trial {t} shape {shape}: {e}")),
            }
        }
    }
    assert!(checked >= 1000, "only {checked} batches checked");
    assert!(
        mismatches.is_empty(),
        "{} mismatches (re-run with SHAREQ_SEED={master_seed}):\n{}",
        mismatches.len(),
        mismatches.join("\n")
    );
    println!("ACCEPTANCE 1 oracle-equivalence: PASS ({checked} batches, zero mismatches)");
}

// ---------------------------------------------------------------------------
// Criterion 2: predicate-index equivalence
// ---------------------------------------------------------------------------

fn idx_atom(rng: &mut StdRng, attr: &str) -> Atom {
    let col = ColRef::new("t", attr);
    let int_atom = |op: AtomOp, args: Vec<Value>| Atom {
        column: col.clone(),
        column_type: ValueType::Int,
        op,
        args: args.into_iter().map(AtomArg::Const).collect(),
    };
    match rng.gen_range(0..6) {
        0 => {
            let a = rng.gen_range(0..10_000);
            let b = (a + rng.gen_range(0..3000)).min(9_999);
            int_atom(AtomOp::Between, vec![Value::Int(a), Value::Int(b)])
        }
        1 => int_atom(AtomOp::Eq, vec![Value::Int(rng.gen_range(0..10_000))]),
        2 => int_atom(AtomOp::Lt, vec![Value::Int(rng.gen_range(0..10_000))]),
        3 => int_atom(AtomOp::Ge, vec![Value::Int(rng.gen_range(0..10_000))]),
        4 => {
            let vals = (0..rng.gen_range(1..4))
                .map(|_| AtomArg::Const(Value::Int(rng.gen_range(0..10_000))))
                .collect();
            Atom { column: col, column_type: ValueType::Int, op: AtomOp::In, args: vals }
        }
        _ => int_atom(AtomOp::Gt, vec![Value::Int(rng.gen_range(0..10_000))]),
    }
}

fn str_atom(rng: &mut StdRng) -> Atom {
    let prefixes = ["al", "be", "ga", "de", "om", "x"];
    let wild = if rng.gen_bool(0.2) {
        // leading wildcard: exercises the linear fallback at the leaves
        format!("%{}", prefixes[rng.gen_range(0..prefixes.len())])
    } else {
        format!("{}%", prefixes[rng.gen_range(0..prefixes.len())])
    };
    Atom {
        column: ColRef::new("t", "name"),
        column_type: ValueType::Str,
        op: AtomOp::Like,
        args: vec![AtomArg::Const(Value::Str(wild))],
    }
}

fn random_preds(rng: &mut StdRng, queries: usize) -> Vec<PredicateNf> {
    (0..queries)
        .map(|_| {
            let disjuncts = rng.gen_range(1..=2);
            let d = (0..disjuncts)
                .map(|_| {
                    let mut atoms = Vec::new();
                    for attr in ["a", "b"] {
                        if rng.gen_bool(0.7) {
                            atoms.push(idx_atom(rng, attr));
                        }
                    }
                    if rng.gen_bool(0.25) {
                        atoms.push(str_atom(rng));
                    }
                    if atoms.is_empty() {
                        atoms.push(idx_atom(rng, "a"));
                    }
                    Conjunction { atoms }
                })
                .collect();
            PredicateNf { disjuncts: d }
        })
        .collect()
}

#[test]
fn acceptance_2_predicate_index_equivalence() {
    // frozen golden expression tree plus its per-region evaluations
    let listing_preds: Vec<PredicateNf> = {
        let p = |op: AtomOp, args: Vec<Value>| PredicateNf {
            disjuncts: vec![Conjunction {
                atoms: vec![Atom {
                    column: ColRef::new("t", "id"),
                    column_type: ValueType::Int,
                    op,
                    args: args.into_iter().map(AtomArg::Const).collect(),
                }],
            }],
        };
        vec![
            p(AtomOp::Gt, vec![Value::Int(35)]),
            p(AtomOp::Between, vec![Value::Int(10), Value::Int(20)]),
            p(AtomOp::Lt, vec![Value::Int(51)]),
            p(AtomOp::Between, vec![Value::Int(40), Value::Int(50)]),
        ]
    };
    let input = predidx::to_intervals(&listing_preds).unwrap();
    let tree = predidx::build_index_tree(&input, None).unwrap();
    let rendered = predidx::render_expr(&tree, &predidx::RenderStyle::default());
    let golden = include_str!("../../shareq-core/tests/golden/listing5.sql");
    assert_eq!(rendered, golden, "golden tree drifted");
    for (id, expect) in
        [(5i64, vec![3u32]), (15, vec![2, 3]), (38, vec![1, 3]), (45, vec![1, 3, 4]), (55, vec![1])]
    {
        let mut tuple = BTreeMap::new();
        tuple.insert("id".to_string(), Value::Int(id));
        let got: Vec<u32> =
            predidx::eval_tree(&tree, &tuple).unwrap().iter().map(|q| q.0).collect();
        assert_eq!(got, expect, "id={id}");
    }

    // randomized equivalence over a 10^4-point sweep
    let names = ["albatross", "beacon", "gamble", "delta", "omega", "xenon", "alpine"];
    let mut rng = StdRng::seed_from_u64(777);
    for workload_no in 0..200 {
        let queries = rng.gen_range(1..=128);
        let preds = random_preds(&mut rng, queries);
        let input = predidx::to_intervals(&preds).unwrap();
        if !input.has_indexable() {
            continue; // all-residual workloads have nothing to index
        }
        let tree = predidx::build_index_tree(&input, None).unwrap();
        let mut tuple = BTreeMap::new();
        tuple.insert("a".to_string(), Value::Int(0));
        tuple.insert("b".to_string(), Value::Int(0));
        tuple.insert("name".to_string(), Value::Null);
        for i in 0..10_000i64 {
            *tuple.get_mut("a").unwrap() = Value::Int(i);
            *tuple.get_mut("b").unwrap() = Value::Int((i * 7 + 13) % 10_000);
            *tuple.get_mut("name").unwrap() =
                Value::Str(names[(i % 7) as usize].to_string());
            let via_tree = predidx::eval_tree(&tree, &tuple)
                .unwrap_or_else(|e| panic!("workload {workload_no} point {i}: {e}"));
            let linear = predidx::eval_linear(&preds, &tuple);
            assert_eq!(
                via_tree, linear,
                "workload {workload_no} ({queries} queries) diverges at point {i}"
            );
        }
    }
    println!("ACCEPTANCE 2 predicate-index-equivalence: PASS (200 workloads x 10^4 points + golden)");
}

// ---------------------------------------------------------------------------
// Criterion 3: index depth bound
// ---------------------------------------------------------------------------

#[test]
fn acceptance_3_index_depth_bound() {
    let mut rng = StdRng::seed_from_u64(31337);
    let mut max_seen = 0usize;
    for trial in 0..300 {
        let queries = rng.gen_range(1..=128);
        let preds: Vec<PredicateNf> = (0..queries)
            .map(|_| PredicateNf {
                disjuncts: vec![Conjunction { atoms: vec![idx_atom(&mut rng, "a")] }],
            })
            .collect();
        let input = predidx::to_intervals(&preds).unwrap();
        let m = input.distinct_bounds("a");
        assert!(m <= 256, "trial {trial} produced {m} bounds");
        max_seen = max_seen.max(m);
        let tree = predidx::build_index_tree(&input, None).unwrap();
        let stats = predidx::tree_stats(&tree, &predidx::RenderStyle::default());
        let bound = (usize::BITS - (m.max(1) - 1).leading_zeros()) as usize + 1;
        assert!(
            stats.max_comparisons <= bound,
            "trial {trial}: m={m}, depth {} > ceil(log2 m)+1 = {bound}",
            stats.max_comparisons
        );
    }
    assert!(max_seen >= 200, "bound counts only reached {max_seen}; widen the generator");
    println!("ACCEPTANCE 3 index-depth-bound: PASS (m up to {max_seen})");
}

// ---------------------------------------------------------------------------
// Criterion 4: flat-cost reproduction
// ---------------------------------------------------------------------------

#[test]
fn acceptance_4_flat_cost_reproduction() {
    let spec = workload::WorkloadSpec {
        scale_factor: 0.001,
        templates: vec!["forecast-revenue".into()],
        instances_per_template: 1,
        ..workload::WorkloadSpec::default()
    };
    let catalog = workload::catalog_for(&spec);
    let stats = TableStats::from_catalog(&catalog);
    let records = workload::generate_queries(&spec).unwrap();
    let q = parse_record(&records[0], &catalog).unwrap();
    let batch = QueryBatch {
        batch_id: 0,
        template_id: None,
        members: vec![(ir::QueryId(1), q)],
    };
    let dag = plan::build_shared_plan(&batch, SetEncoding::Array).unwrap();
    let script = plan::split_dag(&dag, &stats, &SplitConfig::default()).unwrap();
    let footprint = script_footprint(&script);

    let sizes: Vec<u32> = (0..8).map(|i| 1u32 << i).collect(); // 1..128
    let columns_billed = PricingScheme::columns_billed(5e-12);
    let sweep =
        compare_batch_vs_qat(&footprint, &stats, &columns_billed, 0.01, &sizes).unwrap();
    let flat = sweep[0].batched_bytes;
    for p in &sweep {
        assert_eq!(p.batched_bytes, flat, "columns-billed bytes moved at q={}", p.batch_size);
        assert_eq!(
            p.qat_bytes,
            flat * p.batch_size as u64,
            "query-at-a-time bytes not exactly linear at q={}",
            p.batch_size
        );
    }
    let last = sweep.last().unwrap();
    assert_eq!(last.batch_size, 128);
    assert!(
        (last.savings_ratio - 128.0).abs() < 1e-9,
        "savings ratio at 128 is {}",
        last.savings_ratio
    );

    // bytes-scanned with s=0.99: clamped at the full referenced bytes for
    // every batch size
    let bytes_scanned = PricingScheme::bytes_scanned(5e-12);
    let full = footprint.referenced_bytes(&stats).unwrap();
    for q in sizes {
        let r = estimate_bytes(
            &[("s".to_string(), footprint.clone())],
            &stats,
            &bytes_scanned,
            0.99,
            q,
        )
        .unwrap();
        assert_eq!(r.total_bytes, full, "not clamped at q={q}");
    }
    println!(
        "ACCEPTANCE 4 flat-cost: PASS (columns-billed flat at {flat} bytes, ratio 128x; \
         99%-selectivity clamp at {full} bytes)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: combined selectivity
// ---------------------------------------------------------------------------

#[test]
fn acceptance_5_combined_selectivity() {
    // frozen from exact evaluation of 1 - (1 - 0.01)^128; the acceptance
    // constant is compared at the stated 1e-4 tolerance
    let expected = 0.7237483323007917_f64;
    let v = combined_selectivity(0.01, 128).unwrap();
    assert!((v - expected).abs() < 1e-4, "got {v}, expected {expected} within 1e-4");
    assert!((v - expected).abs() < 1e-12, "formula drifted from the frozen oracle value");

    // monotone in both arguments over a grid
    for &s in &[0.0, 0.001, 0.01, 0.1, 0.3, 0.7, 0.99, 1.0] {
        let mut prev = -1.0;
        for q in 1..=256 {
            let v = combined_selectivity(s, q).unwrap();
            assert!(v >= prev - 1e-15, "not monotone in q at s={s}, q={q}");
            prev = v;
        }
    }
    for q in [1u32, 2, 8, 32, 128] {
        let mut prev = -1.0;
        for i in 0..=100 {
            let s = i as f64 / 100.0;
            let v = combined_selectivity(s, q).unwrap();
            assert!(v >= prev - 1e-12, "not monotone in s at q={q}, s={s}");
            prev = v;
        }
        assert_eq!(combined_selectivity(1.0, q).unwrap(), 1.0);
    }
    println!("ACCEPTANCE 5 combined-selectivity: PASS (value {v:.10}, monotone on the grid)");
}

// ---------------------------------------------------------------------------
// Criterion 6: query-string limit
// ---------------------------------------------------------------------------

#[test]
fn acceptance_6_query_string_limit() {
    let spec = workload::WorkloadSpec {
        scale_factor: 0.001,
        templates: vec!["forecast-revenue".into()],
        instances_per_template: 128,
        ..workload::WorkloadSpec::default()
    };
    let catalog = workload::catalog_for(&spec);
    let records = workload::generate_queries(&spec).unwrap();
    let queries: Vec<(String, QuerySpec)> = records
        .iter()
        .map(|r| (r.id.clone(), parse_record(r, &catalog).unwrap()))
        .collect();
    let (batches, _) = ir::group_batch(&queries, GroupPolicy::PerTemplate, 128).unwrap();
    assert_eq!(batches.len(), 1);
    assert_eq!(batches[0].len(), 128);
    let dag = plan::build_shared_plan(&batches[0], SetEncoding::Array).unwrap();
    let stats = TableStats::from_catalog(&catalog);
    let script = plan::split_dag(&dag, &stats, &SplitConfig::default()).unwrap();
    let Step::Run { plan: tree, .. } = &script.steps[0] else { panic!("expected a run step") };
    let ctx = RenderContext::new(&catalog);
    let rendered = sqlgen::render_plan(
        tree,
        128,
        &DialectProfile::presto_like(),
        ScanMode::Indexed,
        &ctx,
    )
    .expect("indexed rendering of 128 queries must fit the limit");
    assert!(
        rendered.bytes < 262_144,
        "statement is {} bytes, at or over 262144",
        rendered.bytes
    );
    println!(
        "ACCEPTANCE 6 query-string-limit: PASS (128 indexed queries render to {} bytes)",
        rendered.bytes
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: DAG split equivalence on the five-template workload
// ---------------------------------------------------------------------------

#[test]
fn acceptance_7_dag_split_equivalence() {
    let spec = workload::WorkloadSpec {
        scale_factor: 0.0005, // 3000-line LINEITEM keeps three policies quick
        instances_per_template: 32,
        ..workload::WorkloadSpec::default()
    };
    let (catalog, db) = workload::generate_data(&spec);
    let records = workload::generate_queries(&spec).unwrap();
    assert_eq!(records.len(), 5 * 32);
    let queries: Vec<(String, QuerySpec)> = records
        .iter()
        .map(|r| (r.id.clone(), parse_record(r, &catalog).unwrap()))
        .collect();
    let (batches, _) = ir::group_batch(&queries, GroupPolicy::PerTemplate, 32).unwrap();
    assert_eq!(batches.len(), 5);

    for policy in
        [SplitPolicy::Heuristic, SplitPolicy::AlwaysDuplicate, SplitPolicy::AlwaysMaterialize]
    {
        let mut backend = RefBackend::new(db.clone());
        // linear predicate evaluation: a global scan merges five
        // templates' predicates over six attributes, where an index
        // expression multiplies far past the statement limit
        let cfg = ExecConfig {
            mode: ScanMode::Linear,
            split: SplitConfig { policy, ..SplitConfig::default() },
            ..ExecConfig::default()
        };
        let report =
            exec::equivalence_check_global(&batches, &catalog, &mut backend, &cfg).unwrap();
        assert_eq!(report.outcomes.len(), 160);
        let bad: Vec<String> = report
            .mismatches()
            .map(|o| format!("{policy:?} query {}: {:?}", o.query, o.detail))
            .collect();
        assert!(bad.is_empty(), "{}", bad.join("\n"));
    }

    // materialized intermediates must not carry an annotation column
    let (dag, _) = plan::build_global_plan(&batches, SetEncoding::Array).unwrap();
    let stats = TableStats::from_catalog(&catalog);
    let script = plan::split_dag(
        &dag,
        &stats,
        &SplitConfig { policy: SplitPolicy::AlwaysMaterialize, ..SplitConfig::default() },
    )
    .unwrap();
    let mats = script.steps.iter().filter(|s| matches!(s, Step::Materialize { .. })).count();
    assert!(mats > 0, "the global plan should share at least one subtree");
    let mut ctx = RenderContext::new(&catalog);
    let engine = RefEngine::new(db);
    let mut temps: Vec<(String, usize)> = Vec::new();
    let mut engine = engine;
    for step in &script.steps {
        if let Step::Materialize { name, plan: tree, .. } = step {
            let rq = sqlgen::render_materialize(
                tree,
                dag.batch.len(),
                &DialectProfile::reference(),
                ScanMode::Linear,
                &ctx,
            )
            .unwrap();
            assert!(
                !rq.columns.iter().any(|c| c == "query_set" || c == "query_id"),
                "annotation column in materialize projection: {:?}",
                rq.columns
            );
            let table = engine.execute(&rq.sql).unwrap();
            assert!(
                !table.columns.iter().any(|c| c.name.contains("query")),
                "annotation column in materialized schema"
            );
            ctx.temp_columns
                .insert(name.clone(), table.columns.iter().map(|c| c.name.clone()).collect());
            temps.push((name.clone(), table.rows.len()));
            engine.create_temp(name, table);
        }
    }
    println!(
        "ACCEPTANCE 7 dag-split-equivalence: PASS (3 policies x 160 queries; {} stripped temps)",
        temps.len()
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: gateway invariance over arrival traces
// ---------------------------------------------------------------------------

fn direct_results(
    records: &[BatchRecord],
    catalog: &Catalog,
    db: &Database,
) -> BTreeMap<String, shareq_core::table::Table> {
    let engine = RefEngine::new(db.clone());
    records
        .iter()
        .map(|r| {
            let spec = parse_record(r, catalog).unwrap();
            let table = engine.execute(&ir::unparse(&spec)).unwrap();
            (r.id.clone(), table)
        })
        .collect()
}

fn reply_table(reply: &serde_json::Value) -> shareq_core::table::Table {
    let columns: Vec<shareq_core::table::Column> = reply["columns"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| shareq_core::table::Column {
            name: c.as_str().unwrap().to_string(),
            ty: ValueType::Str,
        })
        .collect();
    let mut t = shareq_core::table::Table::new(columns);
    for row in reply["rows"].as_array().unwrap() {
        t.rows.push(
            row.as_array()
                .unwrap()
                .iter()
                .map(|v| match v {
                    serde_json::Value::Null => Value::Null,
                    serde_json::Value::Bool(b) => Value::Bool(*b),
                    serde_json::Value::Number(n) => {
                        if let Some(i) = n.as_i64() {
                            Value::Int(i)
                        } else {
                            Value::Float(n.as_f64().unwrap())
                        }
                    }
                    serde_json::Value::String(s) => Value::Str(s.clone()),
                    other => panic!("unexpected cell {other}"),
                })
                .collect(),
        );
    }
    t
}

/// Dates render as plain strings in replies; align the direct results.
fn stringly(table: &shareq_core::table::Table) -> shareq_core::table::Table {
    let mut t = table.clone();
    for row in &mut t.rows {
        for v in row.iter_mut() {
            if let Value::Date(s) = v {
                *v = Value::Str(s.clone());
            }
        }
    }
    t
}

#[test]
fn acceptance_8_gateway_invariance() {
    let spec = workload::WorkloadSpec {
        scale_factor: 0.0003,
        instances_per_template: 8,
        ..workload::WorkloadSpec::default()
    };
    let (catalog, db) = workload::generate_data(&spec);
    let max_batch = 4usize;

    // burst: all of one template at once -> ceil(n/max) shared executions
    let burst: Vec<BatchRecord> = workload::generate_queries(&workload::WorkloadSpec {
        templates: vec!["forecast-revenue".into()],
        instances_per_template: 10,
        ..spec.clone()
    })
    .unwrap();
    // trickle: one query per window
    let trickle: Vec<BatchRecord> = workload::generate_queries(&workload::WorkloadSpec {
        templates: vec!["seq-search".into()],
        instances_per_template: 3,
        ..spec.clone()
    })
    .unwrap();
    // mixed: alternating templates
    let mixed: Vec<BatchRecord> = {
        let a = workload::generate_queries(&workload::WorkloadSpec {
            templates: vec!["pricing-summary".into()],
            instances_per_template: 4,
            ..spec.clone()
        })
        .unwrap();
        let b = workload::generate_queries(&workload::WorkloadSpec {
            templates: vec!["top-customers".into()],
            instances_per_template: 4,
            ..spec.clone()
        })
        .unwrap();
        a.into_iter().zip(b).flat_map(|(x, y)| [x, y]).collect()
    };

    let config = GatewayConfig {
        listen: "127.0.0.1:0".into(),
        window: Duration::from_millis(150),
        max_batch_size: max_batch,
        ..GatewayConfig::default()
    };
    let gw = gateway::serve(config, catalog.clone(), db.clone()).unwrap();
    let addr = gw.addr();

    // burst trace
    let replies = gateway::submit_all(&addr, &burst, Duration::ZERO).unwrap();
    let direct = direct_results(&burst, &catalog, &db);
    let mut batch_ids: BTreeSet<u64> = BTreeSet::new();
    for r in &replies {
        assert_eq!(r["status"], "ok", "{r}");
        assert_eq!(r["fallback"], false);
        batch_ids.insert(r["batch_id"].as_u64().expect("burst replies must be batched"));
        assert!(r["amortized_cost"].as_f64().unwrap() > 0.0);
        let id = r["id"].as_str().unwrap();
        let expected = stringly(&direct[id]);
        let got = reply_table(r);
        if let Some(diff) = multiset_diff(&expected, &got, 1e-9) {
            panic!("burst {id} differs from direct execution: {diff}\nreply: {r}");
        }
    }
    let expected_batches = burst.len().div_ceil(max_batch);
    assert!(
        batch_ids.len() <= expected_batches,
        "burst used {} executions, cap is {expected_batches}",
        batch_ids.len()
    );

    // trickle trace: inter-arrival longer than the window means each
    // query flushes alone, still with correct results
    let replies = gateway::submit_all(&addr, &trickle, Duration::from_millis(300)).unwrap();
    let direct = direct_results(&trickle, &catalog, &db);
    let mut trickle_batches: BTreeSet<u64> = BTreeSet::new();
    for r in &replies {
        assert_eq!(r["status"], "ok", "{r}");
        assert_eq!(r["batch_size"].as_u64(), Some(1), "trickle query was grouped: {r}");
        trickle_batches.insert(r["batch_id"].as_u64().unwrap());
        let id = r["id"].as_str().unwrap();
        if let Some(diff) = multiset_diff(&stringly(&direct[id]), &reply_table(r), 1e-9) {
            panic!("trickle {id} differs: {diff}\nreply: {r}");
        }
    }
    assert_eq!(trickle_batches.len(), trickle.len());

    // mixed templates share only within their template under the
    // per-template policy
    let replies = gateway::submit_all(&addr, &mixed, Duration::ZERO).unwrap();
    let direct = direct_results(&mixed, &catalog, &db);
    let mut per_template_batches: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
    for r in &replies {
        assert_eq!(r["status"], "ok", "{r}");
        let id = r["id"].as_str().unwrap();
        let template = id.rsplit_once('-').unwrap().0;
        per_template_batches
            .entry(template)
            .or_default()
            .insert(r["batch_id"].as_u64().unwrap());
        if let Some(diff) = multiset_diff(&stringly(&direct[id]), &reply_table(r), 1e-9) {
            panic!("mixed {id} differs: {diff}\nreply: {r}");
        }
    }
    assert_eq!(per_template_batches.len(), 2);
    for (template, ids) in &per_template_batches {
        assert!(
            ids.len() <= 4usize.div_ceil(max_batch).max(1),
            "{template} used {} executions",
            ids.len()
        );
    }
    gw.shutdown();
    println!(
        "ACCEPTANCE 8 gateway-invariance: PASS (burst {} executions for {} queries; trickle and \
         mixed traces match direct execution)",
        batch_ids.len(),
        burst.len()
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: rewrite golden shapes
// ---------------------------------------------------------------------------

/// Collapse whitespace runs and glue punctuation; layout-insensitive
/// structural comparison.
fn normalize(s: &str) -> String {
    fn punct(c: char) -> bool {
        matches!(c, '(' | ')' | '[' | ']' | ',')
    }
    let mut collapsed = String::new();
    let mut last_space = true;
    for c in s.chars() {
        if c.is_whitespace() || c == ';' {
            if !last_space {
                collapsed.push(' ');
                last_space = true;
            }
        } else {
            collapsed.push(c);
            last_space = false;
        }
    }
    let chars: Vec<char> = collapsed.trim().chars().collect();
    let mut out = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c == ' ' {
            let prev = out.chars().last().map(punct).unwrap_or(true);
            let next = chars.get(i + 1).map(|&n| punct(n)).unwrap_or(true);
            if prev || next {
                continue;
            }
        }
        out.push(c);
    }
    out
}

#[test]
fn acceptance_9_rewrite_golden_shapes() {
    let dialect = DialectProfile::presto_like();
    let mut catalog = Catalog::new();
    catalog.add_table(TableSchema {
        name: "employees".into(),
        row_count: 100,
        columns: vec![
            ColumnDef { name: "id".into(), ty: ValueType::Int, avg_width: 4 },
            ColumnDef { name: "dept_id".into(), ty: ValueType::Int, avg_width: 4 },
        ],
    });

    // linear-mode shared scan reproduces the canonical four-query rewrite
    let p = |op: AtomOp, args: Vec<Value>| PredicateNf {
        disjuncts: vec![Conjunction {
            atoms: vec![Atom {
                column: ColRef::new("employees", "id"),
                column_type: ValueType::Int,
                op,
                args: args.into_iter().map(AtomArg::Const).collect(),
            }],
        }],
    };
    let preds = vec![
        p(AtomOp::Gt, vec![Value::Int(35)]),
        p(AtomOp::Between, vec![Value::Int(10), Value::Int(20)]),
        p(AtomOp::Lt, vec![Value::Int(51)]),
        p(AtomOp::Between, vec![Value::Int(40), Value::Int(50)]),
    ];
    let scan = sqlgen::gen_shared_scan_sql(
        "employees",
        None,
        &preds,
        ScanMode::Linear,
        &dialect,
        &RenderContext::new(&catalog),
    )
    .unwrap();
    let scan_golden = "\
        SELECT *,
           ARRAY_REMOVE(
             ARRAY[
               CASE WHEN id > 35              THEN 1 ELSE 0 END,
               CASE WHEN id BETWEEN 10 AND 20 THEN 2 ELSE 0 END,
               CASE WHEN id < 51              THEN 3 ELSE 0 END,
               CASE WHEN id BETWEEN 40 AND 50 THEN 4 ELSE 0 END
             ], 0) AS query_set
        FROM employees
        WHERE
           (id > 35) OR (id BETWEEN 10 AND 20) OR
           (id < 51) OR (id BETWEEN 40 AND 50);";
    assert_eq!(normalize(&scan.sql), normalize(scan_golden), "\n{}", scan.sql);

    // shared join shape: intersection projection + emptiness filter
    use shareq_core::dq::{AnnotationKind, JoinOn};
    let left = sqlgen::Subplan {
        name: "r".into(),
        sql: "SELECT * FROM r_src".into(),
        columns: vec!["key".into(), "a1".into()],
        kind: AnnotationKind::Set,
    };
    let right = sqlgen::Subplan {
        name: "s".into(),
        sql: "SELECT * FROM s_src".into(),
        columns: vec!["key".into(), "b1".into()],
        kind: AnnotationKind::Set,
    };
    let join = sqlgen::gen_shared_join_sql(
        &left,
        &right,
        &[JoinOn {
            left_column: "key".into(),
            right_column: "key".into(),
            cmp: ir::JoinCmp::Eq,
        }],
        &dialect,
    )
    .unwrap();
    let j = normalize(&join.sql);
    for fragment in [
        "ARRAY_INTERSECT(r.query_set,s.query_set)AS query_set",
        "FROM r JOIN s ON r.key = s.key",
        "WHERE CARDINALITY(query_set)> 0",
    ] {
        assert!(j.contains(&normalize(fragment)), "missing {fragment} in\n{}", join.sql);
    }

    // shared grouping shape: unnest cross join + GROUP BY query_id
    let input = sqlgen::Subplan {
        name: "sscan_emp".into(),
        sql: "SELECT * FROM employees_scanned".into(),
        columns: vec!["id".into(), "dept_id".into()],
        kind: AnnotationKind::Set,
    };
    let group = sqlgen::gen_shared_group_sql(
        &input,
        &["dept_id".to_string()],
        &[(
            ir::AggCall {
                func: ir::AggFunc::Count,
                arg: Some(ir::ScalarExpr::Col(ColRef::new("e", "id"))),
            },
            "n".to_string(),
        )],
        4,
        &dialect,
    )
    .unwrap();
    let g = normalize(&group.sql);
    for fragment in [
        "CROSS JOIN UNNEST(query_set)AS t(query_id)",
        "SELECT query_id,dept_id,COUNT(id)AS n",
        "GROUP BY query_id,dept_id",
    ] {
        assert!(g.contains(&normalize(fragment)), "missing {fragment} in\n{}", group.sql);
    }
    println!("ACCEPTANCE 9 rewrite-goldens: PASS (scan, join, grouping shapes)");
}
