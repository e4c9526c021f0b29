//! Backend adapter contract, result demultiplexing, and the equivalence
//! harness that runs a shared script and every member query individually
//! on the same backend and compares the outcomes.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::cost::TableStats;
use crate::dq::AnnotationKind;
use crate::engine::{EngineError, RefEngine};
use crate::ir::{self, Projection, QueryBatch, QueryId, QuerySpec};
use crate::plan::{self, PlanError, SplitConfig, Step};
use crate::sqlgen::{self, DialectProfile, RenderContext, ScanMode, SqlGenError};
use crate::table::{Catalog, Database, Table};
use crate::util::approx_eq;
use crate::value::{cmp_values, Value};

#[derive(Clone, Debug, PartialEq)]
pub enum ExecError {
    /// Backend failure with the failing statement attached.
    Backend { message: String, sql: String },
    Plan(PlanError),
    Render(SqlGenError),
    Ir(ir::IrError),
    MissingAnnotation,
    QueryOutsideBatch(QueryId),
    Invalid(String),
}

impl fmt::Display for ExecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecError::Backend { message, sql } => {
                write!(f, "backend error: {message}\nfailing statement:\n{sql}")
            }
            ExecError::Plan(e) => write!(f, "{e}"),
            ExecError::Render(e) => write!(f, "{e}"),
            ExecError::Ir(e) => write!(f, "{e}"),
            ExecError::MissingAnnotation => write!(f, "result carries no annotation column"),
            ExecError::QueryOutsideBatch(q) => write!(f, "query {q} is not in the batch"),
            ExecError::Invalid(m) => write!(f, "{m}"),
        }
    }
}

impl core::error::Error for ExecError {}

impl From<PlanError> for ExecError {
    fn from(e: PlanError) -> Self {
        ExecError::Plan(e)
    }
}

impl From<SqlGenError> for ExecError {
    fn from(e: SqlGenError) -> Self {
        ExecError::Render(e)
    }
}

impl From<ir::IrError> for ExecError {
    fn from(e: ir::IrError) -> Self {
        ExecError::Ir(e)
    }
}

/// What a backend must provide to execute shared scripts. `execute` must
/// be deterministic up to row order for the supported SQL subset.
pub trait BackendAdapter {
    fn dialect(&self) -> &DialectProfile;
    fn execute(&mut self, sql: &str) -> Result<Table, ExecError>;
    fn create_temp(&mut self, name: &str, table: Table) -> Result<(), ExecError>;
    fn drop_temp(&mut self, name: &str) -> Result<(), ExecError>;
    /// Whether `execute` may be called from several threads at once; the
    /// harness serializes unless this says otherwise.
    fn supports_concurrent_execute(&self) -> bool {
        false
    }
}

/// The bundled in-process backend.
pub struct RefBackend {
    engine: RefEngine,
    dialect: DialectProfile,
}

impl RefBackend {
    pub fn new(db: Database) -> RefBackend {
        RefBackend { engine: RefEngine::new(db), dialect: DialectProfile::reference() }
    }

    pub fn with_dialect(db: Database, dialect: DialectProfile) -> RefBackend {
        RefBackend { engine: RefEngine::new(db), dialect }
    }

    pub fn engine(&self) -> &RefEngine {
        &self.engine
    }
}

impl BackendAdapter for RefBackend {
    fn dialect(&self) -> &DialectProfile {
        &self.dialect
    }

    fn execute(&mut self, sql: &str) -> Result<Table, ExecError> {
        reference_execute(&self.engine, sql)
    }

    fn create_temp(&mut self, name: &str, table: Table) -> Result<(), ExecError> {
        self.engine.create_temp(name, table);
        Ok(())
    }

    fn drop_temp(&mut self, name: &str) -> Result<(), ExecError> {
        self.engine.drop_temp(name);
        Ok(())
    }
}

/// Execute one statement on the reference engine, attaching the SQL to
/// any failure.
pub fn reference_execute(engine: &RefEngine, sql: &str) -> Result<Table, ExecError> {
    engine.execute(sql).map_err(|e: EngineError| ExecError::Backend {
        message: alloc::format!("{e}"),
        sql: sql.to_string(),
    })
}

/// A backend result with its annotation column identified.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub table: Table,
    /// (column index, kind); the annotation column is last by convention.
    pub annotation: Option<(usize, AnnotationKind)>,
}

impl ResultTable {
    /// Wrap a raw result, detecting the annotation column by name.
    pub fn from_table(table: Table) -> ResultTable {
        let annotation = table.columns.iter().enumerate().rev().find_map(|(i, c)| {
            match c.name.as_str() {
                "query_set" => Some((i, AnnotationKind::Set)),
                "query_id" => Some((i, AnnotationKind::Atomic)),
                _ => None,
            }
        });
        ResultTable { table, annotation }
    }

    /// Decode one row's annotation into query ids.
    pub fn annotation_row_ids(&self, row: &[Value]) -> Result<Vec<u32>, ExecError> {
        let Some((idx, kind)) = self.annotation else {
            return Err(ExecError::MissingAnnotation);
        };
        match (&row[idx], kind) {
            (Value::IntArray(ids), _) => Ok(ids.iter().map(|&i| i as u32).collect()),
            (Value::Int(bits), AnnotationKind::Set) => {
                Ok((1..=64u32).filter(|i| bits & (1i64 << (i - 1)) != 0).collect())
            }
            (Value::Int(q), AnnotationKind::Atomic) => Ok(alloc::vec![*q as u32]),
            (other, _) => Err(ExecError::Invalid(alloc::format!(
                "unexpected annotation value {other:?}"
            ))),
        }
    }
}

/// Extract per-query tables from a shared result: set annotations expand
/// by membership, atomic ones by equality; the annotation column is
/// projected away. A member whose template is a scalar aggregate (no
/// grouping keys) receives the canonical one-row result when its share
/// is empty, matching what its individual execution would return.
pub fn demux_results(
    shared: &ResultTable,
    batch: &QueryBatch,
) -> Result<BTreeMap<QueryId, Table>, ExecError> {
    if shared.annotation.is_none() {
        return Err(ExecError::MissingAnnotation);
    }
    let (ann_idx, _) = shared.annotation.unwrap();
    let data_cols: Vec<crate::table::Column> = shared
        .table
        .columns
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != ann_idx)
        .map(|(_, c)| c.clone())
        .collect();

    let mut out: BTreeMap<QueryId, Table> = BTreeMap::new();
    for (q, _) in &batch.members {
        out.insert(*q, Table::new(data_cols.clone()));
    }
    for row in &shared.table.rows {
        let ids = shared.annotation_row_ids(row)?;
        let data: Vec<Value> = row
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != ann_idx)
            .map(|(_, v)| v.clone())
            .collect();
        for id in ids {
            if let Some(t) = out.get_mut(&QueryId(id)) {
                t.rows.push(data.clone());
            }
        }
    }
    for (q, spec) in &batch.members {
        let t = out.get_mut(q).unwrap();
        if t.rows.is_empty() {
            if let Some(row) = empty_aggregate_row(spec) {
                t.rows.push(row);
            }
        }
    }
    Ok(out)
}

/// The one-row result of a scalar aggregate over empty input, or `None`
/// for templates that legitimately return zero rows.
pub fn empty_aggregate_row(spec: &QuerySpec) -> Option<Vec<Value>> {
    let grouping = spec.grouping.as_ref()?;
    if !grouping.keys.is_empty() {
        return None;
    }
    Some(
        spec.projections
            .iter()
            .map(|p| match p {
                Projection::Aggregate { agg, .. } => match agg.func {
                    ir::AggFunc::Count => Value::Int(0),
                    _ => Value::Null,
                },
                Projection::Column { .. } => Value::Null,
            })
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// Row comparison
// ---------------------------------------------------------------------------

/// Quantize floats so sort order agrees across arithmetic routes that
/// differ only by rounding.
fn quantized(v: &Value) -> Value {
    match v {
        Value::Float(f) if f.is_finite() && *f != 0.0 => {
            let s = alloc::format!("{:.9e}", f);
            Value::Float(s.parse().unwrap_or(*f))
        }
        other => other.clone(),
    }
}

fn cmp_rows_canonical(a: &[Value], b: &[Value]) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match cmp_values(&quantized(x), &quantized(y)) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Cell-wise equality with relative float tolerance.
pub fn rows_approx_eq(a: &[Value], b: &[Value], tol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b.iter()).all(|(x, y)| match (x, y) {
        (Value::Float(p), Value::Float(q)) => approx_eq(*p, *q, tol),
        (Value::Float(p), Value::Int(q)) | (Value::Int(q), Value::Float(p)) => {
            approx_eq(*p, *q as f64, tol)
        }
        _ => cmp_values(x, y) == Ordering::Equal,
    })
}

/// Multiset comparison (order-insensitive); returns a description of the
/// first differing row, or `None` when equal.
pub fn multiset_diff(expected: &Table, actual: &Table, tol: f64) -> Option<String> {
    if expected.rows.len() != actual.rows.len() {
        return Some(alloc::format!(
            "row count differs: expected {}, got {}",
            expected.rows.len(),
            actual.rows.len()
        ));
    }
    let mut e: Vec<&Vec<Value>> = expected.rows.iter().collect();
    let mut a: Vec<&Vec<Value>> = actual.rows.iter().collect();
    e.sort_by(|x, y| cmp_rows_canonical(x, y));
    a.sort_by(|x, y| cmp_rows_canonical(x, y));
    for (i, (er, ar)) in e.iter().zip(a.iter()).enumerate() {
        if !rows_approx_eq(er, ar, tol) {
            return Some(alloc::format!(
                "first differing row (sorted position {i}): expected {er:?}, got {ar:?}"
            ));
        }
    }
    None
}

/// Validate a claimed per-query ORDER BY (and optional LIMIT) result
/// against the full sorted expectation. Rows tied on the ordering key may
/// appear in any order, and the cut at the limit may pick any admissible
/// subset of the boundary tie group.
pub fn ordered_admissible_diff(
    full_sorted: &Table,
    actual: &Table,
    ordering: &[(usize, bool)],
    limit: Option<u64>,
    tol: f64,
) -> Option<String> {
    let expected_len = match limit {
        Some(k) => full_sorted.rows.len().min(k as usize),
        None => full_sorted.rows.len(),
    };
    if actual.rows.len() != expected_len {
        return Some(alloc::format!(
            "row count differs: expected {expected_len}, got {}",
            actual.rows.len()
        ));
    }
    let key_cmp = |a: &Vec<Value>, b: &Vec<Value>| -> Ordering {
        for &(i, desc) in ordering {
            let ord = cmp_values(&quantized(&a[i]), &quantized(&b[i]));
            let ord = if desc { ord.reverse() } else { ord };
            if ord != Ordering::Equal {
                return ord;
            }
        }
        Ordering::Equal
    };
    // the actual rows must be non-decreasing in the ordering key
    for w in actual.rows.windows(2) {
        if key_cmp(&w[0], &w[1]) == Ordering::Greater {
            return Some(alloc::format!("rows out of order: {:?} before {:?}", w[0], w[1]));
        }
    }
    // walk tie groups of the full expectation
    let mut pos = 0usize; // consumed of actual
    let mut gstart = 0usize;
    while gstart < full_sorted.rows.len() && pos < expected_len {
        let mut gend = gstart + 1;
        while gend < full_sorted.rows.len()
            && key_cmp(&full_sorted.rows[gstart], &full_sorted.rows[gend]) == Ordering::Equal
        {
            gend += 1;
        }
        let take = (gend - gstart).min(expected_len - pos);
        // actual[pos..pos+take] must be a sub-multiset of the tie group
        let mut group: Vec<&Vec<Value>> = full_sorted.rows[gstart..gend].iter().collect();
        for ar in &actual.rows[pos..pos + take] {
            if key_cmp(ar, &full_sorted.rows[gstart]) != Ordering::Equal {
                return Some(alloc::format!(
                    "row {ar:?} does not belong to its ordering tie group"
                ));
            }
            match group.iter().position(|er| rows_approx_eq(er, ar, tol)) {
                Some(i) => {
                    group.remove(i);
                }
                None => {
                    return Some(alloc::format!(
                        "row {ar:?} is not an admissible member of its tie group"
                    ))
                }
            }
        }
        pos += take;
        gstart = gend;
    }
    None
}

// ---------------------------------------------------------------------------
// Script execution and the equivalence harness
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ExecConfig {
    pub mode: ScanMode,
    pub split: SplitConfig,
    pub float_tolerance: f64,
    /// Test hook: drop the first demuxed row of this member to prove the
    /// harness detects a corrupted rewrite.
    pub corrupt: Option<QueryId>,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            mode: ScanMode::Linear,
            split: SplitConfig::default(),
            float_tolerance: 1e-9,
            corrupt: None,
        }
    }
}

/// Render and run every step of a script; returns the per-sink shared
/// results. Temps created along the way are left on the backend (callers
/// drop them via [`cleanup_script_temps`]).
pub fn run_script(
    script: &plan::ExecutionScript,
    batch_size: usize,
    mode: ScanMode,
    catalog: &Catalog,
    backend: &mut dyn BackendAdapter,
) -> Result<BTreeMap<String, ResultTable>, ExecError> {
    let dialect = backend.dialect().clone();
    let mut ctx = RenderContext::new(catalog);
    let mut out = BTreeMap::new();
    for step in &script.steps {
        match step {
            Step::Materialize { name, plan, .. } => {
                let rq = sqlgen::render_materialize(plan, batch_size, &dialect, mode, &ctx)?;
                let table = backend.execute(&rq.sql)?;
                ctx.temp_columns
                    .insert(name.clone(), table.columns.iter().map(|c| c.name.clone()).collect());
                backend.create_temp(name, table)?;
            }
            Step::Run { sink, plan } => {
                let rq = sqlgen::render_plan(plan, batch_size, &dialect, mode, &ctx)?;
                let table = backend.execute(&rq.sql)?;
                out.insert(sink.label.clone(), ResultTable::from_table(table));
            }
        }
    }
    Ok(out)
}

pub fn cleanup_script_temps(
    script: &plan::ExecutionScript,
    backend: &mut dyn BackendAdapter,
) -> Result<(), ExecError> {
    for step in &script.steps {
        if let Step::Materialize { name, .. } = step {
            backend.drop_temp(name)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryOutcome {
    pub query: QueryId,
    pub equal: bool,
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct EquivalenceReport {
    pub outcomes: Vec<QueryOutcome>,
}

impl EquivalenceReport {
    pub fn all_equal(&self) -> bool {
        self.outcomes.iter().all(|o| o.equal)
    }

    pub fn mismatches(&self) -> impl Iterator<Item = &QueryOutcome> {
        self.outcomes.iter().filter(|o| !o.equal)
    }
}

/// Compare one member's demuxed share against its individual execution.
fn compare_member(
    spec: &QuerySpec,
    actual: &Table,
    backend: &mut dyn BackendAdapter,
    tol: f64,
) -> Result<Option<String>, ExecError> {
    if spec.ordering.is_empty() {
        let expected = backend.execute(&ir::unparse(spec))?;
        Ok(multiset_diff(&expected, actual, tol))
    } else {
        // full sorted expectation without the limit, compared with tie
        // groups treated as interchangeable
        let mut unlimited = spec.clone();
        unlimited.limit = None;
        let full = backend.execute(&ir::unparse(&unlimited))?;
        let ordering: Vec<(usize, bool)> = spec
            .ordering
            .iter()
            .map(|o| {
                full.column_index(&o.name)
                    .map(|i| (i, o.desc))
                    .ok_or_else(|| ExecError::Invalid(alloc::format!("no column {}", o.name)))
            })
            .collect::<Result<_, _>>()?;
        Ok(ordered_admissible_diff(&full, actual, &ordering, spec.limit, tol))
    }
}

/// Build, split, render, execute, and demultiplex one per-template batch.
/// Returns the per-member tables plus the executed script (its footprint
/// drives cost reporting). Temps are dropped before returning.
pub fn run_single(
    batch: &QueryBatch,
    catalog: &Catalog,
    backend: &mut dyn BackendAdapter,
    cfg: &ExecConfig,
) -> Result<(BTreeMap<QueryId, Table>, plan::ExecutionScript), ExecError> {
    let dialect = backend.dialect().clone();
    let dag = plan::build_shared_plan(batch, dialect.encoding)?;
    let mut split = cfg.split.clone();
    split.can_materialize = dialect.reads_own_materialization;
    let stats = TableStats::from_catalog(catalog);
    let script = plan::split_dag(&dag, &stats, &split)?;
    let results = run_script(&script, batch.len(), cfg.mode, catalog, backend);
    let cleanup = cleanup_script_temps(&script, backend);
    let results = results?;
    cleanup?;
    let shared = results
        .values()
        .next()
        .ok_or_else(|| ExecError::Invalid("script produced no result".into()))?;
    let demuxed = demux_results(shared, batch)?;
    Ok((demuxed, script))
}

/// Build and run one global plan over several per-template batches.
/// Results are keyed by (source batch id, member id).
pub fn run_global(
    batches: &[QueryBatch],
    catalog: &Catalog,
    backend: &mut dyn BackendAdapter,
    cfg: &ExecConfig,
) -> Result<(BTreeMap<(u64, QueryId), Table>, plan::ExecutionScript), ExecError> {
    let dialect = backend.dialect().clone();
    let (dag, mapping) = plan::build_global_plan(batches, dialect.encoding)?;
    let mut split = cfg.split.clone();
    split.can_materialize = dialect.reads_own_materialization;
    let stats = TableStats::from_catalog(catalog);
    let script = plan::split_dag(&dag, &stats, &split)?;
    let results = run_script(&script, dag.batch.len(), cfg.mode, catalog, backend);
    let cleanup = cleanup_script_temps(&script, backend);
    let results = results?;
    cleanup?;

    let mut out = BTreeMap::new();
    for sink in &dag.sinks {
        let shared = results
            .get(&sink.label)
            .ok_or_else(|| ExecError::Invalid(alloc::format!("missing sink {}", sink.label)))?;
        let members: Vec<(QueryId, QuerySpec)> = sink
            .members
            .iter()
            .map(|g| (*g, dag.batch.member(*g).unwrap().clone()))
            .collect();
        let sub_batch = QueryBatch { batch_id: 0, template_id: None, members };
        let demuxed = demux_results(shared, &sub_batch)?;
        for (global, table) in demuxed {
            let (src_batch, member, _) = mapping
                .iter()
                .find(|(_, _, g)| *g == global)
                .ok_or_else(|| ExecError::QueryOutsideBatch(global))?;
            out.insert((*src_batch, *member), table);
        }
    }
    Ok((out, script))
}

/// Run the shared script for a batch AND each member individually on the
/// same backend; report per-query multiset equality (order-sensitive
/// within admissible tie groups under ORDER BY).
pub fn equivalence_check(
    batch: &QueryBatch,
    catalog: &Catalog,
    backend: &mut dyn BackendAdapter,
    cfg: &ExecConfig,
) -> Result<EquivalenceReport, ExecError> {
    let (mut demuxed, _script) = run_single(batch, catalog, backend, cfg)?;
    if let Some(q) = cfg.corrupt {
        if let Some(t) = demuxed.get_mut(&q) {
            if !t.rows.is_empty() {
                t.rows.remove(0);
            } else {
                t.rows.push(alloc::vec![Value::Int(i64::MIN); t.columns.len()]);
            }
        }
    }
    let mut report = EquivalenceReport::default();
    for (q, spec) in &batch.members {
        let actual = &demuxed[q];
        let detail = compare_member(spec, actual, backend, cfg.float_tolerance)?;
        report.outcomes.push(QueryOutcome { query: *q, equal: detail.is_none(), detail });
    }
    Ok(report)
}

/// Same check over a global plan covering several per-template batches.
pub fn equivalence_check_global(
    batches: &[QueryBatch],
    catalog: &Catalog,
    backend: &mut dyn BackendAdapter,
    cfg: &ExecConfig,
) -> Result<EquivalenceReport, ExecError> {
    let (results, _script) = run_global(batches, catalog, backend, cfg)?;
    let mut report = EquivalenceReport::default();
    for b in batches {
        for (q, spec) in &b.members {
            let actual = results
                .get(&(b.batch_id, *q))
                .ok_or_else(|| ExecError::QueryOutsideBatch(*q))?;
            let detail = compare_member(spec, actual, backend, cfg.float_tolerance)?;
            report.outcomes.push(QueryOutcome { query: *q, equal: detail.is_none(), detail });
        }
    }
    Ok(report)
}
