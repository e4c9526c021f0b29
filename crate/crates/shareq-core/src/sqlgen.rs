//! Render shared plans as executable SQL for a configurable dialect.
//!
//! Scans emit one conditional per query inside an array constructor with
//! zero-removal (linear mode) or the predicate-index CASE expression
//! (indexed mode), with the disjunction of every member predicate pushed
//! into the WHERE clause. Joins intersect annotations and filter empty
//! sets; grouping unnests set annotations and groups by query id;
//! ORDER BY/LIMIT becomes a row-numbering window partitioned by query id.
//! Operators compose through named common-table expressions.
//!
//! The vendor-specific parts (set function names, unnest and window
//! syntax, statement size limit) live in data-only [`DialectProfile`]s.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::dq::{AnnotationKind, JoinOn, SetEncoding};
use crate::ir::{AggCall, PredicateNf, QueryId, ScalarExpr};
use crate::plan::{OpNode, TreePlan};
use crate::predidx::{self, PredIdxError, RenderStyle};
use crate::table::Catalog;

#[derive(Clone, Debug, PartialEq)]
pub enum SqlGenError {
    /// The rendered statement exceeds the dialect's byte limit.
    SizeExceeded { bytes: usize, limit: usize },
    Unsupported(String),
    Index(PredIdxError),
    Invalid(String),
}

impl fmt::Display for SqlGenError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SqlGenError::SizeExceeded { bytes, limit } => {
                write!(f, "rendered statement is {bytes} bytes, over the {limit}-byte limit")
            }
            SqlGenError::Unsupported(m) => write!(f, "unsupported by dialect: {m}"),
            SqlGenError::Index(e) => write!(f, "{e}"),
            SqlGenError::Invalid(m) => write!(f, "{m}"),
        }
    }
}

impl core::error::Error for SqlGenError {}

impl From<PredIdxError> for SqlGenError {
    fn from(e: PredIdxError) -> Self {
        SqlGenError::Index(e)
    }
}

/// How a scan computes the annotation column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanMode {
    Linear,
    /// Median-split decision tree where possible; scans whose predicates
    /// have no indexable interval fall back to linear arms.
    Indexed,
}

/// Vendor profile: pure data, loadable from a config file.
#[derive(Clone, Debug, PartialEq)]
pub struct DialectProfile {
    pub name: String,
    pub encoding: SetEncoding,
    pub array_constructor: String,
    pub array_remove_fn: String,
    pub array_intersect_fn: String,
    pub cardinality_fn: String,
    pub contains_fn: String,
    pub bitand_fn: String,
    pub popcount_fn: String,
    pub shift_left_fn: String,
    /// `{set}` and `{id}` placeholders.
    pub unnest_template: String,
    /// `{partition}` and `{order}` placeholders; empty string means the
    /// dialect has no window functions.
    pub window_template: String,
    pub max_statement_bytes: usize,
    pub reads_own_materialization: bool,
}

impl DialectProfile {
    /// Function names of the paper's cloud targets (ARRAY_INTERSECT /
    /// CARDINALITY / ARRAY_REMOVE).
    pub fn presto_like() -> DialectProfile {
        DialectProfile {
            name: "presto-like".into(),
            encoding: SetEncoding::Array,
            array_constructor: "ARRAY".into(),
            array_remove_fn: "ARRAY_REMOVE".into(),
            array_intersect_fn: "ARRAY_INTERSECT".into(),
            cardinality_fn: "CARDINALITY".into(),
            contains_fn: "CONTAINS".into(),
            bitand_fn: "BITWISE_AND".into(),
            popcount_fn: "BIT_COUNT".into(),
            shift_left_fn: "BITWISE_SHIFT_LEFT".into(),
            unnest_template: "CROSS JOIN UNNEST({set}) AS t({id})".into(),
            window_template: "row_number() OVER (PARTITION BY {partition} ORDER BY {order})"
                .into(),
            max_statement_bytes: 262144,
            reads_own_materialization: false,
        }
    }

    /// ANSI-flavored lowercase names; otherwise structurally identical.
    pub fn standard_like() -> DialectProfile {
        DialectProfile {
            name: "standard-like".into(),
            array_remove_fn: "array_remove".into(),
            array_intersect_fn: "array_intersect".into(),
            cardinality_fn: "cardinality".into(),
            contains_fn: "contains".into(),
            ..DialectProfile::presto_like()
        }
    }

    /// Profile of the bundled in-process backend: presto-like syntax plus
    /// the ability to read back its own materialized output.
    pub fn reference() -> DialectProfile {
        DialectProfile {
            name: "reference".into(),
            reads_own_materialization: true,
            ..DialectProfile::presto_like()
        }
    }

    /// Reference backend with 64-bit bitmask annotations.
    pub fn reference_bitmask() -> DialectProfile {
        DialectProfile {
            name: "reference-bitmask".into(),
            encoding: SetEncoding::Bitmask,
            ..DialectProfile::reference()
        }
    }

    pub fn builtin(name: &str) -> Option<DialectProfile> {
        match name {
            "presto-like" => Some(DialectProfile::presto_like()),
            "standard-like" => Some(DialectProfile::standard_like()),
            "reference" => Some(DialectProfile::reference()),
            "reference-bitmask" => Some(DialectProfile::reference_bitmask()),
            _ => None,
        }
    }

    fn index_style(&self) -> RenderStyle {
        RenderStyle {
            array_open: alloc::format!("{}[", self.array_constructor),
            array_close: "]".into(),
            remove_fn: self.array_remove_fn.clone(),
            bitmask: self.encoding == SetEncoding::Bitmask,
            annotation_column: "query_set".into(),
        }
    }
}

/// A rendered statement plus the schema facts consumers need.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedQuery {
    pub sql: String,
    pub bytes: usize,
    /// Data column names, annotation excluded.
    pub columns: Vec<String>,
    /// Annotation column name and kind, when present.
    pub annotation: Option<(String, AnnotationKind)>,
}

/// Catalog access plus temp-table schemas, needed to expand `*` scans
/// under operators that must enumerate columns.
#[derive(Clone, Debug, Default)]
pub struct RenderContext {
    pub catalog: Catalog,
    pub temp_columns: BTreeMap<String, Vec<String>>,
}

impl RenderContext {
    pub fn new(catalog: &Catalog) -> RenderContext {
        RenderContext { catalog: catalog.clone(), temp_columns: BTreeMap::new() }
    }

    fn table_columns(&self, table: &str, temp: bool) -> Option<Vec<String>> {
        if temp {
            self.temp_columns.get(table).cloned()
        } else {
            self.catalog
                .table(table)
                .map(|t| t.columns.iter().map(|c| c.name.clone()).collect())
        }
    }
}

// ---------------------------------------------------------------------------
// Fragment helpers
// ---------------------------------------------------------------------------

fn render_predicate(nf: &PredicateNf) -> String {
    if nf.is_false() {
        return "FALSE".to_string();
    }
    if nf.is_true() {
        return "TRUE".to_string();
    }
    let parts: Vec<String> = nf
        .disjuncts
        .iter()
        .map(|c| {
            let atoms: Vec<String> = c
                .atoms
                .iter()
                .map(|a| crate::ir::render_atom_with(&a.column.column, a))
                .collect();
            atoms.join(" AND ")
        })
        .collect();
    if parts.len() == 1 {
        parts.into_iter().next().unwrap()
    } else {
        parts.iter().map(|p| alloc::format!("({p})")).collect::<Vec<_>>().join(" OR ")
    }
}

fn render_scalar(e: &ScalarExpr) -> String {
    match e {
        ScalarExpr::Col(c) => c.column.clone(),
        ScalarExpr::Const(v) => v.render_sql(),
        ScalarExpr::Bin { op, left, right } => {
            let sym = match op {
                crate::ir::ArithOp::Add => "+",
                crate::ir::ArithOp::Sub => "-",
                crate::ir::ArithOp::Mul => "*",
                crate::ir::ArithOp::Div => "/",
            };
            alloc::format!("({} {sym} {})", render_scalar(left), render_scalar(right))
        }
    }
}

fn render_agg(agg: &AggCall, alias: &str) -> String {
    match &agg.arg {
        None => alloc::format!("{}(*) AS {alias}", agg.func.name()),
        Some(a) => alloc::format!("{}({}) AS {alias}", agg.func.name(), render_scalar(a)),
    }
}

/// The linear query_set expression: one conditional per active query,
/// zero-removed (arrays) or bit-summed (bitmask).
///
/// `gated_by_prefilter` marks scan position: the statement's WHERE clause
/// is the disjunction of these same predicates, so a single active query
/// can take a constant annotation. Everywhere else (residual selection)
/// the conditional must stay, or the re-check would be a no-op.
fn linear_annotation_expr(
    preds: &[PredicateNf],
    dialect: &DialectProfile,
    gated_by_prefilter: bool,
) -> String {
    let active: Vec<(usize, &PredicateNf)> =
        preds.iter().enumerate().filter(|(_, p)| !p.is_false()).collect();
    let bit = |i: usize| 1u64 << (i as u32);
    if gated_by_prefilter && active.len() == 1 {
        let (i, _) = active[0];
        return match dialect.encoding {
            SetEncoding::Array => {
                alloc::format!("{}[{}] AS query_set", dialect.array_constructor, i + 1)
            }
            SetEncoding::Bitmask => alloc::format!("{} AS query_set", bit(i)),
        };
    }
    match dialect.encoding {
        SetEncoding::Array => {
            let arms: Vec<String> = active
                .iter()
                .map(|(i, p)| {
                    if p.is_true() {
                        alloc::format!("{}", i + 1)
                    } else {
                        alloc::format!(
                            "CASE WHEN {} THEN {} ELSE 0 END",
                            render_predicate(p),
                            i + 1
                        )
                    }
                })
                .collect();
            alloc::format!(
                "{}(\n    {}[\n      {}\n    ], 0) AS query_set",
                dialect.array_remove_fn,
                dialect.array_constructor,
                arms.join(",\n      ")
            )
        }
        SetEncoding::Bitmask => {
            let arms: Vec<String> = active
                .iter()
                .map(|(i, p)| {
                    if p.is_true() {
                        alloc::format!("{}", bit(*i))
                    } else {
                        alloc::format!(
                            "CASE WHEN {} THEN {} ELSE 0 END",
                            render_predicate(p),
                            bit(*i)
                        )
                    }
                })
                .collect();
            alloc::format!("({}) AS query_set", arms.join("\n    + "))
        }
    }
}

/// WHERE clause pushed through the projection: the disjunction of every
/// active member predicate. `None` when some member accepts all rows.
fn prefilter(preds: &[PredicateNf]) -> Option<String> {
    let active: Vec<&PredicateNf> = preds.iter().filter(|p| !p.is_false()).collect();
    if active.is_empty() {
        return Some("FALSE".to_string());
    }
    if active.iter().any(|p| p.is_true()) {
        return None;
    }
    let parts: Vec<String> =
        active.iter().map(|p| alloc::format!("({})", render_predicate(p))).collect();
    Some(parts.join(" OR "))
}

fn set_is_empty_filter(expr: &str, dialect: &DialectProfile) -> String {
    match dialect.encoding {
        SetEncoding::Array => alloc::format!("{}({expr}) > 0", dialect.cardinality_fn),
        SetEncoding::Bitmask => alloc::format!("{expr} <> 0"),
    }
}

fn literal_set(ids: &[QueryId], dialect: &DialectProfile) -> String {
    match dialect.encoding {
        SetEncoding::Array => {
            let items: Vec<String> = ids.iter().map(|q| alloc::format!("{}", q.0)).collect();
            alloc::format!("{}[{}]", dialect.array_constructor, items.join(","))
        }
        SetEncoding::Bitmask => {
            let bits = ids.iter().fold(0u64, |acc, q| acc | (1 << (q.0 - 1)));
            alloc::format!("{bits}")
        }
    }
}

// ---------------------------------------------------------------------------
// Tree rendering
// ---------------------------------------------------------------------------

struct Rendered {
    reference: String,
    /// `None` when a `*` scan could not be expanded (no catalog entry);
    /// operators that must enumerate columns then error.
    columns: Option<Vec<String>>,
    kind: AnnotationKind,
}

fn need_columns<'c>(r: &'c Rendered) -> Result<&'c Vec<String>, SqlGenError> {
    r.columns.as_ref().ok_or_else(|| {
        SqlGenError::Invalid(alloc::format!(
            "cannot enumerate the columns of {}; provide the table in the render context",
            r.reference
        ))
    })
}

struct TreeRenderer<'a> {
    plan: &'a TreePlan,
    dialect: &'a DialectProfile,
    mode: ScanMode,
    ctx: &'a RenderContext,
    batch_size: usize,
    ctes: Vec<(String, String)>,
}

impl<'a> TreeRenderer<'a> {
    fn cte_name(&self, id: usize, base: &str) -> String {
        alloc::format!("{base}_{id}")
    }

    /// Render node `id`; when `as_cte` the select is appended to the CTE
    /// chain and a reference name is returned, otherwise the final select
    /// text itself is returned.
    fn node(&mut self, id: usize, as_cte: bool) -> Result<Rendered, SqlGenError> {
        match &self.plan.nodes[id] {
            OpNode::Scan { table, temp, columns, preds } => {
                let cols_sql = match columns {
                    None => "*".to_string(),
                    Some(cols) => cols.join(", "),
                };
                let columns = match columns {
                    Some(cols) => Some(cols.clone()),
                    None => self.ctx.table_columns(table, *temp),
                };
                let ann = self.scan_annotation(preds)?;
                let mut sql = alloc::format!("SELECT {cols_sql},\n  {ann}\nFROM {table}");
                if let Some(filter) = prefilter(preds) {
                    sql.push_str(&alloc::format!("\nWHERE {filter}"));
                }
                self.finish_node(id, "sscan", sql, columns, AnnotationKind::Set, as_cte)
            }
            OpNode::Select { input, preds } => {
                let child = self.node(*input, true)?;
                let fresh = linear_annotation_expr(preds, self.dialect, false);
                let fresh_expr = fresh.trim_end_matches(" AS query_set").to_string();
                let combine = match self.dialect.encoding {
                    SetEncoding::Array => alloc::format!(
                        "{}(query_set, {fresh_expr})",
                        self.dialect.array_intersect_fn
                    ),
                    SetEncoding::Bitmask => {
                        alloc::format!("{}(query_set, {fresh_expr})", self.dialect.bitand_fn)
                    }
                };
                let cols = need_columns(&child)?.clone();
                let helper_sql = alloc::format!(
                    "SELECT {},\n  {combine} AS query_set\nFROM {}",
                    cols.join(", "),
                    child.reference
                );
                let helper = self.cte_name(id, "sselect_helper");
                self.ctes.push((helper.clone(), helper_sql));
                let filter = set_is_empty_filter("query_set", self.dialect);
                let sql = alloc::format!("SELECT *\nFROM {helper}\nWHERE {filter}");
                self.finish_node(id, "sselect", sql, Some(cols), child.kind, as_cte)
            }
            OpNode::Restrict { input, members } => {
                let child = self.node(*input, true)?;
                let lit = literal_set(members, self.dialect);
                let combine = match self.dialect.encoding {
                    SetEncoding::Array => {
                        alloc::format!("{}(query_set, {lit})", self.dialect.array_intersect_fn)
                    }
                    SetEncoding::Bitmask => {
                        alloc::format!("{}(query_set, {lit})", self.dialect.bitand_fn)
                    }
                };
                let cols = need_columns(&child)?.clone();
                let helper_sql = alloc::format!(
                    "SELECT {},\n  {combine} AS query_set\nFROM {}",
                    cols.join(", "),
                    child.reference
                );
                let helper = self.cte_name(id, "srestrict_helper");
                self.ctes.push((helper.clone(), helper_sql));
                let filter = set_is_empty_filter("query_set", self.dialect);
                let sql = alloc::format!("SELECT *\nFROM {helper}\nWHERE {filter}");
                self.finish_node(id, "srestrict", sql, Some(cols), child.kind, as_cte)
            }
            OpNode::Join { left, right, on } => {
                let l = self.node(*left, true)?;
                let r = self.node(*right, true)?;
                let mut drop_right: Vec<&String> = Vec::new();
                for j in on {
                    if j.left_column == j.right_column && j.cmp == crate::ir::JoinCmp::Eq {
                        drop_right.push(&j.right_column);
                    }
                }
                let l_cols = need_columns(&l)?.clone();
                let r_cols = need_columns(&r)?.clone();
                let mut out_cols: Vec<String> = l_cols.clone();
                for c in &r_cols {
                    if drop_right.iter().any(|d| *d == c) {
                        continue;
                    }
                    if out_cols.contains(c) {
                        return Err(SqlGenError::Invalid(alloc::format!(
                            "ambiguous column {c} across join inputs"
                        )));
                    }
                    out_cols.push(c.clone());
                }
                let select_list: Vec<String> = l_cols
                    .iter()
                    .map(|c| alloc::format!("{}.{c}", l.reference))
                    .chain(r_cols.iter().filter_map(|c| {
                        if drop_right.iter().any(|d| *d == c) {
                            None
                        } else {
                            Some(alloc::format!("{}.{c}", r.reference))
                        }
                    }))
                    .collect();
                let conds: Vec<String> = on
                    .iter()
                    .map(|j| {
                        alloc::format!(
                            "{}.{} {} {}.{}",
                            l.reference,
                            j.left_column,
                            j.cmp.sql(),
                            r.reference,
                            j.right_column
                        )
                    })
                    .collect();
                let combine = match self.dialect.encoding {
                    SetEncoding::Array => alloc::format!(
                        "{}(\n      {}.query_set, {}.query_set) AS query_set",
                        self.dialect.array_intersect_fn,
                        l.reference,
                        r.reference
                    ),
                    SetEncoding::Bitmask => alloc::format!(
                        "{}({}.query_set, {}.query_set) AS query_set",
                        self.dialect.bitand_fn,
                        l.reference,
                        r.reference
                    ),
                };
                let helper_sql = alloc::format!(
                    "SELECT\n    {},\n    {combine}\n  FROM {} JOIN {} ON {}",
                    select_list.join(", "),
                    l.reference,
                    r.reference,
                    conds.join(" AND ")
                );
                let helper = self.cte_name(id, "sjoin_helper");
                self.ctes.push((helper.clone(), helper_sql));
                let filter = set_is_empty_filter("query_set", self.dialect);
                let sql = alloc::format!("SELECT *\nFROM {helper}\nWHERE {filter}");
                self.finish_node(id, "sjoin", sql, Some(out_cols), AnnotationKind::Set, as_cte)
            }
            OpNode::Unnest { input } => {
                let child = self.node(*input, true)?;
                let cols: Vec<String> = need_columns(&child)?.clone();
                let list = cols.join(", ");
                let sql = match self.dialect.encoding {
                    SetEncoding::Array => {
                        let unnest = self
                            .dialect
                            .unnest_template
                            .replace("{set}", "query_set")
                            .replace("{id}", "query_id");
                        alloc::format!(
                            "SELECT {list}, query_id\nFROM {} {unnest}",
                            child.reference
                        )
                    }
                    SetEncoding::Bitmask => {
                        let series: Vec<String> =
                            (1..=self.batch_size).map(|i| alloc::format!("({i})")).collect();
                        let test = alloc::format!(
                            "{}(query_set, {}(1, query_id - 1)) <> 0",
                            self.dialect.bitand_fn,
                            self.dialect.shift_left_fn
                        );
                        alloc::format!(
                            "SELECT {list}, query_id\nFROM {} CROSS JOIN (VALUES {}) AS t(query_id)\nWHERE {test}",
                            child.reference,
                            series.join(", ")
                        )
                    }
                };
                self.finish_node(id, "unnested", sql, Some(cols), AnnotationKind::Atomic, as_cte)
            }
            OpNode::Group { input, keys, aggs } => {
                let child = self.node(*input, true)?;
                if child.kind != AnnotationKind::Atomic {
                    return Err(SqlGenError::Invalid(
                        "grouping requires an unnested (atomic) input".into(),
                    ));
                }
                let mut select_list = alloc::vec!["query_id".to_string()];
                select_list.extend(keys.iter().cloned());
                for (agg, alias) in aggs {
                    select_list.push(render_agg(agg, alias));
                }
                let mut group_list = alloc::vec!["query_id".to_string()];
                group_list.extend(keys.iter().cloned());
                let sql = alloc::format!(
                    "SELECT   {}\nFROM     {}\nGROUP BY {}",
                    select_list.join(", "),
                    child.reference,
                    group_list.join(", ")
                );
                let out: Vec<String> =
                    keys.iter().cloned().chain(aggs.iter().map(|(_, a)| a.clone())).collect();
                self.finish_node(id, "sgroup", sql, Some(out), AnnotationKind::Atomic, as_cte)
            }
            OpNode::Project { input, columns } => {
                let child = self.node(*input, true)?;
                let ann_col = match child.kind {
                    AnnotationKind::Atomic => "query_id",
                    _ => "query_set",
                };
                let list: Vec<String> = columns
                    .iter()
                    .map(|(src, alias)| {
                        if src == alias {
                            src.clone()
                        } else {
                            alloc::format!("{src} AS {alias}")
                        }
                    })
                    .collect();
                let sql = alloc::format!(
                    "SELECT {}, {ann_col}\nFROM {}",
                    list.join(", "),
                    child.reference
                );
                let out: Vec<String> = columns.iter().map(|(_, a)| a.clone()).collect();
                self.finish_node(id, "sproject", sql, Some(out), child.kind, as_cte)
            }
            OpNode::OrderLimit { input, ordering, limit } => {
                let child = self.node(*input, true)?;
                if child.kind != AnnotationKind::Atomic {
                    return Err(SqlGenError::Invalid(
                        "order/limit requires an unnested (atomic) input".into(),
                    ));
                }
                let order_list = if ordering.is_empty() {
                    "query_id".to_string()
                } else {
                    ordering
                        .iter()
                        .map(|(c, desc)| {
                            if *desc {
                                alloc::format!("{c} DESC")
                            } else {
                                c.clone()
                            }
                        })
                        .collect::<Vec<_>>()
                        .join(", ")
                };
                let cols = need_columns(&child)?.clone();
                let list = cols.join(", ");
                let sql = match limit {
                    Some(0) => alloc::format!(
                        "SELECT {list}, query_id\nFROM {}\nWHERE FALSE",
                        child.reference
                    ),
                    Some(k) => {
                        if self.dialect.window_template.is_empty() {
                            return Err(SqlGenError::Unsupported(
                                "window functions are required for shared LIMIT".into(),
                            ));
                        }
                        let window = self
                            .dialect
                            .window_template
                            .replace("{partition}", "query_id")
                            .replace("{order}", &order_list);
                        let ranked = self.cte_name(id, "ranked");
                        self.ctes.push((
                            ranked.clone(),
                            alloc::format!(
                                "SELECT {list}, query_id, {window} AS rn\n  FROM {}",
                                child.reference
                            ),
                        ));
                        alloc::format!(
                            "SELECT {list}, query_id\nFROM {ranked}\nWHERE rn <= {k}\nORDER BY query_id, {order_list}"
                        )
                    }
                    None => alloc::format!(
                        "SELECT {list}, query_id\nFROM {}\nORDER BY query_id, {order_list}",
                        child.reference
                    ),
                };
                self.finish_node(id, "sorted", sql, Some(cols), AnnotationKind::Atomic, as_cte)
            }
        }
    }

    fn scan_annotation(&self, preds: &[PredicateNf]) -> Result<String, SqlGenError> {
        let active = preds.iter().filter(|p| !p.is_false()).count();
        if self.mode == ScanMode::Indexed && active > 1 {
            let input = predidx::to_intervals(preds)?;
            if input.has_indexable() {
                let tree = predidx::build_index_tree(&input, None)?;
                return Ok(predidx::render_expr(&tree, &self.dialect.index_style()));
            }
        }
        Ok(linear_annotation_expr(preds, self.dialect, true))
    }

    fn finish_node(
        &mut self,
        id: usize,
        base: &str,
        sql: String,
        columns: Option<Vec<String>>,
        kind: AnnotationKind,
        as_cte: bool,
    ) -> Result<Rendered, SqlGenError> {
        if as_cte {
            let name = self.cte_name(id, base);
            self.ctes.push((name.clone(), sql));
            Ok(Rendered { reference: name, columns, kind })
        } else {
            Ok(Rendered { reference: sql, columns, kind })
        }
    }
}

fn assemble(ctes: &[(String, String)], body: &str) -> String {
    if ctes.is_empty() {
        return body.to_string();
    }
    let mut out = String::from("WITH ");
    for (i, (name, sql)) in ctes.iter().enumerate() {
        if i > 0 {
            out.push_str(",\n");
        }
        out.push_str(&alloc::format!("{name} AS (\n  {}\n)", sql.replace('\n', "\n  ")));
    }
    out.push('\n');
    out.push_str(body);
    out
}

fn check_size(sql: String, dialect: &DialectProfile) -> Result<(String, usize), SqlGenError> {
    let bytes = sql.len();
    if bytes > dialect.max_statement_bytes {
        return Err(SqlGenError::SizeExceeded { bytes, limit: dialect.max_statement_bytes });
    }
    Ok((sql, bytes))
}

/// Render a tree-shaped plan as a single statement: one named
/// common-table expression per operator, topologically ordered, with the
/// root as the final SELECT.
pub fn render_plan(
    plan: &TreePlan,
    batch_size: usize,
    dialect: &DialectProfile,
    mode: ScanMode,
    ctx: &RenderContext,
) -> Result<RenderedQuery, SqlGenError> {
    let mut r = TreeRenderer { plan, dialect, mode, ctx, batch_size, ctes: Vec::new() };
    let root = r.node(plan.root, false)?;
    let sql = assemble(&r.ctes, &root.reference);
    let (sql, bytes) = check_size(sql, dialect)?;
    let annotation = Some(match root.kind {
        AnnotationKind::Atomic => ("query_id".to_string(), AnnotationKind::Atomic),
        _ => ("query_set".to_string(), AnnotationKind::Set),
    });
    Ok(RenderedQuery { sql, bytes, columns: root.columns.unwrap_or_default(), annotation })
}

/// Render a materialization statement: the same plan, with the
/// annotation column projected away in the final SELECT.
pub fn render_materialize(
    plan: &TreePlan,
    batch_size: usize,
    dialect: &DialectProfile,
    mode: ScanMode,
    ctx: &RenderContext,
) -> Result<RenderedQuery, SqlGenError> {
    let mut r = TreeRenderer { plan, dialect, mode, ctx, batch_size, ctes: Vec::new() };
    let root = r.node(plan.root, true)?;
    let cols = need_columns(&root)?.clone();
    let body = alloc::format!("SELECT {}\nFROM {}", cols.join(", "), root.reference);
    let sql = assemble(&r.ctes, &body);
    let (sql, bytes) = check_size(sql, dialect)?;
    Ok(RenderedQuery { sql, bytes, columns: cols, annotation: None })
}

// ---------------------------------------------------------------------------
// Standalone operator renderers
// ---------------------------------------------------------------------------

/// A named subplan to compose operators over (the `R AS (...)` pieces).
#[derive(Clone, Debug, PartialEq)]
pub struct Subplan {
    pub name: String,
    pub sql: String,
    pub columns: Vec<String>,
    pub kind: AnnotationKind,
}

/// Shared scan over one table (Listing-2 shape in linear mode, the index
/// expression in indexed mode).
pub fn gen_shared_scan_sql(
    table: &str,
    columns: Option<&[String]>,
    preds: &[PredicateNf],
    mode: ScanMode,
    dialect: &DialectProfile,
    ctx: &RenderContext,
) -> Result<RenderedQuery, SqlGenError> {
    if preds.is_empty() || preds.iter().all(|p| p.is_false()) {
        return Err(SqlGenError::Invalid("shared scan requires at least one predicate".into()));
    }
    let plan = TreePlan {
        nodes: alloc::vec![OpNode::Scan {
            table: table.to_string(),
            temp: false,
            columns: columns.map(|c| c.to_vec()),
            preds: preds.to_vec(),
        }],
        root: 0,
    };
    render_plan(&plan, preds.len(), dialect, mode, ctx)
}

/// Shared join of two named subplans (Listing-3 shape for set inputs;
/// id-equality or membership tests for atomic/mixed inputs).
pub fn gen_shared_join_sql(
    left: &Subplan,
    right: &Subplan,
    on: &[JoinOn],
    dialect: &DialectProfile,
) -> Result<RenderedQuery, SqlGenError> {
    let mut conds: Vec<String> = on
        .iter()
        .map(|j| {
            alloc::format!(
                "{}.{} {} {}.{}",
                left.name,
                j.left_column,
                j.cmp.sql(),
                right.name,
                j.right_column
            )
        })
        .collect();
    let dropped = |c: &String| {
        on.iter().any(|j| {
            j.cmp == crate::ir::JoinCmp::Eq && &j.right_column == c && &j.left_column == c
        })
    };
    let mut out_cols: Vec<String> = left.columns.clone();
    for c in &right.columns {
        if !dropped(c) {
            out_cols.push(c.clone());
        }
    }
    let select_cols: Vec<String> = left
        .columns
        .iter()
        .map(|c| alloc::format!("{}.{c}", left.name))
        .chain(right.columns.iter().filter_map(|c| {
            if dropped(c) {
                None
            } else {
                Some(alloc::format!("{}.{c}", right.name))
            }
        }))
        .collect();

    let (ann_expr, ann, filter) = match (left.kind, right.kind) {
        (AnnotationKind::Set, AnnotationKind::Set) => {
            let combine = match dialect.encoding {
                SetEncoding::Array => alloc::format!(
                    "{}(\n            {}.query_set, {}.query_set) AS query_set",
                    dialect.array_intersect_fn,
                    left.name,
                    right.name
                ),
                SetEncoding::Bitmask => alloc::format!(
                    "{}({}.query_set, {}.query_set) AS query_set",
                    dialect.bitand_fn,
                    left.name,
                    right.name
                ),
            };
            (
                combine,
                ("query_set".to_string(), AnnotationKind::Set),
                Some(set_is_empty_filter("query_set", dialect)),
            )
        }
        (AnnotationKind::Atomic, AnnotationKind::Atomic) => {
            conds.push(alloc::format!("{}.query_id = {}.query_id", left.name, right.name));
            (
                alloc::format!("{}.query_id AS query_id", left.name),
                ("query_id".to_string(), AnnotationKind::Atomic),
                None,
            )
        }
        (AnnotationKind::Atomic, AnnotationKind::Set) => {
            conds.push(membership_test(&left.name, &right.name, dialect));
            (
                alloc::format!("{}.query_id AS query_id", left.name),
                ("query_id".to_string(), AnnotationKind::Atomic),
                None,
            )
        }
        (AnnotationKind::Set, AnnotationKind::Atomic) => {
            conds.push(membership_test(&right.name, &left.name, dialect));
            (
                alloc::format!("{}.query_id AS query_id", right.name),
                ("query_id".to_string(), AnnotationKind::Atomic),
                None,
            )
        }
        _ => return Err(SqlGenError::Invalid("join inputs must be annotated".into())),
    };

    let helper = alloc::format!(
        "SELECT\n        {},\n        {ann_expr}\n    FROM {} JOIN {} ON {}",
        select_cols.join(", "),
        left.name,
        right.name,
        conds.join(" AND ")
    );
    let body = match &filter {
        Some(f) => alloc::format!("SELECT *\nFROM sjoin_helper\nWHERE {f}"),
        None => "SELECT *\nFROM sjoin_helper".to_string(),
    };
    let ctes = alloc::vec![
        (left.name.clone(), left.sql.clone()),
        (right.name.clone(), right.sql.clone()),
        ("sjoin_helper".to_string(), helper),
    ];
    let sql = assemble(&ctes, &body);
    let (sql, bytes) = check_size(sql, dialect)?;
    Ok(RenderedQuery { sql, bytes, columns: out_cols, annotation: Some(ann) })
}

fn membership_test(atomic: &str, set_side: &str, dialect: &DialectProfile) -> String {
    match dialect.encoding {
        SetEncoding::Array => {
            alloc::format!("{}({set_side}.query_set, {atomic}.query_id)", dialect.contains_fn)
        }
        SetEncoding::Bitmask => alloc::format!(
            "{}({set_side}.query_set, {}(1, {atomic}.query_id - 1)) <> 0",
            dialect.bitand_fn,
            dialect.shift_left_fn
        ),
    }
}

/// Shared grouping over a subplan (Listing-4 shape): set inputs unnest
/// first, atomic inputs group directly.
pub fn gen_shared_group_sql(
    input: &Subplan,
    keys: &[String],
    aggs: &[(AggCall, String)],
    batch_size: usize,
    dialect: &DialectProfile,
) -> Result<RenderedQuery, SqlGenError> {
    let mut ctes = alloc::vec![(input.name.clone(), input.sql.clone())];
    let source = match input.kind {
        AnnotationKind::Set => {
            let list = input.columns.join(", ");
            let body = match dialect.encoding {
                SetEncoding::Array => {
                    let unnest = dialect
                        .unnest_template
                        .replace("{set}", "query_set")
                        .replace("{id}", "query_id");
                    alloc::format!("SELECT {list}, query_id\n  FROM {} {unnest}", input.name)
                }
                SetEncoding::Bitmask => {
                    let series: Vec<String> =
                        (1..=batch_size).map(|i| alloc::format!("({i})")).collect();
                    let test = alloc::format!(
                        "{}(query_set, {}(1, query_id - 1)) <> 0",
                        dialect.bitand_fn,
                        dialect.shift_left_fn
                    );
                    alloc::format!(
                        "SELECT {list}, query_id\n  FROM {} CROSS JOIN (VALUES {}) AS t(query_id)\n  WHERE {test}",
                        input.name,
                        series.join(", ")
                    )
                }
            };
            let name = alloc::format!("unnested_{}", input.name);
            ctes.push((name.clone(), body));
            name
        }
        AnnotationKind::Atomic => input.name.clone(),
        AnnotationKind::None => {
            return Err(SqlGenError::Invalid("grouping input must be annotated".into()))
        }
    };
    let mut select_list = alloc::vec!["query_id".to_string()];
    select_list.extend(keys.iter().cloned());
    for (agg, alias) in aggs {
        select_list.push(render_agg(agg, alias));
    }
    let mut group_list = alloc::vec!["query_id".to_string()];
    group_list.extend(keys.iter().cloned());
    let body = alloc::format!(
        "SELECT   {}\nFROM     {source}\nGROUP BY {}",
        select_list.join(", "),
        group_list.join(", ")
    );
    let sql = assemble(&ctes, &body);
    let (sql, bytes) = check_size(sql, dialect)?;
    let columns: Vec<String> =
        keys.iter().cloned().chain(aggs.iter().map(|(_, a)| a.clone())).collect();
    Ok(RenderedQuery {
        sql,
        bytes,
        columns,
        annotation: Some(("query_id".to_string(), AnnotationKind::Atomic)),
    })
}

/// Per-query ORDER BY/LIMIT over an atomic subplan: a row-numbering
/// window partitioned by query id, filtered by rank when a limit is set.
pub fn gen_order_limit_sql(
    input: &Subplan,
    ordering: &[(String, bool)],
    limit: Option<u64>,
    dialect: &DialectProfile,
) -> Result<RenderedQuery, SqlGenError> {
    if input.kind != AnnotationKind::Atomic {
        return Err(SqlGenError::Invalid("order/limit input must be atomic".into()));
    }
    let mut ctes = alloc::vec![(input.name.clone(), input.sql.clone())];
    let order_list = if ordering.is_empty() {
        "query_id".to_string()
    } else {
        ordering
            .iter()
            .map(|(c, desc)| if *desc { alloc::format!("{c} DESC") } else { c.clone() })
            .collect::<Vec<_>>()
            .join(", ")
    };
    let list = input.columns.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", ");
    let body = match limit {
        Some(0) => alloc::format!("SELECT {list}, query_id\nFROM {}\nWHERE FALSE", input.name),
        Some(k) => {
            if dialect.window_template.is_empty() {
                return Err(SqlGenError::Unsupported(
                    "window functions are required for shared LIMIT".into(),
                ));
            }
            let window = dialect
                .window_template
                .replace("{partition}", "query_id")
                .replace("{order}", &order_list);
            ctes.push((
                "ranked".to_string(),
                alloc::format!("SELECT {list}, query_id, {window} AS rn\n  FROM {}", input.name),
            ));
            alloc::format!(
                "SELECT {list}, query_id\nFROM ranked\nWHERE rn <= {k}\nORDER BY query_id, {order_list}"
            )
        }
        None => alloc::format!(
            "SELECT {list}, query_id\nFROM {}\nORDER BY query_id, {order_list}",
            input.name
        ),
    };
    let sql = assemble(&ctes, &body);
    let (sql, bytes) = check_size(sql, dialect)?;
    Ok(RenderedQuery {
        sql,
        bytes,
        columns: input.columns.clone(),
        annotation: Some(("query_id".to_string(), AnnotationKind::Atomic)),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::ir::{Atom, AtomArg, AtomOp, ColRef, Conjunction, JoinCmp};
    use crate::value::{Value, ValueType};
    use alloc::vec;

    fn pred(column: &str, op: AtomOp, args: Vec<Value>) -> PredicateNf {
        PredicateNf {
            disjuncts: vec![Conjunction {
                atoms: vec![Atom {
                    column: ColRef::new("employees", column),
                    column_type: ValueType::Int,
                    op,
                    args: args.into_iter().map(AtomArg::Const).collect(),
                }],
            }],
        }
    }

    fn listing2_preds() -> Vec<PredicateNf> {
        vec![
            pred("id", AtomOp::Gt, vec![Value::Int(35)]),
            pred("id", AtomOp::Between, vec![Value::Int(10), Value::Int(20)]),
            pred("id", AtomOp::Lt, vec![Value::Int(51)]),
            pred("id", AtomOp::Between, vec![Value::Int(40), Value::Int(50)]),
        ]
    }

    /// Collapse whitespace runs and glue punctuation so structural
    /// comparison ignores layout.
    pub(crate) fn normalize_sql(s: &str) -> String {
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
                let prev_punct = out.chars().last().map(punct).unwrap_or(true);
                let next_punct = chars.get(i + 1).map(|&n| punct(n)).unwrap_or(true);
                if prev_punct || next_punct {
                    continue;
                }
            }
            out.push(c);
        }
        out
    }

    #[test]
    fn linear_scan_matches_listing2_structure() {
        let dialect = DialectProfile::presto_like();
        let ctx = RenderContext::default();
        let q = gen_shared_scan_sql(
            "employees",
            None,
            &listing2_preds(),
            ScanMode::Linear,
            &dialect,
            &ctx,
        )
        .unwrap();
        let expected = "\
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
        assert_eq!(normalize_sql(&q.sql), normalize_sql(expected), "\n{}", q.sql);
    }

    #[test]
    fn indexed_scan_embeds_the_case_tree() {
        let dialect = DialectProfile::presto_like();
        let q = gen_shared_scan_sql(
            "employees",
            None,
            &listing2_preds(),
            ScanMode::Indexed,
            &dialect,
            &RenderContext::default(),
        )
        .unwrap();
        assert!(q.sql.contains("(CASE WHEN id <= 35 THEN"), "{}", q.sql);
        assert!(q.sql.contains("END) AS query_set"));
        assert!(q.sql.contains("WHERE (id > 35) OR"));
    }

    #[test]
    fn batch_of_one_renders_constant_annotation() {
        let dialect = DialectProfile::presto_like();
        let q = gen_shared_scan_sql(
            "employees",
            None,
            &[pred("id", AtomOp::Gt, vec![Value::Int(35)])],
            ScanMode::Linear,
            &dialect,
            &RenderContext::default(),
        )
        .unwrap();
        assert!(q.sql.contains("ARRAY[1] AS query_set"), "{}", q.sql);
        assert!(q.sql.contains("WHERE (id > 35)"));
    }

    fn subplan(name: &str, kind: AnnotationKind, cols: &[&str]) -> Subplan {
        Subplan {
            name: name.to_string(),
            sql: alloc::format!("SELECT * FROM {name}_src"),
            columns: cols.iter().map(|c| c.to_string()).collect(),
            kind,
        }
    }

    #[test]
    fn set_join_matches_listing3_structure() {
        let dialect = DialectProfile::presto_like();
        let left = subplan("r", AnnotationKind::Set, &["key", "a1"]);
        let right = subplan("s", AnnotationKind::Set, &["key", "b1"]);
        let q = gen_shared_join_sql(
            &left,
            &right,
            &[JoinOn { left_column: "key".into(), right_column: "key".into(), cmp: JoinCmp::Eq }],
            &dialect,
        )
        .unwrap();
        let n = normalize_sql(&q.sql);
        assert!(n.contains("ARRAY_INTERSECT(r.query_set,s.query_set)AS query_set"), "{n}");
        assert!(n.contains("FROM r JOIN s ON r.key = s.key"), "{n}");
        assert!(n.contains("WHERE CARDINALITY(query_set)> 0"), "{n}");
        assert_eq!(q.annotation, Some(("query_set".to_string(), AnnotationKind::Set)));
    }

    #[test]
    fn atomic_join_extends_the_condition() {
        let dialect = DialectProfile::presto_like();
        let left = subplan("r", AnnotationKind::Atomic, &["key"]);
        let right = subplan("s", AnnotationKind::Atomic, &["key", "x"]);
        let q = gen_shared_join_sql(
            &left,
            &right,
            &[JoinOn { left_column: "key".into(), right_column: "key".into(), cmp: JoinCmp::Eq }],
            &dialect,
        )
        .unwrap();
        assert!(q.sql.contains("r.query_id = s.query_id"), "{}", q.sql);
        assert_eq!(q.annotation, Some(("query_id".to_string(), AnnotationKind::Atomic)));
    }

    #[test]
    fn mixed_join_uses_membership() {
        let dialect = DialectProfile::presto_like();
        let left = subplan("r", AnnotationKind::Atomic, &["key"]);
        let right = subplan("s", AnnotationKind::Set, &["key", "x"]);
        let q = gen_shared_join_sql(
            &left,
            &right,
            &[JoinOn { left_column: "key".into(), right_column: "key".into(), cmp: JoinCmp::Eq }],
            &dialect,
        )
        .unwrap();
        assert!(q.sql.contains("CONTAINS(s.query_set, r.query_id)"), "{}", q.sql);
    }

    #[test]
    fn bitmask_join_uses_bitwise_and_nonzero() {
        let dialect = DialectProfile::reference_bitmask();
        let left = subplan("r", AnnotationKind::Set, &["key"]);
        let right = subplan("s", AnnotationKind::Set, &["key", "x"]);
        let q = gen_shared_join_sql(
            &left,
            &right,
            &[JoinOn { left_column: "key".into(), right_column: "key".into(), cmp: JoinCmp::Eq }],
            &dialect,
        )
        .unwrap();
        assert!(q.sql.contains("BITWISE_AND(r.query_set, s.query_set) AS query_set"));
        assert!(q.sql.contains("WHERE query_set <> 0"), "{}", q.sql);
    }

    #[test]
    fn group_over_set_input_matches_listing4_structure() {
        let dialect = DialectProfile::presto_like();
        let input = subplan("sscan_emp", AnnotationKind::Set, &["id", "dept_id"]);
        let q = gen_shared_group_sql(
            &input,
            &["dept_id".to_string()],
            &[(
                AggCall {
                    func: crate::ir::AggFunc::Count,
                    arg: Some(ScalarExpr::Col(ColRef::new("e", "id"))),
                },
                "n".to_string(),
            )],
            4,
            &dialect,
        )
        .unwrap();
        let n = normalize_sql(&q.sql);
        assert!(n.contains("CROSS JOIN UNNEST(query_set)AS t(query_id)"), "{n}");
        assert!(n.contains("SELECT query_id,dept_id,COUNT(id)AS n"), "{n}");
        assert!(n.contains("GROUP BY query_id,dept_id"), "{n}");
    }

    #[test]
    fn group_over_atomic_input_has_no_unnest() {
        let dialect = DialectProfile::presto_like();
        let input = subplan("already_atomic", AnnotationKind::Atomic, &["dept_id"]);
        let q = gen_shared_group_sql(
            &input,
            &["dept_id".to_string()],
            &[(AggCall { func: crate::ir::AggFunc::Count, arg: None }, "n".to_string())],
            4,
            &dialect,
        )
        .unwrap();
        assert!(!q.sql.contains("UNNEST"), "{}", q.sql);
    }

    #[test]
    fn bitmask_unnest_joins_an_integer_series() {
        let dialect = DialectProfile::reference_bitmask();
        let input = subplan("sscan_emp", AnnotationKind::Set, &["dept_id"]);
        let q = gen_shared_group_sql(
            &input,
            &["dept_id".to_string()],
            &[(AggCall { func: crate::ir::AggFunc::Count, arg: None }, "n".to_string())],
            3,
            &dialect,
        )
        .unwrap();
        assert!(q.sql.contains("(VALUES (1), (2), (3)) AS t(query_id)"), "{}", q.sql);
        assert!(q.sql.contains("BITWISE_AND(query_set, BITWISE_SHIFT_LEFT(1, query_id - 1)) <> 0"));
    }

    #[test]
    fn order_limit_renders_rank_filter() {
        let dialect = DialectProfile::presto_like();
        let input = subplan("grp", AnnotationKind::Atomic, &["price"]);
        let q = gen_order_limit_sql(&input, &[("price".to_string(), true)], Some(10), &dialect)
            .unwrap();
        assert!(
            q.sql.contains("row_number() OVER (PARTITION BY query_id ORDER BY price DESC)"),
            "{}",
            q.sql
        );
        assert!(q.sql.contains("WHERE rn <= 10"));
        let no_limit =
            gen_order_limit_sql(&input, &[("price".to_string(), false)], None, &dialect).unwrap();
        assert!(!no_limit.sql.contains("rn"), "{}", no_limit.sql);
        let zero = gen_order_limit_sql(&input, &[("price".to_string(), false)], Some(0), &dialect)
            .unwrap();
        assert!(zero.sql.contains("WHERE FALSE"));
    }

    #[test]
    fn missing_window_support_is_an_unsupported_error() {
        let mut dialect = DialectProfile::presto_like();
        dialect.window_template = String::new();
        let input = subplan("grp", AnnotationKind::Atomic, &["price"]);
        assert!(matches!(
            gen_order_limit_sql(&input, &[("price".to_string(), false)], Some(5), &dialect),
            Err(SqlGenError::Unsupported(_))
        ));
    }

    #[test]
    fn size_limit_is_enforced_never_truncated() {
        let mut dialect = DialectProfile::presto_like();
        dialect.max_statement_bytes = 200;
        let err = gen_shared_scan_sql(
            "employees",
            None,
            &listing2_preds(),
            ScanMode::Linear,
            &dialect,
            &RenderContext::default(),
        );
        match err {
            Err(SqlGenError::SizeExceeded { bytes, limit }) => {
                assert_eq!(limit, 200);
                assert!(bytes > 200);
            }
            other => panic!("expected size error, got {other:?}"),
        }
    }

    #[test]
    fn empty_scan_preds_rejected() {
        let dialect = DialectProfile::presto_like();
        assert!(gen_shared_scan_sql(
            "employees",
            None,
            &[],
            ScanMode::Linear,
            &dialect,
            &RenderContext::default()
        )
        .is_err());
    }
}
