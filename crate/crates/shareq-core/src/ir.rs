//! Per-query relational descriptions: parsing the supported SQL subset,
//! predicate normalization, template extraction, and batch grouping.
//!
//! Supported subset: single-block SELECT with inner equi-joins,
//! conjunctive/disjunctive predicates over column-vs-constant atoms,
//! GROUP BY with COUNT/SUM/MIN/MAX/AVG, ORDER BY, LIMIT. Everything else
//! errors loudly naming the construct.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::sql::{self, BinOp, Expr, JoinTarget, SelectItem, SqlError, TableRef, UnOp};
use crate::table::Catalog;
use crate::util::Fnv64;
use crate::value::{Value, ValueType};

#[derive(Clone, Debug, PartialEq)]
pub enum IrError {
    Syntax(SqlError),
    UnknownTable(String),
    UnknownColumn(String),
    Unsupported(String),
    Invalid(String),
}

impl fmt::Display for IrError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IrError::Syntax(e) => write!(f, "{e}"),
            IrError::UnknownTable(t) => write!(f, "unknown table {t}"),
            IrError::UnknownColumn(c) => write!(f, "{c}"),
            IrError::Unsupported(c) => write!(f, "unsupported construct: {c}"),
            IrError::Invalid(m) => write!(f, "{m}"),
        }
    }
}

impl core::error::Error for IrError {}

impl From<SqlError> for IrError {
    fn from(e: SqlError) -> Self {
        match e {
            SqlError::Unsupported { construct } => IrError::Unsupported(construct),
            other => IrError::Syntax(other),
        }
    }
}

/// 1-based member index within a batch. Identifier 0 is reserved as the
/// "no query" sentinel in generated SQL.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QueryId(pub u32);

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Column reference, qualified by the owning table binding's alias.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ColRef {
    pub table: String,
    pub column: String,
}

impl ColRef {
    pub fn new(table: &str, column: &str) -> ColRef {
        ColRef { table: table.to_string(), column: column.to_string() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AtomOp {
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
    Between,
    Like,
    In,
}

impl AtomOp {
    pub fn sql(&self) -> &'static str {
        match self {
            AtomOp::Eq => "=",
            AtomOp::Lt => "<",
            AtomOp::Le => "<=",
            AtomOp::Gt => ">",
            AtomOp::Ge => ">=",
            AtomOp::Between => "BETWEEN",
            AtomOp::Like => "LIKE",
            AtomOp::In => "IN",
        }
    }
}

/// Atom argument: a typed constant or an unresolved `?` placeholder.
#[derive(Clone, Debug, PartialEq)]
pub enum AtomArg {
    Const(Value),
    Param(u32),
}

/// `column op args`; the building block of predicates in normal form.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub column: ColRef,
    pub column_type: ValueType,
    pub op: AtomOp,
    pub args: Vec<AtomArg>,
}

impl Atom {
    pub fn is_bound(&self) -> bool {
        self.args.iter().all(|a| matches!(a, AtomArg::Const(_)))
    }

    pub fn const_args(&self) -> Option<Vec<&Value>> {
        self.args
            .iter()
            .map(|a| match a {
                AtomArg::Const(v) => Some(v),
                AtomArg::Param(_) => None,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Conjunction {
    pub atoms: Vec<Atom>,
}

/// Disjunctive normal form. One empty conjunction means TRUE; an empty
/// disjunct list means FALSE.
#[derive(Clone, Debug, PartialEq)]
pub struct PredicateNf {
    pub disjuncts: Vec<Conjunction>,
}

impl PredicateNf {
    pub fn always_true() -> PredicateNf {
        PredicateNf { disjuncts: alloc::vec![Conjunction::default()] }
    }

    pub fn always_false() -> PredicateNf {
        PredicateNf { disjuncts: Vec::new() }
    }

    pub fn is_true(&self) -> bool {
        self.disjuncts.len() == 1 && self.disjuncts[0].atoms.is_empty()
    }

    pub fn is_false(&self) -> bool {
        self.disjuncts.is_empty()
    }

    pub fn is_bound(&self) -> bool {
        self.disjuncts.iter().all(|c| c.atoms.iter().all(Atom::is_bound))
    }

    pub fn atoms(&self) -> impl Iterator<Item = &Atom> {
        self.disjuncts.iter().flat_map(|c| c.atoms.iter())
    }

    /// Conjunction of two normal forms, re-normalized by distribution.
    pub fn and(&self, other: &PredicateNf) -> PredicateNf {
        let mut out = Vec::new();
        for a in &self.disjuncts {
            for b in &other.disjuncts {
                let mut atoms = a.atoms.clone();
                atoms.extend(b.atoms.iter().cloned());
                out.push(Conjunction { atoms });
            }
        }
        PredicateNf { disjuncts: out }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Scalar expression over one row; appears as aggregate arguments.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarExpr {
    Col(ColRef),
    Const(Value),
    Bin { op: ArithOp, left: Box<ScalarExpr>, right: Box<ScalarExpr> },
}

impl ScalarExpr {
    pub fn columns(&self, out: &mut Vec<ColRef>) {
        match self {
            ScalarExpr::Col(c) => out.push(c.clone()),
            ScalarExpr::Const(_) => {}
            ScalarExpr::Bin { left, right, .. } => {
                left.columns(out);
                right.columns(out);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggFunc {
    Count,
    Sum,
    Min,
    Max,
    Avg,
}

impl AggFunc {
    pub fn name(&self) -> &'static str {
        match self {
            AggFunc::Count => "COUNT",
            AggFunc::Sum => "SUM",
            AggFunc::Min => "MIN",
            AggFunc::Max => "MAX",
            AggFunc::Avg => "AVG",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggCall {
    pub func: AggFunc,
    /// `None` is `COUNT(*)`.
    pub arg: Option<ScalarExpr>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Projection {
    Column { col: ColRef, alias: String },
    Aggregate { agg: AggCall, alias: String },
}

impl Projection {
    pub fn alias(&self) -> &str {
        match self {
            Projection::Column { alias, .. } | Projection::Aggregate { alias, .. } => alias,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grouping {
    /// Empty keys = scalar aggregate over the whole input.
    pub keys: Vec<ColRef>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderKey {
    /// Output column name (projection alias).
    pub name: String,
    pub desc: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableBinding {
    pub table: String,
    pub alias: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JoinCmp {
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
}

impl JoinCmp {
    pub fn sql(&self) -> &'static str {
        match self {
            JoinCmp::Eq => "=",
            JoinCmp::Lt => "<",
            JoinCmp::Le => "<=",
            JoinCmp::Gt => ">",
            JoinCmp::Ge => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JoinEdge {
    pub left: ColRef,
    pub right: ColRef,
    pub cmp: JoinCmp,
}

/// Parsed relational description of one query.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySpec {
    pub base: Vec<TableBinding>,
    pub joins: Vec<JoinEdge>,
    pub predicate: PredicateNf,
    pub projections: Vec<Projection>,
    pub grouping: Option<Grouping>,
    pub ordering: Vec<OrderKey>,
    pub limit: Option<u64>,
    /// True when the SELECT list was literally `*`.
    pub select_star: bool,
}

impl QuerySpec {
    pub fn is_bound(&self) -> bool {
        self.predicate.is_bound()
    }

    pub fn binding(&self, alias: &str) -> Option<&TableBinding> {
        self.base.iter().find(|b| b.alias == alias)
    }

    /// Names and types of the result columns, in projection order.
    pub fn output_schema(&self, catalog: &Catalog) -> Vec<(String, ValueType)> {
        self.projections
            .iter()
            .map(|p| match p {
                Projection::Column { col, alias } => {
                    let ty = self
                        .binding(&col.table)
                        .and_then(|b| catalog.table(&b.table))
                        .and_then(|t| t.column(&col.column))
                        .map(|c| c.ty)
                        .unwrap_or(ValueType::Str);
                    (alias.clone(), ty)
                }
                Projection::Aggregate { agg, alias } => {
                    (alias.clone(), agg_type(agg, self, catalog))
                }
            })
            .collect()
    }
}

fn agg_type(agg: &AggCall, spec: &QuerySpec, catalog: &Catalog) -> ValueType {
    fn scalar_type(e: &ScalarExpr, spec: &QuerySpec, catalog: &Catalog) -> ValueType {
        match e {
            ScalarExpr::Col(c) => spec
                .binding(&c.table)
                .and_then(|b| catalog.table(&b.table))
                .and_then(|t| t.column(&c.column))
                .map(|c| c.ty)
                .unwrap_or(ValueType::Float),
            ScalarExpr::Const(v) => v.value_type().unwrap_or(ValueType::Float),
            ScalarExpr::Bin { op: ArithOp::Div, .. } => ValueType::Float,
            ScalarExpr::Bin { left, right, .. } => {
                let (l, r) = (scalar_type(left, spec, catalog), scalar_type(right, spec, catalog));
                if l == ValueType::Int && r == ValueType::Int {
                    ValueType::Int
                } else {
                    ValueType::Float
                }
            }
        }
    }
    match agg.func {
        AggFunc::Count => ValueType::Int,
        AggFunc::Avg => ValueType::Float,
        AggFunc::Sum | AggFunc::Min | AggFunc::Max => agg
            .arg
            .as_ref()
            .map(|a| scalar_type(a, spec, catalog))
            .unwrap_or(ValueType::Float),
    }
}

/// A group of queries rewritten and executed as one statement.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryBatch {
    pub batch_id: u64,
    /// Structural hash shared by all members under per-template grouping.
    pub template_id: Option<u64>,
    pub members: Vec<(QueryId, QuerySpec)>,
}

impl QueryBatch {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, q: QueryId) -> Option<&QuerySpec> {
        self.members.iter().find(|(id, _)| *id == q).map(|(_, s)| s)
    }

    pub fn query_ids(&self) -> Vec<QueryId> {
        self.members.iter().map(|(id, _)| *id).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupPolicy {
    PerTemplate,
    Global,
}

/// Maps an original submission id to its place in the grouped output.
#[derive(Clone, Debug, PartialEq)]
pub struct IdMapping {
    pub original: String,
    pub batch: u64,
    pub member: QueryId,
}

// ---------------------------------------------------------------------------
// Parsing / lowering
// ---------------------------------------------------------------------------

pub fn parse_query(sql_text: &str, catalog: &Catalog) -> Result<QuerySpec, IrError> {
    let stmt = sql::parse_select(sql_text)?;
    lower(stmt, catalog)
}

fn lower(stmt: sql::SelectStmt, catalog: &Catalog) -> Result<QuerySpec, IrError> {
    if !stmt.with.is_empty() {
        return Err(IrError::Unsupported("WITH clause in input query".into()));
    }
    let from = stmt.from.ok_or_else(|| IrError::Unsupported("SELECT without FROM".into()))?;

    // table bindings
    let mut base: Vec<TableBinding> = Vec::new();
    let add_binding = |t: &TableRef, base: &mut Vec<TableBinding>| -> Result<(), IrError> {
        match t {
            TableRef::Named { name, alias } => {
                if catalog.table(name).is_none() {
                    return Err(IrError::UnknownTable(name.clone()));
                }
                let alias = alias.clone().unwrap_or_else(|| name.clone());
                if base.iter().any(|b| b.alias == alias) {
                    return Err(IrError::Invalid(alloc::format!("duplicate table alias {alias}")));
                }
                base.push(TableBinding { table: name.clone(), alias });
                Ok(())
            }
            TableRef::Values { .. } => Err(IrError::Unsupported("VALUES in input query".into())),
        }
    };
    add_binding(&from.first, &mut base)?;
    let mut join_exprs: Vec<Expr> = Vec::new();
    for j in &from.joins {
        match (&j.target, &j.on) {
            (JoinTarget::Table(t), Some(on)) => {
                add_binding(t, &mut base)?;
                join_exprs.push(on.clone());
            }
            (JoinTarget::Table(_), None) => {
                return Err(IrError::Unsupported("CROSS JOIN in input query".into()))
            }
            (JoinTarget::Unnest { .. }, _) => {
                return Err(IrError::Unsupported("UNNEST in input query".into()))
            }
        }
    }
    let scope: Vec<(String, String)> =
        base.iter().map(|b| (b.alias.clone(), b.table.clone())).collect();
    let base_for_lookup = base.clone();
    let alias_of_table = move |table: &str| -> String {
        base_for_lookup
            .iter()
            .find(|b| b.table == table)
            .map(|b| b.alias.clone())
            .unwrap_or_else(|| table.to_string())
    };

    // join edges
    let mut joins = Vec::new();
    for on in &join_exprs {
        for conj in split_conjunction(on) {
            joins.push(lower_join_edge(conj, catalog, &scope, &alias_of_table)?);
        }
    }
    check_connected(&base, &joins)?;

    // predicate
    let predicate = match &stmt.where_clause {
        Some(e) => lower_dnf(e, catalog, &scope, &alias_of_table)?,
        None => PredicateNf::always_true(),
    };

    // projections
    let mut projections = Vec::new();
    let mut select_star = false;
    let mut used_names: Vec<String> = Vec::new();
    fn unique_alias(wanted: String, used: &mut Vec<String>) -> String {
        let mut name = wanted;
        let mut n = 1;
        while used.contains(&name) {
            n += 1;
            name = alloc::format!("{name}_{n}");
        }
        used.push(name.clone());
        name
    }
    for item in &stmt.items {
        match item {
            SelectItem::Star => {
                if stmt.items.len() != 1 {
                    return Err(IrError::Unsupported("mixed * and expressions in SELECT".into()));
                }
                select_star = true;
                expand_star(&base, &joins, catalog, &mut projections, &mut used_names)?;
            }
            SelectItem::Expr { expr, alias } => match expr {
                Expr::Column { qualifier, name } => {
                    let col =
                        resolve_col(catalog, &scope, qualifier.as_deref(), name, &alias_of_table)?;
                    let alias = unique_alias(
                        alias.clone().unwrap_or_else(|| col.0.column.clone()),
                        &mut used_names,
                    );
                    projections.push(Projection::Column { col: col.0, alias });
                }
                Expr::Func { .. } => {
                    let agg = lower_agg(expr, catalog, &scope, &alias_of_table)?;
                    let wanted =
                        alias.clone().unwrap_or_else(|| agg.func.name().to_ascii_lowercase());
                    let alias = unique_alias(wanted, &mut used_names);
                    projections.push(Projection::Aggregate { agg, alias });
                }
                other => {
                    return Err(IrError::Unsupported(alloc::format!(
                        "computed projection {other:?}"
                    )))
                }
            },
        }
    }

    // grouping
    let has_aggs = projections.iter().any(|p| matches!(p, Projection::Aggregate { .. }));
    let grouping = if !stmt.group_by.is_empty() {
        let mut keys = Vec::new();
        for g in &stmt.group_by {
            match g {
                Expr::Column { qualifier, name } => {
                    let (col, _) =
                        resolve_col(catalog, &scope, qualifier.as_deref(), name, &alias_of_table)?;
                    keys.push(col);
                }
                other => {
                    return Err(IrError::Unsupported(alloc::format!(
                        "GROUP BY expression {other:?}"
                    )))
                }
            }
        }
        // every plain projection must be one of the keys
        for p in &projections {
            if let Projection::Column { col, .. } = p {
                if !keys.contains(col) {
                    return Err(IrError::Invalid(alloc::format!(
                        "column {}.{} must appear in GROUP BY",
                        col.table,
                        col.column
                    )));
                }
            }
        }
        Some(Grouping { keys })
    } else if has_aggs {
        if projections.iter().any(|p| matches!(p, Projection::Column { .. })) {
            return Err(IrError::Invalid(
                "plain columns mixed with aggregates require GROUP BY".into(),
            ));
        }
        Some(Grouping { keys: Vec::new() })
    } else {
        None
    };

    // ordering over output names
    let mut ordering = Vec::new();
    for o in &stmt.order_by {
        match &o.expr {
            Expr::Column { qualifier: None, name } => {
                if !projections.iter().any(|p| p.alias() == name) {
                    return Err(IrError::UnknownColumn(alloc::format!(
                        "ORDER BY {name} does not name an output column"
                    )));
                }
                ordering.push(OrderKey { name: name.clone(), desc: o.desc });
            }
            Expr::Column { qualifier: Some(q), name } => {
                // qualified ordering works when the column is projected
                let (col, _) = resolve_col(catalog, &scope, Some(q), name, &alias_of_table)?;
                let alias = projections
                    .iter()
                    .find_map(|p| match p {
                        Projection::Column { col: c, alias } if *c == col => Some(alias.clone()),
                        _ => None,
                    })
                    .ok_or_else(|| {
                        IrError::UnknownColumn(alloc::format!(
                            "ORDER BY {q}.{name} does not name an output column"
                        ))
                    })?;
                ordering.push(OrderKey { name: alias, desc: o.desc });
            }
            other => {
                return Err(IrError::Unsupported(alloc::format!(
                    "ORDER BY expression {other:?}"
                )))
            }
        }
    }

    let limit = match stmt.limit {
        Some(0) => return Err(IrError::Invalid("LIMIT must be positive".into())),
        other => other,
    };

    Ok(QuerySpec { base, joins, predicate, projections, grouping, ordering, limit, select_star })
}

fn expand_star(
    base: &[TableBinding],
    joins: &[JoinEdge],
    catalog: &Catalog,
    projections: &mut Vec<Projection>,
    used_names: &mut Vec<String>,
) -> Result<(), IrError> {
    // For each equi-join edge, the right-hand key column with the same name
    // as its left partner is dropped: both carry the same value and the
    // output must keep unique column names.
    let mut skip: Vec<ColRef> = Vec::new();
    for e in joins {
        if e.cmp == JoinCmp::Eq && e.left.column == e.right.column {
            skip.push(e.right.clone());
        }
    }
    for b in base {
        let schema =
            catalog.table(&b.table).ok_or_else(|| IrError::UnknownTable(b.table.clone()))?;
        for c in &schema.columns {
            let col = ColRef { table: b.alias.clone(), column: c.name.clone() };
            if skip.contains(&col) {
                continue;
            }
            if used_names.contains(&c.name) {
                return Err(IrError::Unsupported(alloc::format!(
                    "duplicate column name {} across joined tables",
                    c.name
                )));
            }
            used_names.push(c.name.clone());
            projections.push(Projection::Column { col, alias: c.name.clone() });
        }
    }
    Ok(())
}

fn split_conjunction(e: &Expr) -> Vec<&Expr> {
    match e {
        Expr::Binary { left, op: BinOp::And, right } => {
            let mut v = split_conjunction(left);
            v.extend(split_conjunction(right));
            v
        }
        other => alloc::vec![other],
    }
}

fn lower_join_edge(
    e: &Expr,
    catalog: &Catalog,
    scope: &[(String, String)],
    alias_of_table: &dyn Fn(&str) -> String,
) -> Result<JoinEdge, IrError> {
    if let Expr::Binary { left, op, right } = e {
        let cmp = match op {
            BinOp::Eq => JoinCmp::Eq,
            BinOp::Lt => JoinCmp::Lt,
            BinOp::Le => JoinCmp::Le,
            BinOp::Gt => JoinCmp::Gt,
            BinOp::Ge => JoinCmp::Ge,
            _ => return Err(IrError::Unsupported("non-comparison join condition".into())),
        };
        if let (
            Expr::Column { qualifier: lq, name: ln },
            Expr::Column { qualifier: rq, name: rn },
        ) = (left.as_ref(), right.as_ref())
        {
            let (lcol, _) = resolve_col(catalog, scope, lq.as_deref(), ln, alias_of_table)?;
            let (rcol, _) = resolve_col(catalog, scope, rq.as_deref(), rn, alias_of_table)?;
            if lcol.table == rcol.table {
                return Err(IrError::Unsupported("self-comparison join condition".into()));
            }
            return Ok(JoinEdge { left: lcol, right: rcol, cmp });
        }
    }
    Err(IrError::Unsupported("join condition must compare two columns".into()))
}

fn check_connected(base: &[TableBinding], joins: &[JoinEdge]) -> Result<(), IrError> {
    if base.len() <= 1 {
        return Ok(());
    }
    let mut reached = alloc::vec![false; base.len()];
    reached[0] = true;
    let idx = |alias: &str| base.iter().position(|b| b.alias == alias);
    loop {
        let mut changed = false;
        for e in joins {
            let (Some(l), Some(r)) = (idx(&e.left.table), idx(&e.right.table)) else {
                continue;
            };
            if reached[l] != reached[r] {
                reached[l] = true;
                reached[r] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if reached.iter().all(|r| *r) {
        Ok(())
    } else {
        Err(IrError::Invalid("join edges do not connect all tables".into()))
    }
}

fn resolve_col(
    catalog: &Catalog,
    scope: &[(String, String)],
    qualifier: Option<&str>,
    name: &str,
    alias_of_table: &dyn Fn(&str) -> String,
) -> Result<(ColRef, ValueType), IrError> {
    match catalog.resolve_column(scope, qualifier, name) {
        Ok((table, ty)) => {
            // store the binding alias, not the raw table name
            let alias = match qualifier {
                Some(q) => {
                    if scope.iter().any(|(a, _)| a.eq_ignore_ascii_case(q)) {
                        q.to_ascii_lowercase()
                    } else {
                        alias_of_table(&table)
                    }
                }
                None => alias_of_table(&table),
            };
            Ok((ColRef { table: alias, column: name.to_ascii_lowercase() }, ty))
        }
        Err(msg) => Err(IrError::UnknownColumn(msg)),
    }
}

/// Distribution cap that keeps adversarial predicates from exploding.
const MAX_DISJUNCTS: usize = 64;

fn lower_dnf(
    e: &Expr,
    catalog: &Catalog,
    scope: &[(String, String)],
    alias_of_table: &dyn Fn(&str) -> String,
) -> Result<PredicateNf, IrError> {
    let nf = match e {
        Expr::Binary { left, op: BinOp::And, right } => {
            let l = lower_dnf(left, catalog, scope, alias_of_table)?;
            let r = lower_dnf(right, catalog, scope, alias_of_table)?;
            l.and(&r)
        }
        Expr::Binary { left, op: BinOp::Or, right } => {
            let mut l = lower_dnf(left, catalog, scope, alias_of_table)?;
            let r = lower_dnf(right, catalog, scope, alias_of_table)?;
            l.disjuncts.extend(r.disjuncts);
            l
        }
        Expr::Unary { op: UnOp::Not, .. } => {
            return Err(IrError::Unsupported("NOT in predicate".into()))
        }
        other => {
            let atom = lower_atom(other, catalog, scope, alias_of_table)?;
            PredicateNf { disjuncts: alloc::vec![Conjunction { atoms: alloc::vec![atom] }] }
        }
    };
    if nf.disjuncts.len() > MAX_DISJUNCTS {
        return Err(IrError::Invalid(alloc::format!(
            "predicate normal form exceeds {MAX_DISJUNCTS} disjuncts"
        )));
    }
    Ok(nf)
}

fn lower_atom(
    e: &Expr,
    catalog: &Catalog,
    scope: &[(String, String)],
    alias_of_table: &dyn Fn(&str) -> String,
) -> Result<Atom, IrError> {
    let make_arg = |v: &Expr, ty: ValueType| -> Result<AtomArg, IrError> {
        match v {
            Expr::Literal(val) => {
                let coerced = val.coerce_to(ty).ok_or_else(|| {
                    IrError::Invalid(alloc::format!(
                        "literal {} does not match column type {}",
                        val.render_sql(),
                        ty.name()
                    ))
                })?;
                Ok(AtomArg::Const(coerced))
            }
            Expr::Param(n) => Ok(AtomArg::Param(*n)),
            other => {
                Err(IrError::Unsupported(alloc::format!("non-constant predicate operand {other:?}")))
            }
        }
    };
    match e {
        Expr::Binary { left, op, right } => {
            let cmp = match op {
                BinOp::Eq => AtomOp::Eq,
                BinOp::Lt => AtomOp::Lt,
                BinOp::Le => AtomOp::Le,
                BinOp::Gt => AtomOp::Gt,
                BinOp::Ge => AtomOp::Ge,
                BinOp::Ne => return Err(IrError::Unsupported("<> in predicate".into())),
                _ => return Err(IrError::Unsupported("nested boolean predicate".into())),
            };
            // normalize constant-on-the-left by flipping
            let (col_expr, val_expr, cmp) = match (left.as_ref(), right.as_ref()) {
                (Expr::Column { .. }, v) => (left.as_ref(), v, cmp),
                (v, Expr::Column { .. }) => {
                    let flipped = match cmp {
                        AtomOp::Lt => AtomOp::Gt,
                        AtomOp::Le => AtomOp::Ge,
                        AtomOp::Gt => AtomOp::Lt,
                        AtomOp::Ge => AtomOp::Le,
                        other => other,
                    };
                    (right.as_ref(), v, flipped)
                }
                _ => {
                    return Err(IrError::Unsupported(
                        "predicate must compare a column with a constant".into(),
                    ))
                }
            };
            let Expr::Column { qualifier, name } = col_expr else {
                return Err(IrError::Unsupported(
                    "predicate must compare a column with a constant".into(),
                ));
            };
            if matches!(val_expr, Expr::Column { .. }) {
                return Err(IrError::Unsupported(
                    "column-to-column predicate outside JOIN ON".into(),
                ));
            }
            let (col, ty) =
                resolve_col(catalog, scope, qualifier.as_deref(), name, alias_of_table)?;
            let arg = make_arg(val_expr, ty)?;
            Ok(Atom { column: col, column_type: ty, op: cmp, args: alloc::vec![arg] })
        }
        Expr::Between { expr, low, high } => {
            let Expr::Column { qualifier, name } = expr.as_ref() else {
                return Err(IrError::Unsupported("BETWEEN over non-column".into()));
            };
            let (col, ty) =
                resolve_col(catalog, scope, qualifier.as_deref(), name, alias_of_table)?;
            let lo = make_arg(low, ty)?;
            let hi = make_arg(high, ty)?;
            Ok(Atom {
                column: col,
                column_type: ty,
                op: AtomOp::Between,
                args: alloc::vec![lo, hi],
            })
        }
        Expr::Like { expr, pattern } => {
            let Expr::Column { qualifier, name } = expr.as_ref() else {
                return Err(IrError::Unsupported("LIKE over non-column".into()));
            };
            let (col, ty) =
                resolve_col(catalog, scope, qualifier.as_deref(), name, alias_of_table)?;
            if !matches!(ty, ValueType::Str | ValueType::Date) {
                return Err(IrError::Invalid(alloc::format!(
                    "LIKE on non-string column {}",
                    col.column
                )));
            }
            let arg = make_arg(pattern, ValueType::Str)?;
            Ok(Atom { column: col, column_type: ty, op: AtomOp::Like, args: alloc::vec![arg] })
        }
        Expr::InList { expr, list } => {
            let Expr::Column { qualifier, name } = expr.as_ref() else {
                return Err(IrError::Unsupported("IN over non-column".into()));
            };
            let (col, ty) =
                resolve_col(catalog, scope, qualifier.as_deref(), name, alias_of_table)?;
            let args = list.iter().map(|v| make_arg(v, ty)).collect::<Result<Vec<_>, _>>()?;
            if args.is_empty() {
                return Err(IrError::Invalid("empty IN list".into()));
            }
            Ok(Atom { column: col, column_type: ty, op: AtomOp::In, args })
        }
        other => Err(IrError::Unsupported(alloc::format!("predicate {other:?}"))),
    }
}

fn lower_agg(
    e: &Expr,
    catalog: &Catalog,
    scope: &[(String, String)],
    alias_of_table: &dyn Fn(&str) -> String,
) -> Result<AggCall, IrError> {
    let Expr::Func { name, args, star } = e else {
        return Err(IrError::Unsupported("expected aggregate call".into()));
    };
    let func = match name.as_str() {
        "count" => AggFunc::Count,
        "sum" => AggFunc::Sum,
        "min" => AggFunc::Min,
        "max" => AggFunc::Max,
        "avg" => AggFunc::Avg,
        other => return Err(IrError::Unsupported(alloc::format!("function {other}"))),
    };
    if *star {
        if func != AggFunc::Count {
            return Err(IrError::Invalid("* argument is only valid in COUNT".into()));
        }
        return Ok(AggCall { func, arg: None });
    }
    if args.len() != 1 {
        return Err(IrError::Invalid(alloc::format!(
            "{} takes exactly one argument",
            func.name()
        )));
    }
    let arg = lower_scalar(&args[0], catalog, scope, alias_of_table)?;
    Ok(AggCall { func, arg: Some(arg) })
}

fn lower_scalar(
    e: &Expr,
    catalog: &Catalog,
    scope: &[(String, String)],
    alias_of_table: &dyn Fn(&str) -> String,
) -> Result<ScalarExpr, IrError> {
    match e {
        Expr::Column { qualifier, name } => {
            let (col, _) = resolve_col(catalog, scope, qualifier.as_deref(), name, alias_of_table)?;
            Ok(ScalarExpr::Col(col))
        }
        Expr::Literal(v) => Ok(ScalarExpr::Const(v.clone())),
        Expr::Binary { left, op, right } => {
            let op = match op {
                BinOp::Add => ArithOp::Add,
                BinOp::Sub => ArithOp::Sub,
                BinOp::Mul => ArithOp::Mul,
                BinOp::Div => ArithOp::Div,
                _ => {
                    return Err(IrError::Unsupported(
                        "comparison inside aggregate argument".into(),
                    ))
                }
            };
            Ok(ScalarExpr::Bin {
                op,
                left: Box::new(lower_scalar(left, catalog, scope, alias_of_table)?),
                right: Box::new(lower_scalar(right, catalog, scope, alias_of_table)?),
            })
        }
        Expr::Unary { op: UnOp::Neg, expr } => Ok(ScalarExpr::Bin {
            op: ArithOp::Sub,
            left: Box::new(ScalarExpr::Const(Value::Int(0))),
            right: Box::new(lower_scalar(expr, catalog, scope, alias_of_table)?),
        }),
        other => Err(IrError::Unsupported(alloc::format!("scalar expression {other:?}"))),
    }
}

// ---------------------------------------------------------------------------
// Unparse
// ---------------------------------------------------------------------------

/// Render a spec back to SQL. `parse_query(unparse(q))` is structurally
/// equal to `q`.
pub fn unparse(spec: &QuerySpec) -> String {
    let mut out = String::from("SELECT ");
    if spec.select_star {
        out.push('*');
    } else {
        let items: Vec<String> = spec
            .projections
            .iter()
            .map(|p| match p {
                Projection::Column { col, alias } => {
                    let rendered = render_colref(spec, col);
                    if alias == &col.column {
                        rendered
                    } else {
                        alloc::format!("{rendered} AS {alias}")
                    }
                }
                Projection::Aggregate { agg, alias } => {
                    alloc::format!("{} AS {alias}", render_agg(spec, agg))
                }
            })
            .collect();
        out.push_str(&items.join(", "));
    }
    out.push_str(" FROM ");
    for (i, b) in spec.base.iter().enumerate() {
        if i == 0 {
            out.push_str(&b.table);
            if b.alias != b.table {
                out.push_str(&alloc::format!(" {}", b.alias));
            }
        } else {
            out.push_str(&alloc::format!(" JOIN {}", b.table));
            if b.alias != b.table {
                out.push_str(&alloc::format!(" {}", b.alias));
            }
            // edges whose both sides are in scope once this table is added
            let in_scope: Vec<&JoinEdge> = spec
                .joins
                .iter()
                .filter(|e| {
                    let l = spec
                        .base
                        .iter()
                        .position(|x| x.alias == e.left.table)
                        .unwrap_or(usize::MAX);
                    let r = spec
                        .base
                        .iter()
                        .position(|x| x.alias == e.right.table)
                        .unwrap_or(usize::MAX);
                    l.max(r) == i
                })
                .collect();
            let conds: Vec<String> = in_scope
                .iter()
                .map(|e| {
                    alloc::format!(
                        "{} {} {}",
                        render_colref(spec, &e.left),
                        e.cmp.sql(),
                        render_colref(spec, &e.right)
                    )
                })
                .collect();
            out.push_str(" ON ");
            out.push_str(&conds.join(" AND "));
        }
    }
    if !spec.predicate.is_true() {
        out.push_str(" WHERE ");
        out.push_str(&render_predicate(spec, &spec.predicate));
    }
    if let Some(g) = &spec.grouping {
        if !g.keys.is_empty() {
            let keys: Vec<String> = g.keys.iter().map(|k| render_colref(spec, k)).collect();
            out.push_str(&alloc::format!(" GROUP BY {}", keys.join(", ")));
        }
    }
    if !spec.ordering.is_empty() {
        let keys: Vec<String> = spec
            .ordering
            .iter()
            .map(|o| if o.desc { alloc::format!("{} DESC", o.name) } else { o.name.clone() })
            .collect();
        out.push_str(&alloc::format!(" ORDER BY {}", keys.join(", ")));
    }
    if let Some(k) = spec.limit {
        out.push_str(&alloc::format!(" LIMIT {k}"));
    }
    out
}

fn render_colref(spec: &QuerySpec, c: &ColRef) -> String {
    if spec.base.len() > 1 {
        alloc::format!("{}.{}", c.table, c.column)
    } else {
        c.column.clone()
    }
}

pub(crate) fn render_atom_with(col_text: &str, atom: &Atom) -> String {
    let arg = |a: &AtomArg| match a {
        AtomArg::Const(v) => v.render_sql(),
        AtomArg::Param(_) => "?".to_string(),
    };
    match atom.op {
        AtomOp::Between => {
            alloc::format!("{col_text} BETWEEN {} AND {}", arg(&atom.args[0]), arg(&atom.args[1]))
        }
        AtomOp::In => {
            let items: Vec<String> = atom.args.iter().map(arg).collect();
            alloc::format!("{col_text} IN ({})", items.join(", "))
        }
        op => alloc::format!("{col_text} {} {}", op.sql(), arg(&atom.args[0])),
    }
}

fn render_predicate(spec: &QuerySpec, nf: &PredicateNf) -> String {
    if nf.is_false() {
        return "FALSE".to_string();
    }
    let disjuncts: Vec<String> = nf
        .disjuncts
        .iter()
        .map(|c| {
            let atoms: Vec<String> = c
                .atoms
                .iter()
                .map(|a| render_atom_with(&render_colref(spec, &a.column), a))
                .collect();
            if atoms.is_empty() {
                "TRUE".to_string()
            } else {
                atoms.join(" AND ")
            }
        })
        .collect();
    if disjuncts.len() == 1 {
        disjuncts.into_iter().next().unwrap()
    } else {
        let wrapped: Vec<String> =
            disjuncts.into_iter().map(|d| alloc::format!("({d})")).collect();
        wrapped.join(" OR ")
    }
}

fn render_agg(spec: &QuerySpec, agg: &AggCall) -> String {
    match &agg.arg {
        None => alloc::format!("{}(*)", agg.func.name()),
        Some(arg) => alloc::format!("{}({})", agg.func.name(), render_scalar(spec, arg)),
    }
}

fn render_scalar(spec: &QuerySpec, e: &ScalarExpr) -> String {
    match e {
        ScalarExpr::Col(c) => render_colref(spec, c),
        ScalarExpr::Const(v) => v.render_sql(),
        ScalarExpr::Bin { op, left, right } => {
            let sym = match op {
                ArithOp::Add => "+",
                ArithOp::Sub => "-",
                ArithOp::Mul => "*",
                ArithOp::Div => "/",
            };
            alloc::format!("({} {sym} {})", render_scalar(spec, left), render_scalar(spec, right))
        }
    }
}

// ---------------------------------------------------------------------------
// Binding
// ---------------------------------------------------------------------------

/// Substitute `?` placeholders with the given values (in placeholder
/// order), coercing each to its column's type.
pub fn bind(spec: &QuerySpec, values: &[Value]) -> Result<QuerySpec, IrError> {
    let mut bound = spec.clone();
    let mut seen_max: i64 = -1;
    for conj in &mut bound.predicate.disjuncts {
        for atom in &mut conj.atoms {
            let ty = atom.column_type;
            for arg in &mut atom.args {
                if let AtomArg::Param(n) = arg {
                    let idx = *n as usize;
                    seen_max = seen_max.max(*n as i64);
                    let v = values.get(idx).ok_or_else(|| {
                        IrError::Invalid(alloc::format!(
                            "missing binding for placeholder {}",
                            idx + 1
                        ))
                    })?;
                    let coerced = v.coerce_to(ty).ok_or_else(|| {
                        IrError::Invalid(alloc::format!(
                            "binding {} does not match column type {}",
                            v.render_sql(),
                            ty.name()
                        ))
                    })?;
                    *arg = AtomArg::Const(coerced);
                }
            }
        }
    }
    if seen_max >= 0 && values.len() as i64 > seen_max + 1 {
        return Err(IrError::Invalid(alloc::format!(
            "{} bindings supplied but query has {} placeholders",
            values.len(),
            seen_max + 1
        )));
    }
    Ok(bound)
}

// ---------------------------------------------------------------------------
// Template extraction and grouping
// ---------------------------------------------------------------------------

/// Structural hash of a spec with predicate constants replaced by
/// placeholders, plus the constants in traversal order.
pub fn extract_template(spec: &QuerySpec) -> (u64, Vec<AtomArg>) {
    let mut h = Fnv64::new();
    let mut bindings = Vec::new();
    for b in &spec.base {
        h.write_str("T");
        h.write_str(&b.table);
        h.write_str(&b.alias);
    }
    for e in &spec.joins {
        h.write_str("J");
        h.write_str(&e.left.table);
        h.write_str(&e.left.column);
        h.write_str(e.cmp.sql());
        h.write_str(&e.right.table);
        h.write_str(&e.right.column);
    }
    h.write_str("P");
    h.write_u64(spec.predicate.disjuncts.len() as u64);
    for conj in &spec.predicate.disjuncts {
        h.write_str("C");
        for atom in &conj.atoms {
            h.write_str("A");
            h.write_str(&atom.column.table);
            h.write_str(&atom.column.column);
            h.write_str(atom.op.sql());
            h.write_u64(atom.args.len() as u64);
            for arg in &atom.args {
                h.write_str("?");
                bindings.push(arg.clone());
            }
        }
    }
    for p in &spec.projections {
        match p {
            Projection::Column { col, alias } => {
                h.write_str("pc");
                h.write_str(&col.table);
                h.write_str(&col.column);
                h.write_str(alias);
            }
            Projection::Aggregate { agg, alias } => {
                h.write_str("pa");
                h.write_str(agg.func.name());
                h.write_str(alias);
                if let Some(arg) = &agg.arg {
                    hash_scalar(&mut h, arg);
                }
            }
        }
    }
    if let Some(g) = &spec.grouping {
        h.write_str("G");
        for k in &g.keys {
            h.write_str(&k.table);
            h.write_str(&k.column);
        }
    }
    for o in &spec.ordering {
        h.write_str("O");
        h.write_str(&o.name);
        h.write_u64(o.desc as u64);
    }
    if let Some(k) = spec.limit {
        h.write_str("L");
        h.write_u64(k);
    }
    (h.finish(), bindings)
}

fn hash_scalar(h: &mut Fnv64, e: &ScalarExpr) {
    match e {
        ScalarExpr::Col(c) => {
            h.write_str("sc");
            h.write_str(&c.table);
            h.write_str(&c.column);
        }
        ScalarExpr::Const(v) => {
            h.write_str("sv");
            h.write_str(&v.render_sql());
        }
        ScalarExpr::Bin { op, left, right } => {
            h.write_str("sb");
            h.write_u64(*op as u64);
            hash_scalar(h, left);
            hash_scalar(h, right);
        }
    }
}

/// Group queries into batches. Per-template grouping partitions by
/// structural hash (in first-seen order) and chunks each partition;
/// global grouping chunks the whole stream. Member ids are renumbered
/// dense 1..n per batch; the returned mapping is a bijection between
/// original ids and (batch, member) pairs.
pub fn group_batch(
    queries: &[(String, QuerySpec)],
    policy: GroupPolicy,
    max_size: usize,
) -> Result<(Vec<QueryBatch>, Vec<IdMapping>), IrError> {
    if max_size == 0 {
        return Err(IrError::Invalid("max batch size must be at least 1".into()));
    }
    let mut groups: Vec<(Option<u64>, Vec<&(String, QuerySpec)>)> = Vec::new();
    match policy {
        GroupPolicy::PerTemplate => {
            let mut index: BTreeMap<u64, usize> = BTreeMap::new();
            for q in queries {
                let (tid, _) = extract_template(&q.1);
                let slot = *index.entry(tid).or_insert_with(|| {
                    groups.push((Some(tid), Vec::new()));
                    groups.len() - 1
                });
                groups[slot].1.push(q);
            }
        }
        GroupPolicy::Global => {
            groups.push((None, queries.iter().collect()));
        }
    }

    let mut batches = Vec::new();
    let mut mapping = Vec::new();
    for (tid, members) in groups {
        for chunk in members.chunks(max_size) {
            let batch_id = batches.len() as u64;
            let mut batch_members = Vec::new();
            for (i, (orig, spec)) in chunk.iter().enumerate() {
                let member = QueryId(i as u32 + 1);
                batch_members.push((member, (*spec).clone()));
                mapping.push(IdMapping { original: orig.clone(), batch: batch_id, member });
            }
            // a single-template batch keeps its hash even under global policy
            let template_id = tid.or_else(|| {
                let mut it = chunk.iter().map(|(_, s)| extract_template(s).0);
                let first = it.next()?;
                it.all(|t| t == first).then_some(first)
            });
            batches.push(QueryBatch { batch_id, template_id, members: batch_members });
        }
    }
    Ok((batches, mapping))
}
