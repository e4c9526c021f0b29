//! In-process reference backend: executes the SQL this crate generates
//! (CTE chains, CASE/array expressions, UNNEST cross joins, row-number
//! windows, VALUES tables) against in-memory tables.
//!
//! This is a second, independent implementation of the query semantics:
//! it interprets statements generically and knows nothing about shared
//! operators or annotations, so agreement with the dq evaluator is
//! meaningful evidence for the rewrite path.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::sql::{self, BinOp, Expr, JoinTarget, OrderItem, SelectItem, SelectStmt, TableRef, UnOp};
use crate::table::{Column, Database, Table};
use crate::value::{self, cmp_values, like_match, try_cmp, Value, ValueType};

#[derive(Clone, Debug, PartialEq)]
pub enum EngineError {
    Parse(sql::SqlError),
    UnknownTable(String),
    UnknownColumn(String),
    Ambiguous(String),
    Unsupported(String),
    Type(String),
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineError::Parse(e) => write!(f, "{e}"),
            EngineError::UnknownTable(t) => write!(f, "unknown table {t}"),
            EngineError::UnknownColumn(c) => write!(f, "unknown column {c}"),
            EngineError::Ambiguous(c) => write!(f, "ambiguous column {c}"),
            EngineError::Unsupported(m) => write!(f, "unsupported: {m}"),
            EngineError::Type(m) => write!(f, "type error: {m}"),
        }
    }
}

impl core::error::Error for EngineError {}

impl From<sql::SqlError> for EngineError {
    fn from(e: sql::SqlError) -> Self {
        EngineError::Parse(e)
    }
}

/// The backend: base tables plus a temp-table namespace for materialized
/// intermediates.
#[derive(Clone, Debug, Default)]
pub struct RefEngine {
    pub db: Database,
    temps: BTreeMap<String, Table>,
}

impl RefEngine {
    pub fn new(db: Database) -> RefEngine {
        RefEngine { db, temps: BTreeMap::new() }
    }

    pub fn create_temp(&mut self, name: &str, table: Table) {
        self.temps.insert(name.to_ascii_lowercase(), table);
    }

    pub fn drop_temp(&mut self, name: &str) {
        self.temps.remove(&name.to_ascii_lowercase());
    }

    pub fn temp(&self, name: &str) -> Option<&Table> {
        self.temps.get(&name.to_ascii_lowercase())
    }

    pub fn execute(&self, sql_text: &str) -> Result<Table, EngineError> {
        let stmt = sql::parse_select(sql_text)?;
        let mut ctes: BTreeMap<String, Table> = BTreeMap::new();
        self.run_select(&stmt, &mut ctes)
    }

    fn resolve_table(
        &self,
        name: &str,
        ctes: &BTreeMap<String, Table>,
    ) -> Result<Table, EngineError> {
        if let Some(t) = ctes.get(name) {
            return Ok(t.clone());
        }
        if let Some(t) = self.temps.get(name) {
            return Ok(t.clone());
        }
        if let Some(t) = self.db.get(name) {
            return Ok(t.clone());
        }
        Err(EngineError::UnknownTable(name.to_string()))
    }

    fn run_select(
        &self,
        stmt: &SelectStmt,
        outer_ctes: &mut BTreeMap<String, Table>,
    ) -> Result<Table, EngineError> {
        let mut ctes = outer_ctes.clone();
        for (name, body) in &stmt.with {
            let t = self.run_select(body, &mut ctes)?;
            ctes.insert(name.clone(), t);
        }

        // FROM
        let mut frame = match &stmt.from {
            None => Frame::unit(),
            Some(from) => {
                let mut frame = self.load_ref(&from.first, &ctes)?;
                for join in &from.joins {
                    match &join.target {
                        JoinTarget::Table(t) => {
                            let right = self.load_ref(t, &ctes)?;
                            frame = join_frames(frame, right, join.on.as_ref())?;
                        }
                        JoinTarget::Unnest { expr, alias, column } => {
                            frame = unnest_frame(frame, expr, alias, column)?;
                        }
                    }
                }
                frame
            }
        };

        // WHERE
        if let Some(pred) = &stmt.where_clause {
            let cols = frame.cols.clone();
            let mut kept = Vec::new();
            for row in frame.rows {
                if truthy(&eval_expr(pred, &cols, &row)?) {
                    kept.push(row);
                }
            }
            frame.rows = kept;
        }

        // window functions over the filtered frame
        let mut windows: BTreeMap<usize, Vec<Value>> = BTreeMap::new();
        for (i, item) in stmt.items.iter().enumerate() {
            if let SelectItem::Expr { expr: Expr::Window { func, partition_by, order_by }, .. } =
                item
            {
                if func != "row_number" {
                    return Err(EngineError::Unsupported(alloc::format!(
                        "window function {func}"
                    )));
                }
                windows.insert(i, row_numbers(&frame, partition_by, order_by)?);
            }
        }

        // grouped or plain projection
        let has_agg = stmt.items.iter().any(|i| match i {
            SelectItem::Expr { expr, .. } => expr.contains_aggregate(),
            SelectItem::Star => false,
        });
        let mut out = if !stmt.group_by.is_empty() || has_agg {
            if !windows.is_empty() {
                return Err(EngineError::Unsupported(
                    "window function mixed with aggregation".into(),
                ));
            }
            project_grouped(stmt, &frame)?
        } else {
            project_plain(stmt, &frame, &windows)?
        };

        // ORDER BY over output columns
        if !stmt.order_by.is_empty() {
            let keys: Vec<(usize, bool)> = stmt
                .order_by
                .iter()
                .map(|o| match &o.expr {
                    Expr::Column { qualifier: None, name } => out
                        .column_index(name)
                        .map(|i| (i, o.desc))
                        .ok_or_else(|| EngineError::UnknownColumn(name.clone())),
                    other => {
                        Err(EngineError::Unsupported(alloc::format!("ORDER BY {other:?}")))
                    }
                })
                .collect::<Result<_, _>>()?;
            out.rows.sort_by(|a, b| {
                for &(i, desc) in &keys {
                    let ord = cmp_values(&a[i], &b[i]);
                    let ord = if desc { ord.reverse() } else { ord };
                    if ord != Ordering::Equal {
                        return ord;
                    }
                }
                Ordering::Equal
            });
        }
        if let Some(k) = stmt.limit {
            out.rows.truncate(k as usize);
        }
        Ok(out)
    }

    fn load_ref(
        &self,
        t: &TableRef,
        ctes: &BTreeMap<String, Table>,
    ) -> Result<Frame, EngineError> {
        match t {
            TableRef::Named { name, alias } => {
                let table = self.resolve_table(name, ctes)?;
                let qual = alias.clone().unwrap_or_else(|| name.clone());
                Ok(Frame::from_table(table, &qual))
            }
            TableRef::Values { rows, alias, columns } => {
                let cols: Vec<FrameCol> = columns
                    .iter()
                    .map(|c| FrameCol {
                        qualifier: alias.clone(),
                        name: c.clone(),
                        ty: ValueType::Int,
                    })
                    .collect();
                Ok(Frame { cols, rows: rows.clone() })
            }
        }
    }
}

#[derive(Clone, Debug)]
struct FrameCol {
    qualifier: String,
    name: String,
    ty: ValueType,
}

#[derive(Clone, Debug)]
struct Frame {
    cols: Vec<FrameCol>,
    rows: Vec<Vec<Value>>,
}

impl Frame {
    fn unit() -> Frame {
        Frame { cols: Vec::new(), rows: alloc::vec![Vec::new()] }
    }

    fn from_table(table: Table, qualifier: &str) -> Frame {
        let cols = table
            .columns
            .iter()
            .map(|c| FrameCol {
                qualifier: qualifier.to_string(),
                name: c.name.clone(),
                ty: c.ty,
            })
            .collect();
        Frame { cols, rows: table.rows }
    }
}

fn lookup(cols: &[FrameCol], qualifier: Option<&str>, name: &str) -> Result<usize, EngineError> {
    let mut hit = None;
    for (i, c) in cols.iter().enumerate() {
        if c.name != name {
            continue;
        }
        if let Some(q) = qualifier {
            if !c.qualifier.eq_ignore_ascii_case(q) {
                continue;
            }
        }
        if hit.is_some() {
            return Err(EngineError::Ambiguous(name.to_string()));
        }
        hit = Some(i);
    }
    hit.ok_or_else(|| match qualifier {
        Some(q) => EngineError::UnknownColumn(alloc::format!("{q}.{name}")),
        None => EngineError::UnknownColumn(name.to_string()),
    })
}

fn truthy(v: &Value) -> bool {
    matches!(v, Value::Bool(true))
}

// ---------------------------------------------------------------------------
// Joins and unnest
// ---------------------------------------------------------------------------

fn join_frames(left: Frame, right: Frame, on: Option<&Expr>) -> Result<Frame, EngineError> {
    let mut cols = left.cols.clone();
    cols.extend(right.cols.iter().cloned());

    // split the ON condition into hashable equi-pairs and a residual
    let mut eq_pairs: Vec<(usize, usize)> = Vec::new();
    let mut residual: Vec<&Expr> = Vec::new();
    if let Some(on) = on {
        for part in split_and(on) {
            if let Expr::Binary { left: l, op: BinOp::Eq, right: r } = part {
                if let (
                    Expr::Column { qualifier: lq, name: ln },
                    Expr::Column { qualifier: rq, name: rn },
                ) = (l.as_ref(), r.as_ref())
                {
                    let try_left = lookup(&left.cols, lq.as_deref(), ln);
                    let try_right = lookup(&right.cols, rq.as_deref(), rn);
                    match (try_left, try_right) {
                        (Ok(li), Ok(ri)) => {
                            eq_pairs.push((li, ri));
                            continue;
                        }
                        _ => {
                            // maybe written right-to-left
                            let swap_left = lookup(&left.cols, rq.as_deref(), rn);
                            let swap_right = lookup(&right.cols, lq.as_deref(), ln);
                            if let (Ok(li), Ok(ri)) = (swap_left, swap_right) {
                                eq_pairs.push((li, ri));
                                continue;
                            }
                        }
                    }
                }
            }
            residual.push(part);
        }
    }

    let mut rows = Vec::new();
    let mut emit = |lrow: &[Value], rrow: &[Value]| -> Result<(), EngineError> {
        let mut row: Vec<Value> = lrow.to_vec();
        row.extend(rrow.iter().cloned());
        for part in &residual {
            if !truthy(&eval_expr(part, &cols, &row)?) {
                return Ok(());
            }
        }
        rows.push(row);
        Ok(())
    };

    if !eq_pairs.is_empty() {
        let mut index: BTreeMap<HashKey, Vec<usize>> = BTreeMap::new();
        'r: for (i, rrow) in right.rows.iter().enumerate() {
            let mut key = Vec::new();
            for &(_, ri) in &eq_pairs {
                if rrow[ri].is_null() {
                    continue 'r;
                }
                key.push(rrow[ri].clone());
            }
            index.entry(HashKey(key)).or_default().push(i);
        }
        'l: for lrow in &left.rows {
            let mut key = Vec::new();
            for &(li, _) in &eq_pairs {
                if lrow[li].is_null() {
                    continue 'l;
                }
                key.push(lrow[li].clone());
            }
            if let Some(hits) = index.get(&HashKey(key)) {
                for &i in hits {
                    emit(lrow, &right.rows[i])?;
                }
            }
        }
    } else {
        for lrow in &left.rows {
            for rrow in &right.rows {
                emit(lrow, rrow)?;
            }
        }
    }
    Ok(Frame { cols, rows })
}

#[derive(Clone, Debug, PartialEq)]
struct HashKey(Vec<Value>);

impl Eq for HashKey {}

impl PartialOrd for HashKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HashKey {
    fn cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            match cmp_values(a, b) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

fn unnest_frame(
    frame: Frame,
    expr: &Expr,
    alias: &str,
    column: &str,
) -> Result<Frame, EngineError> {
    let mut cols = frame.cols.clone();
    cols.push(FrameCol { qualifier: alias.to_string(), name: column.to_string(), ty: ValueType::Int });
    let in_cols = frame.cols;
    let mut rows = Vec::new();
    for row in frame.rows {
        let arr = eval_expr(expr, &in_cols, &row)?;
        let items = match arr {
            Value::IntArray(v) => v,
            Value::Null => Vec::new(),
            other => {
                return Err(EngineError::Type(alloc::format!(
                    "UNNEST expects an array, got {other:?}"
                )))
            }
        };
        for item in items {
            let mut r = row.clone();
            r.push(Value::Int(item));
            rows.push(r);
        }
    }
    Ok(Frame { cols, rows })
}

fn split_and(e: &Expr) -> Vec<&Expr> {
    match e {
        Expr::Binary { left, op: BinOp::And, right } => {
            let mut v = split_and(left);
            v.extend(split_and(right));
            v
        }
        other => alloc::vec![other],
    }
}

// ---------------------------------------------------------------------------
// Expression evaluation
// ---------------------------------------------------------------------------

fn eval_expr(e: &Expr, cols: &[FrameCol], row: &[Value]) -> Result<Value, EngineError> {
    match e {
        Expr::Literal(v) => Ok(v.clone()),
        Expr::Param(_) => Err(EngineError::Unsupported("unbound parameter".into())),
        Expr::Column { qualifier, name } => {
            let i = lookup(cols, qualifier.as_deref(), name)?;
            Ok(row[i].clone())
        }
        Expr::Unary { op: UnOp::Neg, expr } => {
            match eval_expr(expr, cols, row)? {
                Value::Int(i) => Ok(Value::Int(-i)),
                Value::Float(f) => Ok(Value::Float(-f)),
                Value::Null => Ok(Value::Null),
                other => Err(EngineError::Type(alloc::format!("cannot negate {other:?}"))),
            }
        }
        Expr::Unary { op: UnOp::Not, expr } => match eval_expr(expr, cols, row)? {
            Value::Bool(b) => Ok(Value::Bool(!b)),
            Value::Null => Ok(Value::Null),
            other => Err(EngineError::Type(alloc::format!("NOT over {other:?}"))),
        },
        Expr::Binary { left, op, right } => {
            match op {
                BinOp::And => {
                    let l = eval_expr(left, cols, row)?;
                    if matches!(l, Value::Bool(false)) {
                        return Ok(Value::Bool(false));
                    }
                    let r = eval_expr(right, cols, row)?;
                    Ok(match (l, r) {
                        (Value::Bool(true), Value::Bool(true)) => Value::Bool(true),
                        (_, Value::Bool(false)) => Value::Bool(false),
                        _ => Value::Null,
                    })
                }
                BinOp::Or => {
                    let l = eval_expr(left, cols, row)?;
                    if matches!(l, Value::Bool(true)) {
                        return Ok(Value::Bool(true));
                    }
                    let r = eval_expr(right, cols, row)?;
                    Ok(match (l, r) {
                        (_, Value::Bool(true)) => Value::Bool(true),
                        (Value::Bool(false), Value::Bool(false)) => Value::Bool(false),
                        _ => Value::Null,
                    })
                }
                BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => {
                    let l = eval_expr(left, cols, row)?;
                    let r = eval_expr(right, cols, row)?;
                    Ok(match op {
                        BinOp::Add => value::add(&l, &r),
                        BinOp::Sub => value::sub(&l, &r),
                        BinOp::Mul => value::mul(&l, &r),
                        _ => value::div(&l, &r),
                    })
                }
                _ => {
                    let l = eval_expr(left, cols, row)?;
                    let r = eval_expr(right, cols, row)?;
                    Ok(match try_cmp(&l, &r) {
                        None => Value::Null,
                        Some(ord) => Value::Bool(match op {
                            BinOp::Eq => ord == Ordering::Equal,
                            BinOp::Ne => ord != Ordering::Equal,
                            BinOp::Lt => ord == Ordering::Less,
                            BinOp::Le => ord != Ordering::Greater,
                            BinOp::Gt => ord == Ordering::Greater,
                            BinOp::Ge => ord != Ordering::Less,
                            _ => unreachable!(),
                        }),
                    })
                }
            }
        }
        Expr::Between { expr, low, high } => {
            let v = eval_expr(expr, cols, row)?;
            let lo = eval_expr(low, cols, row)?;
            let hi = eval_expr(high, cols, row)?;
            Ok(match (try_cmp(&v, &lo), try_cmp(&v, &hi)) {
                (Some(a), Some(b)) => {
                    Value::Bool(a != Ordering::Less && b != Ordering::Greater)
                }
                _ => Value::Null,
            })
        }
        Expr::Like { expr, pattern } => {
            let v = eval_expr(expr, cols, row)?;
            let p = eval_expr(pattern, cols, row)?;
            Ok(match (v.as_str(), p.as_str()) {
                (Some(t), Some(p)) => Value::Bool(like_match(t, p)),
                _ => Value::Null,
            })
        }
        Expr::InList { expr, list } => {
            let v = eval_expr(expr, cols, row)?;
            if v.is_null() {
                return Ok(Value::Null);
            }
            for item in list {
                let w = eval_expr(item, cols, row)?;
                if try_cmp(&v, &w) == Some(Ordering::Equal) {
                    return Ok(Value::Bool(true));
                }
            }
            Ok(Value::Bool(false))
        }
        Expr::Case { arms, else_expr } => {
            for (cond, val) in arms {
                if truthy(&eval_expr(cond, cols, row)?) {
                    return eval_expr(val, cols, row);
                }
            }
            match else_expr {
                Some(e) => eval_expr(e, cols, row),
                None => Ok(Value::Null),
            }
        }
        Expr::Array(items) => {
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                match eval_expr(item, cols, row)? {
                    Value::Int(i) => out.push(i),
                    other => {
                        return Err(EngineError::Type(alloc::format!(
                            "array elements must be integers, got {other:?}"
                        )))
                    }
                }
            }
            Ok(Value::IntArray(out))
        }
        Expr::Func { name, args, star } => eval_func(name, args, *star, cols, row),
        Expr::Window { .. } => {
            Err(EngineError::Unsupported("window function outside SELECT list".into()))
        }
    }
}

fn eval_func(
    name: &str,
    args: &[Expr],
    star: bool,
    cols: &[FrameCol],
    row: &[Value],
) -> Result<Value, EngineError> {
    if star {
        return Err(EngineError::Unsupported(alloc::format!("{name}(*) outside aggregation")));
    }
    let mut vals = Vec::with_capacity(args.len());
    for a in args {
        vals.push(eval_expr(a, cols, row)?);
    }
    let want = |n: usize| -> Result<(), EngineError> {
        if vals.len() == n {
            Ok(())
        } else {
            Err(EngineError::Type(alloc::format!("{name} expects {n} arguments")))
        }
    };
    match name {
        "array_remove" => {
            want(2)?;
            match (&vals[0], &vals[1]) {
                (Value::IntArray(arr), Value::Int(x)) => {
                    Ok(Value::IntArray(arr.iter().copied().filter(|v| v != x).collect()))
                }
                (Value::Null, _) => Ok(Value::Null),
                _ => Err(EngineError::Type("ARRAY_REMOVE(array, int)".into())),
            }
        }
        "array_intersect" | "array_intersection" => {
            want(2)?;
            match (&vals[0], &vals[1]) {
                (Value::IntArray(a), Value::IntArray(b)) => {
                    let mut out: Vec<i64> =
                        a.iter().copied().filter(|v| b.contains(v)).collect();
                    out.sort_unstable();
                    out.dedup();
                    Ok(Value::IntArray(out))
                }
                (Value::Null, _) | (_, Value::Null) => Ok(Value::Null),
                _ => Err(EngineError::Type("ARRAY_INTERSECT(array, array)".into())),
            }
        }
        "cardinality" => {
            want(1)?;
            match &vals[0] {
                Value::IntArray(a) => Ok(Value::Int(a.len() as i64)),
                Value::Null => Ok(Value::Null),
                _ => Err(EngineError::Type("CARDINALITY(array)".into())),
            }
        }
        "contains" => {
            want(2)?;
            match (&vals[0], &vals[1]) {
                (Value::IntArray(a), Value::Int(x)) => Ok(Value::Bool(a.contains(x))),
                (Value::Null, _) | (_, Value::Null) => Ok(Value::Null),
                _ => Err(EngineError::Type("CONTAINS(array, int)".into())),
            }
        }
        "bitwise_and" => {
            want(2)?;
            match (&vals[0], &vals[1]) {
                (Value::Int(a), Value::Int(b)) => Ok(Value::Int(a & b)),
                (Value::Null, _) | (_, Value::Null) => Ok(Value::Null),
                _ => Err(EngineError::Type("BITWISE_AND(int, int)".into())),
            }
        }
        "bitwise_shift_left" => {
            want(2)?;
            match (&vals[0], &vals[1]) {
                (Value::Int(a), Value::Int(b)) if (0..64).contains(b) => {
                    Ok(Value::Int(a << b))
                }
                (Value::Null, _) | (_, Value::Null) => Ok(Value::Null),
                _ => Err(EngineError::Type("BITWISE_SHIFT_LEFT(int, 0..63)".into())),
            }
        }
        "bit_count" => {
            want(1)?;
            match &vals[0] {
                Value::Int(a) => Ok(Value::Int(a.count_ones() as i64)),
                Value::Null => Ok(Value::Null),
                _ => Err(EngineError::Type("BIT_COUNT(int)".into())),
            }
        }
        other => Err(EngineError::Unsupported(alloc::format!("function {other}"))),
    }
}

// ---------------------------------------------------------------------------
// Windows, grouping, projection
// ---------------------------------------------------------------------------

fn row_numbers(
    frame: &Frame,
    partition_by: &[Expr],
    order_by: &[OrderItem],
) -> Result<Vec<Value>, EngineError> {
    let mut partitions: BTreeMap<HashKey, Vec<usize>> = BTreeMap::new();
    let mut order_vals: Vec<Vec<Value>> = Vec::with_capacity(frame.rows.len());
    for (i, row) in frame.rows.iter().enumerate() {
        let mut key = Vec::new();
        for e in partition_by {
            key.push(eval_expr(e, &frame.cols, row)?);
        }
        partitions.entry(HashKey(key)).or_default().push(i);
        let mut ovals = Vec::new();
        for o in order_by {
            ovals.push(eval_expr(&o.expr, &frame.cols, row)?);
        }
        order_vals.push(ovals);
    }
    let mut out = alloc::vec![Value::Null; frame.rows.len()];
    for (_, mut idxs) in partitions {
        idxs.sort_by(|&a, &b| {
            for (k, o) in order_by.iter().enumerate() {
                let ord = cmp_values(&order_vals[a][k], &order_vals[b][k]);
                let ord = if o.desc { ord.reverse() } else { ord };
                if ord != Ordering::Equal {
                    return ord;
                }
            }
            a.cmp(&b)
        });
        for (rank, &i) in idxs.iter().enumerate() {
            out[i] = Value::Int(rank as i64 + 1);
        }
    }
    Ok(out)
}

enum AggKind {
    Count,
    CountAll,
    Sum,
    Min,
    Max,
    Avg,
}

struct EngineAgg {
    kind: AggKind,
    arg: Option<Expr>,
    count: i64,
    sum_f: f64,
    sum_i: Option<i64>,
    sum_any: bool,
    sum_float: bool,
    min: Option<Value>,
    max: Option<Value>,
}

impl EngineAgg {
    fn new(name: &str, args: &[Expr], star: bool) -> Result<EngineAgg, EngineError> {
        let kind = match (name, star) {
            ("count", true) => AggKind::CountAll,
            ("count", false) => AggKind::Count,
            ("sum", _) => AggKind::Sum,
            ("min", _) => AggKind::Min,
            ("max", _) => AggKind::Max,
            ("avg", _) => AggKind::Avg,
            _ => return Err(EngineError::Unsupported(alloc::format!("aggregate {name}"))),
        };
        let arg = if star {
            None
        } else {
            if args.len() != 1 {
                return Err(EngineError::Type(alloc::format!("{name} expects one argument")));
            }
            Some(args[0].clone())
        };
        Ok(EngineAgg {
            kind,
            arg,
            count: 0,
            sum_f: 0.0,
            sum_i: Some(0),
            sum_any: false,
            sum_float: false,
            min: None,
            max: None,
        })
    }

    fn update(&mut self, cols: &[FrameCol], row: &[Value]) -> Result<(), EngineError> {
        let v = match &self.arg {
            None => None,
            Some(e) => Some(eval_expr(e, cols, row)?),
        };
        match self.kind {
            AggKind::CountAll => self.count += 1,
            AggKind::Count => {
                if v.as_ref().map(|x| !x.is_null()).unwrap_or(false) {
                    self.count += 1;
                }
            }
            AggKind::Sum => match v {
                Some(Value::Int(i)) => {
                    self.sum_any = true;
                    self.sum_f += i as f64;
                    self.sum_i = self.sum_i.and_then(|a| a.checked_add(i));
                }
                Some(Value::Float(f)) => {
                    self.sum_any = true;
                    self.sum_float = true;
                    self.sum_f += f;
                }
                _ => {}
            },
            AggKind::Min => {
                if let Some(val) = v {
                    if !val.is_null()
                        && self
                            .min
                            .as_ref()
                            .map(|c| cmp_values(&val, c) == Ordering::Less)
                            .unwrap_or(true)
                    {
                        self.min = Some(val);
                    }
                }
            }
            AggKind::Max => {
                if let Some(val) = v {
                    if !val.is_null()
                        && self
                            .max
                            .as_ref()
                            .map(|c| cmp_values(&val, c) == Ordering::Greater)
                            .unwrap_or(true)
                    {
                        self.max = Some(val);
                    }
                }
            }
            AggKind::Avg => {
                if let Some(f) = v.as_ref().and_then(|x| x.as_f64()) {
                    self.sum_f += f;
                    self.count += 1;
                }
            }
        }
        Ok(())
    }

    fn finish(&self) -> Value {
        match self.kind {
            AggKind::Count | AggKind::CountAll => Value::Int(self.count),
            AggKind::Sum => {
                if !self.sum_any {
                    Value::Null
                } else if !self.sum_float {
                    match self.sum_i {
                        Some(i) => Value::Int(i),
                        None => Value::Float(self.sum_f),
                    }
                } else {
                    Value::Float(self.sum_f)
                }
            }
            AggKind::Min => self.min.clone().unwrap_or(Value::Null),
            AggKind::Max => self.max.clone().unwrap_or(Value::Null),
            AggKind::Avg => {
                if self.count == 0 {
                    Value::Null
                } else {
                    Value::Float(self.sum_f / self.count as f64)
                }
            }
        }
    }

    fn output_type(&self) -> ValueType {
        match self.kind {
            AggKind::Count | AggKind::CountAll => ValueType::Int,
            AggKind::Avg => ValueType::Float,
            _ => ValueType::Float,
        }
    }
}

fn project_grouped(stmt: &SelectStmt, frame: &Frame) -> Result<Table, EngineError> {
    // group keys
    let mut groups: BTreeMap<HashKey, Vec<usize>> = BTreeMap::new();
    for (i, row) in frame.rows.iter().enumerate() {
        let mut key = Vec::new();
        for e in &stmt.group_by {
            key.push(eval_expr(e, &frame.cols, row)?);
        }
        groups.entry(HashKey(key)).or_default().push(i);
    }
    // scalar aggregation has one group even over no rows
    if stmt.group_by.is_empty() && groups.is_empty() {
        groups.insert(HashKey(Vec::new()), Vec::new());
    }

    let mut columns: Vec<Column> = Vec::new();
    let mut first = true;
    let mut out_rows: Vec<Vec<Value>> = Vec::new();
    for (_, idxs) in &groups {
        let mut row_out = Vec::new();
        for (item_no, item) in stmt.items.iter().enumerate() {
            let SelectItem::Expr { expr, alias } = item else {
                return Err(EngineError::Unsupported("SELECT * with GROUP BY".into()));
            };
            let (value, name, ty) = match expr {
                Expr::Func { name, args, star } if expr.contains_aggregate() => {
                    let mut agg = EngineAgg::new(name, args, *star)?;
                    for &i in idxs {
                        agg.update(&frame.cols, &frame.rows[i])?;
                    }
                    let v = agg.finish();
                    let n = alias.clone().unwrap_or_else(|| alloc::format!("col{item_no}"));
                    (v, n, agg.output_type())
                }
                other => {
                    // non-aggregate items must be functionally determined
                    // by the group key; evaluate on the first member row
                    let v = match idxs.first() {
                        Some(&i) => eval_expr(other, &frame.cols, &frame.rows[i])?,
                        None => Value::Null,
                    };
                    let n = alias.clone().unwrap_or_else(|| match other {
                        Expr::Column { name, .. } => name.clone(),
                        _ => alloc::format!("col{item_no}"),
                    });
                    let ty = v.value_type().unwrap_or(ValueType::Int);
                    (v, n, ty)
                }
            };
            if first {
                columns.push(Column { name, ty });
            }
            row_out.push(value);
        }
        first = false;
        out_rows.push(row_out);
    }
    if columns.is_empty() {
        // no groups materialized; derive the schema from the items
        for (item_no, item) in stmt.items.iter().enumerate() {
            let SelectItem::Expr { expr, alias } = item else {
                return Err(EngineError::Unsupported("SELECT * with GROUP BY".into()));
            };
            let name = alias.clone().unwrap_or_else(|| match expr {
                Expr::Column { name, .. } => name.clone(),
                _ => alloc::format!("col{item_no}"),
            });
            columns.push(Column { name, ty: ValueType::Int });
        }
    }
    let mut t = Table::new(columns);
    t.rows = out_rows;
    Ok(t)
}

fn project_plain(
    stmt: &SelectStmt,
    frame: &Frame,
    windows: &BTreeMap<usize, Vec<Value>>,
) -> Result<Table, EngineError> {
    let mut columns: Vec<Column> = Vec::new();
    let mut plans: Vec<ProjectionPlan> = Vec::new();
    for (i, item) in stmt.items.iter().enumerate() {
        match item {
            SelectItem::Star => {
                for (ci, c) in frame.cols.iter().enumerate() {
                    columns.push(Column { name: c.name.clone(), ty: c.ty });
                    plans.push(ProjectionPlan::Col(ci));
                }
            }
            SelectItem::Expr { expr, alias } => {
                if let Some(vals) = windows.get(&i) {
                    let name = alias.clone().unwrap_or_else(|| alloc::format!("col{i}"));
                    columns.push(Column { name, ty: ValueType::Int });
                    plans.push(ProjectionPlan::Window(vals.clone()));
                    continue;
                }
                let name = alias.clone().unwrap_or_else(|| match expr {
                    Expr::Column { name, .. } => name.clone(),
                    _ => alloc::format!("col{i}"),
                });
                let ty = match expr {
                    Expr::Column { qualifier, name } => {
                        let ci = lookup(&frame.cols, qualifier.as_deref(), name)?;
                        frame.cols[ci].ty
                    }
                    Expr::Literal(v) => v.value_type().unwrap_or(ValueType::Int),
                    _ => ValueType::Int,
                };
                // direct column references copy through without re-typing
                if let Expr::Column { qualifier, name: cname } = expr {
                    let ci = lookup(&frame.cols, qualifier.as_deref(), cname)?;
                    columns.push(Column { name, ty });
                    plans.push(ProjectionPlan::Col(ci));
                } else {
                    let ty = infer_expr_type(expr, frame).unwrap_or(ty);
                    columns.push(Column { name, ty });
                    plans.push(ProjectionPlan::Expr(expr.clone()));
                }
            }
        }
    }
    let mut t = Table::new(columns);
    for (ri, row) in frame.rows.iter().enumerate() {
        let mut out = Vec::with_capacity(plans.len());
        for p in &plans {
            out.push(match p {
                ProjectionPlan::Col(ci) => row[*ci].clone(),
                ProjectionPlan::Window(vals) => vals[ri].clone(),
                ProjectionPlan::Expr(e) => eval_expr(e, &frame.cols, row)?,
            });
        }
        t.rows.push(out);
    }
    Ok(t)
}

fn infer_expr_type(e: &Expr, frame: &Frame) -> Option<ValueType> {
    match e {
        Expr::Array(_) => Some(ValueType::IntArray),
        Expr::Func { name, .. } => match name.as_str() {
            "array_remove" | "array_intersect" | "array_intersection" => Some(ValueType::IntArray),
            "cardinality" | "bitwise_and" | "bitwise_shift_left" | "bit_count" => {
                Some(ValueType::Int)
            }
            _ => None,
        },
        Expr::Case { arms, else_expr } => {
            for (_, v) in arms {
                if let Some(t) = infer_expr_type(v, frame) {
                    return Some(t);
                }
            }
            else_expr.as_ref().and_then(|v| infer_expr_type(v, frame))
        }
        Expr::Literal(v) => v.value_type(),
        Expr::Column { qualifier, name } => {
            lookup(&frame.cols, qualifier.as_deref(), name).ok().map(|i| frame.cols[i].ty)
        }
        Expr::Binary { left, op, right } => match op {
            BinOp::Add | BinOp::Sub | BinOp::Mul => {
                match (infer_expr_type(left, frame), infer_expr_type(right, frame)) {
                    (Some(ValueType::Int), Some(ValueType::Int)) => Some(ValueType::Int),
                    (Some(_), Some(_)) => Some(ValueType::Float),
                    _ => None,
                }
            }
            BinOp::Div => Some(ValueType::Float),
            _ => None,
        },
        _ => None,
    }
}

enum ProjectionPlan {
    Col(usize),
    Window(Vec<Value>),
    Expr(Expr),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::table_from_rows;
    use alloc::vec;

    fn engine() -> RefEngine {
        let mut db = Database::new();
        db.insert(
            "employees",
            table_from_rows(
                &[("id", ValueType::Int), ("dept_id", ValueType::Int), ("name", ValueType::Str)],
                vec![
                    vec![Value::Int(5), Value::Int(1), Value::Str("A".into())],
                    vec![Value::Int(15), Value::Int(1), Value::Str("B".into())],
                    vec![Value::Int(45), Value::Int(2), Value::Str("C".into())],
                    vec![Value::Int(55), Value::Int(2), Value::Str("D".into())],
                ],
            ),
        );
        db.insert(
            "departments",
            table_from_rows(
                &[("dept_id", ValueType::Int), ("city", ValueType::Str)],
                vec![
                    vec![Value::Int(1), Value::Str("ZRH".into())],
                    vec![Value::Int(2), Value::Str("BRN".into())],
                ],
            ),
        );
        RefEngine::new(db)
    }

    #[test]
    fn smoke_select_one() {
        let t = engine().execute("SELECT 1").unwrap();
        assert_eq!(t.rows, vec![vec![Value::Int(1)]]);
    }

    #[test]
    fn missing_table_errors() {
        assert!(matches!(
            engine().execute("SELECT * FROM nope"),
            Err(EngineError::UnknownTable(_))
        ));
    }

    #[test]
    fn executes_listing2_statement() {
        let sql = "SELECT *,
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
        let t = engine().execute(sql).unwrap();
        let sets: Vec<(i64, Vec<i64>)> = t
            .rows
            .iter()
            .map(|r| {
                let Value::Int(id) = r[0] else { panic!() };
                let Value::IntArray(s) = &r[3] else { panic!("{r:?}") };
                (id, s.clone())
            })
            .collect();
        assert_eq!(
            sets,
            vec![(5, vec![3]), (15, vec![2, 3]), (45, vec![1, 3, 4]), (55, vec![1])]
        );
    }

    #[test]
    fn cte_join_group_pipeline() {
        let sql = "WITH sscan AS (
            SELECT id, dept_id, ARRAY_REMOVE(ARRAY[
                CASE WHEN id < 50 THEN 1 ELSE 0 END,
                CASE WHEN id > 10 THEN 2 ELSE 0 END
            ], 0) AS query_set
            FROM employees
            WHERE (id < 50) OR (id > 10)
        ), unnested AS (
            SELECT id, dept_id, query_id FROM sscan CROSS JOIN UNNEST(query_set) AS t(query_id)
        )
        SELECT query_id, dept_id, COUNT(id) AS n
        FROM unnested
        GROUP BY query_id, dept_id";
        let t = engine().execute(sql).unwrap();
        // q1 matches ids 5,15,45; q2 matches 15,45,55
        let got: Vec<(i64, i64, i64)> = t
            .rows
            .iter()
            .map(|r| {
                let (Value::Int(q), Value::Int(d), Value::Int(n)) = (&r[0], &r[1], &r[2]) else {
                    panic!()
                };
                (*q, *d, *n)
            })
            .collect();
        assert_eq!(got, vec![(1, 1, 2), (1, 2, 1), (2, 1, 1), (2, 2, 2)]);
    }

    #[test]
    fn window_row_number_partitions() {
        let sql = "WITH x AS (
            SELECT id, dept_id FROM employees
        ), ranked AS (
            SELECT id, dept_id, row_number() OVER (PARTITION BY dept_id ORDER BY id DESC) AS rn
            FROM x
        )
        SELECT id, dept_id FROM ranked WHERE rn <= 1 ORDER BY dept_id";
        let t = engine().execute(sql).unwrap();
        let got: Vec<i64> = t
            .rows
            .iter()
            .map(|r| {
                let Value::Int(id) = r[0] else { panic!() };
                id
            })
            .collect();
        assert_eq!(got, vec![15, 55]);
    }

    #[test]
    fn values_table_and_bit_functions() {
        let sql = "SELECT query_id, BITWISE_AND(6, BITWISE_SHIFT_LEFT(1, query_id - 1)) AS b
                   FROM (VALUES (1), (2), (3)) AS t(query_id)
                   WHERE BITWISE_AND(6, BITWISE_SHIFT_LEFT(1, query_id - 1)) <> 0";
        let t = engine().execute(sql).unwrap();
        let ids: Vec<i64> = t
            .rows
            .iter()
            .map(|r| {
                let Value::Int(q) = r[0] else { panic!() };
                q
            })
            .collect();
        assert_eq!(ids, vec![2, 3]);
    }

    #[test]
    fn scalar_aggregate_over_empty_input_returns_one_row() {
        let t = engine()
            .execute("SELECT SUM(id) AS s, COUNT(*) AS n FROM employees WHERE id > 1000")
            .unwrap();
        assert_eq!(t.rows, vec![vec![Value::Null, Value::Int(0)]]);
    }

    #[test]
    fn joins_are_hash_joined_on_equality() {
        let sql = "SELECT E.name, D.city FROM employees E JOIN departments D \
                   ON E.dept_id = D.dept_id WHERE D.city = 'ZRH' ORDER BY name";
        let t = engine().execute(sql).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0][0], Value::Str("A".into()));
    }

    #[test]
    fn temp_tables_resolve() {
        let mut e = engine();
        e.create_temp(
            "tmp_x",
            table_from_rows(&[("v", ValueType::Int)], vec![vec![Value::Int(7)]]),
        );
        let t = e.execute("SELECT v FROM tmp_x").unwrap();
        assert_eq!(t.rows, vec![vec![Value::Int(7)]]);
        e.drop_temp("tmp_x");
        assert!(e.execute("SELECT v FROM tmp_x").is_err());
    }

    #[test]
    fn average_is_float() {
        let t = engine().execute("SELECT AVG(id) AS a FROM employees").unwrap();
        assert_eq!(t.rows, vec![vec![Value::Float(30.0)]]);
    }
}
