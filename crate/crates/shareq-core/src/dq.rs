//! The data-query algebra: relations whose tuples carry an annotation
//! naming the queries they are relevant to, and executable semantics for
//! the shared operators (scan, select, join, unnest, grouping,
//! order/limit, demux).
//!
//! This module is the semantic ground truth for the SQL the generators
//! emit, and [`oracle`] is the brute-force per-query evaluator the shared
//! path is checked against: for every plan and every member query q,
//! demuxing the shared result at q must be multiset-equal to evaluating
//! q's own plan.
//!
//! Everything is bag-semantics: duplicate base rows receive independent
//! annotations and survive as duplicates.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::ir::{
    AggCall, AggFunc, Atom, AtomOp, JoinCmp, PredicateNf, QueryId, ScalarExpr,
};
use crate::table::{Column, Table};
use crate::value::{self, cmp_values, like_match, try_cmp, Value, ValueType};

#[derive(Clone, Debug, PartialEq)]
pub enum DqError {
    UnknownColumn(String),
    UnboundPredicate,
    /// Bitmask annotations only cover batches of up to 64 queries.
    EncodingOverflow(usize),
    KindMismatch { expected: AnnotationKind, got: AnnotationKind },
    QueryOutsideBatch(QueryId),
    AmbiguousColumn(String),
    Invalid(String),
}

impl fmt::Display for DqError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DqError::UnknownColumn(c) => write!(f, "unknown column {c}"),
            DqError::UnboundPredicate => write!(f, "predicate still contains placeholders"),
            DqError::EncodingOverflow(n) => {
                write!(f, "bitmask annotation cannot hold {n} queries (max 64)")
            }
            DqError::KindMismatch { expected, got } => {
                write!(f, "expected {expected:?} annotation, got {got:?}")
            }
            DqError::QueryOutsideBatch(q) => write!(f, "query {q} is not a member of the batch"),
            DqError::AmbiguousColumn(c) => write!(f, "ambiguous column {c}"),
            DqError::Invalid(m) => write!(f, "{m}"),
        }
    }
}

impl core::error::Error for DqError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnnotationKind {
    None,
    Atomic,
    Set,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetEncoding {
    /// Sorted, duplicate-free array of identifiers (canonical form).
    Array,
    /// Bit i-1 set means query i is a member; batches of up to 64 only.
    Bitmask,
}

/// Set-valued annotation in one of the two encodings. Arrays are kept
/// sorted ascending and duplicate-free so intersections, equality tests,
/// and generated SQL stay deterministic.
#[derive(Clone, Debug, PartialEq)]
pub enum QuerySet {
    Array(Vec<QueryId>),
    Bitmask(u64),
}

impl QuerySet {
    pub fn empty(encoding: SetEncoding) -> QuerySet {
        match encoding {
            SetEncoding::Array => QuerySet::Array(Vec::new()),
            SetEncoding::Bitmask => QuerySet::Bitmask(0),
        }
    }

    pub fn from_ids(
        ids: &[QueryId],
        encoding: SetEncoding,
        batch_size: usize,
    ) -> Result<QuerySet, DqError> {
        match encoding {
            SetEncoding::Array => {
                let mut v: Vec<QueryId> = ids.to_vec();
                v.sort();
                v.dedup();
                Ok(QuerySet::Array(v))
            }
            SetEncoding::Bitmask => {
                if batch_size > 64 {
                    return Err(DqError::EncodingOverflow(batch_size));
                }
                let mut bits = 0u64;
                for q in ids {
                    if q.0 == 0 || q.0 > 64 {
                        return Err(DqError::EncodingOverflow(q.0 as usize));
                    }
                    bits |= 1u64 << (q.0 - 1);
                }
                Ok(QuerySet::Bitmask(bits))
            }
        }
    }

    pub fn encoding(&self) -> SetEncoding {
        match self {
            QuerySet::Array(_) => SetEncoding::Array,
            QuerySet::Bitmask(_) => SetEncoding::Bitmask,
        }
    }

    pub fn ids(&self) -> Vec<QueryId> {
        match self {
            QuerySet::Array(v) => v.clone(),
            QuerySet::Bitmask(bits) => {
                (1..=64).filter(|i| bits & (1 << (i - 1)) != 0).map(QueryId).collect()
            }
        }
    }

    pub fn contains(&self, q: QueryId) -> bool {
        match self {
            QuerySet::Array(v) => v.binary_search(&q).is_ok(),
            QuerySet::Bitmask(bits) => q.0 >= 1 && q.0 <= 64 && bits & (1 << (q.0 - 1)) != 0,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            QuerySet::Array(v) => v.len(),
            QuerySet::Bitmask(bits) => bits.count_ones() as usize,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Intersection, preserving `self`'s encoding.
    pub fn intersect(&self, other: &QuerySet) -> QuerySet {
        match (self, other) {
            (QuerySet::Bitmask(a), QuerySet::Bitmask(b)) => QuerySet::Bitmask(a & b),
            _ => {
                let other_ids = other.ids();
                let ids: Vec<QueryId> =
                    self.ids().into_iter().filter(|q| other_ids.binary_search(q).is_ok()).collect();
                match self.encoding() {
                    SetEncoding::Array => QuerySet::Array(ids),
                    SetEncoding::Bitmask => {
                        let mut bits = 0u64;
                        for q in ids {
                            bits |= 1 << (q.0 - 1);
                        }
                        QuerySet::Bitmask(bits)
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Annotation {
    None,
    Atomic(QueryId),
    Set(QuerySet),
}

impl Annotation {
    pub fn kind(&self) -> AnnotationKind {
        match self {
            Annotation::None => AnnotationKind::None,
            Annotation::Atomic(_) => AnnotationKind::Atomic,
            Annotation::Set(_) => AnnotationKind::Set,
        }
    }

    pub fn contains(&self, q: QueryId) -> bool {
        match self {
            Annotation::None => true,
            Annotation::Atomic(id) => *id == q,
            Annotation::Set(s) => s.contains(q),
        }
    }

    pub fn ids(&self) -> Vec<QueryId> {
        match self {
            Annotation::None => Vec::new(),
            Annotation::Atomic(id) => alloc::vec![*id],
            Annotation::Set(s) => s.ids(),
        }
    }
}

/// A relation whose rows carry annotations. The annotation column is kept
/// beside the data so plain [`Table`] machinery keeps working; no row ever
/// carries an empty query set.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedRelation {
    pub table: Table,
    pub anns: Vec<Annotation>,
    pub kind: AnnotationKind,
    /// Number of queries in the producing batch; bounds demux arguments.
    pub batch_size: u32,
}

impl AnnotatedRelation {
    pub fn plain(table: Table) -> AnnotatedRelation {
        let n = table.rows.len();
        AnnotatedRelation {
            table,
            anns: alloc::vec![Annotation::None; n],
            kind: AnnotationKind::None,
            batch_size: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.table.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.rows.is_empty()
    }

    fn expect_kind(&self, expected: AnnotationKind) -> Result<(), DqError> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(DqError::KindMismatch { expected, got: self.kind })
        }
    }
}

// ---------------------------------------------------------------------------
// Predicate compilation and evaluation
// ---------------------------------------------------------------------------

/// A predicate with column references resolved to row indices.
#[derive(Clone, Debug)]
pub struct CompiledPredicate {
    disjuncts: Vec<Vec<(usize, CompiledAtom)>>,
    is_true: bool,
}

#[derive(Clone, Debug)]
struct CompiledAtom {
    op: AtomOp,
    args: Vec<Value>,
}

impl CompiledPredicate {
    pub fn compile(pred: &PredicateNf, table: &Table) -> Result<CompiledPredicate, DqError> {
        if !pred.is_bound() {
            return Err(DqError::UnboundPredicate);
        }
        let mut disjuncts = Vec::new();
        for conj in &pred.disjuncts {
            let mut atoms = Vec::new();
            for atom in &conj.atoms {
                let idx = table
                    .column_index(&atom.column.column)
                    .ok_or_else(|| DqError::UnknownColumn(atom.column.column.clone()))?;
                atoms.push((idx, compile_atom(atom)));
            }
            disjuncts.push(atoms);
        }
        Ok(CompiledPredicate { disjuncts, is_true: pred.is_true() })
    }

    pub fn matches(&self, row: &[Value]) -> bool {
        if self.is_true {
            return true;
        }
        self.disjuncts
            .iter()
            .any(|conj| conj.iter().all(|(idx, atom)| eval_atom(&row[*idx], atom)))
    }
}

fn compile_atom(atom: &Atom) -> CompiledAtom {
    let args = atom
        .args
        .iter()
        .map(|a| match a {
            crate::ir::AtomArg::Const(v) => v.clone(),
            crate::ir::AtomArg::Param(_) => Value::Null, // unreachable: bound checked
        })
        .collect();
    CompiledAtom { op: atom.op, args }
}

fn eval_atom(v: &Value, atom: &CompiledAtom) -> bool {
    match atom.op {
        AtomOp::Eq => try_cmp(v, &atom.args[0]) == Some(Ordering::Equal),
        AtomOp::Lt => try_cmp(v, &atom.args[0]) == Some(Ordering::Less),
        AtomOp::Le => {
            matches!(try_cmp(v, &atom.args[0]), Some(Ordering::Less | Ordering::Equal))
        }
        AtomOp::Gt => try_cmp(v, &atom.args[0]) == Some(Ordering::Greater),
        AtomOp::Ge => {
            matches!(try_cmp(v, &atom.args[0]), Some(Ordering::Greater | Ordering::Equal))
        }
        AtomOp::Between => {
            matches!(try_cmp(v, &atom.args[0]), Some(Ordering::Greater | Ordering::Equal))
                && matches!(try_cmp(v, &atom.args[1]), Some(Ordering::Less | Ordering::Equal))
        }
        AtomOp::Like => match (v.as_str(), atom.args[0].as_str()) {
            (Some(text), Some(pattern)) => like_match(text, pattern),
            _ => false,
        },
        AtomOp::In => atom.args.iter().any(|a| try_cmp(v, a) == Some(Ordering::Equal)),
    }
}

// ---------------------------------------------------------------------------
// Shared operators
// ---------------------------------------------------------------------------

/// Shared scan: one pass over an unannotated table evaluating every
/// member's predicate; emits exactly the tuples matching at least one
/// query, annotated with the exact matching set.
pub fn shared_scan(
    table: &Table,
    preds: &[PredicateNf],
    encoding: SetEncoding,
) -> Result<AnnotatedRelation, DqError> {
    let compiled: Vec<CompiledPredicate> =
        preds.iter().map(|p| CompiledPredicate::compile(p, table)).collect::<Result<_, _>>()?;
    if encoding == SetEncoding::Bitmask && preds.len() > 64 {
        return Err(DqError::EncodingOverflow(preds.len()));
    }
    let mut out = Table::new(table.columns.clone());
    let mut anns = Vec::new();
    for row in &table.rows {
        let ids: Vec<QueryId> = compiled
            .iter()
            .enumerate()
            .filter(|(_, p)| p.matches(row))
            .map(|(i, _)| QueryId(i as u32 + 1))
            .collect();
        if ids.is_empty() {
            continue;
        }
        anns.push(Annotation::Set(QuerySet::from_ids(&ids, encoding, preds.len())?));
        out.rows.push(row.clone());
    }
    Ok(AnnotatedRelation {
        table: out,
        anns,
        kind: AnnotationKind::Set,
        batch_size: preds.len() as u32,
    })
}

/// Shared selection over an annotated input: a tuple stays relevant to
/// query q iff it satisfies q's predicate and was relevant to q before.
pub fn shared_select(
    input: &AnnotatedRelation,
    preds: &[PredicateNf],
) -> Result<AnnotatedRelation, DqError> {
    let compiled: Vec<CompiledPredicate> = preds
        .iter()
        .map(|p| CompiledPredicate::compile(p, &input.table))
        .collect::<Result<_, _>>()?;
    let mut out = Table::new(input.table.columns.clone());
    let mut anns = Vec::new();
    for (row, ann) in input.table.rows.iter().zip(&input.anns) {
        let pred_of = |q: QueryId| -> bool {
            compiled.get(q.0 as usize - 1).map(|p| p.matches(row)).unwrap_or(false)
        };
        match ann {
            Annotation::Atomic(q) => {
                if pred_of(*q) {
                    out.rows.push(row.clone());
                    anns.push(Annotation::Atomic(*q));
                }
            }
            Annotation::Set(s) => {
                let kept: Vec<QueryId> = s.ids().into_iter().filter(|q| pred_of(*q)).collect();
                if !kept.is_empty() {
                    anns.push(Annotation::Set(QuerySet::from_ids(
                        &kept,
                        s.encoding(),
                        preds.len(),
                    )?));
                    out.rows.push(row.clone());
                }
            }
            Annotation::None => {
                return Err(DqError::KindMismatch {
                    expected: AnnotationKind::Set,
                    got: AnnotationKind::None,
                })
            }
        }
    }
    Ok(AnnotatedRelation { table: out, anns, kind: input.kind, batch_size: input.batch_size })
}

/// Restrict annotations to a member subset: set annotations intersect,
/// atomic ones are kept iff the member is in the subset. Used when a
/// shared subplan feeds a consumer that only serves some of the batch.
pub fn annotation_restrict(
    input: &AnnotatedRelation,
    members: &[QueryId],
) -> Result<AnnotatedRelation, DqError> {
    let mut sorted = members.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut out = Table::new(input.table.columns.clone());
    let mut anns = Vec::new();
    for (row, ann) in input.table.rows.iter().zip(&input.anns) {
        match ann {
            Annotation::Atomic(q) => {
                if sorted.binary_search(q).is_ok() {
                    out.rows.push(row.clone());
                    anns.push(ann.clone());
                }
            }
            Annotation::Set(s) => {
                let kept: Vec<QueryId> =
                    s.ids().into_iter().filter(|q| sorted.binary_search(q).is_ok()).collect();
                if !kept.is_empty() {
                    anns.push(Annotation::Set(QuerySet::from_ids(
                        &kept,
                        s.encoding(),
                        input.batch_size as usize,
                    )?));
                    out.rows.push(row.clone());
                }
            }
            Annotation::None => {
                return Err(DqError::KindMismatch {
                    expected: AnnotationKind::Set,
                    got: AnnotationKind::None,
                })
            }
        }
    }
    Ok(AnnotatedRelation { table: out, anns, kind: input.kind, batch_size: input.batch_size })
}

/// One join condition, resolved against the two input schemas by name.
#[derive(Clone, Debug, PartialEq)]
pub struct JoinOn {
    pub left_column: String,
    pub right_column: String,
    pub cmp: JoinCmp,
}

/// Shared join. Set×set output keeps the intersection (rows with empty
/// intersections are dropped); any atomic side produces an atomic output
/// by id equality / set membership.
pub fn shared_join(
    left: &AnnotatedRelation,
    right: &AnnotatedRelation,
    conds: &[JoinOn],
) -> Result<AnnotatedRelation, DqError> {
    if conds.is_empty() {
        return Err(DqError::Invalid("join requires at least one condition".into()));
    }
    let mut eq_pairs = Vec::new();
    let mut other = Vec::new();
    for c in conds {
        let li = left
            .table
            .column_index(&c.left_column)
            .ok_or_else(|| DqError::UnknownColumn(c.left_column.clone()))?;
        let ri = right
            .table
            .column_index(&c.right_column)
            .ok_or_else(|| DqError::UnknownColumn(c.right_column.clone()))?;
        if c.cmp == JoinCmp::Eq {
            eq_pairs.push((li, ri));
        } else {
            other.push((li, ri, c.cmp));
        }
    }

    // output schema: left columns, then right columns minus equi-matched
    // duplicates of the same name
    let mut drop_right: Vec<usize> = Vec::new();
    for &(li, ri) in &eq_pairs {
        if left.table.columns[li].name == right.table.columns[ri].name {
            drop_right.push(ri);
        }
    }
    let mut columns = left.table.columns.clone();
    let mut right_keep = Vec::new();
    for (i, c) in right.table.columns.iter().enumerate() {
        if drop_right.contains(&i) {
            continue;
        }
        if columns.iter().any(|lc| lc.name == c.name) {
            return Err(DqError::AmbiguousColumn(c.name.clone()));
        }
        columns.push(c.clone());
        right_keep.push(i);
    }

    let batch_size = left.batch_size.max(right.batch_size);
    let out_kind = match (left.kind, right.kind) {
        (AnnotationKind::Set, AnnotationKind::Set) => AnnotationKind::Set,
        (AnnotationKind::None, k) | (k, AnnotationKind::None) => k,
        _ => AnnotationKind::Atomic,
    };

    let mut out = Table::new(columns);
    let mut anns = Vec::new();

    let mut emit = |lrow: &Vec<Value>,
                    lann: &Annotation,
                    rrow: &Vec<Value>,
                    rann: &Annotation|
     -> Result<(), DqError> {
        for &(li, ri, cmp) in &other {
            let ord = try_cmp(&lrow[li], &rrow[ri]);
            let ok = match cmp {
                JoinCmp::Eq => ord == Some(Ordering::Equal),
                JoinCmp::Lt => ord == Some(Ordering::Less),
                JoinCmp::Le => matches!(ord, Some(Ordering::Less | Ordering::Equal)),
                JoinCmp::Gt => ord == Some(Ordering::Greater),
                JoinCmp::Ge => matches!(ord, Some(Ordering::Greater | Ordering::Equal)),
            };
            if !ok {
                return Ok(());
            }
        }
        let ann = match (lann, rann) {
            (Annotation::None, a) | (a, Annotation::None) => Some(a.clone()),
            (Annotation::Set(a), Annotation::Set(b)) => {
                let i = a.intersect(b);
                if i.is_empty() {
                    None
                } else {
                    Some(Annotation::Set(i))
                }
            }
            (Annotation::Atomic(a), Annotation::Atomic(b)) => {
                (a == b).then(|| Annotation::Atomic(*a))
            }
            (Annotation::Atomic(a), Annotation::Set(s))
            | (Annotation::Set(s), Annotation::Atomic(a)) => {
                s.contains(*a).then(|| Annotation::Atomic(*a))
            }
        };
        if let Some(ann) = ann {
            let mut row = lrow.clone();
            for &ri in &right_keep {
                row.push(rrow[ri].clone());
            }
            out.rows.push(row);
            anns.push(ann);
        }
        Ok(())
    };

    if !eq_pairs.is_empty() {
        // hash join on the equality columns; NULL keys never match
        let mut index: BTreeMap<OrdKey, Vec<usize>> = BTreeMap::new();
        'rows: for (i, rrow) in right.table.rows.iter().enumerate() {
            let mut key = Vec::with_capacity(eq_pairs.len());
            for &(_, ri) in &eq_pairs {
                if rrow[ri].is_null() {
                    continue 'rows;
                }
                key.push(rrow[ri].clone());
            }
            index.entry(OrdKey(key)).or_default().push(i);
        }
        'lrows: for (lrow, lann) in left.table.rows.iter().zip(&left.anns) {
            let mut key = Vec::with_capacity(eq_pairs.len());
            for &(li, _) in &eq_pairs {
                if lrow[li].is_null() {
                    continue 'lrows;
                }
                key.push(lrow[li].clone());
            }
            if let Some(matches) = index.get(&OrdKey(key)) {
                for &ri in matches {
                    emit(lrow, lann, &right.table.rows[ri], &right.anns[ri])?;
                }
            }
        }
    } else {
        for (lrow, lann) in left.table.rows.iter().zip(&left.anns) {
            for (rrow, rann) in right.table.rows.iter().zip(&right.anns) {
                emit(lrow, lann, rrow, rann)?;
            }
        }
    }

    Ok(AnnotatedRelation { table: out, anns, kind: out_kind, batch_size })
}

/// Row key wrapper ordered by the value total order, so hash-join keys can
/// live in a BTreeMap.
#[derive(Clone, Debug, PartialEq)]
struct OrdKey(Vec<Value>);

impl Eq for OrdKey {}

impl PartialOrd for OrdKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdKey {
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

/// Unnest set annotations: each row is replicated once per member, in
/// ascending id order, producing atomic annotations. Output cardinality is
/// the sum of the input annotation cardinalities.
pub fn unnest_query_set(input: &AnnotatedRelation) -> Result<AnnotatedRelation, DqError> {
    input.expect_kind(AnnotationKind::Set)?;
    let mut out = Table::new(input.table.columns.clone());
    let mut anns = Vec::new();
    for (row, ann) in input.table.rows.iter().zip(&input.anns) {
        let Annotation::Set(s) = ann else {
            return Err(DqError::KindMismatch { expected: AnnotationKind::Set, got: ann.kind() });
        };
        for q in s.ids() {
            out.rows.push(row.clone());
            anns.push(Annotation::Atomic(q));
        }
    }
    Ok(AnnotatedRelation {
        table: out,
        anns,
        kind: AnnotationKind::Atomic,
        batch_size: input.batch_size,
    })
}

/// Shared grouping: equal to regular grouping over the unnested input with
/// the query id appended to the keys; always produces atomic annotations.
pub fn shared_group_by(
    input: &AnnotatedRelation,
    keys: &[String],
    aggs: &[(AggCall, String)],
) -> Result<AnnotatedRelation, DqError> {
    let unnested;
    let input = match input.kind {
        AnnotationKind::Set => {
            unnested = unnest_query_set(input)?;
            &unnested
        }
        AnnotationKind::Atomic => input,
        AnnotationKind::None => {
            return Err(DqError::KindMismatch {
                expected: AnnotationKind::Atomic,
                got: AnnotationKind::None,
            })
        }
    };

    let key_idx: Vec<usize> = keys
        .iter()
        .map(|k| input.table.column_index(k).ok_or_else(|| DqError::UnknownColumn(k.clone())))
        .collect::<Result<_, _>>()?;
    let compiled_args: Vec<Option<CompiledScalar>> = aggs
        .iter()
        .map(|(a, _)| a.arg.as_ref().map(|e| CompiledScalar::compile(e, &input.table)).transpose())
        .collect::<Result<_, _>>()?;

    // (query, key values) -> aggregate states
    let mut groups: BTreeMap<(u32, OrdKey), Vec<AggState>> = BTreeMap::new();
    for (row, ann) in input.table.rows.iter().zip(&input.anns) {
        let Annotation::Atomic(q) = ann else {
            return Err(DqError::KindMismatch {
                expected: AnnotationKind::Atomic,
                got: ann.kind(),
            });
        };
        let key = OrdKey(key_idx.iter().map(|&i| row[i].clone()).collect());
        let states = groups
            .entry((q.0, key))
            .or_insert_with(|| aggs.iter().map(|(a, _)| AggState::new(a.func)).collect());
        for (state, arg) in states.iter_mut().zip(&compiled_args) {
            let v = arg.as_ref().map(|c| c.eval(row));
            state.update(v.as_ref());
        }
    }

    let mut columns: Vec<Column> = Vec::new();
    for (k, &i) in keys.iter().zip(&key_idx) {
        columns.push(Column { name: k.clone(), ty: input.table.columns[i].ty });
    }
    for ((agg, alias), _) in aggs.iter().zip(&compiled_args) {
        columns.push(Column { name: alias.clone(), ty: agg_output_type(agg) });
    }
    let mut out = Table::new(columns);
    let mut anns = Vec::new();
    for ((q, key), states) in groups {
        let mut row = key.0;
        for s in states {
            row.push(s.finish());
        }
        out.rows.push(row);
        anns.push(Annotation::Atomic(QueryId(q)));
    }
    Ok(AnnotatedRelation {
        table: out,
        anns,
        kind: AnnotationKind::Atomic,
        batch_size: input.batch_size,
    })
}

fn agg_output_type(agg: &AggCall) -> ValueType {
    match agg.func {
        AggFunc::Count => ValueType::Int,
        AggFunc::Avg => ValueType::Float,
        _ => ValueType::Float, // refined by consumers when column types are known
    }
}

/// Compiled scalar expression over a single relation's rows.
#[derive(Clone, Debug)]
pub struct CompiledScalar {
    prog: ScalarProg,
}

#[derive(Clone, Debug)]
enum ScalarProg {
    Col(usize),
    Const(Value),
    Bin { op: crate::ir::ArithOp, left: alloc::boxed::Box<ScalarProg>, right: alloc::boxed::Box<ScalarProg> },
}

impl CompiledScalar {
    pub fn compile(e: &ScalarExpr, table: &Table) -> Result<CompiledScalar, DqError> {
        fn go(e: &ScalarExpr, table: &Table) -> Result<ScalarProg, DqError> {
            Ok(match e {
                ScalarExpr::Col(c) => ScalarProg::Col(
                    table
                        .column_index(&c.column)
                        .ok_or_else(|| DqError::UnknownColumn(c.column.clone()))?,
                ),
                ScalarExpr::Const(v) => ScalarProg::Const(v.clone()),
                ScalarExpr::Bin { op, left, right } => ScalarProg::Bin {
                    op: *op,
                    left: alloc::boxed::Box::new(go(left, table)?),
                    right: alloc::boxed::Box::new(go(right, table)?),
                },
            })
        }
        Ok(CompiledScalar { prog: go(e, table)? })
    }

    pub fn eval(&self, row: &[Value]) -> Value {
        fn go(p: &ScalarProg, row: &[Value]) -> Value {
            match p {
                ScalarProg::Col(i) => row[*i].clone(),
                ScalarProg::Const(v) => v.clone(),
                ScalarProg::Bin { op, left, right } => {
                    let (l, r) = (go(left, row), go(right, row));
                    match op {
                        crate::ir::ArithOp::Add => value::add(&l, &r),
                        crate::ir::ArithOp::Sub => value::sub(&l, &r),
                        crate::ir::ArithOp::Mul => value::mul(&l, &r),
                        crate::ir::ArithOp::Div => value::div(&l, &r),
                    }
                }
            }
        }
        go(&self.prog, row)
    }
}

/// Streaming aggregate state shared by grouping implementations in this
/// module only; the per-query oracle and the SQL engine keep their own.
#[derive(Clone, Debug)]
pub(crate) enum AggState {
    Count(i64),
    Sum { int: Option<i64>, float: f64, any: bool, is_float: bool },
    Min(Option<Value>),
    Max(Option<Value>),
    Avg { sum: f64, count: i64 },
}

impl AggState {
    pub(crate) fn new(func: AggFunc) -> AggState {
        match func {
            AggFunc::Count => AggState::Count(0),
            AggFunc::Sum => AggState::Sum { int: Some(0), float: 0.0, any: false, is_float: false },
            AggFunc::Min => AggState::Min(None),
            AggFunc::Max => AggState::Max(None),
            AggFunc::Avg => AggState::Avg { sum: 0.0, count: 0 },
        }
    }

    /// `None` argument means COUNT(*)-style row counting.
    pub(crate) fn update(&mut self, v: Option<&Value>) {
        match self {
            AggState::Count(n) => {
                match v {
                    None => *n += 1, // COUNT(*) via missing arg
                    Some(val) if !val.is_null() => *n += 1,
                    _ => {}
                }
            }
            AggState::Sum { int, float, any, is_float } => {
                if let Some(val) = v {
                    match val {
                        Value::Int(i) => {
                            *any = true;
                            *float += *i as f64;
                            *int = int.and_then(|acc| acc.checked_add(*i));
                        }
                        Value::Float(f) => {
                            *any = true;
                            *is_float = true;
                            *float += f;
                        }
                        _ => {}
                    }
                }
            }
            AggState::Min(cur) => {
                if let Some(val) = v {
                    if !val.is_null()
                        && cur
                            .as_ref()
                            .map(|c| cmp_values(val, c) == Ordering::Less)
                            .unwrap_or(true)
                    {
                        *cur = Some(val.clone());
                    }
                }
            }
            AggState::Max(cur) => {
                if let Some(val) = v {
                    if !val.is_null()
                        && cur
                            .as_ref()
                            .map(|c| cmp_values(val, c) == Ordering::Greater)
                            .unwrap_or(true)
                    {
                        *cur = Some(val.clone());
                    }
                }
            }
            AggState::Avg { sum, count } => {
                if let Some(val) = v {
                    if let Some(f) = val.as_f64() {
                        *sum += f;
                        *count += 1;
                    }
                }
            }
        }
    }

    pub(crate) fn finish(self) -> Value {
        match self {
            AggState::Count(n) => Value::Int(n),
            AggState::Sum { int, float, any, is_float } => {
                if !any {
                    Value::Null
                } else if !is_float {
                    match int {
                        Some(i) => Value::Int(i),
                        None => Value::Float(float),
                    }
                } else {
                    Value::Float(float)
                }
            }
            AggState::Min(v) | AggState::Max(v) => v.unwrap_or(Value::Null),
            AggState::Avg { sum, count } => {
                if count == 0 {
                    Value::Null
                } else {
                    Value::Float(sum / count as f64)
                }
            }
        }
    }
}

/// Order rows within each query partition and keep the first `limit` rows
/// per query. Ties break by the input row sequence (stable sort).
pub fn shared_order_limit(
    input: &AnnotatedRelation,
    ordering: &[(String, bool)],
    limit: Option<u64>,
) -> Result<AnnotatedRelation, DqError> {
    input.expect_kind(AnnotationKind::Atomic)?;
    let order_idx: Vec<(usize, bool)> = ordering
        .iter()
        .map(|(name, desc)| {
            input
                .table
                .column_index(name)
                .map(|i| (i, *desc))
                .ok_or_else(|| DqError::UnknownColumn(name.clone()))
        })
        .collect::<Result<_, _>>()?;

    let mut order: Vec<usize> = (0..input.table.rows.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&input.table.rows[a], &input.table.rows[b]);
        let (qa, qb) = (&input.anns[a], &input.anns[b]);
        let q_ord = match (qa, qb) {
            (Annotation::Atomic(x), Annotation::Atomic(y)) => x.cmp(y),
            _ => Ordering::Equal,
        };
        q_ord.then_with(|| cmp_rows_by(ra, rb, &order_idx)).then(a.cmp(&b))
    });

    let mut out = Table::new(input.table.columns.clone());
    let mut anns = Vec::new();
    let mut taken: BTreeMap<u32, u64> = BTreeMap::new();
    for i in order {
        let Annotation::Atomic(q) = &input.anns[i] else { unreachable!() };
        let t = taken.entry(q.0).or_insert(0);
        if let Some(k) = limit {
            if *t >= k {
                continue;
            }
        }
        *t += 1;
        out.rows.push(input.table.rows[i].clone());
        anns.push(input.anns[i].clone());
    }
    Ok(AnnotatedRelation {
        table: out,
        anns,
        kind: AnnotationKind::Atomic,
        batch_size: input.batch_size,
    })
}

/// Lexicographic row comparison for ORDER BY; descending keys reverse the
/// total order, which puts NULLs last under DESC.
pub fn cmp_rows_by(a: &[Value], b: &[Value], keys: &[(usize, bool)]) -> Ordering {
    for &(i, desc) in keys {
        let ord = cmp_values(&a[i], &b[i]);
        let ord = if desc { ord.reverse() } else { ord };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    Ordering::Equal
}

/// Extract one query's rows: those whose annotation contains/equals q,
/// with the annotation dropped.
pub fn demux(input: &AnnotatedRelation, q: QueryId) -> Result<Table, DqError> {
    if q.0 == 0 || q.0 > input.batch_size {
        return Err(DqError::QueryOutsideBatch(q));
    }
    let mut out = Table::new(input.table.columns.clone());
    for (row, ann) in input.table.rows.iter().zip(&input.anns) {
        if ann.contains(q) {
            out.rows.push(row.clone());
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Brute-force per-query oracle
// ---------------------------------------------------------------------------

pub mod oracle {
    //! Direct evaluation of a single [`QuerySpec`] over plain tables:
    //! nested-loop/hash joins, full predicate scans, grouping, ordering.
    //! Deliberately simple and entirely separate from the shared-operator
    //! path above; this is the reference the shared path is checked
    //! against.

    use super::*;
    use crate::ir::{Grouping, Projection, QuerySpec};
    use crate::table::Database;

    /// Evaluate one query against base tables.
    pub fn eval_spec(spec: &QuerySpec, db: &Database) -> Result<Table, DqError> {
        if !spec.is_bound() {
            return Err(DqError::UnboundPredicate);
        }
        // working row = concatenation of base-table rows in binding order;
        // columns addressed as (alias, column)
        let mut cols: Vec<(String, String, ValueType)> = Vec::new();
        let mut rows: Vec<Vec<Value>> = alloc::vec![Vec::new()];
        for (bi, b) in spec.base.iter().enumerate() {
            let t = db
                .get(&b.table)
                .ok_or_else(|| DqError::Invalid(alloc::format!("missing table {}", b.table)))?;
            let offset = cols.len();
            for c in &t.columns {
                cols.push((b.alias.clone(), c.name.clone(), c.ty));
            }
            // edges that connect this table to the already-joined prefix
            let applicable: Vec<_> = spec
                .joins
                .iter()
                .filter(|e| {
                    let prefix = |alias: &str| {
                        spec.base[..bi].iter().any(|p| p.alias == alias)
                    };
                    (e.left.table == b.alias && prefix(&e.right.table))
                        || (e.right.table == b.alias && prefix(&e.left.table))
                })
                .collect();
            let col_at = |cols: &[(String, String, ValueType)], alias: &str, name: &str| {
                cols.iter().position(|(a, c, _)| a == alias && c == name)
            };
            let mut next = Vec::new();
            if bi == 0 {
                for trow in &t.rows {
                    next.push(trow.clone());
                }
            } else {
                // split edges: equality pairs (prefix idx, new-table idx)
                // for hashing, the rest checked per pair
                let mut eq = Vec::new();
                let mut rest = Vec::new();
                for e in &applicable {
                    let (p_ref, n_ref) = if e.left.table == b.alias {
                        (&e.right, &e.left)
                    } else {
                        (&e.left, &e.right)
                    };
                    let pi = col_at(&cols[..offset], &p_ref.table, &p_ref.column)
                        .ok_or_else(|| DqError::UnknownColumn(p_ref.column.clone()))?;
                    let ni = t
                        .column_index(&n_ref.column)
                        .ok_or_else(|| DqError::UnknownColumn(n_ref.column.clone()))?;
                    // direction of the comparison as written
                    let flipped = e.left.table != b.alias;
                    if e.cmp == JoinCmp::Eq {
                        eq.push((pi, ni));
                    } else {
                        rest.push((pi, ni, e.cmp, flipped));
                    }
                }
                let check_rest = |prow: &[Value], trow: &[Value]| {
                    rest.iter().all(|&(pi, ni, cmp, flipped)| {
                        // e.left cmp e.right; when the new table is on the
                        // left, compare trow[ni] cmp prow[pi]
                        let ord = if flipped {
                            try_cmp(&prow[pi], &trow[ni])
                        } else {
                            try_cmp(&trow[ni], &prow[pi])
                        };
                        // `ord` is (new cmp prefix) when !flipped
                        let ord = if flipped { ord.map(|o| o.reverse()) } else { ord };
                        match (ord, cmp) {
                            (Some(Ordering::Equal), JoinCmp::Eq) => true,
                            (Some(Ordering::Less), JoinCmp::Lt) => true,
                            (Some(Ordering::Less | Ordering::Equal), JoinCmp::Le) => true,
                            (Some(Ordering::Greater), JoinCmp::Gt) => true,
                            (Some(Ordering::Greater | Ordering::Equal), JoinCmp::Ge) => true,
                            _ => false,
                        }
                    })
                };
                if !eq.is_empty() {
                    let mut index: BTreeMap<OrdKey, Vec<usize>> = BTreeMap::new();
                    'trows: for (i, trow) in t.rows.iter().enumerate() {
                        let mut key = Vec::new();
                        for &(_, ni) in &eq {
                            if trow[ni].is_null() {
                                continue 'trows;
                            }
                            key.push(trow[ni].clone());
                        }
                        index.entry(OrdKey(key)).or_default().push(i);
                    }
                    'prows: for prow in &rows {
                        let mut key = Vec::new();
                        for &(pi, _) in &eq {
                            if prow[pi].is_null() {
                                continue 'prows;
                            }
                            key.push(prow[pi].clone());
                        }
                        if let Some(hits) = index.get(&OrdKey(key)) {
                            for &i in hits {
                                if check_rest(prow, &t.rows[i]) {
                                    let mut row = prow.clone();
                                    row.extend(t.rows[i].iter().cloned());
                                    next.push(row);
                                }
                            }
                        }
                    }
                } else {
                    for prow in &rows {
                        for trow in &t.rows {
                            if applicable.is_empty() || check_rest(prow, trow) {
                                let mut row = prow.clone();
                                row.extend(trow.iter().cloned());
                                next.push(row);
                            }
                        }
                    }
                }
            }
            rows = next;
        }

        let col_of = |alias: &str, name: &str| -> Result<usize, DqError> {
            cols.iter()
                .position(|(a, c, _)| a == alias && c == name)
                .ok_or_else(|| DqError::UnknownColumn(alloc::format!("{alias}.{name}")))
        };

        // predicate
        let matching: Vec<Vec<Value>> = {
            let mut compiled: Vec<Vec<(usize, CompiledAtom)>> = Vec::new();
            for conj in &spec.predicate.disjuncts {
                let mut atoms = Vec::new();
                for a in &conj.atoms {
                    atoms.push((col_of(&a.column.table, &a.column.column)?, compile_atom(a)));
                }
                compiled.push(atoms);
            }
            rows.into_iter()
                .filter(|row| {
                    compiled
                        .iter()
                        .any(|conj| conj.iter().all(|(i, a)| eval_atom(&row[*i], a)))
                })
                .collect()
        };

        // projection / grouping
        let mut out = match &spec.grouping {
            None => {
                let mut idx = Vec::new();
                let mut columns = Vec::new();
                for p in &spec.projections {
                    let Projection::Column { col, alias } = p else {
                        return Err(DqError::Invalid("aggregate without grouping".into()));
                    };
                    let i = col_of(&col.table, &col.column)?;
                    idx.push(i);
                    columns.push(Column { name: alias.clone(), ty: cols[i].2 });
                }
                let mut t = Table::new(columns);
                for row in &matching {
                    t.rows.push(idx.iter().map(|&i| row[i].clone()).collect());
                }
                t
            }
            Some(Grouping { keys }) => {
                eval_grouped(spec, keys, &matching, &cols, &col_of)?
            }
        };

        // ordering + limit over output columns
        if !spec.ordering.is_empty() {
            let keys: Vec<(usize, bool)> = spec
                .ordering
                .iter()
                .map(|o| {
                    out.column_index(&o.name)
                        .map(|i| (i, o.desc))
                        .ok_or_else(|| DqError::UnknownColumn(o.name.clone()))
                })
                .collect::<Result<_, _>>()?;
            out.rows.sort_by(|a, b| cmp_rows_by(a, b, &keys));
        }
        if let Some(k) = spec.limit {
            out.rows.truncate(k as usize);
        }
        Ok(out)
    }

    fn eval_grouped(
        spec: &QuerySpec,
        keys: &[crate::ir::ColRef],
        matching: &[Vec<Value>],
        cols: &[(String, String, ValueType)],
        col_of: &dyn Fn(&str, &str) -> Result<usize, DqError>,
    ) -> Result<Table, DqError> {
        let key_idx: Vec<usize> =
            keys.iter().map(|k| col_of(&k.table, &k.column)).collect::<Result<_, _>>()?;

        // independent scalar evaluator (not the shared CompiledScalar)
        fn scal(e: &ScalarExpr, row: &[Value], col_of: &dyn Fn(&str, &str) -> Result<usize, DqError>) -> Result<Value, DqError> {
            Ok(match e {
                ScalarExpr::Col(c) => row[col_of(&c.table, &c.column)?].clone(),
                ScalarExpr::Const(v) => v.clone(),
                ScalarExpr::Bin { op, left, right } => {
                    let l = scal(left, row, col_of)?;
                    let r = scal(right, row, col_of)?;
                    match op {
                        crate::ir::ArithOp::Add => value::add(&l, &r),
                        crate::ir::ArithOp::Sub => value::sub(&l, &r),
                        crate::ir::ArithOp::Mul => value::mul(&l, &r),
                        crate::ir::ArithOp::Div => value::div(&l, &r),
                    }
                }
            })
        }

        struct Acc {
            count: i64,
            sum_f: f64,
            sum_i: Option<i64>,
            sum_any: bool,
            sum_float: bool,
            min: Option<Value>,
            max: Option<Value>,
            avg_sum: f64,
            avg_n: i64,
        }
        impl Acc {
            fn new() -> Acc {
                Acc {
                    count: 0,
                    sum_f: 0.0,
                    sum_i: Some(0),
                    sum_any: false,
                    sum_float: false,
                    min: None,
                    max: None,
                    avg_sum: 0.0,
                    avg_n: 0,
                }
            }
        }

        let aggs: Vec<(&AggCall, &str)> = spec
            .projections
            .iter()
            .filter_map(|p| match p {
                Projection::Aggregate { agg, alias } => Some((agg, alias.as_str())),
                Projection::Column { .. } => None,
            })
            .collect();

        let mut groups: BTreeMap<OrdKey, Vec<Acc>> = BTreeMap::new();
        for row in matching {
            let key = OrdKey(key_idx.iter().map(|&i| row[i].clone()).collect());
            let accs =
                groups.entry(key).or_insert_with(|| aggs.iter().map(|_| Acc::new()).collect());
            for ((agg, _), acc) in aggs.iter().zip(accs.iter_mut()) {
                let v = match &agg.arg {
                    None => None,
                    Some(e) => Some(scal(e, row, col_of)?),
                };
                match agg.func {
                    AggFunc::Count => {
                        if v.as_ref().map(|x| !x.is_null()).unwrap_or(true) {
                            acc.count += 1;
                        }
                    }
                    AggFunc::Sum => {
                        match v {
                            Some(Value::Int(i)) => {
                                acc.sum_any = true;
                                acc.sum_f += i as f64;
                                acc.sum_i = acc.sum_i.and_then(|a| a.checked_add(i));
                            }
                            Some(Value::Float(f)) => {
                                acc.sum_any = true;
                                acc.sum_float = true;
                                acc.sum_f += f;
                            }
                            _ => {}
                        }
                    }
                    AggFunc::Min => {
                        if let Some(val) = v {
                            if !val.is_null()
                                && acc
                                    .min
                                    .as_ref()
                                    .map(|c| cmp_values(&val, c) == Ordering::Less)
                                    .unwrap_or(true)
                            {
                                acc.min = Some(val);
                            }
                        }
                    }
                    AggFunc::Max => {
                        if let Some(val) = v {
                            if !val.is_null()
                                && acc
                                    .max
                                    .as_ref()
                                    .map(|c| cmp_values(&val, c) == Ordering::Greater)
                                    .unwrap_or(true)
                            {
                                acc.max = Some(val);
                            }
                        }
                    }
                    AggFunc::Avg => {
                        if let Some(f) = v.as_ref().and_then(|x| x.as_f64()) {
                            acc.avg_sum += f;
                            acc.avg_n += 1;
                        }
                    }
                }
            }
        }

        // scalar aggregates return one row even over empty input
        if keys.is_empty() && groups.is_empty() {
            groups.insert(OrdKey(Vec::new()), aggs.iter().map(|_| Acc::new()).collect());
        }

        let mut columns = Vec::new();
        for p in &spec.projections {
            match p {
                Projection::Column { col, alias } => {
                    let i = col_of(&col.table, &col.column)?;
                    columns.push(Column { name: alias.clone(), ty: cols[i].2 });
                }
                Projection::Aggregate { agg, alias } => {
                    let ty = match agg.func {
                        AggFunc::Count => ValueType::Int,
                        AggFunc::Avg => ValueType::Float,
                        _ => ValueType::Float,
                    };
                    columns.push(Column { name: alias.clone(), ty });
                }
            }
        }
        let mut out = Table::new(columns);
        for (key, accs) in groups {
            let mut row = Vec::new();
            let mut agg_i = 0;
            for p in &spec.projections {
                match p {
                    Projection::Column { col, .. } => {
                        let pos = keys
                            .iter()
                            .position(|k| k == col)
                            .ok_or_else(|| DqError::Invalid("projection not in keys".into()))?;
                        row.push(key.0[pos].clone());
                    }
                    Projection::Aggregate { agg, .. } => {
                        let acc = &accs[agg_i];
                        agg_i += 1;
                        row.push(match agg.func {
                            AggFunc::Count => Value::Int(acc.count),
                            AggFunc::Sum => {
                                if !acc.sum_any {
                                    Value::Null
                                } else if !acc.sum_float {
                                    match acc.sum_i {
                                        Some(i) => Value::Int(i),
                                        None => Value::Float(acc.sum_f),
                                    }
                                } else {
                                    Value::Float(acc.sum_f)
                                }
                            }
                            AggFunc::Min => acc.min.clone().unwrap_or(Value::Null),
                            AggFunc::Max => acc.max.clone().unwrap_or(Value::Null),
                            AggFunc::Avg => {
                                if acc.avg_n == 0 {
                                    Value::Null
                                } else {
                                    Value::Float(acc.avg_sum / acc.avg_n as f64)
                                }
                            }
                        });
                    }
                }
            }
            out.rows.push(row);
        }
        Ok(out)
    }
}
