//! Indexed predicate evaluation: compile a batch of per-query predicates
//! into a decision tree over the distinct interval bounds, so one tuple is
//! matched against all queries in logarithmically many comparisons. The
//! tree renders as a nested CASE expression.
//!
//! Predicates become intervals over each attribute's total order. An
//! interval endpoint is kept as a `Cut` — a position between domain values
//! — so open/closed bounds order correctly: the cut just below v sorts
//! before the cut just above v. Splits test `attr < v` or `attr <= v`
//! depending on which side of v the median cut lies.
//!
//! Disjunctions are handled by treating each disjunct as its own term that
//! reports the same query id; IN lists expand the same way. Atoms that
//! cannot be indexed (leading-wildcard LIKE) travel to the leaves as
//! residual per-query checks.
//!
//! Indexed attributes are assumed non-NULL: a NULL routes a CASE
//! expression to its ELSE branch, which would mis-classify bounded
//! intervals, so evaluation errors instead. Linear mode has no such
//! restriction.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::ir::{Atom, AtomArg, AtomOp, PredicateNf, QueryId};
use crate::value::{cmp_values, like_match, try_cmp, Value};

#[derive(Clone, Debug, PartialEq)]
pub enum PredIdxError {
    /// Nothing can be indexed; the caller should use linear evaluation.
    NoIndexableIntervals,
    MissingAttribute(String),
    NullAttribute(String),
    UnboundPredicate,
    TooManyTerms(usize),
}

impl fmt::Display for PredIdxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredIdxError::NoIndexableIntervals => {
                write!(f, "no indexable intervals; use linear predicate evaluation")
            }
            PredIdxError::MissingAttribute(a) => write!(f, "tuple is missing attribute {a}"),
            PredIdxError::NullAttribute(a) => {
                write!(f, "indexed attribute {a} is NULL; indexed evaluation requires non-null values")
            }
            PredIdxError::UnboundPredicate => write!(f, "predicate still contains placeholders"),
            PredIdxError::TooManyTerms(n) => write!(f, "predicate expands to {n} terms"),
        }
    }
}

impl core::error::Error for PredIdxError {}

/// Which side of a value a cut sits on. `Below v` separates `x < v` from
/// `x >= v`; `Above v` separates `x <= v` from `x > v`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum CutSide {
    Below,
    Above,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cut {
    pub value: Value,
    pub side: CutSide,
}

impl Cut {
    pub fn below(v: Value) -> Cut {
        Cut { value: v, side: CutSide::Below }
    }

    pub fn above(v: Value) -> Cut {
        Cut { value: v, side: CutSide::Above }
    }

    fn cmp_cut(&self, other: &Cut) -> Ordering {
        cmp_values(&self.value, &other.value).then(self.side.cmp(&other.side))
    }

    /// Is `x` on the left side of this cut?
    fn left_of(&self, x: &Value) -> Option<bool> {
        let ord = try_cmp(x, &self.value)?;
        Some(match self.side {
            CutSide::Below => ord == Ordering::Less,
            CutSide::Above => ord != Ordering::Greater,
        })
    }
}

/// Half-open region in cut space; `None` bounds are infinite. A value x
/// lies inside iff it is right of `lo` and left of `hi`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Interval {
    pub lo: Option<Cut>,
    pub hi: Option<Cut>,
}

impl Interval {
    pub fn full() -> Interval {
        Interval { lo: None, hi: None }
    }

    pub fn is_empty(&self) -> bool {
        match (&self.lo, &self.hi) {
            (Some(a), Some(b)) => a.cmp_cut(b) != Ordering::Less,
            _ => false,
        }
    }

    pub fn contains(&self, x: &Value) -> Option<bool> {
        if let Some(lo) = &self.lo {
            if lo.left_of(x)? {
                return Some(false);
            }
        }
        if let Some(hi) = &self.hi {
            if !hi.left_of(x)? {
                return Some(false);
            }
        }
        Some(true)
    }

    fn intersect(&self, other: &Interval) -> Interval {
        let lo = match (&self.lo, &other.lo) {
            (Some(a), Some(b)) => {
                Some(if a.cmp_cut(b) == Ordering::Less { b.clone() } else { a.clone() })
            }
            (Some(a), None) | (None, Some(a)) => Some(a.clone()),
            (None, None) => None,
        };
        let hi = match (&self.hi, &other.hi) {
            (Some(a), Some(b)) => {
                Some(if a.cmp_cut(b) == Ordering::Less { a.clone() } else { b.clone() })
            }
            (Some(a), None) | (None, Some(a)) => Some(a.clone()),
            (None, None) => None,
        };
        Interval { lo, hi }
    }
}

/// One indexable constraint: a query's interval on one attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryInterval {
    pub query: QueryId,
    pub attribute: String,
    pub interval: Interval,
}

/// One disjunct of one query, decomposed for the tree builder.
#[derive(Clone, Debug)]
struct Term {
    query: QueryId,
    /// Aligned with `IndexInput::attrs`; unconstrained attributes carry
    /// the full interval.
    intervals: Vec<Interval>,
    /// Non-indexable atoms of this disjunct, checked at the leaf.
    residual: Vec<Atom>,
}

#[derive(Clone, Debug, Default)]
pub struct IndexabilityReport {
    /// Per query: human-readable descriptions of indexable atoms.
    pub indexable: BTreeMap<u32, Vec<String>>,
    /// Per query: descriptions of atoms routed to linear fallback.
    pub non_indexable: BTreeMap<u32, Vec<String>>,
    /// Attribute order chosen (most distinct bounds first).
    pub attribute_order: Vec<String>,
}

/// Result of interval extraction, ready for tree building.
#[derive(Clone, Debug)]
pub struct IndexInput {
    attrs: Vec<String>,
    terms: Vec<Term>,
    batch_size: u32,
    pub report: IndexabilityReport,
}

impl IndexInput {
    /// Per-attribute interval lists (terms flattened), mainly for tests
    /// and bound counting.
    pub fn intervals(&self) -> Vec<QueryInterval> {
        let mut out = Vec::new();
        for t in &self.terms {
            for (a, iv) in self.attrs.iter().zip(&t.intervals) {
                if *iv != Interval::full() {
                    out.push(QueryInterval {
                        query: t.query,
                        attribute: a.clone(),
                        interval: iv.clone(),
                    });
                }
            }
        }
        out
    }

    pub fn attributes(&self) -> &[String] {
        &self.attrs
    }

    /// Number of distinct cut positions on one attribute.
    pub fn distinct_bounds(&self, attr: &str) -> usize {
        let Some(ai) = self.attrs.iter().position(|a| a == attr) else { return 0 };
        let mut cuts: Vec<Cut> = Vec::new();
        for t in &self.terms {
            for c in [&t.intervals[ai].lo, &t.intervals[ai].hi].into_iter().flatten() {
                cuts.push(c.clone());
            }
        }
        cuts.sort_by(Cut::cmp_cut);
        cuts.dedup();
        cuts.len()
    }

    pub fn has_indexable(&self) -> bool {
        self.terms.iter().any(|t| t.intervals.iter().any(|iv| *iv != Interval::full()))
    }
}

const MAX_TERMS_PER_QUERY: usize = 512;

/// Decompose per-query predicates into per-attribute intervals plus
/// residual atoms. Each disjunct (and each IN member) becomes its own
/// term carrying the query's id; a prefix LIKE becomes the half-open
/// string interval `[p, next(p))`.
pub fn to_intervals(preds: &[PredicateNf]) -> Result<IndexInput, PredIdxError> {
    let mut report = IndexabilityReport::default();
    // first pass: attribute universe with bound multiplicity
    let mut bound_cuts: BTreeMap<String, Vec<Cut>> = BTreeMap::new();
    for p in preds {
        if !p.is_bound() {
            return Err(PredIdxError::UnboundPredicate);
        }
        for atom in p.atoms() {
            if let Some(ivs) = atom_intervals(atom) {
                let cuts = bound_cuts.entry(atom.column.column.clone()).or_default();
                for iv in ivs {
                    for c in [&iv.lo, &iv.hi].into_iter().flatten() {
                        cuts.push(c.clone());
                    }
                }
            }
        }
    }
    let mut attrs: Vec<(String, usize)> = bound_cuts
        .into_iter()
        .map(|(a, mut cuts)| {
            cuts.sort_by(Cut::cmp_cut);
            cuts.dedup();
            (a, cuts.len())
        })
        .collect();
    attrs.sort_by(|(a, na), (b, nb)| nb.cmp(na).then(a.cmp(b)));
    let attrs: Vec<String> = attrs.into_iter().map(|(a, _)| a).collect();
    report.attribute_order = attrs.clone();

    // second pass: expand disjuncts into terms
    let mut terms = Vec::new();
    for (qi, p) in preds.iter().enumerate() {
        let query = QueryId(qi as u32 + 1);
        let mut query_terms = 0usize;
        for conj in &p.disjuncts {
            // start with one term; IN atoms multiply it
            let mut partial: Vec<Term> = alloc::vec![Term {
                query,
                intervals: alloc::vec![Interval::full(); attrs.len()],
                residual: Vec::new(),
            }];
            for atom in &conj.atoms {
                let desc = crate::ir::render_atom_with(&atom.column.column, atom);
                match atom_intervals(atom) {
                    Some(choices) => {
                        report.indexable.entry(query.0).or_default().push(desc);
                        let ai = attrs.iter().position(|a| *a == atom.column.column).unwrap();
                        let mut next = Vec::new();
                        for t in &partial {
                            for iv in &choices {
                                let merged = t.intervals[ai].intersect(iv);
                                if merged.is_empty() {
                                    continue;
                                }
                                let mut nt = t.clone();
                                nt.intervals[ai] = merged;
                                next.push(nt);
                            }
                        }
                        partial = next;
                    }
                    None => {
                        report.non_indexable.entry(query.0).or_default().push(desc);
                        for t in &mut partial {
                            t.residual.push(atom.clone());
                        }
                    }
                }
                if partial.is_empty() {
                    break; // unsatisfiable disjunct
                }
            }
            query_terms += partial.len();
            if query_terms > MAX_TERMS_PER_QUERY {
                return Err(PredIdxError::TooManyTerms(query_terms));
            }
            terms.extend(partial);
        }
    }
    // deduplicate report entries (the same atom text can repeat per term)
    for v in report.indexable.values_mut().chain(report.non_indexable.values_mut()) {
        v.sort();
        v.dedup();
    }
    Ok(IndexInput { attrs, terms, batch_size: preds.len() as u32, report })
}

/// Intervals equivalent to one atom, or `None` if it cannot be indexed.
/// IN lists yield one point interval per member.
fn atom_intervals(atom: &Atom) -> Option<Vec<Interval>> {
    let args: Vec<&Value> = atom
        .args
        .iter()
        .map(|a| match a {
            AtomArg::Const(v) => Some(v),
            AtomArg::Param(_) => None,
        })
        .collect::<Option<_>>()?;
    if args.iter().any(|v| v.is_null()) {
        return None; // NULL comparisons never match; keep as residual
    }
    let point = |v: &Value| Interval {
        lo: Some(Cut::below(v.clone())),
        hi: Some(Cut::above(v.clone())),
    };
    match atom.op {
        AtomOp::Eq => Some(alloc::vec![point(args[0])]),
        AtomOp::Lt => Some(alloc::vec![Interval { lo: None, hi: Some(Cut::below(args[0].clone())) }]),
        AtomOp::Le => Some(alloc::vec![Interval { lo: None, hi: Some(Cut::above(args[0].clone())) }]),
        AtomOp::Gt => Some(alloc::vec![Interval { lo: Some(Cut::above(args[0].clone())), hi: None }]),
        AtomOp::Ge => Some(alloc::vec![Interval { lo: Some(Cut::below(args[0].clone())), hi: None }]),
        AtomOp::Between => Some(alloc::vec![Interval {
            lo: Some(Cut::below(args[0].clone())),
            hi: Some(Cut::above(args[1].clone())),
        }]),
        AtomOp::In => Some(args.iter().map(|v| point(v)).collect()),
        AtomOp::Like => {
            let pattern = args[0].as_str()?;
            like_prefix_interval(pattern)
        }
    }
}

/// `LIKE 'p%'` (exactly one wildcard, at the end) maps to `[p, next(p))`;
/// a pattern without wildcards is an equality. Anything with a leading
/// wildcard or inner wildcards is not indexable.
fn like_prefix_interval(pattern: &str) -> Option<Vec<Interval>> {
    let wildcard_at = pattern.find(['%', '_']);
    match wildcard_at {
        None => Some(alloc::vec![Interval {
            lo: Some(Cut::below(Value::Str(pattern.to_string()))),
            hi: Some(Cut::above(Value::Str(pattern.to_string()))),
        }]),
        Some(i) => {
            if i == 0 || i + 1 != pattern.len() || !pattern.ends_with('%') {
                return None;
            }
            let prefix = &pattern[..i];
            let hi = next_string(prefix).map(|s| Cut::below(Value::Str(s)));
            Some(alloc::vec![Interval {
                lo: Some(Cut::below(Value::Str(prefix.to_string()))),
                hi,
            }])
        }
    }
}

/// Smallest string greater than every string with this prefix: increment
/// the final code point (skipping the surrogate gap). `None` when the
/// final char cannot be incremented, leaving the range open above.
fn next_string(prefix: &str) -> Option<String> {
    let mut chars: Vec<char> = prefix.chars().collect();
    let last = chars.pop()?;
    let mut code = last as u32 + 1;
    if (0xD800..=0xDFFF).contains(&code) {
        code = 0xE000;
    }
    let next = char::from_u32(code)?;
    chars.push(next);
    Some(chars.into_iter().collect())
}

// ---------------------------------------------------------------------------
// Tree construction
// ---------------------------------------------------------------------------

/// Residual checks of one query at a leaf: the query matches if any of
/// the conjunctions holds (its interval part is already proven by the
/// path).
#[derive(Clone, Debug, PartialEq)]
pub struct LeafCheck {
    pub query: QueryId,
    pub any_of: Vec<Vec<Atom>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum IndexNode {
    /// `attr < value` (or `<=` when `or_equal`); true goes left.
    Branch {
        attr: String,
        value: Value,
        or_equal: bool,
        on_true: Box<IndexNode>,
        on_false: Box<IndexNode>,
    },
    /// Queries certain to match every point of this region, plus
    /// conditional members awaiting residual checks.
    Leaf { members: Vec<QueryId>, checks: Vec<LeafCheck> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredicateIndexTree {
    pub root: IndexNode,
    pub attrs: Vec<String>,
    pub batch_size: u32,
}

/// Build the decision tree: split each region at the lower median of the
/// distinct interval bounds inside it, recurse until every surviving
/// interval covers the region, then continue with the next attribute.
pub fn build_index_tree(
    input: &IndexInput,
    attr_order: Option<&[String]>,
) -> Result<PredicateIndexTree, PredIdxError> {
    if !input.has_indexable() {
        return Err(PredIdxError::NoIndexableIntervals);
    }
    let attrs: Vec<String> = match attr_order {
        Some(order) => {
            let mut v: Vec<String> =
                order.iter().filter(|a| input.attrs.contains(a)).cloned().collect();
            for a in &input.attrs {
                if !v.contains(a) {
                    v.push(a.clone());
                }
            }
            v
        }
        None => input.attrs.clone(),
    };
    // re-align term intervals to the chosen order
    let terms: Vec<Term> = input
        .terms
        .iter()
        .map(|t| Term {
            query: t.query,
            intervals: attrs
                .iter()
                .map(|a| {
                    let i = input.attrs.iter().position(|x| x == a).unwrap();
                    t.intervals[i].clone()
                })
                .collect(),
            residual: t.residual.clone(),
        })
        .collect();
    let root = build_node(terms, &attrs, 0, Interval::full());
    Ok(PredicateIndexTree { root, attrs, batch_size: input.batch_size })
}

fn build_node(terms: Vec<Term>, attrs: &[String], ai: usize, region: Interval) -> IndexNode {
    if terms.is_empty() {
        return IndexNode::Leaf { members: Vec::new(), checks: Vec::new() };
    }
    if ai >= attrs.len() {
        return make_leaf(terms);
    }
    // distinct cuts strictly inside the region
    let mut cuts: Vec<Cut> = Vec::new();
    for t in &terms {
        for c in [&t.intervals[ai].lo, &t.intervals[ai].hi].into_iter().flatten() {
            let inside_lo = region.lo.as_ref().map(|lo| lo.cmp_cut(c) == Ordering::Less).unwrap_or(true);
            let inside_hi = region.hi.as_ref().map(|hi| c.cmp_cut(hi) == Ordering::Less).unwrap_or(true);
            if inside_lo && inside_hi {
                cuts.push(c.clone());
            }
        }
    }
    cuts.sort_by(Cut::cmp_cut);
    cuts.dedup();
    if cuts.is_empty() {
        // every interval covers this region: this attribute is decided
        return build_node(terms, attrs, ai + 1, Interval::full());
    }
    // lower median keeps splits deterministic on even counts
    let m = cuts[(cuts.len() - 1) / 2].clone();

    let clip = |hi_side: bool| -> Vec<Term> {
        terms
            .iter()
            .filter_map(|t| {
                let mut nt = t.clone();
                let iv = &mut nt.intervals[ai];
                if hi_side {
                    match &iv.lo {
                        Some(lo) if lo.cmp_cut(&m) != Ordering::Less => {}
                        _ => iv.lo = Some(m.clone()),
                    }
                } else {
                    match &iv.hi {
                        Some(hi) if hi.cmp_cut(&m) != Ordering::Greater => {}
                        _ => iv.hi = Some(m.clone()),
                    }
                }
                (!iv.is_empty()).then_some(nt)
            })
            .collect()
    };
    let left_terms = clip(false);
    let right_terms = clip(true);

    let left_region = Interval { lo: region.lo.clone(), hi: Some(m.clone()) };
    let right_region = Interval { lo: Some(m.clone()), hi: region.hi.clone() };
    let (value, or_equal) = match m.side {
        CutSide::Below => (m.value.clone(), false),
        CutSide::Above => (m.value.clone(), true),
    };
    IndexNode::Branch {
        attr: attrs[ai].clone(),
        value,
        or_equal,
        on_true: Box::new(build_node(left_terms, attrs, ai, left_region)),
        on_false: Box::new(build_node(right_terms, attrs, ai, right_region)),
    }
}

fn make_leaf(terms: Vec<Term>) -> IndexNode {
    let mut unconditional: BTreeSet<QueryId> = BTreeSet::new();
    let mut conditional: BTreeMap<QueryId, Vec<Vec<Atom>>> = BTreeMap::new();
    for t in terms {
        if t.residual.is_empty() {
            unconditional.insert(t.query);
        } else {
            conditional.entry(t.query).or_default().push(t.residual);
        }
    }
    let checks = conditional
        .into_iter()
        .filter(|(q, _)| !unconditional.contains(q))
        .map(|(query, any_of)| LeafCheck { query, any_of })
        .collect();
    IndexNode::Leaf { members: unconditional.into_iter().collect(), checks }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Evaluate the tree against one tuple (attribute name -> value). Returns
/// exactly the queries whose full predicate matches.
pub fn eval_tree(
    tree: &PredicateIndexTree,
    tuple: &BTreeMap<String, Value>,
) -> Result<Vec<QueryId>, PredIdxError> {
    let mut node = &tree.root;
    loop {
        match node {
            IndexNode::Branch { attr, value, or_equal, on_true, on_false } => {
                let v = tuple.get(attr).ok_or_else(|| PredIdxError::MissingAttribute(attr.clone()))?;
                if v.is_null() {
                    return Err(PredIdxError::NullAttribute(attr.clone()));
                }
                let ord = try_cmp(v, value)
                    .ok_or_else(|| PredIdxError::MissingAttribute(attr.clone()))?;
                let goes_left = match (ord, or_equal) {
                    (Ordering::Less, _) => true,
                    (Ordering::Equal, true) => true,
                    _ => false,
                };
                node = if goes_left { on_true } else { on_false };
            }
            IndexNode::Leaf { members, checks } => {
                let mut out: Vec<QueryId> = members.clone();
                for check in checks {
                    let hit = check.any_of.iter().any(|conj| {
                        conj.iter().all(|atom| eval_residual_atom(atom, tuple))
                    });
                    if hit {
                        out.push(check.query);
                    }
                }
                out.sort();
                out.dedup();
                return Ok(out);
            }
        }
    }
}

fn eval_residual_atom(atom: &Atom, tuple: &BTreeMap<String, Value>) -> bool {
    fn arg(atom: &Atom, i: usize) -> Option<&Value> {
        match atom.args.get(i)? {
            AtomArg::Const(v) => Some(v),
            AtomArg::Param(_) => None,
        }
    }
    let Some(v) = tuple.get(&atom.column.column) else { return false };
    let Some(first) = arg(atom, 0) else { return false };
    match atom.op {
        AtomOp::Eq => try_cmp(v, first) == Some(Ordering::Equal),
        AtomOp::Lt => try_cmp(v, first) == Some(Ordering::Less),
        AtomOp::Le => matches!(try_cmp(v, first), Some(Ordering::Less | Ordering::Equal)),
        AtomOp::Gt => try_cmp(v, first) == Some(Ordering::Greater),
        AtomOp::Ge => matches!(try_cmp(v, first), Some(Ordering::Greater | Ordering::Equal)),
        AtomOp::Between => {
            let Some(hi) = arg(atom, 1) else { return false };
            matches!(try_cmp(v, first), Some(Ordering::Greater | Ordering::Equal))
                && matches!(try_cmp(v, hi), Some(Ordering::Less | Ordering::Equal))
        }
        AtomOp::Like => match (v.as_str(), first.as_str()) {
            (Some(t), Some(p)) => like_match(t, p),
            _ => false,
        },
        AtomOp::In => (0..atom.args.len())
            .filter_map(|i| arg(atom, i))
            .any(|a| try_cmp(v, a) == Some(Ordering::Equal)),
    }
}

/// Linear reference evaluation of the same predicates, for equivalence
/// checks against the tree.
pub fn eval_linear(preds: &[PredicateNf], tuple: &BTreeMap<String, Value>) -> Vec<QueryId> {
    let mut out = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        let matched = p.disjuncts.iter().any(|conj| {
            conj.atoms.iter().all(|a| eval_residual_atom(a, tuple))
        });
        if matched {
            out.push(QueryId(i as u32 + 1));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Rendering and stats
// ---------------------------------------------------------------------------

/// Dialect-independent pieces needed to print the tree as SQL.
#[derive(Clone, Debug)]
pub struct RenderStyle {
    /// e.g. `ARRAY[` / `]`
    pub array_open: String,
    pub array_close: String,
    /// zero-removal wrapper for leaves with conditional members
    pub remove_fn: String,
    /// render leaves as integer bitmasks instead of arrays
    pub bitmask: bool,
    pub annotation_column: String,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            array_open: "ARRAY[".into(),
            array_close: "]".into(),
            remove_fn: "ARRAY_REMOVE".into(),
            bitmask: false,
            annotation_column: "query_set".into(),
        }
    }
}

/// Render the expression tree as a nested CASE expression, wrapped in
/// parentheses and aliased to the annotation column.
pub fn render_expr(tree: &PredicateIndexTree, style: &RenderStyle) -> String {
    let mut out = String::from("(");
    render_node(&tree.root, 0, style, &mut out);
    out.push_str(") AS ");
    out.push_str(&style.annotation_column);
    out
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("    ");
    }
}

fn render_node(node: &IndexNode, level: usize, style: &RenderStyle, out: &mut String) {
    match node {
        IndexNode::Leaf { .. } => {
            out.push_str(&render_leaf(node, style));
        }
        IndexNode::Branch { attr, value, or_equal, on_true, on_false } => {
            out.push_str("CASE WHEN ");
            out.push_str(attr);
            out.push_str(if *or_equal { " <= " } else { " < " });
            out.push_str(&value.render_sql());
            out.push_str(" THEN");
            if matches!(on_true.as_ref(), IndexNode::Leaf { .. }) {
                out.push(' ');
                out.push_str(&render_leaf(on_true, style));
            } else {
                out.push('\n');
                indent(out, level + 1);
                render_node(on_true, level + 1, style, out);
            }
            out.push('\n');
            indent(out, level);
            out.push_str("ELSE");
            if matches!(on_false.as_ref(), IndexNode::Leaf { .. }) {
                out.push(' ');
                out.push_str(&render_leaf(on_false, style));
                out.push_str(" END");
            } else {
                out.push('\n');
                indent(out, level + 1);
                render_node(on_false, level + 1, style, out);
                out.push('\n');
                indent(out, level);
                out.push_str("END");
            }
        }
    }
}

fn render_leaf(node: &IndexNode, style: &RenderStyle) -> String {
    let IndexNode::Leaf { members, checks } = node else { unreachable!() };
    if style.bitmask {
        let base: u64 = members.iter().fold(0, |acc, q| acc | (1 << (q.0 - 1)));
        if checks.is_empty() {
            return alloc::format!("{base}");
        }
        let mut parts = alloc::vec![alloc::format!("{base}")];
        for c in checks {
            parts.push(alloc::format!(
                "CASE WHEN {} THEN {} ELSE 0 END",
                render_check_cond(c),
                1u64 << (c.query.0 - 1)
            ));
        }
        return alloc::format!("({})", parts.join(" + "));
    }
    if checks.is_empty() {
        let ids: Vec<String> = members.iter().map(|q| alloc::format!("{}", q.0)).collect();
        return alloc::format!("{}{}{}", style.array_open, ids.join(","), style.array_close);
    }
    let mut items: Vec<String> = members.iter().map(|q| alloc::format!("{}", q.0)).collect();
    for c in checks {
        items.push(alloc::format!(
            "CASE WHEN {} THEN {} ELSE 0 END",
            render_check_cond(c),
            c.query.0
        ));
    }
    alloc::format!(
        "{}({}{}{}, 0)",
        style.remove_fn,
        style.array_open,
        items.join(","),
        style.array_close
    )
}

fn render_check_cond(check: &LeafCheck) -> String {
    let conjs: Vec<String> = check
        .any_of
        .iter()
        .map(|conj| {
            let parts: Vec<String> = conj
                .iter()
                .map(|a| crate::ir::render_atom_with(&a.column.column, a))
                .collect();
            parts.join(" AND ")
        })
        .collect();
    if conjs.len() == 1 {
        conjs.into_iter().next().unwrap()
    } else {
        conjs.iter().map(|c| alloc::format!("({c})")).collect::<Vec<_>>().join(" OR ")
    }
}

/// Indented structural dump, one node per line, for golden-file tests.
pub fn dump_tree(tree: &PredicateIndexTree) -> String {
    fn go(node: &IndexNode, level: usize, out: &mut String) {
        indent(out, level);
        match node {
            IndexNode::Branch { attr, value, or_equal, on_true, on_false } => {
                out.push_str(&alloc::format!(
                    "branch {attr} {} {}\n",
                    if *or_equal { "<=" } else { "<" },
                    value.render_sql()
                ));
                go(on_true, level + 1, out);
                go(on_false, level + 1, out);
            }
            IndexNode::Leaf { members, checks } => {
                let ids: Vec<String> = members.iter().map(|q| alloc::format!("{}", q.0)).collect();
                out.push_str(&alloc::format!("leaf [{}]", ids.join(",")));
                if !checks.is_empty() {
                    let cs: Vec<String> =
                        checks.iter().map(|c| alloc::format!("{}?", c.query.0)).collect();
                    out.push_str(&alloc::format!(" checks [{}]", cs.join(",")));
                }
                out.push('\n');
            }
        }
    }
    let mut out = String::new();
    go(&tree.root, 0, &mut out);
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeStats {
    /// Maximum number of branch comparisons on any root-leaf path.
    pub max_comparisons: usize,
    pub node_count: usize,
    /// Byte length of the rendered expression under the given style.
    pub estimated_sql_bytes: usize,
}

pub fn tree_stats(tree: &PredicateIndexTree, style: &RenderStyle) -> TreeStats {
    fn walk(node: &IndexNode) -> (usize, usize) {
        match node {
            IndexNode::Leaf { .. } => (0, 1),
            IndexNode::Branch { on_true, on_false, .. } => {
                let (dt, nt) = walk(on_true);
                let (df, nf) = walk(on_false);
                (1 + dt.max(df), 1 + nt + nf)
            }
        }
    }
    let (max_comparisons, node_count) = walk(&tree.root);
    TreeStats { max_comparisons, node_count, estimated_sql_bytes: render_expr(tree, style).len() }
}
