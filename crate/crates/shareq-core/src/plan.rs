//! Shared plan construction and execution scripting.
//!
//! A [`SharedPlanDag`] wires shared operators over a batch: one shared
//! scan per base table (merging every member's pushed predicate), shared
//! joins along the common join edges, a residual shared selection for
//! predicates that cannot be pushed below the joins, then unnest/group,
//! projection, and order/limit. A global plan covers several templates at
//! once by unifying identical scan/join subtrees, which is where nodes
//! with multiple consumers appear.
//!
//! Engines execute tree-shaped statements, so [`split_dag`] converts the
//! DAG into an [`ExecutionScript`]: each multi-consumer node is either
//! duplicated into its consumers or materialized into a temp table that
//! later steps re-read. Materialized intermediates never carry the
//! annotation column; readers re-derive it with a shared scan over the
//! per-query recompute predicates, so reading the intermediate stays as
//! cheap as the stripped data.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::cost::TableStats;
use crate::dq::{self, AnnotatedRelation, AnnotationKind, DqError, JoinOn, SetEncoding};
use crate::ir::{
    AggCall, ColRef, Conjunction, JoinCmp, PredicateNf, Projection, QueryBatch, QueryId, QuerySpec,
};
use crate::table::{Column, Database, Table};
use crate::util::Fnv64;

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum PlanError {
    IncompatibleMembers(String),
    CannotMaterialize(String),
    Eval(DqError),
    Invalid(String),
}

impl fmt::Display for PlanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanError::IncompatibleMembers(m) => {
                write!(f, "batch members have incompatible structure: {m}")
            }
            PlanError::CannotMaterialize(m) => write!(f, "cannot materialize: {m}"),
            PlanError::Eval(e) => write!(f, "{e}"),
            PlanError::Invalid(m) => write!(f, "{m}"),
        }
    }
}

impl core::error::Error for PlanError {}

impl From<DqError> for PlanError {
    fn from(e: DqError) -> Self {
        PlanError::Eval(e)
    }
}

/// One operator of a shared plan. Children are arena indices.
#[derive(Clone, Debug, PartialEq)]
pub enum OpNode {
    /// Shared scan; `preds` is indexed by query id - 1 over the whole
    /// batch (`FALSE` for members that do not read this table). `columns`
    /// prunes the output; `None` keeps every table column.
    Scan { table: String, temp: bool, columns: Option<Vec<String>>, preds: Vec<PredicateNf> },
    /// Residual shared selection for predicates that span tables.
    Select { input: NodeId, preds: Vec<PredicateNf> },
    /// Narrow annotations to a member subset (global plans).
    Restrict { input: NodeId, members: Vec<QueryId> },
    Join { left: NodeId, right: NodeId, on: Vec<JoinOn> },
    Unnest { input: NodeId },
    Group { input: NodeId, keys: Vec<String>, aggs: Vec<(AggCall, String)> },
    /// Rename/reorder data columns: (source, alias) pairs.
    Project { input: NodeId, columns: Vec<(String, String)> },
    OrderLimit { input: NodeId, ordering: Vec<(String, bool)>, limit: Option<u64> },
}

impl OpNode {
    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            OpNode::Scan { .. } => Vec::new(),
            OpNode::Select { input, .. }
            | OpNode::Restrict { input, .. }
            | OpNode::Unnest { input }
            | OpNode::Group { input, .. }
            | OpNode::Project { input, .. }
            | OpNode::OrderLimit { input, .. } => alloc::vec![*input],
            OpNode::Join { left, right, .. } => alloc::vec![*left, *right],
        }
    }
}

/// A result root: which queries it serves and its output column names.
#[derive(Clone, Debug, PartialEq)]
pub struct Sink {
    pub node: NodeId,
    pub label: String,
    pub members: Vec<QueryId>,
    pub output: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SharedPlanDag {
    pub nodes: Vec<OpNode>,
    pub sinks: Vec<Sink>,
    pub batch: QueryBatch,
    pub encoding: SetEncoding,
}

// ---------------------------------------------------------------------------
// Predicate pushdown
// ---------------------------------------------------------------------------

/// Per-table relaxation of a query's predicate, and whether the full
/// predicate must be re-checked after the joins. A single conjunction
/// splits exactly; a disjunction confined to one table pushes verbatim;
/// a disjunction spanning tables pushes per-table necessary conditions
/// and keeps the full predicate as a residual.
pub(crate) fn push_predicates(spec: &QuerySpec) -> (BTreeMap<String, PredicateNf>, bool) {
    let mut pushed: BTreeMap<String, PredicateNf> = BTreeMap::new();
    let single_conjunction = spec.predicate.disjuncts.len() <= 1;
    let mut aliases_used: BTreeSet<&str> = BTreeSet::new();
    for conj in &spec.predicate.disjuncts {
        for atom in &conj.atoms {
            aliases_used.insert(&atom.column.table);
        }
    }
    let single_alias = aliases_used.len() <= 1;

    for b in &spec.base {
        let alias = &b.alias;
        if single_conjunction {
            let atoms: Vec<_> = spec
                .predicate
                .disjuncts
                .first()
                .map(|c| c.atoms.iter().filter(|a| &a.column.table == alias).cloned().collect())
                .unwrap_or_default();
            let nf = if spec.predicate.is_false() {
                PredicateNf::always_false()
            } else {
                PredicateNf { disjuncts: alloc::vec![Conjunction { atoms }] }
            };
            pushed.insert(alias.clone(), nf);
        } else if single_alias && aliases_used.contains(alias.as_str()) {
            pushed.insert(alias.clone(), spec.predicate.clone());
        } else {
            let mut any_empty = false;
            let mut disjuncts = Vec::new();
            for conj in &spec.predicate.disjuncts {
                let atoms: Vec<_> =
                    conj.atoms.iter().filter(|a| &a.column.table == alias).cloned().collect();
                if atoms.is_empty() {
                    any_empty = true;
                } else {
                    disjuncts.push(Conjunction { atoms });
                }
            }
            let nf = if any_empty || disjuncts.is_empty() {
                PredicateNf::always_true()
            } else {
                PredicateNf { disjuncts }
            };
            pushed.insert(alias.clone(), nf);
        }
    }
    let residual = !single_conjunction && !single_alias;
    (pushed, residual)
}

fn group_column_needs(spec: &QuerySpec, residual: bool) -> BTreeMap<String, BTreeSet<String>> {
    let mut needs: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut add = |c: &ColRef| {
        needs.entry(c.table.clone()).or_default().insert(c.column.clone());
    };
    for p in &spec.projections {
        match p {
            Projection::Column { col, .. } => add(col),
            Projection::Aggregate { agg, .. } => {
                if let Some(arg) = &agg.arg {
                    let mut cols = Vec::new();
                    arg.columns(&mut cols);
                    for c in &cols {
                        add(c);
                    }
                }
            }
        }
    }
    if let Some(g) = &spec.grouping {
        for k in &g.keys {
            add(k);
        }
    }
    for e in &spec.joins {
        add(&e.left);
        add(&e.right);
    }
    if residual {
        for atom in spec.predicate.atoms() {
            add(&atom.column);
        }
    }
    needs
}

// ---------------------------------------------------------------------------
// Plan construction
// ---------------------------------------------------------------------------

/// Build the shared plan for one per-template batch: every member must
/// share base relations and join structure.
pub fn build_shared_plan(
    batch: &QueryBatch,
    encoding: SetEncoding,
) -> Result<SharedPlanDag, PlanError> {
    if batch.is_empty() {
        return Err(PlanError::Invalid("empty batch".into()));
    }
    let mut builder = Builder::new(batch.clone(), encoding);
    let members: Vec<(QueryId, &QuerySpec)> =
        batch.members.iter().map(|(q, s)| (*q, s)).collect();
    let sink = builder.build_group("batch", &members)?;
    builder.dag.sinks.push(sink);
    Ok(builder.dag)
}

/// Build one DAG covering several per-template batches. Query ids are
/// remapped into a single dense global space; the returned mapping lists
/// (source batch id, member id, global id). Identical scan/join subtrees
/// across templates unify, so shared nodes gain multiple consumers.
pub fn build_global_plan(
    batches: &[QueryBatch],
    encoding: SetEncoding,
) -> Result<(SharedPlanDag, Vec<(u64, QueryId, QueryId)>), PlanError> {
    if batches.is_empty() {
        return Err(PlanError::Invalid("no batches".into()));
    }
    let mut mapping = Vec::new();
    let mut global_members = Vec::new();
    let mut groups: Vec<(String, Vec<(QueryId, QuerySpec)>)> = Vec::new();
    for b in batches {
        let mut group = Vec::new();
        for (q, spec) in &b.members {
            let global = QueryId(global_members.len() as u32 + 1);
            mapping.push((b.batch_id, *q, global));
            global_members.push((global, spec.clone()));
            group.push((global, spec.clone()));
        }
        groups.push((alloc::format!("batch_{}", b.batch_id), group));
    }
    let global_batch = QueryBatch { batch_id: 0, template_id: None, members: global_members };
    let mut builder = Builder::new(global_batch, encoding);
    for (label, group) in &groups {
        let refs: Vec<(QueryId, &QuerySpec)> = group.iter().map(|(g, s)| (*g, s)).collect();
        let sink = builder.build_group(label, &refs)?;
        builder.dag.sinks.push(sink);
    }
    Ok((builder.dag, mapping))
}

struct Builder {
    dag: SharedPlanDag,
    /// hash-consing table so identical scan/join subtrees unify
    interned: BTreeMap<String, NodeId>,
}

impl Builder {
    fn new(batch: QueryBatch, encoding: SetEncoding) -> Builder {
        Builder {
            dag: SharedPlanDag { nodes: Vec::new(), sinks: Vec::new(), batch, encoding },
            interned: BTreeMap::new(),
        }
    }

    fn batch_len(&self) -> usize {
        self.dag.batch.len()
    }

    fn push(&mut self, node: OpNode) -> NodeId {
        self.dag.nodes.push(node);
        self.dag.nodes.len() - 1
    }

    fn build_group(
        &mut self,
        label: &str,
        members: &[(QueryId, &QuerySpec)],
    ) -> Result<Sink, PlanError> {
        let first = members[0].1;
        for (q, spec) in members {
            if spec.base.iter().map(|b| (&b.table, &b.alias)).collect::<Vec<_>>()
                != first.base.iter().map(|b| (&b.table, &b.alias)).collect::<Vec<_>>()
                || spec.joins != first.joins
            {
                return Err(PlanError::IncompatibleMembers(alloc::format!(
                    "query {q} differs in tables or join structure; regroup per template"
                )));
            }
            if !spec.is_bound() {
                return Err(PlanError::Invalid(alloc::format!(
                    "query {q} has unbound placeholders"
                )));
            }
        }
        let n = self.batch_len();

        // pushed predicates, residual flags, and column needs per member
        let mut pushed: BTreeMap<String, Vec<(QueryId, PredicateNf)>> = BTreeMap::new();
        let mut residual_any = false;
        let mut residual_preds: Vec<PredicateNf> = alloc::vec![PredicateNf::always_true(); n];
        let mut needs: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (q, spec) in members {
            let (per_table, residual) = push_predicates(spec);
            for (alias, nf) in per_table {
                pushed.entry(alias).or_default().push((*q, nf));
            }
            if residual {
                residual_any = true;
                residual_preds[q.0 as usize - 1] = spec.predicate.clone();
            }
            for (alias, cols) in group_column_needs(spec, residual) {
                needs.entry(alias).or_default().extend(cols);
            }
        }

        // one shared scan per base binding, interned by (table, occurrence)
        let select_star = first.select_star;
        let mut occurrence: BTreeMap<&str, usize> = BTreeMap::new();
        let mut scan_of_alias: BTreeMap<&str, NodeId> = BTreeMap::new();
        for b in &first.base {
            let occ = occurrence.entry(b.table.as_str()).or_insert(0);
            let key = alloc::format!("scan:{}:{}", b.table, occ);
            *occ += 1;
            let columns: Option<Vec<String>> = if select_star {
                None
            } else {
                Some(
                    needs
                        .get(&b.alias)
                        .map(|s| s.iter().cloned().collect())
                        .unwrap_or_default(),
                )
            };
            let id = match self.interned.get(&key).copied() {
                Some(id) => {
                    let OpNode::Scan { columns: c0, preds, .. } = &mut self.dag.nodes[id] else {
                        unreachable!()
                    };
                    match columns {
                        None => *c0 = None,
                        Some(new_cols) => {
                            if let Some(existing) = c0 {
                                for c in new_cols {
                                    if !existing.contains(&c) {
                                        existing.push(c);
                                    }
                                }
                                existing.sort();
                            }
                        }
                    }
                    for (q, nf) in pushed.get(&b.alias).into_iter().flatten() {
                        preds[q.0 as usize - 1] = nf.clone();
                    }
                    id
                }
                None => {
                    let mut preds = alloc::vec![PredicateNf::always_false(); n];
                    for (q, nf) in pushed.get(&b.alias).into_iter().flatten() {
                        preds[q.0 as usize - 1] = nf.clone();
                    }
                    let node = OpNode::Scan {
                        table: b.table.clone(),
                        temp: false,
                        columns: columns.map(|mut v| {
                            v.sort();
                            v
                        }),
                        preds,
                    };
                    let id = self.push(node);
                    self.interned.insert(key, id);
                    id
                }
            };
            scan_of_alias.insert(b.alias.as_str(), id);
        }

        // left-deep joins along the template's edges
        let mut current = *scan_of_alias.get(first.base[0].alias.as_str()).unwrap();
        let mut in_scope: Vec<&str> = alloc::vec![first.base[0].alias.as_str()];
        for b in first.base.iter().skip(1) {
            let right = *scan_of_alias.get(b.alias.as_str()).unwrap();
            let on: Vec<JoinOn> = first
                .joins
                .iter()
                .filter_map(|e| {
                    let l_in = in_scope.contains(&e.left.table.as_str());
                    let r_in = in_scope.contains(&e.right.table.as_str());
                    if l_in && e.right.table == b.alias {
                        Some(JoinOn {
                            left_column: e.left.column.clone(),
                            right_column: e.right.column.clone(),
                            cmp: e.cmp,
                        })
                    } else if r_in && e.left.table == b.alias {
                        Some(JoinOn {
                            left_column: e.right.column.clone(),
                            right_column: e.left.column.clone(),
                            cmp: flip(e.cmp),
                        })
                    } else {
                        None
                    }
                })
                .collect();
            if on.is_empty() {
                return Err(PlanError::IncompatibleMembers(alloc::format!(
                    "no join edge connects {} to the tables before it",
                    b.alias
                )));
            }
            let key = alloc::format!("join:{current}:{right}:{on:?}");
            current = match self.interned.get(&key).copied() {
                Some(id) => id,
                None => {
                    let id = self.push(OpNode::Join { left: current, right, on });
                    self.interned.insert(key, id);
                    id
                }
            };
            in_scope.push(b.alias.as_str());
        }

        // group-local tail: restrict, residual select, group, project, order
        let member_ids: Vec<QueryId> = members.iter().map(|(q, _)| *q).collect();
        if member_ids.len() < n {
            current = self.push(OpNode::Restrict { input: current, members: member_ids.clone() });
        }
        if residual_any {
            current = self.push(OpNode::Select { input: current, preds: residual_preds });
        }

        let mut kind = AnnotationKind::Set;
        if let Some(g) = &first.grouping {
            if kind == AnnotationKind::Set {
                current = self.push(OpNode::Unnest { input: current });
                kind = AnnotationKind::Atomic;
            }
            let keys: Vec<String> = g.keys.iter().map(|k| k.column.clone()).collect();
            let aggs: Vec<(AggCall, String)> = first
                .projections
                .iter()
                .filter_map(|p| match p {
                    Projection::Aggregate { agg, alias } => Some((agg.clone(), alias.clone())),
                    _ => None,
                })
                .collect();
            current =
                self.push(OpNode::Group { input: current, keys: keys.clone(), aggs: aggs.clone() });

            let group_out: Vec<String> =
                keys.iter().cloned().chain(aggs.iter().map(|(_, a)| a.clone())).collect();
            let desired: Vec<(String, String)> = first
                .projections
                .iter()
                .map(|p| match p {
                    Projection::Column { col, alias } => (col.column.clone(), alias.clone()),
                    Projection::Aggregate { alias, .. } => (alias.clone(), alias.clone()),
                })
                .collect();
            let identity = desired.len() == group_out.len()
                && desired.iter().zip(&group_out).all(|((s, a), g)| s == g && a == g);
            if !identity {
                current = self.push(OpNode::Project { input: current, columns: desired });
            }
        } else if !select_star {
            let desired: Vec<(String, String)> = first
                .projections
                .iter()
                .map(|p| match p {
                    Projection::Column { col, alias } => (col.column.clone(), alias.clone()),
                    Projection::Aggregate { alias, .. } => (alias.clone(), alias.clone()),
                })
                .collect();
            current = self.push(OpNode::Project { input: current, columns: desired });
        }

        if !first.ordering.is_empty() || first.limit.is_some() {
            if kind == AnnotationKind::Set {
                current = self.push(OpNode::Unnest { input: current });
            }
            let ordering: Vec<(String, bool)> =
                first.ordering.iter().map(|o| (o.name.clone(), o.desc)).collect();
            current =
                self.push(OpNode::OrderLimit { input: current, ordering, limit: first.limit });
        }

        let output: Vec<String> =
            first.projections.iter().map(|p| p.alias().to_string()).collect();
        Ok(Sink { node: current, label: label.to_string(), members: member_ids, output })
    }
}

fn flip(cmp: JoinCmp) -> JoinCmp {
    match cmp {
        JoinCmp::Eq => JoinCmp::Eq,
        JoinCmp::Lt => JoinCmp::Gt,
        JoinCmp::Le => JoinCmp::Ge,
        JoinCmp::Gt => JoinCmp::Lt,
        JoinCmp::Ge => JoinCmp::Le,
    }
}

// ---------------------------------------------------------------------------
// Native evaluation (ground truth)
// ---------------------------------------------------------------------------

/// Evaluate the tree/DAG rooted at `id` with shared-operator semantics.
pub fn eval_node(
    nodes: &[OpNode],
    id: NodeId,
    db: &Database,
    temps: &BTreeMap<String, Table>,
    encoding: SetEncoding,
    batch_size: u32,
) -> Result<AnnotatedRelation, PlanError> {
    let mut memo: Vec<Option<AnnotatedRelation>> = alloc::vec![None; nodes.len()];
    eval_memo(nodes, id, db, temps, encoding, batch_size, &mut memo)
}

fn eval_memo(
    nodes: &[OpNode],
    id: NodeId,
    db: &Database,
    temps: &BTreeMap<String, Table>,
    encoding: SetEncoding,
    batch_size: u32,
    memo: &mut Vec<Option<AnnotatedRelation>>,
) -> Result<AnnotatedRelation, PlanError> {
    if let Some(r) = &memo[id] {
        return Ok(r.clone());
    }
    let result = match &nodes[id] {
        OpNode::Scan { table, temp, columns, preds } => {
            let t = if *temp { temps.get(table) } else { db.get(table) }
                .ok_or_else(|| PlanError::Invalid(alloc::format!("missing table {table}")))?;
            let mut rel = dq::shared_scan(t, preds, encoding)?;
            rel.batch_size = batch_size;
            if let Some(cols) = columns {
                let pairs: Vec<(String, String)> =
                    cols.iter().map(|c| (c.clone(), c.clone())).collect();
                rel = project_rel(&rel, &pairs)?;
            }
            rel
        }
        OpNode::Select { input, preds } => {
            let rel = eval_memo(nodes, *input, db, temps, encoding, batch_size, memo)?;
            dq::shared_select(&rel, preds)?
        }
        OpNode::Restrict { input, members } => {
            let rel = eval_memo(nodes, *input, db, temps, encoding, batch_size, memo)?;
            dq::annotation_restrict(&rel, members)?
        }
        OpNode::Join { left, right, on } => {
            let l = eval_memo(nodes, *left, db, temps, encoding, batch_size, memo)?;
            let r = eval_memo(nodes, *right, db, temps, encoding, batch_size, memo)?;
            dq::shared_join(&l, &r, on)?
        }
        OpNode::Unnest { input } => {
            let rel = eval_memo(nodes, *input, db, temps, encoding, batch_size, memo)?;
            dq::unnest_query_set(&rel)?
        }
        OpNode::Group { input, keys, aggs } => {
            let rel = eval_memo(nodes, *input, db, temps, encoding, batch_size, memo)?;
            dq::shared_group_by(&rel, keys, aggs)?
        }
        OpNode::Project { input, columns } => {
            let rel = eval_memo(nodes, *input, db, temps, encoding, batch_size, memo)?;
            project_rel(&rel, columns)?
        }
        OpNode::OrderLimit { input, ordering, limit } => {
            let rel = eval_memo(nodes, *input, db, temps, encoding, batch_size, memo)?;
            dq::shared_order_limit(&rel, ordering, *limit)?
        }
    };
    memo[id] = Some(result.clone());
    Ok(result)
}

fn project_rel(
    rel: &AnnotatedRelation,
    columns: &[(String, String)],
) -> Result<AnnotatedRelation, PlanError> {
    let idx: Vec<usize> = columns
        .iter()
        .map(|(src, _)| {
            rel.table
                .column_index(src)
                .ok_or_else(|| PlanError::Invalid(alloc::format!("unknown column {src}")))
        })
        .collect::<Result<_, _>>()?;
    let cols: Vec<Column> = columns
        .iter()
        .zip(&idx)
        .map(|((_, alias), &i)| Column { name: alias.clone(), ty: rel.table.columns[i].ty })
        .collect();
    let mut out = Table::new(cols);
    for row in &rel.table.rows {
        out.rows.push(idx.iter().map(|&i| row[i].clone()).collect());
    }
    Ok(AnnotatedRelation {
        table: out,
        anns: rel.anns.clone(),
        kind: rel.kind,
        batch_size: rel.batch_size,
    })
}

/// Evaluate every sink of a DAG natively.
pub fn eval_dag(
    dag: &SharedPlanDag,
    db: &Database,
) -> Result<BTreeMap<String, AnnotatedRelation>, PlanError> {
    let temps = BTreeMap::new();
    let mut out = BTreeMap::new();
    for sink in &dag.sinks {
        let rel =
            eval_node(&dag.nodes, sink.node, db, &temps, dag.encoding, dag.batch.len() as u32)?;
        out.insert(sink.label.clone(), rel);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// DAG -> tree splitting
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitPolicy {
    /// Materialize when estimated output bytes x (consumers - 1) exceeds
    /// the estimated bytes to recompute the subtree.
    Heuristic,
    AlwaysDuplicate,
    AlwaysMaterialize,
}

#[derive(Clone, Debug)]
pub struct SplitConfig {
    pub policy: SplitPolicy,
    /// Multiplier on the recompute side of the heuristic comparison.
    pub materialize_factor: f64,
    /// Per-query selectivity assumed for row estimates.
    pub assumed_selectivity: f64,
    /// Whether the executing dialect can read back its own materialized
    /// output; when false, any materialization decision is an error.
    pub can_materialize: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            policy: SplitPolicy::Heuristic,
            materialize_factor: 1.0,
            assumed_selectivity: 0.05,
            can_materialize: true,
        }
    }
}

/// A tree-shaped plan: a private arena in which every node has exactly
/// one consumer.
#[derive(Clone, Debug, PartialEq)]
pub struct TreePlan {
    pub nodes: Vec<OpNode>,
    pub root: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    /// Execute the tree, drop the annotation column, store as `name`.
    Materialize { name: String, plan: TreePlan, columns: Vec<String> },
    /// Execute the tree and demux it for the sink's members.
    Run { sink: Sink, plan: TreePlan },
}

impl Step {
    pub fn plan(&self) -> &TreePlan {
        match self {
            Step::Materialize { plan, .. } | Step::Run { plan, .. } => plan,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ExecutionScript {
    pub steps: Vec<Step>,
    /// `deps[i]` lists step indices that must complete before step i.
    pub deps: Vec<Vec<usize>>,
}

struct NodeEstimate {
    rows: f64,
    bytes: f64,
    /// bytes read from base tables to recompute this subtree
    recompute_bytes: f64,
}

fn estimate_nodes(dag: &SharedPlanDag, stats: &TableStats, cfg: &SplitConfig) -> Vec<NodeEstimate> {
    let n_queries = dag.batch.len().max(1) as u32;
    let combined =
        crate::cost::combined_selectivity(cfg.assumed_selectivity, n_queries).unwrap_or(1.0);
    let mut out: Vec<NodeEstimate> = Vec::with_capacity(dag.nodes.len());
    for node in &dag.nodes {
        let est = match node {
            OpNode::Scan { table, columns, .. } => {
                let (rows, width, total) = match stats.table(table) {
                    Some(t) => {
                        let width: u64 = match columns {
                            Some(cols) => cols.iter().filter_map(|c| t.column_width(c)).sum(),
                            None => t.total_width(),
                        };
                        (t.rows as f64, width.max(1) as f64, (t.rows * t.total_width()) as f64)
                    }
                    None => (1000.0, 16.0, 16000.0),
                };
                let out_rows = rows * combined;
                NodeEstimate { rows: out_rows, bytes: out_rows * width, recompute_bytes: total }
            }
            OpNode::Select { input, .. } | OpNode::Restrict { input, .. } => {
                let e = &out[*input];
                NodeEstimate { rows: e.rows, bytes: e.bytes, recompute_bytes: e.recompute_bytes }
            }
            OpNode::Join { left, right, .. } => {
                let (l, r) = (&out[*left], &out[*right]);
                let rows = l.rows.max(r.rows);
                let width = (l.bytes / l.rows.max(1.0)) + (r.bytes / r.rows.max(1.0));
                NodeEstimate {
                    rows,
                    bytes: rows * width,
                    recompute_bytes: l.recompute_bytes + r.recompute_bytes,
                }
            }
            OpNode::Unnest { input } => {
                let e = &out[*input];
                let factor = 1.0 + (n_queries as f64 - 1.0) * cfg.assumed_selectivity;
                NodeEstimate {
                    rows: e.rows * factor,
                    bytes: e.bytes * factor,
                    recompute_bytes: e.recompute_bytes,
                }
            }
            OpNode::Group { input, .. } => {
                let e = &out[*input];
                let rows = e.rows.min(n_queries as f64 * 100.0);
                NodeEstimate { rows, bytes: rows * 16.0, recompute_bytes: e.recompute_bytes }
            }
            OpNode::Project { input, .. } | OpNode::OrderLimit { input, .. } => {
                let e = &out[*input];
                NodeEstimate { rows: e.rows, bytes: e.bytes, recompute_bytes: e.recompute_bytes }
            }
        };
        out.push(est);
    }
    out
}

/// Split a DAG into an executable script under the given policy.
pub fn split_dag(
    dag: &SharedPlanDag,
    stats: &TableStats,
    cfg: &SplitConfig,
) -> Result<ExecutionScript, PlanError> {
    // consumer counts over sink-reachable edges
    let mut consumers: Vec<usize> = alloc::vec![0; dag.nodes.len()];
    let mut reachable: BTreeSet<NodeId> = BTreeSet::new();
    let mut stack: Vec<NodeId> = dag.sinks.iter().map(|s| s.node).collect();
    for s in &dag.sinks {
        consumers[s.node] += 1;
    }
    while let Some(id) = stack.pop() {
        if !reachable.insert(id) {
            continue;
        }
        for child in dag.nodes[id].inputs() {
            consumers[child] += 1;
            stack.push(child);
        }
    }

    let estimates = estimate_nodes(dag, stats, cfg);
    let mut materialize: BTreeSet<NodeId> = BTreeSet::new();
    for &id in &reachable {
        if consumers[id] < 2 {
            continue;
        }
        let decide = match cfg.policy {
            SplitPolicy::AlwaysDuplicate => false,
            SplitPolicy::AlwaysMaterialize => true,
            SplitPolicy::Heuristic => {
                let e = &estimates[id];
                e.bytes * (consumers[id] as f64 - 1.0)
                    > cfg.materialize_factor * e.recompute_bytes
            }
        };
        if decide {
            if !cfg.can_materialize {
                return Err(PlanError::CannotMaterialize(
                    "the selected dialect cannot read back its own materialized output".into(),
                ));
            }
            materialize.insert(id);
        }
    }

    // materialize steps, children before parents
    fn topo(
        nodes: &[OpNode],
        id: NodeId,
        materialize: &BTreeSet<NodeId>,
        seen: &mut BTreeSet<NodeId>,
        order: &mut Vec<NodeId>,
    ) {
        for child in nodes[id].inputs() {
            topo(nodes, child, materialize, seen, order);
        }
        if materialize.contains(&id) && seen.insert(id) {
            order.push(id);
        }
    }
    let mut order: Vec<NodeId> = Vec::new();
    let mut seen = BTreeSet::new();
    for s in &dag.sinks {
        topo(&dag.nodes, s.node, &materialize, &mut seen, &mut order);
    }

    let mut script = ExecutionScript::default();
    let mut temp_step: BTreeMap<NodeId, (usize, String)> = BTreeMap::new();
    for id in order {
        let (plan, used_temps) = extract_tree(dag, id, &temp_step, true)?;
        let name = alloc::format!("tmp_{:016x}", subtree_hash(&plan));
        let columns = tree_output_columns(&plan);
        let deps = used_temps.iter().map(|t| temp_step[t].0).collect();
        script.steps.push(Step::Materialize { name: name.clone(), plan, columns });
        script.deps.push(deps);
        temp_step.insert(id, (script.steps.len() - 1, name));
    }
    for sink in &dag.sinks {
        let (plan, used_temps) = extract_tree(dag, sink.node, &temp_step, false)?;
        let deps = used_temps.iter().map(|t| temp_step[t].0).collect();
        script.steps.push(Step::Run { sink: sink.clone(), plan });
        script.deps.push(deps);
    }
    Ok(script)
}

/// Per-query predicates that re-derive annotations when a subtree's
/// stripped output is read back: the conjunction of every pushed scan
/// predicate and residual selection inside the subtree.
fn recompute_preds(dag: &SharedPlanDag, id: NodeId) -> Vec<PredicateNf> {
    let n = dag.batch.len();
    let mut acc: Vec<PredicateNf> = alloc::vec![PredicateNf::always_true(); n];
    let mut stack = alloc::vec![id];
    let mut visited = BTreeSet::new();
    while let Some(cur) = stack.pop() {
        if !visited.insert(cur) {
            continue;
        }
        match &dag.nodes[cur] {
            OpNode::Scan { preds, .. } | OpNode::Select { preds, .. } => {
                for (i, p) in preds.iter().enumerate() {
                    if i < n {
                        acc[i] = acc[i].and(p);
                    }
                }
            }
            OpNode::Restrict { members, .. } => {
                for (i, nf) in acc.iter_mut().enumerate() {
                    if !members.contains(&QueryId(i as u32 + 1)) {
                        *nf = PredicateNf::always_false();
                    }
                }
            }
            _ => {}
        }
        stack.extend(dag.nodes[cur].inputs());
    }
    acc
}

/// Copy the subtree rooted at `id` into a private arena. Materialized
/// children become temp-table scans carrying recompute predicates. With
/// `widen`, scans also project the columns their own predicates read, so
/// the stripped output supports annotation recomputation.
fn extract_tree(
    dag: &SharedPlanDag,
    id: NodeId,
    temp_step: &BTreeMap<NodeId, (usize, String)>,
    widen: bool,
) -> Result<(TreePlan, Vec<NodeId>), PlanError> {
    fn copy(
        dag: &SharedPlanDag,
        id: NodeId,
        root: NodeId,
        temp_step: &BTreeMap<NodeId, (usize, String)>,
        widen: bool,
        nodes: &mut Vec<OpNode>,
        used: &mut Vec<NodeId>,
    ) -> Result<NodeId, PlanError> {
        if id != root {
            if let Some((_, name)) = temp_step.get(&id) {
                used.push(id);
                let preds = recompute_preds(dag, id);
                nodes.push(OpNode::Scan { table: name.clone(), temp: true, columns: None, preds });
                return Ok(nodes.len() - 1);
            }
        }
        let node = match &dag.nodes[id] {
            OpNode::Scan { table, temp, columns, preds } => {
                let columns = match (columns, widen) {
                    (Some(cols), true) => {
                        let mut v = cols.clone();
                        for p in preds {
                            for atom in p.atoms() {
                                if !v.contains(&atom.column.column) {
                                    v.push(atom.column.column.clone());
                                }
                            }
                        }
                        v.sort();
                        Some(v)
                    }
                    (other, _) => other.clone(),
                };
                OpNode::Scan { table: table.clone(), temp: *temp, columns, preds: preds.clone() }
            }
            OpNode::Select { input, preds } => {
                let i = copy(dag, *input, root, temp_step, widen, nodes, used)?;
                OpNode::Select { input: i, preds: preds.clone() }
            }
            OpNode::Restrict { input, members } => {
                let i = copy(dag, *input, root, temp_step, widen, nodes, used)?;
                OpNode::Restrict { input: i, members: members.clone() }
            }
            OpNode::Join { left, right, on } => {
                let l = copy(dag, *left, root, temp_step, widen, nodes, used)?;
                let r = copy(dag, *right, root, temp_step, widen, nodes, used)?;
                OpNode::Join { left: l, right: r, on: on.clone() }
            }
            OpNode::Unnest { input } => {
                let i = copy(dag, *input, root, temp_step, widen, nodes, used)?;
                OpNode::Unnest { input: i }
            }
            OpNode::Group { input, keys, aggs } => {
                let i = copy(dag, *input, root, temp_step, widen, nodes, used)?;
                OpNode::Group { input: i, keys: keys.clone(), aggs: aggs.clone() }
            }
            OpNode::Project { input, columns } => {
                let i = copy(dag, *input, root, temp_step, widen, nodes, used)?;
                OpNode::Project { input: i, columns: columns.clone() }
            }
            OpNode::OrderLimit { input, ordering, limit } => {
                let i = copy(dag, *input, root, temp_step, widen, nodes, used)?;
                OpNode::OrderLimit { input: i, ordering: ordering.clone(), limit: *limit }
            }
        };
        nodes.push(node);
        Ok(nodes.len() - 1)
    }
    let mut nodes = Vec::new();
    let mut used = Vec::new();
    let root = copy(dag, id, id, temp_step, widen, &mut nodes, &mut used)?;
    used.sort();
    used.dedup();
    Ok((TreePlan { nodes, root }, used))
}

fn subtree_hash(plan: &TreePlan) -> u64 {
    let mut h = Fnv64::new();
    h.write_str(&alloc::format!("{:?}", plan.nodes));
    h.write_u64(plan.root as u64);
    h.finish()
}

/// Data column names a step's tree produces; empty means "resolved at
/// execution" (a full-width scan is involved).
pub fn tree_output_columns(plan: &TreePlan) -> Vec<String> {
    fn cols_of(plan: &TreePlan, id: NodeId) -> Vec<String> {
        match &plan.nodes[id] {
            OpNode::Scan { columns: Some(cols), .. } => cols.clone(),
            OpNode::Scan { columns: None, .. } => Vec::new(),
            OpNode::Select { input, .. }
            | OpNode::Restrict { input, .. }
            | OpNode::Unnest { input }
            | OpNode::OrderLimit { input, .. } => cols_of(plan, *input),
            OpNode::Join { left, right, on } => {
                let mut out = cols_of(plan, *left);
                if out.is_empty() {
                    return Vec::new();
                }
                let right_cols = cols_of(plan, *right);
                if right_cols.is_empty() {
                    return Vec::new();
                }
                for c in right_cols {
                    let dropped = on.iter().any(|j| {
                        j.cmp == JoinCmp::Eq && j.right_column == c && j.left_column == c
                    });
                    if !dropped && !out.contains(&c) {
                        out.push(c);
                    }
                }
                out
            }
            OpNode::Group { keys, aggs, .. } => {
                keys.iter().cloned().chain(aggs.iter().map(|(_, a)| a.clone())).collect()
            }
            OpNode::Project { columns, .. } => columns.iter().map(|(_, a)| a.clone()).collect(),
        }
    }
    cols_of(plan, plan.root)
}

/// Execute a script natively: materialize steps evaluate their tree,
/// strip annotations, and register the temp; run steps produce the sink
/// relations.
pub fn eval_script_native(
    script: &ExecutionScript,
    batch_size: u32,
    encoding: SetEncoding,
    db: &Database,
) -> Result<BTreeMap<String, AnnotatedRelation>, PlanError> {
    let mut temps: BTreeMap<String, Table> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for step in &script.steps {
        match step {
            Step::Materialize { name, plan, .. } => {
                let rel = eval_node(&plan.nodes, plan.root, db, &temps, encoding, batch_size)?;
                // only the data table survives; annotations are dropped
                temps.insert(name.clone(), rel.table);
            }
            Step::Run { sink, plan } => {
                let rel = eval_node(&plan.nodes, plan.root, db, &temps, encoding, batch_size)?;
                out.insert(sink.label.clone(), rel);
            }
        }
    }
    Ok(out)
}

/// Every node of every step tree must have exactly one consumer.
pub fn validate_tree_property(script: &ExecutionScript) -> Result<(), PlanError> {
    for step in &script.steps {
        let plan = step.plan();
        let mut counts = alloc::vec![0usize; plan.nodes.len()];
        for n in &plan.nodes {
            for c in n.inputs() {
                counts[c] += 1;
            }
        }
        counts[plan.root] += 1;
        if counts.iter().any(|&c| c != 1) {
            return Err(PlanError::Invalid("step plan is not a tree".into()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{self, GroupPolicy};
    use crate::table::{table_from_rows, Catalog};
    use crate::value::{Value, ValueType};
    use alloc::vec;

    fn catalog() -> Catalog {
        ir::tests::listing1_catalog()
    }

    fn batch_of(c: &Catalog, sqls: &[&str]) -> QueryBatch {
        let queries: Vec<(String, QuerySpec)> = sqls
            .iter()
            .enumerate()
            .map(|(i, s)| (alloc::format!("q{i}"), ir::parse_query(s, c).unwrap()))
            .collect();
        let (mut batches, _) = ir::group_batch(&queries, GroupPolicy::Global, 64).unwrap();
        batches.remove(0)
    }

    fn db() -> Database {
        let mut db = Database::new();
        db.insert(
            "employees",
            table_from_rows(
                &[
                    ("id", ValueType::Int),
                    ("name", ValueType::Str),
                    ("age", ValueType::Int),
                    ("city", ValueType::Str),
                    ("dept_id", ValueType::Int),
                ],
                vec![
                    vec![
                        Value::Int(1),
                        Value::Str("ANA".into()),
                        Value::Int(30),
                        Value::Str("ZRH".into()),
                        Value::Int(1),
                    ],
                    vec![
                        Value::Int(2),
                        Value::Str("BOB".into()),
                        Value::Int(40),
                        Value::Str("BRN".into()),
                        Value::Int(2),
                    ],
                    vec![
                        Value::Int(3),
                        Value::Str("CARO".into()),
                        Value::Int(30),
                        Value::Str("GVA".into()),
                        Value::Int(1),
                    ],
                ],
            ),
        );
        db.insert(
            "departments",
            table_from_rows(
                &[
                    ("dept_id", ValueType::Int),
                    ("dcity", ValueType::Str),
                    ("address", ValueType::Str),
                ],
                vec![
                    vec![Value::Int(1), Value::Str("ZRH".into()), Value::Str("A ST".into())],
                    vec![Value::Int(2), Value::Str("BRN".into()), Value::Str("B ST".into())],
                ],
            ),
        );
        db
    }

    fn stats(c: &Catalog) -> TableStats {
        TableStats::from_catalog(c)
    }

    #[test]
    fn listing1_batch_builds_two_scans_one_join() {
        let c = catalog();
        let batch = batch_of(
            &c,
            &[
                "SELECT * FROM employees E JOIN departments D ON E.dept_id = D.dept_id \
                 WHERE E.age = 30 AND D.dcity = 'ZRH'",
                "SELECT * FROM employees E JOIN departments D ON E.dept_id = D.dept_id \
                 WHERE E.name = 'BOB' AND D.address = 'B ST'",
            ],
        );
        let dag = build_shared_plan(&batch, SetEncoding::Array).unwrap();
        let scans = dag.nodes.iter().filter(|n| matches!(n, OpNode::Scan { .. })).count();
        let joins = dag.nodes.iter().filter(|n| matches!(n, OpNode::Join { .. })).count();
        assert_eq!((scans, joins), (2, 1));
        // single-conjunction members push everything; no residual select
        assert!(!dag.nodes.iter().any(|n| matches!(n, OpNode::Select { .. })));
    }

    #[test]
    fn batch_of_one_is_the_plain_plan_plus_annotation() {
        let c = catalog();
        let batch = batch_of(&c, &["SELECT name FROM employees WHERE age = 30"]);
        let dag = build_shared_plan(&batch, SetEncoding::Array).unwrap();
        let results = eval_dag(&dag, &db()).unwrap();
        let rel = results.values().next().unwrap();
        assert_eq!(rel.table.column_names(), vec!["name"]);
        assert_eq!(rel.len(), 2);
        assert!(rel.anns.iter().all(|a| a.ids() == vec![QueryId(1)]));
    }

    #[test]
    fn aggregate_template_builds_scan_unnest_group() {
        let c = catalog();
        let batch = batch_of(
            &c,
            &[
                "SELECT SUM(age) AS total FROM employees WHERE age > 20",
                "SELECT SUM(age) AS total FROM employees WHERE age > 35",
            ],
        );
        let dag = build_shared_plan(&batch, SetEncoding::Array).unwrap();
        let kinds: Vec<&'static str> = dag
            .nodes
            .iter()
            .map(|n| match n {
                OpNode::Scan { .. } => "scan",
                OpNode::Unnest { .. } => "unnest",
                OpNode::Group { .. } => "group",
                _ => "other",
            })
            .collect();
        assert_eq!(kinds, vec!["scan", "unnest", "group"]);
    }

    #[test]
    fn incompatible_members_error() {
        let c = catalog();
        let q1 = ir::parse_query("SELECT name FROM employees", &c).unwrap();
        let q2 = ir::parse_query(
            "SELECT E.name FROM employees E JOIN departments D ON E.dept_id = D.dept_id",
            &c,
        )
        .unwrap();
        let batch = QueryBatch {
            batch_id: 0,
            template_id: None,
            members: vec![(QueryId(1), q1), (QueryId(2), q2)],
        };
        assert!(matches!(
            build_shared_plan(&batch, SetEncoding::Array),
            Err(PlanError::IncompatibleMembers(_))
        ));
    }

    #[test]
    fn cross_table_disjunction_gets_residual_select() {
        let c = catalog();
        let batch = batch_of(
            &c,
            &[
                "SELECT E.name FROM employees E JOIN departments D ON E.dept_id = D.dept_id \
                 WHERE E.age = 40 OR D.dcity = 'ZRH'",
            ],
        );
        let dag = build_shared_plan(&batch, SetEncoding::Array).unwrap();
        assert!(dag.nodes.iter().any(|n| matches!(n, OpNode::Select { .. })));
        let results = eval_dag(&dag, &db()).unwrap();
        let rel = results.values().next().unwrap();
        // BOB (age 40), ANA and CARO (dept 1 in ZRH)
        assert_eq!(rel.len(), 3);
    }

    #[test]
    fn global_plan_unifies_shared_join_across_templates() {
        let c = catalog();
        let q_a = "SELECT E.name FROM employees E JOIN departments D ON E.dept_id = D.dept_id \
                   WHERE E.age = 30";
        let q_b = "SELECT D.dcity, COUNT(*) AS n FROM employees E JOIN departments D \
                   ON E.dept_id = D.dept_id WHERE E.age > 25 GROUP BY D.dcity";
        let queries: Vec<(String, QuerySpec)> = vec![
            ("a".into(), ir::parse_query(q_a, &c).unwrap()),
            ("b".into(), ir::parse_query(q_b, &c).unwrap()),
        ];
        let (batches, _) = ir::group_batch(&queries, GroupPolicy::PerTemplate, 16).unwrap();
        let (dag, mapping) = build_global_plan(&batches, SetEncoding::Array).unwrap();
        assert_eq!(mapping.len(), 2);
        let joins = dag.nodes.iter().filter(|n| matches!(n, OpNode::Join { .. })).count();
        let scans = dag
            .nodes
            .iter()
            .filter(|n| matches!(n, OpNode::Scan { temp: false, .. }))
            .count();
        assert_eq!(joins, 1, "both templates reuse one shared join");
        assert_eq!(scans, 2);
        assert_eq!(dag.sinks.len(), 2);
        let join_id = dag.nodes.iter().position(|n| matches!(n, OpNode::Join { .. })).unwrap();
        let consumers =
            dag.nodes.iter().flat_map(|n| n.inputs()).filter(|&i| i == join_id).count();
        assert_eq!(consumers, 2);
    }

    #[test]
    fn disjoint_templates_share_nothing() {
        let c = catalog();
        let queries: Vec<(String, QuerySpec)> = vec![
            (
                "a".into(),
                ir::parse_query("SELECT name FROM employees WHERE age = 30", &c).unwrap(),
            ),
            ("b".into(), ir::parse_query("SELECT dcity FROM departments", &c).unwrap()),
        ];
        let (batches, _) = ir::group_batch(&queries, GroupPolicy::PerTemplate, 16).unwrap();
        let (dag, _) = build_global_plan(&batches, SetEncoding::Array).unwrap();
        let mut counts = vec![0usize; dag.nodes.len()];
        for n in &dag.nodes {
            for i in n.inputs() {
                counts[i] += 1;
            }
        }
        for s in &dag.sinks {
            counts[s.node] += 1;
        }
        assert_eq!(counts.into_iter().max().unwrap_or(0), 1, "forest: nothing shared");
    }

    #[test]
    fn single_consumer_dag_splits_into_one_run_step() {
        let c = catalog();
        let batch = batch_of(&c, &["SELECT name FROM employees WHERE age = 30"]);
        let dag = build_shared_plan(&batch, SetEncoding::Array).unwrap();
        let script = split_dag(&dag, &stats(&c), &SplitConfig::default()).unwrap();
        assert_eq!(script.steps.len(), 1);
        assert!(matches!(script.steps[0], Step::Run { .. }));
        validate_tree_property(&script).unwrap();
    }

    fn three_sink_shared_join_dag(c: &Catalog) -> SharedPlanDag {
        let mk = |pred: &str| {
            alloc::format!(
                "SELECT E.name FROM employees E JOIN departments D ON E.dept_id = D.dept_id \
                 WHERE {pred}"
            )
        };
        let queries: Vec<(String, QuerySpec)> = vec![
            ("a".into(), ir::parse_query(&mk("E.age = 30"), c).unwrap()),
            ("b".into(), ir::parse_query(&mk("E.age > 20 AND E.age < 50"), c).unwrap()),
            ("c".into(), ir::parse_query(&mk("D.dcity = 'ZRH'"), c).unwrap()),
        ];
        let (batches, _) = ir::group_batch(&queries, GroupPolicy::PerTemplate, 16).unwrap();
        assert_eq!(batches.len(), 3);
        build_global_plan(&batches, SetEncoding::Array).unwrap().0
    }

    #[test]
    fn shared_join_feeding_three_sinks_materializes_once() {
        let c = catalog();
        let dag = three_sink_shared_join_dag(&c);
        let cfg = SplitConfig {
            policy: SplitPolicy::Heuristic,
            materialize_factor: 0.0001, // drive the heuristic toward materializing
            ..SplitConfig::default()
        };
        let script = split_dag(&dag, &stats(&c), &cfg).unwrap();
        let mats =
            script.steps.iter().filter(|s| matches!(s, Step::Materialize { .. })).count();
        let runs = script.steps.iter().filter(|s| matches!(s, Step::Run { .. })).count();
        assert_eq!(runs, 3);
        assert_eq!(mats, 1, "exactly the shared join should materialize");
        validate_tree_property(&script).unwrap();
        for (i, step) in script.steps.iter().enumerate() {
            if matches!(step, Step::Run { .. }) {
                for &d in &script.deps[i] {
                    assert!(matches!(script.steps[d], Step::Materialize { .. }));
                    assert!(d < i);
                }
            }
        }
    }

    #[test]
    fn always_duplicate_has_no_materialize_steps() {
        let c = catalog();
        let dag = three_sink_shared_join_dag(&c);
        let cfg = SplitConfig { policy: SplitPolicy::AlwaysDuplicate, ..SplitConfig::default() };
        let script = split_dag(&dag, &stats(&c), &cfg).unwrap();
        assert_eq!(script.steps.len(), 3);
        assert!(script.steps.iter().all(|s| matches!(s, Step::Run { .. })));
        validate_tree_property(&script).unwrap();
    }

    #[test]
    fn policies_agree_on_results() {
        let c = catalog();
        let dag = three_sink_shared_join_dag(&c);
        let database = db();
        let direct = eval_dag(&dag, &database).unwrap();
        for policy in
            [SplitPolicy::Heuristic, SplitPolicy::AlwaysDuplicate, SplitPolicy::AlwaysMaterialize]
        {
            let cfg = SplitConfig { policy, ..SplitConfig::default() };
            let script = split_dag(&dag, &stats(&c), &cfg).unwrap();
            let via_script =
                eval_script_native(&script, dag.batch.len() as u32, dag.encoding, &database)
                    .unwrap();
            for (label, rel) in &direct {
                let got = &via_script[label];
                let mut a: Vec<String> = rel
                    .table
                    .rows
                    .iter()
                    .zip(rel.anns.iter().map(|x| x.ids()))
                    .map(|p| alloc::format!("{p:?}"))
                    .collect();
                let mut b: Vec<String> = got
                    .table
                    .rows
                    .iter()
                    .zip(got.anns.iter().map(|x| x.ids()))
                    .map(|p| alloc::format!("{p:?}"))
                    .collect();
                a.sort();
                b.sort();
                assert_eq!(a, b, "{policy:?} differs on {label}");
            }
        }
    }

    #[test]
    fn materialization_error_when_dialect_cannot_read_back() {
        let c = catalog();
        let dag = three_sink_shared_join_dag(&c);
        let cfg = SplitConfig {
            policy: SplitPolicy::AlwaysMaterialize,
            can_materialize: false,
            ..SplitConfig::default()
        };
        assert!(matches!(split_dag(&dag, &stats(&c), &cfg), Err(PlanError::CannotMaterialize(_))));
    }

    #[test]
    fn temp_names_are_deterministic() {
        let c = catalog();
        let dag = three_sink_shared_join_dag(&c);
        let cfg = SplitConfig { policy: SplitPolicy::AlwaysMaterialize, ..SplitConfig::default() };
        let names = |s: &ExecutionScript| {
            s.steps
                .iter()
                .filter_map(|st| match st {
                    Step::Materialize { name, .. } => Some(name.clone()),
                    _ => None,
                })
                .collect::<Vec<_>>()
        };
        let s1 = split_dag(&dag, &stats(&c), &cfg).unwrap();
        let s2 = split_dag(&dag, &stats(&c), &cfg).unwrap();
        assert_eq!(names(&s1), names(&s2));
        assert!(!names(&s1).is_empty());
    }

    #[test]
    fn materialized_temp_has_no_annotation_and_recompute_restores_it() {
        let c = catalog();
        let dag = three_sink_shared_join_dag(&c);
        let cfg = SplitConfig { policy: SplitPolicy::AlwaysMaterialize, ..SplitConfig::default() };
        let script = split_dag(&dag, &stats(&c), &cfg).unwrap();
        let database = db();
        // run materialize steps manually and inspect the temp schema
        let mut temps: BTreeMap<String, Table> = BTreeMap::new();
        for step in &script.steps {
            if let Step::Materialize { name, plan, .. } = step {
                let rel =
                    eval_node(&plan.nodes, plan.root, &database, &temps, dag.encoding, 3).unwrap();
                assert!(
                    !rel.table.column_names().iter().any(|c| c.contains("query")),
                    "annotation column leaked into materialized schema"
                );
                // widened scans keep predicate columns available
                assert!(rel.table.column_index("age").is_some());
                temps.insert(name.clone(), rel.table);
            }
        }
        assert!(!temps.is_empty());
    }
}
