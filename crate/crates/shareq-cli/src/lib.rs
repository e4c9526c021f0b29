//! IO, file formats, the desk-scale workload generator, and the batching
//! gateway around `shareq-core`.

pub mod gateway;
pub mod io;
pub mod workload;

use shareq_core::cost::ColumnFootprint;
use shareq_core::plan::{ExecutionScript, OpNode, TreePlan};

/// Base-table columns a script reads: scan predicate columns plus scan
/// output columns (`None` pruning counts the whole table). Temp re-reads
/// are not included; per-template scripts have none.
pub fn script_footprint(script: &ExecutionScript) -> ColumnFootprint {
    let mut fp = ColumnFootprint::default();
    for step in &script.steps {
        tree_footprint(step.plan(), &mut fp);
    }
    fp
}

pub fn tree_footprint(plan: &TreePlan, fp: &mut ColumnFootprint) {
    for node in &plan.nodes {
        if let OpNode::Scan { table, temp, columns, preds } = node {
            if *temp {
                continue;
            }
            match columns {
                None => fp.add_all_columns(table),
                Some(cols) => {
                    for c in cols {
                        fp.add_column(table, c);
                    }
                    for p in preds {
                        for atom in p.atoms() {
                            fp.add_column(table, &atom.column.column);
                        }
                    }
                }
            }
        }
    }
}
