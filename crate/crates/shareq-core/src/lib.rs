//! Shared execution of SQL query batches through SQL-to-SQL rewriting.
//!
//! A batch of queries over the same base tables is rewritten into one
//! statement that annotates every tuple with the set of queries it is
//! relevant to, executes once, and is demultiplexed back into per-query
//! results. Under pay-per-byte pricing a batch then costs roughly the
//! same as a single query.
//!
//! The crate is the algorithmic core and is `no_std` (with `alloc`):
//!
//! - [`ir`] — parsing a SQL subset into per-query relational descriptions,
//!   template extraction, and batch grouping.
//! - [`dq`] — the annotated-relation algebra (shared scan/select/join,
//!   unnest, grouping, order/limit, demux) with an executable reference
//!   semantics, plus a brute-force per-query oracle.
//! - [`predidx`] — compilation of batched predicates into a median-split
//!   decision tree emitted as a nested conditional expression.
//! - [`sqlgen`] — dialect-profile-driven rendering of shared plans to SQL.
//! - [`plan`] — shared-plan DAG construction, DAG-to-tree splitting, and
//!   materialization scripts.
//! - [`cost`] — billed-byte and monetary cost estimation under
//!   bytes-scanned and columns-billed pricing.
//! - [`engine`] — an in-process reference backend that executes the SQL
//!   this crate generates.
//! - [`exec`] — the backend adapter contract, result demultiplexing, and
//!   the shared-vs-individual equivalence harness.
//!
//! File formats, the CLI, and the batching gateway live in the companion
//! `shareq-cli` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cost;
pub mod dq;
pub mod engine;
pub mod exec;
pub mod ir;
pub mod plan;
pub mod predidx;
pub mod sql;
pub mod sqlgen;
pub mod table;
pub mod util;
pub mod value;

pub use ir::{QueryBatch, QueryId, QuerySpec};
pub use table::{Catalog, Database, Table};
pub use value::{Value, ValueType};
