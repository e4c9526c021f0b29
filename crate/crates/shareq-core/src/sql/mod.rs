//! Tokenizer, AST, and recursive-descent parser for the SQL subset this
//! crate reads and writes.
//!
//! Two consumers share the grammar: the query intake path (single-block
//! SELECT, which `ir` further restricts) and the reference backend, which
//! must round-trip everything the generators emit (CTE chains, CASE
//! expressions, arrays, UNNEST cross joins, window row numbering).

mod ast;
mod parser;
mod token;

pub use ast::{
    BinOp, Expr, FromClause, Join, JoinTarget, OrderItem, SelectItem, SelectStmt, TableRef, UnOp,
};
pub use parser::parse_select;
pub use token::{tokenize, Tok};

use alloc::string::String;
use core::fmt;

#[derive(Clone, Debug, PartialEq)]
pub enum SqlError {
    Syntax { pos: usize, msg: String },
    Unsupported { construct: String },
}

impl fmt::Display for SqlError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SqlError::Syntax { pos, msg } => write!(f, "syntax error at byte {pos}: {msg}"),
            SqlError::Unsupported { construct } => write!(f, "unsupported construct: {construct}"),
        }
    }
}

impl core::error::Error for SqlError {}
