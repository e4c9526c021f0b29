use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::value::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Column { qualifier: Option<String>, name: String },
    Literal(Value),
    Param(u32),
    Unary { op: UnOp, expr: Box<Expr> },
    Binary { left: Box<Expr>, op: BinOp, right: Box<Expr> },
    Between { expr: Box<Expr>, low: Box<Expr>, high: Box<Expr> },
    Like { expr: Box<Expr>, pattern: Box<Expr> },
    InList { expr: Box<Expr>, list: Vec<Expr> },
    Case { arms: Vec<(Expr, Expr)>, else_expr: Option<Box<Expr>> },
    /// Plain function call; `star` marks `COUNT(*)`.
    Func { name: String, args: Vec<Expr>, star: bool },
    /// `func() OVER (PARTITION BY ... ORDER BY ...)`.
    Window { func: String, partition_by: Vec<Expr>, order_by: Vec<OrderItem> },
    Array(Vec<Expr>),
}

impl Expr {
    pub fn col(name: &str) -> Expr {
        Expr::Column { qualifier: None, name: String::from(name) }
    }

    /// Does any aggregate call appear in this expression (outside windows)?
    pub fn contains_aggregate(&self) -> bool {
        match self {
            Expr::Func { name, .. } => {
                matches!(name.as_str(), "count" | "sum" | "min" | "max" | "avg")
            }
            Expr::Unary { expr, .. } => expr.contains_aggregate(),
            Expr::Binary { left, right, .. } => {
                left.contains_aggregate() || right.contains_aggregate()
            }
            Expr::Between { expr, low, high } => {
                expr.contains_aggregate() || low.contains_aggregate() || high.contains_aggregate()
            }
            Expr::Like { expr, pattern } => {
                expr.contains_aggregate() || pattern.contains_aggregate()
            }
            Expr::InList { expr, list } => {
                expr.contains_aggregate() || list.iter().any(|e| e.contains_aggregate())
            }
            Expr::Case { arms, else_expr } => {
                arms.iter().any(|(c, v)| c.contains_aggregate() || v.contains_aggregate())
                    || else_expr.as_ref().is_some_and(|e| e.contains_aggregate())
            }
            Expr::Array(items) => items.iter().any(|e| e.contains_aggregate()),
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderItem {
    pub expr: Expr,
    pub desc: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SelectItem {
    Star,
    Expr { expr: Expr, alias: Option<String> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum TableRef {
    Named { name: String, alias: Option<String> },
    /// `(VALUES (1), (2)) AS t(c)` — inline constant relation.
    Values { rows: Vec<Vec<Value>>, alias: String, columns: Vec<String> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum JoinTarget {
    Table(TableRef),
    /// `CROSS JOIN UNNEST(expr) AS alias(column)` — replicates each input
    /// row once per array element.
    Unnest { expr: Expr, alias: String, column: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Join {
    pub target: JoinTarget,
    /// `None` for CROSS JOIN.
    pub on: Option<Expr>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FromClause {
    pub first: TableRef,
    pub joins: Vec<Join>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectStmt {
    pub with: Vec<(String, SelectStmt)>,
    pub items: Vec<SelectItem>,
    pub from: Option<FromClause>,
    pub where_clause: Option<Expr>,
    pub group_by: Vec<Expr>,
    pub order_by: Vec<OrderItem>,
    pub limit: Option<u64>,
}
