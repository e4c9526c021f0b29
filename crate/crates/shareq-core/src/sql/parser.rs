use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::ast::*;
use super::token::{tokenize, Tok};
use super::SqlError;
use crate::value::Value;

/// Words that end an alias position or start a clause.
const RESERVED: &[&str] = &[
    "select", "from", "where", "group", "order", "limit", "join", "inner", "cross", "on", "as",
    "and", "or", "not", "between", "like", "in", "case", "when", "then", "else", "end", "by",
    "asc", "desc", "with", "union", "having", "left", "right", "full", "outer", "values",
    "unnest", "over", "partition", "is", "distinct", "offset",
];

pub fn parse_select(input: &str) -> Result<SelectStmt, SqlError> {
    let toks = tokenize(input)?;
    let mut p = Parser { toks, pos: 0 };
    let stmt = p.select_with()?;
    p.eat_sym(";");
    if !p.at_end() {
        return Err(p.err("trailing input after statement"));
    }
    Ok(stmt)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, msg: &str) -> SqlError {
        let pos = self.toks.get(self.pos).map(|(_, p)| *p).unwrap_or(usize::MAX);
        SqlError::Syntax { pos: if pos == usize::MAX { 0 } else { pos }, msg: msg.to_string() }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), SqlError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.err(&alloc::format!("expected {}", kw.to_ascii_uppercase())))
        }
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(s)) if *s == sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, sym: &str) -> Result<(), SqlError> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            Err(self.err(&alloc::format!("expected '{sym}'")))
        }
    }

    fn expect_ident(&mut self) -> Result<String, SqlError> {
        match self.peek() {
            Some(Tok::Ident(s)) if !RESERVED.contains(&s.as_str()) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err("expected identifier")),
        }
    }

    fn select_with(&mut self) -> Result<SelectStmt, SqlError> {
        let mut with = Vec::new();
        if self.eat_kw("with") {
            loop {
                let name = self.expect_ident()?;
                self.expect_kw("as")?;
                self.expect_sym("(")?;
                let body = self.select_with()?;
                self.expect_sym(")")?;
                with.push((name, body));
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let mut stmt = self.select_body()?;
        if !with.is_empty() {
            // nested WITH inside a CTE body keeps its own scope
            let mut outer = with;
            outer.extend(core::mem::take(&mut stmt.with));
            stmt.with = outer;
        }
        Ok(stmt)
    }

    fn select_body(&mut self) -> Result<SelectStmt, SqlError> {
        self.expect_kw("select")?;
        if self.is_kw("distinct") {
            return Err(SqlError::Unsupported { construct: "SELECT DISTINCT".into() });
        }
        let mut items = Vec::new();
        loop {
            if self.eat_sym("*") {
                items.push(SelectItem::Star);
            } else {
                let expr = self.expr()?;
                let alias = if self.eat_kw("as") {
                    Some(self.expect_ident()?)
                } else {
                    match self.peek() {
                        Some(Tok::Ident(s)) if !RESERVED.contains(&s.as_str()) => {
                            let s = s.clone();
                            self.pos += 1;
                            Some(s)
                        }
                        _ => None,
                    }
                };
                items.push(SelectItem::Expr { expr, alias });
            }
            if !self.eat_sym(",") {
                break;
            }
        }

        let from = if self.eat_kw("from") { Some(self.from_clause()?) } else { None };

        let where_clause = if self.eat_kw("where") { Some(self.expr()?) } else { None };

        let mut group_by = Vec::new();
        if self.eat_kw("group") {
            self.expect_kw("by")?;
            loop {
                group_by.push(self.expr()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        if self.is_kw("having") {
            return Err(SqlError::Unsupported { construct: "HAVING".into() });
        }

        let mut order_by = Vec::new();
        if self.eat_kw("order") {
            self.expect_kw("by")?;
            loop {
                let expr = self.expr()?;
                let desc = if self.eat_kw("desc") {
                    true
                } else {
                    self.eat_kw("asc");
                    false
                };
                order_by.push(OrderItem { expr, desc });
                if !self.eat_sym(",") {
                    break;
                }
            }
        }

        let limit = if self.eat_kw("limit") {
            match self.bump() {
                Some(Tok::Int(n)) if n >= 0 => Some(n as u64),
                _ => return Err(self.err("expected non-negative integer after LIMIT")),
            }
        } else {
            None
        };

        if self.is_kw("union") {
            return Err(SqlError::Unsupported { construct: "UNION".into() });
        }
        if self.is_kw("offset") {
            return Err(SqlError::Unsupported { construct: "OFFSET".into() });
        }

        Ok(SelectStmt { with: Vec::new(), items, from, where_clause, group_by, order_by, limit })
    }

    fn from_clause(&mut self) -> Result<FromClause, SqlError> {
        let first = self.table_ref()?;
        let mut joins = Vec::new();
        loop {
            if self.is_kw("left") || self.is_kw("right") || self.is_kw("full") {
                return Err(SqlError::Unsupported { construct: "outer join".into() });
            }
            if self.eat_kw("cross") {
                self.expect_kw("join")?;
                if self.eat_kw("unnest") {
                    self.expect_sym("(")?;
                    let expr = self.expr()?;
                    self.expect_sym(")")?;
                    self.expect_kw("as")?;
                    let alias = self.expect_ident()?;
                    self.expect_sym("(")?;
                    let column = self.expect_ident()?;
                    self.expect_sym(")")?;
                    joins.push(Join { target: JoinTarget::Unnest { expr, alias, column }, on: None });
                } else {
                    let t = self.table_ref()?;
                    joins.push(Join { target: JoinTarget::Table(t), on: None });
                }
                continue;
            }
            let inner = self.eat_kw("inner");
            if self.eat_kw("join") {
                let t = self.table_ref()?;
                self.expect_kw("on")?;
                let on = self.expr()?;
                joins.push(Join { target: JoinTarget::Table(t), on: Some(on) });
                continue;
            } else if inner {
                return Err(self.err("expected JOIN after INNER"));
            }
            if self.eat_sym(",") {
                return Err(SqlError::Unsupported { construct: "comma join".into() });
            }
            break;
        }
        Ok(FromClause { first, joins })
    }

    fn table_ref(&mut self) -> Result<TableRef, SqlError> {
        if self.eat_sym("(") {
            if self.is_kw("select") || self.is_kw("with") {
                return Err(SqlError::Unsupported { construct: "subquery in FROM".into() });
            }
            self.expect_kw("values")?;
            let mut rows = Vec::new();
            loop {
                self.expect_sym("(")?;
                let mut row = Vec::new();
                loop {
                    row.push(self.literal_value()?);
                    if !self.eat_sym(",") {
                        break;
                    }
                }
                self.expect_sym(")")?;
                rows.push(row);
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym(")")?;
            self.expect_kw("as")?;
            let alias = self.expect_ident()?;
            self.expect_sym("(")?;
            let mut columns = Vec::new();
            loop {
                columns.push(self.expect_ident()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym(")")?;
            for r in &rows {
                if r.len() != columns.len() {
                    return Err(self.err("VALUES row width does not match column list"));
                }
            }
            return Ok(TableRef::Values { rows, alias, columns });
        }
        let name = self.expect_ident()?;
        let alias = if self.eat_kw("as") {
            Some(self.expect_ident()?)
        } else {
            match self.peek() {
                Some(Tok::Ident(s)) if !RESERVED.contains(&s.as_str()) => {
                    let s = s.clone();
                    self.pos += 1;
                    Some(s)
                }
                _ => None,
            }
        };
        Ok(TableRef::Named { name, alias })
    }

    fn literal_value(&mut self) -> Result<Value, SqlError> {
        let neg = self.eat_sym("-");
        match self.bump() {
            Some(Tok::Int(n)) => Ok(Value::Int(if neg { -n } else { n })),
            Some(Tok::Float(f)) => Ok(Value::Float(if neg { -f } else { f })),
            Some(Tok::Str(s)) if !neg => Ok(Value::Str(s)),
            Some(Tok::Ident(k)) if k == "null" && !neg => Ok(Value::Null),
            Some(Tok::Ident(k)) if k == "date" && !neg => match self.bump() {
                Some(Tok::Str(s)) => Ok(Value::Date(s)),
                _ => Err(self.err("expected string after DATE")),
            },
            _ => Err(self.err("expected literal")),
        }
    }

    // --- expressions -----------------------------------------------------

    fn expr(&mut self) -> Result<Expr, SqlError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.and_expr()?;
        while self.eat_kw("or") {
            let right = self.and_expr()?;
            left = Expr::Binary { left: Box::new(left), op: BinOp::Or, right: Box::new(right) };
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.not_expr()?;
        while self.eat_kw("and") {
            let right = self.not_expr()?;
            left = Expr::Binary { left: Box::new(left), op: BinOp::And, right: Box::new(right) };
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Expr, SqlError> {
        if self.eat_kw("not") {
            let inner = self.not_expr()?;
            return Ok(Expr::Unary { op: UnOp::Not, expr: Box::new(inner) });
        }
        self.predicate()
    }

    fn predicate(&mut self) -> Result<Expr, SqlError> {
        let left = self.additive()?;
        let op = match self.peek() {
            Some(Tok::Sym("=")) => Some(BinOp::Eq),
            Some(Tok::Sym("<>")) => Some(BinOp::Ne),
            Some(Tok::Sym("<")) => Some(BinOp::Lt),
            Some(Tok::Sym("<=")) => Some(BinOp::Le),
            Some(Tok::Sym(">")) => Some(BinOp::Gt),
            Some(Tok::Sym(">=")) => Some(BinOp::Ge),
            _ => None,
        };
        if let Some(op) = op {
            self.pos += 1;
            let right = self.additive()?;
            return Ok(Expr::Binary { left: Box::new(left), op, right: Box::new(right) });
        }
        if self.eat_kw("between") {
            let low = self.additive()?;
            self.expect_kw("and")?;
            let high = self.additive()?;
            return Ok(Expr::Between {
                expr: Box::new(left),
                low: Box::new(low),
                high: Box::new(high),
            });
        }
        if self.eat_kw("like") {
            let pattern = self.additive()?;
            return Ok(Expr::Like { expr: Box::new(left), pattern: Box::new(pattern) });
        }
        if self.eat_kw("in") {
            self.expect_sym("(")?;
            if self.is_kw("select") {
                return Err(SqlError::Unsupported { construct: "IN subquery".into() });
            }
            let mut list = Vec::new();
            loop {
                list.push(self.expr()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym(")")?;
            return Ok(Expr::InList { expr: Box::new(left), list });
        }
        if self.is_kw("is") {
            return Err(SqlError::Unsupported { construct: "IS NULL".into() });
        }
        Ok(left)
    }

    fn additive(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Sym("+")) => BinOp::Add,
                Some(Tok::Sym("-")) => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let right = self.multiplicative()?;
            left = Expr::Binary { left: Box::new(left), op, right: Box::new(right) };
        }
        Ok(left)
    }

    fn multiplicative(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Sym("*")) => BinOp::Mul,
                Some(Tok::Sym("/")) => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let right = self.unary()?;
            left = Expr::Binary { left: Box::new(left), op, right: Box::new(right) };
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Expr, SqlError> {
        if self.eat_sym("-") {
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Literal(Value::Int(n)) => Expr::Literal(Value::Int(-n)),
                Expr::Literal(Value::Float(f)) => Expr::Literal(Value::Float(-f)),
                other => Expr::Unary { op: UnOp::Neg, expr: Box::new(other) },
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, SqlError> {
        match self.peek().cloned() {
            Some(Tok::Int(n)) => {
                self.pos += 1;
                Ok(Expr::Literal(Value::Int(n)))
            }
            Some(Tok::Float(f)) => {
                self.pos += 1;
                Ok(Expr::Literal(Value::Float(f)))
            }
            Some(Tok::Str(s)) => {
                self.pos += 1;
                Ok(Expr::Literal(Value::Str(s)))
            }
            Some(Tok::Param(n)) => {
                self.pos += 1;
                Ok(Expr::Param(n))
            }
            Some(Tok::Sym("(")) => {
                self.pos += 1;
                if self.is_kw("select") {
                    return Err(SqlError::Unsupported { construct: "scalar subquery".into() });
                }
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Some(Tok::Ident(word)) => match word.as_str() {
                "null" => {
                    self.pos += 1;
                    Ok(Expr::Literal(Value::Null))
                }
                "true" => {
                    self.pos += 1;
                    Ok(Expr::Literal(Value::Bool(true)))
                }
                "false" => {
                    self.pos += 1;
                    Ok(Expr::Literal(Value::Bool(false)))
                }
                "date" => {
                    self.pos += 1;
                    match self.bump() {
                        Some(Tok::Str(s)) => Ok(Expr::Literal(Value::Date(s))),
                        _ => Err(self.err("expected string after DATE")),
                    }
                }
                "case" => self.case_expr(),
                "array" => {
                    self.pos += 1;
                    self.expect_sym("[")?;
                    let mut items = Vec::new();
                    if !self.eat_sym("]") {
                        loop {
                            items.push(self.expr()?);
                            if !self.eat_sym(",") {
                                break;
                            }
                        }
                        self.expect_sym("]")?;
                    }
                    Ok(Expr::Array(items))
                }
                _ => self.ident_expr(word),
            },
            _ => Err(self.err("expected expression")),
        }
    }

    fn case_expr(&mut self) -> Result<Expr, SqlError> {
        self.expect_kw("case")?;
        let mut arms = Vec::new();
        while self.eat_kw("when") {
            let cond = self.expr()?;
            self.expect_kw("then")?;
            let val = self.expr()?;
            arms.push((cond, val));
        }
        if arms.is_empty() {
            return Err(self.err("CASE requires at least one WHEN"));
        }
        let else_expr =
            if self.eat_kw("else") { Some(Box::new(self.expr()?)) } else { None };
        self.expect_kw("end")?;
        Ok(Expr::Case { arms, else_expr })
    }

    /// Column reference, function call, or window function starting at a
    /// non-keyword identifier (already peeked, not yet consumed).
    fn ident_expr(&mut self, word: String) -> Result<Expr, SqlError> {
        if RESERVED.contains(&word.as_str()) {
            return Err(self.err(&alloc::format!("unexpected keyword {word}")));
        }
        self.pos += 1;
        if matches!(self.peek(), Some(Tok::Sym("("))) {
            self.pos += 1;
            let mut args = Vec::new();
            let mut star = false;
            if self.eat_sym("*") {
                star = true;
                self.expect_sym(")")?;
            } else if !self.eat_sym(")") {
                loop {
                    args.push(self.expr()?);
                    if !self.eat_sym(",") {
                        break;
                    }
                }
                self.expect_sym(")")?;
            }
            if self.eat_kw("over") {
                if star || !args.is_empty() {
                    return Err(SqlError::Unsupported {
                        construct: "window function with arguments".into(),
                    });
                }
                self.expect_sym("(")?;
                let mut partition_by = Vec::new();
                if self.eat_kw("partition") {
                    self.expect_kw("by")?;
                    loop {
                        partition_by.push(self.expr()?);
                        if !self.eat_sym(",") {
                            break;
                        }
                    }
                }
                let mut order_by = Vec::new();
                if self.eat_kw("order") {
                    self.expect_kw("by")?;
                    loop {
                        let expr = self.expr()?;
                        let desc = if self.eat_kw("desc") {
                            true
                        } else {
                            self.eat_kw("asc");
                            false
                        };
                        order_by.push(OrderItem { expr, desc });
                        if !self.eat_sym(",") {
                            break;
                        }
                    }
                }
                self.expect_sym(")")?;
                return Ok(Expr::Window { func: word, partition_by, order_by });
            }
            return Ok(Expr::Func { name: word, args, star });
        }
        if self.eat_sym(".") {
            let name = self.expect_ident()?;
            return Ok(Expr::Column { qualifier: Some(word), name });
        }
        Ok(Expr::Column { qualifier: None, name: word })
    }
}
