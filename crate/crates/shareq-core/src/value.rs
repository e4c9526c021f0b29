//! Runtime values and the comparison/arithmetic semantics shared by the
//! reference evaluator, the predicate index, and the SQL engine.
//!
//! NULL follows straightforward three-valued comparison: any comparison
//! involving NULL is unknown and filters treat unknown as false. Grouping
//! and ordering use a total order in which NULL sorts first.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Null,
    /// Booleans only occur transiently in expression evaluation; stored
    /// columns never hold them.
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    /// ISO-8601 date kept as text; code-point order is chronological order.
    Date(String),
    /// Integer arrays back the `query_set` annotation column in results.
    IntArray(Vec<i64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueType {
    Int,
    Float,
    Str,
    Date,
    IntArray,
}

impl ValueType {
    pub fn parse(name: &str) -> Option<ValueType> {
        // Catalog files use lowercase logical names; accept common aliases.
        match name.to_ascii_lowercase().as_str() {
            "int" | "integer" | "bigint" | "tinyint" | "smallint" => Some(ValueType::Int),
            "float" | "double" | "decimal" | "real" => Some(ValueType::Float),
            "str" | "string" | "varchar" | "char" | "text" => Some(ValueType::Str),
            "date" => Some(ValueType::Date),
            "intarray" | "array" => Some(ValueType::IntArray),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ValueType::Int => "int",
            ValueType::Float => "float",
            ValueType::Str => "string",
            ValueType::Date => "date",
            ValueType::IntArray => "intarray",
        }
    }
}

impl Value {
    pub fn value_type(&self) -> Option<ValueType> {
        match self {
            Value::Null | Value::Bool(_) => None,
            Value::Int(_) => Some(ValueType::Int),
            Value::Float(_) => Some(ValueType::Float),
            Value::Str(_) => Some(ValueType::Str),
            Value::Date(_) => Some(ValueType::Date),
            Value::IntArray(_) => Some(ValueType::IntArray),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) | Value::Date(s) => Some(s),
            _ => None,
        }
    }

    /// Coerce a literal to a column's declared type. Int literals widen to
    /// float, plain strings are accepted for date columns; anything else is
    /// a mismatch the caller reports.
    pub fn coerce_to(&self, ty: ValueType) -> Option<Value> {
        match (self, ty) {
            (Value::Null, _) => Some(Value::Null),
            (Value::Int(i), ValueType::Int) => Some(Value::Int(*i)),
            (Value::Int(i), ValueType::Float) => Some(Value::Float(*i as f64)),
            (Value::Float(f), ValueType::Float) => Some(Value::Float(*f)),
            (Value::Str(s), ValueType::Str) => Some(Value::Str(s.clone())),
            (Value::Str(s), ValueType::Date) => Some(Value::Date(s.clone())),
            (Value::Date(s), ValueType::Date) => Some(Value::Date(s.clone())),
            (Value::Date(s), ValueType::Str) => Some(Value::Str(s.clone())),
            _ => None,
        }
    }

    /// SQL literal text. Floats always carry a decimal point so the literal
    /// re-parses as a float.
    pub fn render_sql(&self) -> String {
        match self {
            Value::Null => "NULL".to_string(),
            Value::Bool(b) => if *b { "TRUE" } else { "FALSE" }.to_string(),
            Value::Int(i) => format!("{i}"),
            Value::Float(f) => {
                let s = format!("{f}");
                if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
                    s
                } else {
                    format!("{s}.0")
                }
            }
            Value::Str(s) => format!("'{}'", s.replace('\'', "''")),
            Value::Date(s) => format!("DATE '{}'", s.replace('\'', "''")),
            Value::IntArray(items) => {
                let mut out = String::from("ARRAY[");
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&format!("{v}"));
                }
                out.push(']');
                out
            }
        }
    }
}

/// Total order used by sorting, grouping, and canonical row comparison.
/// NULL first, then numerics (ints and floats compare numerically), then
/// text, then arrays.
pub fn cmp_values(a: &Value, b: &Value) -> Ordering {
    use Value::*;
    fn rank(v: &Value) -> u8 {
        match v {
            Null => 0,
            Bool(_) => 1,
            Int(_) | Float(_) => 2,
            Str(_) | Date(_) => 3,
            IntArray(_) => 4,
        }
    }
    match (a, b) {
        (Null, Null) => Ordering::Equal,
        (Bool(x), Bool(y)) => x.cmp(y),
        (Int(x), Int(y)) => x.cmp(y),
        (Int(x), Float(y)) => (*x as f64).total_cmp(y),
        (Float(x), Int(y)) => x.total_cmp(&(*y as f64)),
        (Float(x), Float(y)) => x.total_cmp(y),
        (Str(x) | Date(x), Str(y) | Date(y)) => x.cmp(y),
        (IntArray(x), IntArray(y)) => x.cmp(y),
        _ => rank(a).cmp(&rank(b)),
    }
}

/// Three-valued comparison: `None` when either side is NULL or the types
/// are not comparable.
pub fn try_cmp(a: &Value, b: &Value) -> Option<Ordering> {
    use Value::*;
    match (a, b) {
        (Null, _) | (_, Null) => None,
        (Bool(_), Bool(_)) => Some(cmp_values(a, b)),
        (Int(_) | Float(_), Int(_) | Float(_)) => Some(cmp_values(a, b)),
        (Str(_) | Date(_), Str(_) | Date(_)) => Some(cmp_values(a, b)),
        (IntArray(_), IntArray(_)) => Some(cmp_values(a, b)),
        _ => None,
    }
}

/// SQL LIKE with `%` and `_` wildcards over code points.
pub fn like_match(text: &str, pattern: &str) -> bool {
    fn rec(t: &[char], p: &[char]) -> bool {
        match p.first() {
            None => t.is_empty(),
            Some('%') => {
                // collapse: try every split point
                if rec(t, &p[1..]) {
                    return true;
                }
                for i in 0..t.len() {
                    if rec(&t[i + 1..], &p[1..]) {
                        return true;
                    }
                }
                false
            }
            Some('_') => !t.is_empty() && rec(&t[1..], &p[1..]),
            Some(c) => t.first() == Some(c) && rec(&t[1..], &p[1..]),
        }
    }
    let t: Vec<char> = text.chars().collect();
    let p: Vec<char> = pattern.chars().collect();
    rec(&t, &p)
}

pub fn add(a: &Value, b: &Value) -> Value {
    numeric_bin(a, b, |x, y| x.checked_add(y), |x, y| x + y)
}

pub fn sub(a: &Value, b: &Value) -> Value {
    numeric_bin(a, b, |x, y| x.checked_sub(y), |x, y| x - y)
}

pub fn mul(a: &Value, b: &Value) -> Value {
    numeric_bin(a, b, |x, y| x.checked_mul(y), |x, y| x * y)
}

/// Division always produces a float; division by zero yields NULL.
pub fn div(a: &Value, b: &Value) -> Value {
    match (a.as_f64(), b.as_f64()) {
        (Some(_), Some(y)) if y == 0.0 => Value::Null,
        (Some(x), Some(y)) => Value::Float(x / y),
        _ => Value::Null,
    }
}

fn numeric_bin(
    a: &Value,
    b: &Value,
    int_op: fn(i64, i64) -> Option<i64>,
    float_op: fn(f64, f64) -> f64,
) -> Value {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => match int_op(*x, *y) {
            Some(v) => Value::Int(v),
            None => Value::Float(float_op(*x as f64, *y as f64)),
        },
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => Value::Float(float_op(x, y)),
            _ => Value::Null,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn cross_type_numeric_comparison() {
        assert_eq!(try_cmp(&Value::Int(2), &Value::Float(2.0)), Some(Ordering::Equal));
        assert_eq!(try_cmp(&Value::Int(2), &Value::Float(2.5)), Some(Ordering::Less));
        assert_eq!(try_cmp(&Value::Null, &Value::Int(1)), None);
        assert_eq!(try_cmp(&Value::Int(1), &Value::Str("a".into())), None);
    }

    #[test]
    fn like_wildcards() {
        assert!(like_match("MAIL", "MA%"));
        assert!(like_match("MAIL", "%AIL"));
        assert!(like_match("MAIL", "M_IL"));
        assert!(!like_match("MAIL", "AIR%"));
        assert!(like_match("", "%"));
        assert!(!like_match("", "_"));
    }

    #[test]
    fn float_literals_reparse_as_floats() {
        assert_eq!(Value::Float(1.0).render_sql(), "1.0");
        assert_eq!(Value::Float(0.07).render_sql(), "0.07");
        assert_eq!(Value::Int(35).render_sql(), "35");
        assert_eq!(Value::Str("O'HARE".into()).render_sql(), "'O''HARE'");
        assert_eq!(Value::Date("1994-01-01".into()).render_sql(), "DATE '1994-01-01'");
    }

    #[test]
    fn division_by_zero_is_null() {
        assert_eq!(div(&Value::Int(4), &Value::Int(0)), Value::Null);
        assert_eq!(div(&Value::Int(4), &Value::Int(2)), Value::Float(2.0));
    }

    #[test]
    fn array_literal_rendering() {
        assert_eq!(Value::IntArray(vec![1, 3, 4]).render_sql(), "ARRAY[1,3,4]");
        assert_eq!(Value::IntArray(vec![]).render_sql(), "ARRAY[]");
    }
}
