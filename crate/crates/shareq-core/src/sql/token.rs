use alloc::string::String;
use alloc::vec::Vec;

use super::SqlError;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    /// Unquoted identifier or keyword, lowercased (SQL identifiers are
    /// case-insensitive in this subset).
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    /// Positional parameter `?`; numbering is assigned in lexical order.
    Param(u32),
    Sym(&'static str),
}

pub fn tokenize(input: &str) -> Result<Vec<(Tok, usize)>, SqlError> {
    let bytes = input.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let mut param_no = 0u32;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\r' | '\n' => i += 1,
            '-' if i + 1 < bytes.len() && bytes[i + 1] == b'-' => {
                // line comment
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            '\'' => {
                let start = i;
                i += 1;
                let mut s = String::new();
                loop {
                    if i >= bytes.len() {
                        return Err(SqlError::Syntax {
                            pos: start,
                            msg: "unterminated string literal".into(),
                        });
                    }
                    if bytes[i] == b'\'' {
                        if i + 1 < bytes.len() && bytes[i + 1] == b'\'' {
                            s.push('\'');
                            i += 2;
                            continue;
                        }
                        i += 1;
                        break;
                    }
                    // copy the full utf-8 char
                    let ch_len = utf8_len(bytes[i]);
                    s.push_str(&input[i..i + ch_len]);
                    i += ch_len;
                }
                out.push((Tok::Str(s), start));
            }
            '?' => {
                out.push((Tok::Param(param_no), i));
                param_no += 1;
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let mut is_float = false;
                if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                    is_float = true;
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        is_float = true;
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &input[start..i];
                if is_float {
                    let v = text.parse::<f64>().map_err(|_| SqlError::Syntax {
                        pos: start,
                        msg: alloc::format!("bad numeric literal {text}"),
                    })?;
                    out.push((Tok::Float(v), start));
                } else {
                    match text.parse::<i64>() {
                        Ok(v) => out.push((Tok::Int(v), start)),
                        Err(_) => out.push((
                            Tok::Float(text.parse::<f64>().map_err(|_| SqlError::Syntax {
                                pos: start,
                                msg: alloc::format!("bad numeric literal {text}"),
                            })?),
                            start,
                        )),
                    }
                }
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((Tok::Ident(input[start..i].to_ascii_lowercase()), start));
            }
            '<' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    out.push((Tok::Sym("<="), i));
                    i += 2;
                } else if i + 1 < bytes.len() && bytes[i + 1] == b'>' {
                    out.push((Tok::Sym("<>"), i));
                    i += 2;
                } else {
                    out.push((Tok::Sym("<"), i));
                    i += 1;
                }
            }
            '>' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    out.push((Tok::Sym(">="), i));
                    i += 2;
                } else {
                    out.push((Tok::Sym(">"), i));
                    i += 1;
                }
            }
            '!' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    out.push((Tok::Sym("<>"), i));
                    i += 2;
                } else {
                    return Err(SqlError::Syntax { pos: i, msg: "unexpected '!'".into() });
                }
            }
            '(' | ')' | '[' | ']' | ',' | '.' | ';' | '+' | '-' | '*' | '/' | '=' => {
                let sym = match c {
                    '(' => "(",
                    ')' => ")",
                    '[' => "[",
                    ']' => "]",
                    ',' => ",",
                    '.' => ".",
                    ';' => ";",
                    '+' => "+",
                    '-' => "-",
                    '*' => "*",
                    '/' => "/",
                    _ => "=",
                };
                out.push((Tok::Sym(sym), i));
                i += 1;
            }
            _ => {
                return Err(SqlError::Syntax {
                    pos: i,
                    msg: alloc::format!("unexpected character {c:?}"),
                })
            }
        }
    }
    Ok(out)
}

fn utf8_len(first: u8) -> usize {
    if first < 0x80 {
        1
    } else if first >> 5 == 0b110 {
        2
    } else if first >> 4 == 0b1110 {
        3
    } else {
        4
    }
}
