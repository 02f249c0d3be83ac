use thiserror::Error;

use super::{BinOp, Expr, Func, NamedConst};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("`{name}` at byte {offset} expects {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: &'static str,
        found: usize,
        offset: usize,
    },
    #[error("variable `x{index}` at byte {offset} exceeds dimension {dimension}")]
    VariableOutOfRange {
        index: usize,
        dimension: usize,
        offset: usize,
    },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::Arity { offset, .. }
            | ParseError::VariableOutOfRange { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn syntax(offset: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        offset,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'0'..=b'9' | b'.' => {
                let mut j = i;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                if j < bytes.len() && bytes[j] == b'.' {
                    j += 1;
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                    let mut k = j + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    if k < bytes.len() && bytes[k].is_ascii_digit() {
                        while k < bytes.len() && bytes[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let lit = &text[i..j];
                let value: f64 = lit
                    .parse()
                    .map_err(|_| syntax(start, format!("malformed number `{lit}`")))?;
                if !value.is_finite() {
                    return Err(syntax(start, format!("number `{lit}` is out of range")));
                }
                out.push((Tok::Num(value), start));
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                out.push((Tok::Ident(text[i..j].to_string()), start));
                i = j;
                continue;
            }
            _ => {
                // U+2212 MINUS SIGN
                if text[i..].starts_with('\u{2212}') {
                    out.push((Tok::Minus, start));
                    i += '\u{2212}'.len_utf8();
                    continue;
                }
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(syntax(start, format!("unexpected character `{ch}`")));
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    dimension: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.unary()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exponent = self.factor()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            let inner = self.primary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let (tok, offset) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect_close(offset)?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    return self.call(name, offset);
                }
                self.identifier(name, offset)
            }
            Tok::End => Err(syntax(offset, "expected operand, found end of input")),
            other => Err(syntax(
                offset,
                format!("expected operand, found {}", other.describe()),
            )),
        }
    }

    fn expect_close(&mut self, open_offset: usize) -> Result<(), ParseError> {
        match self.peek() {
            Tok::RParen => {
                self.bump();
                Ok(())
            }
            other => Err(syntax(
                self.offset(),
                format!(
                    "expected `)` to close `(` at byte {open_offset}, found {}",
                    other.describe()
                ),
            )),
        }
    }

    fn call(&mut self, name: String, offset: usize) -> Result<Expr, ParseError> {
        let func = Func::from_name(&name).ok_or_else(|| ParseError::UnknownIdentifier {
            name: name.clone(),
            offset,
        })?;
        let open = self.offset();
        self.bump();
        let mut args = vec![self.expr()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            args.push(self.expr()?);
        }
        self.expect_close(open)?;
        let ok = if func.is_variadic() {
            args.len() >= 2
        } else {
            args.len() == 1
        };
        if !ok {
            return Err(ParseError::Arity {
                name,
                expected: if func.is_variadic() { "2 or more" } else { "1" },
                found: args.len(),
                offset,
            });
        }
        Ok(Expr::Call(func, args))
    }

    fn identifier(&self, name: String, offset: usize) -> Result<Expr, ParseError> {
        match name.as_str() {
            "pi" => return Ok(Expr::Named(NamedConst::Pi)),
            "e" => return Ok(Expr::Named(NamedConst::E)),
            _ => {}
        }
        if let Some(digits) = name.strip_prefix('x') {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                let index: usize = digits.parse().unwrap_or(usize::MAX);
                if index == 0 {
                    return Err(ParseError::UnknownIdentifier { name, offset });
                }
                if index > self.dimension {
                    return Err(ParseError::VariableOutOfRange {
                        index,
                        dimension: self.dimension,
                        offset,
                    });
                }
                return Ok(Expr::Var(index - 1));
            }
        }
        if Func::from_name(&name).is_some() {
            return Err(syntax(offset, format!("function `{name}` must be called")));
        }
        Err(ParseError::UnknownIdentifier { name, offset })
    }
}

/// Parse `text` into an expression over the variables `x1 .. x{dimension}`.
pub fn parse_expression(text: &str, dimension: usize) -> Result<Expr, ParseError> {
    if text.trim().is_empty() {
        return Err(syntax(0, "empty expression"));
    }
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        dimension,
    };
    let e = p.expr()?;
    match p.peek() {
        Tok::End => Ok(e),
        other => Err(syntax(
            p.offset(),
            format!("unexpected {} after expression", other.describe()),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Expr {
        parse_expression(s, 3).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(parse("1 - 2 - 3").to_string(), "((1 - 2) - 3)");
        assert_eq!(parse("2^3^2").to_string(), "(2 ^ (3 ^ 2))");
        assert_eq!(parse("-x1^2").to_string(), "((-x1) ^ 2)");
        assert_eq!(parse("2^-1").to_string(), "(2 ^ (-1))");
        assert_eq!(parse("x1*x2/x3").to_string(), "((x1 * x2) / x3)");
    }

    #[test]
    fn unicode_minus_and_whitespace() {
        assert_eq!(parse(" x1\t−\n2 ").to_string(), "(x1 - 2)");
    }

    #[test]
    fn numbers() {
        assert_eq!(parse("1.5e-3"), Expr::Const(1.5e-3));
        assert_eq!(parse(".25"), Expr::Const(0.25));
        assert_eq!(parse("3."), Expr::Const(3.0));
        assert!(matches!(
            parse_expression("1e999", 1),
            Err(ParseError::Syntax { offset: 0, .. })
        ));
    }

    #[test]
    fn trailing_operator_is_syntax_error() {
        let err = parse_expression("x1 + ", 2).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { .. }), "{err:?}");
        assert_eq!(err.offset(), 5);
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(
            parse_expression("foo + 1", 2),
            Err(ParseError::UnknownIdentifier { offset: 0, .. })
        ));
        assert!(matches!(
            parse_expression("1 + bar(2)", 2),
            Err(ParseError::UnknownIdentifier { offset: 4, .. })
        ));
        assert!(matches!(
            parse_expression("sqrt(1, 2)", 2),
            Err(ParseError::Arity { found: 2, .. })
        ));
        assert!(matches!(
            parse_expression("min(1)", 2),
            Err(ParseError::Arity { found: 1, .. })
        ));
        assert!(matches!(
            parse_expression("x3", 2),
            Err(ParseError::VariableOutOfRange {
                index: 3,
                dimension: 2,
                offset: 0
            })
        ));
        assert!(matches!(
            parse_expression("x0", 2),
            Err(ParseError::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            parse_expression("(x1", 2),
            Err(ParseError::Syntax { offset: 3, .. })
        ));
        assert!(matches!(
            parse_expression("x1 x2", 2),
            Err(ParseError::Syntax { offset: 3, .. })
        ));
        assert!(matches!(
            parse_expression("--x1", 2),
            Err(ParseError::Syntax { offset: 1, .. })
        ));
        assert!(matches!(
            parse_expression("   ", 2),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            parse_expression("x1 # 2", 2),
            Err(ParseError::Syntax { offset: 3, .. })
        ));
    }

    #[test]
    fn identifiers_are_case_sensitive() {
        assert!(parse_expression("PI", 1).is_err());
        assert!(parse_expression("X1", 1).is_err());
        assert!(parse_expression("Sin(x1)", 1).is_err());
    }
}
