use super::{BinOp, Expr, Func, ParseError};

#[derive(Clone, Debug, PartialEq)]
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
            Tok::End => "end of input".into(),
        }
    }
}

fn err(offset: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        offset,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let tok = match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit
                    .parse()
                    .map_err(|_| err(start, format!("malformed number `{lit}`")))?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(err(start, format!("unknown token `{ch}`")));
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
            lhs = Expr::bin(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::bin(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::bin(BinOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let (tok, at) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    let func = Func::from_name(&name)
                        .ok_or_else(|| err(at, format!("unknown function `{name}`")))?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect_close()?;
                    Ok(Expr::call(func, arg))
                } else if Func::from_name(&name).is_some() {
                    Err(err(at, format!("function `{name}` must be called with one argument")))
                } else {
                    Ok(Expr::Sym(name))
                }
            }
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect_close()?;
                Ok(inner)
            }
            Tok::End => Err(err(at, "unexpected end of input")),
            other => Err(err(at, format!("unexpected {}", other.describe()))),
        }
    }

    fn expect_close(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Tok::RParen => {
                self.bump();
                Ok(())
            }
            Tok::End => Err(err(self.offset(), "unbalanced parenthesis: expected `)`")),
            Tok::Ident(_) | Tok::Num(_) | Tok::LParen => Err(err(
                self.offset(),
                format!("unexpected {} (function calls take exactly one argument)", self.peek().describe()),
            )),
            other => Err(err(self.offset(), format!("expected `)`, found {}", other.describe()))),
        }
    }
}

pub fn parse_expression(text: &str) -> Result<Expr, ParseError> {
    if text.trim().is_empty() {
        return Err(err(0, "empty expression"));
    }
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let e = p.expr()?;
    match p.peek() {
        Tok::End => Ok(e),
        Tok::RParen => Err(err(p.offset(), "unbalanced parenthesis: unexpected `)`")),
        other => Err(err(p.offset(), format!("trailing input starting with {}", other.describe()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::BinOp::*;

    fn p(s: &str) -> Expr {
        parse_expression(s).unwrap()
    }

    #[test]
    fn grammar_examples() {
        assert_eq!(
            p("2*sin(k)"),
            Expr::bin(Mul, Expr::num(2.0), Expr::call(Func::Sin, Expr::sym("k")))
        );
        assert_eq!(
            p("2*(g - cos(k))"),
            Expr::bin(
                Mul,
                Expr::num(2.0),
                Expr::bin(Sub, Expr::sym("g"), Expr::call(Func::Cos, Expr::sym("k")))
            )
        );
        let e = parse_expression("sin(k").unwrap_err();
        assert_eq!(e.offset, 5);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(p("-2^2"), Expr::neg(Expr::bin(Pow, Expr::num(2.0), Expr::num(2.0))));
        assert_eq!(
            p("2^3^2"),
            Expr::bin(Pow, Expr::num(2.0), Expr::bin(Pow, Expr::num(3.0), Expr::num(2.0)))
        );
        assert_eq!(p("2^-1"), Expr::bin(Pow, Expr::num(2.0), Expr::neg(Expr::num(1.0))));
        assert_eq!(
            p("1-2-3"),
            Expr::bin(Sub, Expr::bin(Sub, Expr::num(1.0), Expr::num(2.0)), Expr::num(3.0))
        );
        assert_eq!(
            p("8/4/2"),
            Expr::bin(Div, Expr::bin(Div, Expr::num(8.0), Expr::num(4.0)), Expr::num(2.0))
        );
        assert_eq!(
            p("1+2*3"),
            Expr::bin(Add, Expr::num(1.0), Expr::bin(Mul, Expr::num(2.0), Expr::num(3.0)))
        );
        assert_eq!(
            p("-a*b"),
            Expr::bin(Mul, Expr::neg(Expr::sym("a")), Expr::sym("b"))
        );
        assert_eq!(p("1.5e-3"), Expr::num(1.5e-3));
        assert_eq!(p(".5"), Expr::num(0.5));
    }

    #[test]
    fn error_offsets() {
        assert_eq!(parse_expression("2 $ 3").unwrap_err().offset, 2);
        assert_eq!(parse_expression("foo(k)").unwrap_err().offset, 0);
        assert_eq!(parse_expression("k)").unwrap_err().offset, 1);
        assert_eq!(parse_expression("k k").unwrap_err().offset, 2);
        assert_eq!(parse_expression("(1+2").unwrap_err().offset, 4);
        assert_eq!(parse_expression("1+").unwrap_err().offset, 2);
        assert_eq!(parse_expression("sin + 1").unwrap_err().offset, 0);
        assert!(parse_expression("  ").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn leaf() -> impl Strategy<Value = Expr> {
            prop_oneof![
                (0.0f64..1e6).prop_map(Expr::Num),
                (0u32..1000).prop_map(|n| Expr::Num(n as f64)),
                prop_oneof![Just("k"), Just("g"), Just("h_2"), Just("alpha")].prop_map(Expr::sym),
            ]
        }

        fn expr() -> impl Strategy<Value = Expr> {
            leaf().prop_recursive(8, 128, 2, |inner| {
                prop_oneof![
                    inner.clone().prop_map(Expr::neg),
                    (
                        prop_oneof![Just(Add), Just(Sub), Just(Mul), Just(Div), Just(Pow)],
                        inner.clone(),
                        inner.clone()
                    )
                        .prop_map(|(op, a, b)| Expr::bin(op, a, b)),
                    (proptest::sample::select(Func::ALL.to_vec()), inner)
                        .prop_map(|(f, a)| Expr::call(f, a)),
                ]
            })
        }

        proptest! {
            #[test]
            fn print_parse_round_trip(e in expr()) {
                let printed = e.to_string();
                prop_assert_eq!(parse_expression(&printed).unwrap(), e);
            }
        }
    }
}
