use std::fmt;

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    At,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Dot,
    Colon,
    Semicolon,
    Hash,
    Star,
    Arrow,
    Minus,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(i) => write!(f, "number {i}"),
            Tok::Float(x) => write!(f, "number {x}"),
            Tok::Str(s) => write!(f, "string {s:?}"),
            Tok::At => f.write_str("`@`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::LBrace => f.write_str("`{`"),
            Tok::RBrace => f.write_str("`}`"),
            Tok::LBracket => f.write_str("`[`"),
            Tok::RBracket => f.write_str("`]`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Semicolon => f.write_str("`;`"),
            Tok::Hash => f.write_str("`#`"),
            Tok::Star => f.write_str("`*`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Ne => f.write_str("`!=`"),
            Tok::Lt => f.write_str("`<`"),
            Tok::Le => f.write_str("`<=`"),
            Tok::Gt => f.write_str("`>`"),
            Tok::Ge => f.write_str("`>=`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: u32,
    pub column: u32,
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    column: u32,
}

impl Cursor<'_> {
    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.bump();
            true
        } else {
            false
        }
    }
}

/// Splits statement text into tokens.
///
/// A number may directly follow the keyword `after` or directly precede its
/// unit (`after3600 s`, `3600s`); both forms lex as separate tokens.
pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut cur = Cursor {
        chars: text.chars().peekable(),
        line: 1,
        column: 1,
    };
    let mut out = Vec::new();
    loop {
        while cur.peek().is_some_and(char::is_whitespace) {
            cur.bump();
        }
        let (line, column) = (cur.line, cur.column);
        let Some(c) = cur.bump() else {
            // End-of-input errors point at the last real token.
            let (line, column) = out.last().map_or((1, 1), |t: &Token| (t.line, t.column));
            out.push(Token {
                tok: Tok::Eof,
                line,
                column,
            });
            return Ok(out);
        };
        let mut push = |tok| out.push(Token { tok, line, column });
        match c {
            '/' if cur.peek() == Some('/') => {
                while cur.peek().is_some_and(|c| c != '\n') {
                    cur.bump();
                }
            }
            '/' if cur.peek() == Some('*') => {
                cur.bump();
                let mut prev = '\0';
                loop {
                    match cur.bump() {
                        Some('/') if prev == '*' => break,
                        Some(c) => prev = c,
                        None => return Err(lex_error(line, column, "unterminated comment")),
                    }
                }
            }
            '@' => push(Tok::At),
            '(' => push(Tok::LParen),
            ')' => push(Tok::RParen),
            '{' => push(Tok::LBrace),
            '}' => push(Tok::RBrace),
            '[' => push(Tok::LBracket),
            ']' => push(Tok::RBracket),
            ',' => push(Tok::Comma),
            '.' => push(Tok::Dot),
            ':' => push(Tok::Colon),
            ';' => push(Tok::Semicolon),
            '#' => push(Tok::Hash),
            '*' => push(Tok::Star),
            '=' => push(Tok::Eq),
            '-' if cur.eat('>') => push(Tok::Arrow),
            '-' => push(Tok::Minus),
            '!' if cur.eat('=') => push(Tok::Ne),
            '<' if cur.eat('=') => push(Tok::Le),
            '<' if cur.eat('>') => push(Tok::Ne),
            '<' => push(Tok::Lt),
            '>' if cur.eat('=') => push(Tok::Ge),
            '>' => push(Tok::Gt),
            '\'' | '"' => {
                let mut s = String::new();
                loop {
                    match cur.bump() {
                        None => return Err(lex_error(line, column, "unterminated string literal")),
                        Some(q) if q == c => break,
                        Some('\\') => match cur.bump() {
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            Some(other) => s.push(other),
                            None => {
                                return Err(lex_error(line, column, "unterminated string literal"))
                            }
                        },
                        Some(other) => s.push(other),
                    }
                }
                push(Tok::Str(s));
            }
            c if c.is_ascii_digit() => {
                let mut digits = String::from(c);
                while let Some(d) = cur.peek().filter(char::is_ascii_digit) {
                    digits.push(d);
                    cur.bump();
                }
                let mut is_float = false;
                // Only treat `.` as a decimal point when a digit follows.
                if cur.peek() == Some('.') {
                    let mut ahead = cur.chars.clone();
                    ahead.next();
                    if ahead.peek().is_some_and(char::is_ascii_digit) {
                        is_float = true;
                        digits.push('.');
                        cur.bump();
                        while let Some(d) = cur.peek().filter(char::is_ascii_digit) {
                            digits.push(d);
                            cur.bump();
                        }
                    }
                }
                if matches!(cur.peek(), Some('e' | 'E')) {
                    let mut ahead = cur.chars.clone();
                    ahead.next();
                    let next = ahead.peek().copied();
                    let signed = matches!(next, Some('+' | '-'));
                    if signed {
                        ahead.next();
                    }
                    if ahead.peek().is_some_and(char::is_ascii_digit) {
                        is_float = true;
                        digits.push('e');
                        cur.bump();
                        if signed {
                            digits.push(cur.bump().unwrap());
                        }
                        while let Some(d) = cur.peek().filter(char::is_ascii_digit) {
                            digits.push(d);
                            cur.bump();
                        }
                    }
                }
                let tok = if is_float {
                    Tok::Float(digits.parse().map_err(|_| lex_error(line, column, "invalid number"))?)
                } else {
                    Tok::Int(
                        digits
                            .parse()
                            .map_err(|_| lex_error(line, column, "integer literal out of range"))?,
                    )
                };
                push(tok);
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut ident = String::from(c);
                while let Some(d) = cur.peek().filter(|d| d.is_ascii_alphanumeric() || *d == '_') {
                    ident.push(d);
                    cur.bump();
                }
                match split_after_number(&ident) {
                    Some(n) => {
                        let n = n
                            .parse()
                            .map_err(|_| lex_error(line, column, "integer literal out of range"))?;
                        out.push(Token {
                            tok: Tok::Ident(ident[..5].to_owned()),
                            line,
                            column,
                        });
                        out.push(Token {
                            tok: Tok::Int(n),
                            line,
                            column: column + 5,
                        });
                    }
                    None => push(Tok::Ident(ident)),
                }
            }
            other => return Err(lex_error(line, column, &format!("unexpected character {other:?}"))),
        }
    }
}

/// `after3600` -> `Some("3600")`.
fn split_after_number(ident: &str) -> Option<&str> {
    let (head, tail) = ident.split_at_checked(5)?;
    (head.eq_ignore_ascii_case("after") && !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit()))
        .then_some(tail)
}

fn lex_error(line: u32, column: u32, msg: &str) -> ParseError {
    ParseError {
        line,
        column,
        expected: Vec::new(),
        found: msg.to_owned(),
    }
}
