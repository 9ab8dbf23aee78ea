//! Composition schedule grammar.
//!
//! ```text
//! expr := term ('>' term)*
//! term := atom ('|' atom)*
//! atom := name | '(' expr ')'
//! ```
//!
//! `|` binds tighter than `>`, and both operators are left-associative.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScheduleExpr {
    Leaf(String),
    Seq(Box<ScheduleExpr>, Box<ScheduleExpr>),
    Par(Box<ScheduleExpr>, Box<ScheduleExpr>),
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("empty schedule")]
    Empty,
    #[error("unbalanced parentheses at position {0}")]
    Unbalanced(usize),
    #[error("unexpected {found} at position {pos}")]
    Unexpected { pos: usize, found: String },
    #[error("undeclared model `{0}` in schedule")]
    Undeclared(String),
    #[error("model `{0}` appears more than once in schedule")]
    Duplicate(String),
}

impl ScheduleExpr {
    pub fn leaf(name: impl Into<String>) -> Self {
        ScheduleExpr::Leaf(name.into())
    }

    pub fn seq(left: ScheduleExpr, right: ScheduleExpr) -> Self {
        ScheduleExpr::Seq(Box::new(left), Box::new(right))
    }

    pub fn par(left: ScheduleExpr, right: ScheduleExpr) -> Self {
        ScheduleExpr::Par(Box::new(left), Box::new(right))
    }

    /// Model names in left-to-right order.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            ScheduleExpr::Leaf(name) => out.push(name),
            ScheduleExpr::Seq(l, r) | ScheduleExpr::Par(l, r) => {
                l.collect_leaves(out);
                r.collect_leaves(out);
            }
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        match self {
            ScheduleExpr::Leaf(n) => n == name,
            ScheduleExpr::Seq(l, r) | ScheduleExpr::Par(l, r) => l.contains(name) || r.contains(name),
        }
    }

    /// True when `producer` runs strictly before `consumer` in the dataflow
    /// DAG, i.e. some `Seq` node has the producer on its left and the
    /// consumer on its right.
    pub fn precedes(&self, producer: &str, consumer: &str) -> bool {
        match self {
            ScheduleExpr::Leaf(_) => false,
            ScheduleExpr::Seq(l, r) => {
                (l.contains(producer) && r.contains(consumer))
                    || l.precedes(producer, consumer)
                    || r.precedes(producer, consumer)
            }
            ScheduleExpr::Par(l, r) => l.precedes(producer, consumer) || r.precedes(producer, consumer),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            ScheduleExpr::Leaf(_) => 1,
            ScheduleExpr::Seq(l, r) | ScheduleExpr::Par(l, r) => 1 + l.depth().max(r.depth()),
        }
    }
}

impl fmt::Display for ScheduleExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleExpr::Leaf(name) => f.write_str(name),
            ScheduleExpr::Seq(l, r) => {
                write!(f, "{l} > ")?;
                match **r {
                    ScheduleExpr::Seq(..) => write!(f, "({r})"),
                    _ => write!(f, "{r}"),
                }
            }
            ScheduleExpr::Par(l, r) => {
                match **l {
                    ScheduleExpr::Seq(..) => write!(f, "({l})")?,
                    _ => write!(f, "{l}")?,
                }
                f.write_str(" | ")?;
                match **r {
                    ScheduleExpr::Leaf(_) => write!(f, "{r}"),
                    _ => write!(f, "({r})"),
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Name(String),
    Seq,
    Par,
    Open,
    Close,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, ScheduleError> {
    let mut tokens = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '>' => {
                tokens.push((pos, Token::Seq));
                i += 1;
            }
            '|' => {
                tokens.push((pos, Token::Par));
                i += 1;
            }
            '(' => {
                tokens.push((pos, Token::Open));
                i += 1;
            }
            ')' => {
                tokens.push((pos, Token::Close));
                i += 1;
            }
            c if c.is_alphanumeric() || c == '_' || c == '-' => {
                let start = i;
                while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_' || chars[i].1 == '-') {
                    i += 1;
                }
                let name: String = chars[start..i].iter().map(|(_, c)| *c).collect();
                tokens.push((pos, Token::Name(name)));
            }
            other => {
                return Err(ScheduleError::Unexpected {
                    pos,
                    found: format!("character `{other}`"),
                });
            }
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: Vec<(usize, Token)>,
    next: usize,
    end: usize,
    declared: &'a [String],
    seen: HashSet<String>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.next).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.tokens.get(self.next).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn expr(&mut self) -> Result<ScheduleExpr, ScheduleError> {
        let mut left = self.term()?;
        while self.peek() == Some(&Token::Seq) {
            self.next += 1;
            let right = self.term()?;
            left = ScheduleExpr::seq(left, right);
        }
        Ok(left)
    }

    fn term(&mut self) -> Result<ScheduleExpr, ScheduleError> {
        let mut left = self.atom()?;
        while self.peek() == Some(&Token::Par) {
            self.next += 1;
            let right = self.atom()?;
            left = ScheduleExpr::par(left, right);
        }
        Ok(left)
    }

    fn atom(&mut self) -> Result<ScheduleExpr, ScheduleError> {
        let pos = self.pos();
        match self.tokens.get(self.next).map(|(_, t)| t.clone()) {
            Some(Token::Name(name)) => {
                self.next += 1;
                if !self.declared.contains(&name) {
                    return Err(ScheduleError::Undeclared(name));
                }
                if !self.seen.insert(name.clone()) {
                    return Err(ScheduleError::Duplicate(name));
                }
                Ok(ScheduleExpr::Leaf(name))
            }
            Some(Token::Open) => {
                self.next += 1;
                let inner = self.expr()?;
                match self.peek() {
                    Some(Token::Close) => {
                        self.next += 1;
                        Ok(inner)
                    }
                    None => Err(ScheduleError::Unbalanced(pos)),
                    Some(other) => Err(ScheduleError::Unexpected {
                        pos: self.pos(),
                        found: describe(other),
                    }),
                }
            }
            Some(Token::Close) => Err(ScheduleError::Unbalanced(pos)),
            Some(other) => Err(ScheduleError::Unexpected {
                pos,
                found: describe(&other),
            }),
            None if self.tokens.is_empty() => Err(ScheduleError::Empty),
            None => Err(ScheduleError::Unexpected {
                pos,
                found: "end of input".into(),
            }),
        }
    }
}

fn describe(token: &Token) -> String {
    match token {
        Token::Name(n) => format!("name `{n}`"),
        Token::Seq => "`>`".into(),
        Token::Par => "`|`".into(),
        Token::Open => "`(`".into(),
        Token::Close => "`)`".into(),
    }
}

/// Parses a schedule string, resolving every leaf against `models`.
pub fn parse_schedule(text: &str, models: &[String]) -> Result<ScheduleExpr, ScheduleError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        next: 0,
        end: text.len(),
        declared: models,
        seen: HashSet::new(),
    };
    let expr = parser.expr()?;
    match parser.tokens.get(parser.next) {
        None => Ok(expr),
        Some((pos, Token::Close)) => Err(ScheduleError::Unbalanced(*pos)),
        Some((pos, tok)) => Err(ScheduleError::Unexpected {
            pos: *pos,
            found: describe(tok),
        }),
    }
}
