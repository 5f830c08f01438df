//! Boolean keyword queries over titles, abstracts and keywords.
//!
//! Syntax: quoted or bare terms joined with `AND` / `OR` (AND binds
//! tighter) and grouped with parentheses. An optional `TITLE-ABS-KEY( ... )`
//! wrapper is accepted. A term matches when the text contains its
//! `*`-separated pieces in order, compared case-insensitively with runs of
//! whitespace collapsed to one space.

use crate::corpus::PublicationRecord;

/// Arab Spring query: the `TITLE-ABS-KEY` clause of the Scopus search.
pub const DEFAULT_TOPIC_QUERY: &str = r#"TITLE-ABS-KEY("*arab spring*" OR "*arab-spring*" OR "*arab uprising*" OR "*arab-uprising*" OR "2011 revolution*" OR "2011 uprising*" OR "middle east uprising*" OR (("uprising*" OR "civil unrest*" OR "protests" OR "revolution*") AND ("arab" OR "middle east" OR "north africa")))"#;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopicQuery {
    /// Non-empty pieces of a wildcard term, lowercased.
    Term(Vec<String>),
    And(Vec<TopicQuery>),
    Or(Vec<TopicQuery>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("query error at byte {offset}: {message}")]
pub struct QueryError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Term(String),
    And,
    Or,
    Open,
    Close,
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn tokenize(input: &str) -> Result<Vec<(usize, Token)>, QueryError> {
    let mut tokens = Vec::new();
    let mut chars = input.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                chars.next();
                tokens.push((i, Token::Open));
            }
            ')' => {
                chars.next();
                tokens.push((i, Token::Close));
            }
            '"' => {
                chars.next();
                let mut term = String::new();
                let mut closed = false;
                for (_, c) in chars.by_ref() {
                    if c == '"' {
                        closed = true;
                        break;
                    }
                    term.push(c);
                }
                if !closed {
                    return Err(QueryError { offset: i, message: "unterminated quote".into() });
                }
                tokens.push((i, Token::Term(term)));
            }
            _ => {
                let mut word = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == '"' {
                        break;
                    }
                    word.push(c);
                    chars.next();
                }
                let tok = match word.as_str() {
                    "AND" | "and" => Token::And,
                    "OR" | "or" => Token::Or,
                    _ => Token::Term(word),
                };
                tokens.push((i, tok));
            }
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.len, |(o, _)| *o)
    }

    fn err(&self, message: &str) -> QueryError {
        QueryError { offset: self.offset(), message: message.to_string() }
    }

    fn or_expr(&mut self) -> Result<TopicQuery, QueryError> {
        let mut items = vec![self.and_expr()?];
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            items.push(self.and_expr()?);
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { TopicQuery::Or(items) })
    }

    fn and_expr(&mut self) -> Result<TopicQuery, QueryError> {
        let mut items = vec![self.primary()?];
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            items.push(self.primary()?);
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { TopicQuery::And(items) })
    }

    fn group(&mut self) -> Result<TopicQuery, QueryError> {
        self.pos += 1;
        let inner = self.or_expr()?;
        if self.peek() != Some(&Token::Close) {
            return Err(self.err("expected `)`"));
        }
        self.pos += 1;
        Ok(inner)
    }

    fn primary(&mut self) -> Result<TopicQuery, QueryError> {
        match self.peek().cloned() {
            Some(Token::Open) => self.group(),
            Some(Token::Term(t)) => {
                if t.eq_ignore_ascii_case("TITLE-ABS-KEY")
                    && matches!(self.tokens.get(self.pos + 1), Some((_, Token::Open)))
                {
                    self.pos += 1;
                    return self.group();
                }
                let pieces: Vec<String> =
                    normalize(&t).split('*').map(str::trim).filter(|p| !p.is_empty()).map(String::from).collect();
                if pieces.is_empty() {
                    return Err(self.err("empty term"));
                }
                self.pos += 1;
                Ok(TopicQuery::Term(pieces))
            }
            _ => Err(self.err("expected a term or `(`")),
        }
    }
}

fn contains_in_order(text: &str, pieces: &[String]) -> bool {
    let mut from = 0;
    for p in pieces {
        match text[from..].find(p.as_str()) {
            Some(i) => from += i + p.len(),
            None => return false,
        }
    }
    true
}

impl TopicQuery {
    pub fn parse(input: &str) -> Result<TopicQuery, QueryError> {
        let tokens = tokenize(input)?;
        let mut p = Parser { tokens, pos: 0, len: input.len() };
        let q = p.or_expr()?;
        if p.pos != p.tokens.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(q)
    }

    pub fn default_query() -> TopicQuery {
        TopicQuery::parse(DEFAULT_TOPIC_QUERY).expect("bundled query parses")
    }

    /// Evaluate over pre-normalized fields.
    pub fn eval(&self, fields: &[String]) -> bool {
        match self {
            TopicQuery::Term(pieces) => fields.iter().any(|f| contains_in_order(f, pieces)),
            TopicQuery::And(items) => items.iter().all(|q| q.eval(fields)),
            TopicQuery::Or(items) => items.iter().any(|q| q.eval(fields)),
        }
    }

    pub fn matches(&self, record: &PublicationRecord) -> bool {
        let mut fields = vec![normalize(&record.title), normalize(&record.abstract_text)];
        fields.extend(record.keywords.iter().map(|k| normalize(k)));
        self.eval(&fields)
    }
}
