//! Streaming triple extraction for the Turtle subset used by capability files.
//!
//! Supported: `@prefix`/`PREFIX`, `@base`/`BASE`, IRI references, prefixed
//! names, `a`, blank node labels, blank node property lists, string literals
//! (all four quoting forms, with language tags or datatypes), numeric and
//! boolean literals, predicate-object lists and object lists. Anything else
//! (collections, quoted triples, graph blocks) is a syntax error.

use std::collections::HashMap;
use std::fmt;

pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
const XSD: &str = "http://www.w3.org/2001/XMLSchema#";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Iri(String),
    Blank(String),
    Literal(Literal),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Literal {
    pub value: String,
    pub lang: Option<String>,
    pub datatype: Option<String>,
}

impl Term {
    pub fn as_iri(&self) -> Option<&str> {
        match self {
            Term::Iri(s) => Some(s),
            _ => None,
        }
    }

    /// IRI or blank node label (`_:x`), i.e. anything usable as a subject.
    pub fn node_id(&self) -> Option<String> {
        match self {
            Term::Iri(s) => Some(s.clone()),
            Term::Blank(b) => Some(format!("_:{b}")),
            Term::Literal(_) => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Iri(s) => write!(f, "<{s}>"),
            Term::Blank(b) => write!(f, "_:{b}"),
            Term::Literal(l) => {
                write!(f, "{:?}", l.value)?;
                if let Some(lang) = &l.lang {
                    write!(f, "@{lang}")?;
                } else if let Some(dt) = &l.datatype {
                    write!(f, "^^<{dt}>")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub subject: Term,
    pub predicate: String,
    pub object: Term,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("syntax error at line {line}, column {column}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// Parses a Turtle document into triples in document order.
pub fn parse_triples(text: &str) -> Result<Vec<Triple>, SyntaxError> {
    let mut parser = Parser {
        src: text,
        pos: 0,
        prefixes: HashMap::new(),
        base: None,
        blank_counter: 0,
        triples: Vec::new(),
    };
    parser.document()?;
    Ok(parser.triples)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    prefixes: HashMap<String, String>,
    base: Option<url::Url>,
    blank_counter: usize,
    triples: Vec<Triple>,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, SyntaxError> {
        Err(self.error_at(self.pos, message))
    }

    fn error_at(&self, pos: usize, message: impl Into<String>) -> SyntaxError {
        let before = &self.src[..pos.min(self.src.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        SyntaxError {
            line,
            column,
            message: message.into(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('#') => {
                    while let Some(c) = self.bump() {
                        if c == '\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
    }

    fn expect(&mut self, c: char) -> Result<(), SyntaxError> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.bump();
            Ok(())
        } else {
            match self.peek() {
                Some(found) => self.err(format!("expected '{c}', found '{found}'")),
                None => self.err(format!("expected '{c}', found end of input")),
            }
        }
    }

    /// Case-insensitive keyword followed by whitespace.
    fn keyword(&mut self, kw: &str) -> bool {
        let rest = self.rest();
        if rest.len() >= kw.len()
            && rest.is_char_boundary(kw.len())
            && rest[..kw.len()].eq_ignore_ascii_case(kw)
            && rest[kw.len()..].starts_with(|c: char| c.is_whitespace())
        {
            self.pos += kw.len();
            true
        } else {
            false
        }
    }

    fn document(&mut self) -> Result<(), SyntaxError> {
        loop {
            self.skip_ws();
            if self.peek().is_none() {
                return Ok(());
            }
            if self.rest().starts_with("@prefix") {
                self.pos += "@prefix".len();
                self.prefix_decl()?;
                self.expect('.')?;
            } else if self.rest().starts_with("@base") {
                self.pos += "@base".len();
                self.base_decl()?;
                self.expect('.')?;
            } else if self.keyword("PREFIX") {
                self.prefix_decl()?;
            } else if self.keyword("BASE") {
                self.base_decl()?;
            } else {
                self.triples_stmt()?;
                self.expect('.')?;
            }
        }
    }

    fn prefix_decl(&mut self) -> Result<(), SyntaxError> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c == ':' {
                break;
            }
            if !(is_pn_chars(c) || c == '.') {
                return self.err(format!("invalid character '{c}' in prefix name"));
            }
            self.bump();
        }
        let name = self.src[start..self.pos].to_string();
        if name.ends_with('.') {
            return self.err("prefix name must not end with '.'");
        }
        self.expect(':')?;
        self.skip_ws();
        let iri = self.iri_ref()?;
        self.prefixes.insert(name, iri);
        Ok(())
    }

    fn base_decl(&mut self) -> Result<(), SyntaxError> {
        self.skip_ws();
        let start = self.pos;
        let iri = self.iri_ref()?;
        match url::Url::parse(&iri) {
            Ok(u) => {
                self.base = Some(u);
                Ok(())
            }
            Err(e) => Err(self.error_at(start, format!("invalid base IRI <{iri}>: {e}"))),
        }
    }

    fn triples_stmt(&mut self) -> Result<(), SyntaxError> {
        self.skip_ws();
        if self.peek() == Some('[') {
            let subject = self.blank_property_list()?;
            self.skip_ws();
            // `[ ... ] .` is a complete statement on its own
            if self.peek() == Some('.') {
                return Ok(());
            }
            self.predicate_object_list(&subject)
        } else {
            let subject = self.subject()?;
            self.predicate_object_list(&subject)
        }
    }

    fn subject(&mut self) -> Result<Term, SyntaxError> {
        self.skip_ws();
        match self.peek() {
            Some('<') => Ok(Term::Iri(self.iri_ref()?)),
            Some('_') if self.rest().starts_with("_:") => self.blank_label(),
            Some('(') => self.err("collections are not supported"),
            Some('"') | Some('\'') => self.err("literal is not allowed as subject"),
            Some(_) => Ok(Term::Iri(self.prefixed_name()?)),
            None => self.err("unexpected end of input, expected subject"),
        }
    }

    fn predicate_object_list(&mut self, subject: &Term) -> Result<(), SyntaxError> {
        loop {
            self.skip_ws();
            let predicate = self.verb()?;
            self.object_list(subject, &predicate)?;
            self.skip_ws();
            if self.peek() != Some(';') {
                return Ok(());
            }
            // one or more ';' may separate, and a trailing ';' is allowed
            while self.peek() == Some(';') {
                self.bump();
                self.skip_ws();
            }
            if matches!(self.peek(), Some('.') | Some(']') | None) {
                return Ok(());
            }
        }
    }

    fn verb(&mut self) -> Result<String, SyntaxError> {
        self.skip_ws();
        let rest = self.rest();
        if rest.starts_with('a')
            && rest[1..]
                .chars()
                .next()
                .is_some_and(|c| c.is_whitespace() || c == '<' || c == '[' || c == '"')
        {
            self.bump();
            return Ok(RDF_TYPE.to_string());
        }
        match self.peek() {
            Some('<') => self.iri_ref(),
            Some('_') | Some('[') | Some('"') | Some('\'') => {
                self.err("predicate must be an IRI")
            }
            Some(_) => self.prefixed_name(),
            None => self.err("unexpected end of input, expected predicate"),
        }
    }

    fn object_list(&mut self, subject: &Term, predicate: &str) -> Result<(), SyntaxError> {
        loop {
            let object = self.object()?;
            self.triples.push(Triple {
                subject: subject.clone(),
                predicate: predicate.to_string(),
                object,
            });
            self.skip_ws();
            if self.peek() == Some(',') {
                self.bump();
            } else {
                return Ok(());
            }
        }
    }

    fn object(&mut self) -> Result<Term, SyntaxError> {
        self.skip_ws();
        match self.peek() {
            Some('<') => Ok(Term::Iri(self.iri_ref()?)),
            Some('_') if self.rest().starts_with("_:") => self.blank_label(),
            Some('[') => self.blank_property_list(),
            Some('(') => self.err("collections are not supported"),
            Some('"') | Some('\'') => self.rdf_literal(),
            Some(c) if c.is_ascii_digit() || c == '+' || c == '-' || c == '.' => {
                self.numeric_literal()
            }
            Some(_) => {
                let rest = self.rest();
                for kw in ["true", "false"] {
                    if rest.starts_with(kw)
                        && !rest[kw.len()..]
                            .chars()
                            .next()
                            .is_some_and(|c| is_pn_chars(c) || c == ':')
                    {
                        self.pos += kw.len();
                        return Ok(Term::Literal(Literal {
                            value: kw.to_string(),
                            lang: None,
                            datatype: Some(format!("{XSD}boolean")),
                        }));
                    }
                }
                Ok(Term::Iri(self.prefixed_name()?))
            }
            None => self.err("unexpected end of input, expected object"),
        }
    }

    fn fresh_blank(&mut self) -> Term {
        self.blank_counter += 1;
        Term::Blank(format!("genid{}", self.blank_counter))
    }

    fn blank_property_list(&mut self) -> Result<Term, SyntaxError> {
        self.expect('[')?;
        let node = self.fresh_blank();
        self.skip_ws();
        if self.peek() != Some(']') {
            self.predicate_object_list(&node)?;
        }
        self.expect(']')?;
        Ok(node)
    }

    fn blank_label(&mut self) -> Result<Term, SyntaxError> {
        self.pos += 2;
        let start = self.pos;
        while let Some(c) = self.peek() {
            if is_pn_chars(c) || c == '.' {
                self.bump();
            } else {
                break;
            }
        }
        // trailing dots belong to the statement terminator
        while self.src[start..self.pos].ends_with('.') {
            self.pos -= 1;
        }
        if self.pos == start {
            return self.err("empty blank node label");
        }
        Ok(Term::Blank(format!("b_{}", &self.src[start..self.pos])))
    }

    fn iri_ref(&mut self) -> Result<String, SyntaxError> {
        if self.peek() != Some('<') {
            return self.err("expected IRI reference");
        }
        let start = self.pos;
        self.bump();
        let mut out = String::new();
        loop {
            match self.bump() {
                Some('>') => break,
                Some('\\') => out.push(self.unicode_escape()?),
                Some(c) if c.is_whitespace() || matches!(c, '<' | '"' | '{' | '}' | '|' | '^' | '`') => {
                    return self.err(format!("invalid character '{c}' in IRI"));
                }
                Some(c) => out.push(c),
                None => return Err(self.error_at(start, "unterminated IRI reference")),
            }
        }
        Ok(self.resolve(out))
    }

    fn resolve(&self, iri: String) -> String {
        if has_scheme(&iri) {
            return iri;
        }
        match &self.base {
            Some(base) => base.join(&iri).map(|u| u.to_string()).unwrap_or(iri),
            None => iri,
        }
    }

    fn unicode_escape(&mut self) -> Result<char, SyntaxError> {
        let len = match self.bump() {
            Some('u') => 4,
            Some('U') => 8,
            _ => return self.err("invalid escape in IRI"),
        };
        self.hex_char(len)
    }

    fn hex_char(&mut self, len: usize) -> Result<char, SyntaxError> {
        let rest = self.rest();
        if rest.len() < len || !rest.is_char_boundary(len) {
            return self.err("truncated unicode escape");
        }
        let code = u32::from_str_radix(&rest[..len], 16)
            .ok()
            .and_then(char::from_u32);
        match code {
            Some(c) => {
                self.pos += len;
                Ok(c)
            }
            None => self.err("invalid unicode escape"),
        }
    }

    fn prefixed_name(&mut self) -> Result<String, SyntaxError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c == ':' {
                break;
            }
            if is_pn_chars(c) || c == '.' {
                self.bump();
            } else {
                return Err(self.error_at(start, format!("unexpected character '{c}'")));
            }
        }
        if self.peek() != Some(':') {
            return Err(self.error_at(start, "expected prefixed name"));
        }
        let prefix = self.src[start..self.pos].to_string();
        self.bump();
        let Some(ns) = self.prefixes.get(&prefix).cloned() else {
            return Err(self.error_at(start, format!("undeclared prefix '{prefix}:'")));
        };
        let mut local = String::new();
        let mut raw_end = self.pos;
        loop {
            match self.peek() {
                Some('\\') => {
                    self.bump();
                    match self.bump() {
                        Some(c) if "_~.-!$&'()*+,;=/?#@%".contains(c) => local.push(c),
                        _ => return self.err("invalid local name escape"),
                    }
                    raw_end = self.pos;
                }
                Some('%') => {
                    let rest = self.rest();
                    if rest.len() >= 3 && rest[1..3].chars().all(|c| c.is_ascii_hexdigit()) {
                        local.push_str(&rest[..3]);
                        self.pos += 3;
                        raw_end = self.pos;
                    } else {
                        return self.err("invalid percent encoding");
                    }
                }
                Some(c) if is_pn_chars(c) || c == ':' || c == '.' => {
                    self.bump();
                    local.push(c);
                    if c != '.' {
                        raw_end = self.pos;
                    }
                }
                _ => break,
            }
        }
        // a local name cannot end with '.'
        let trailing_dots = self.pos - raw_end;
        if trailing_dots > 0 {
            self.pos = raw_end;
            local.truncate(local.len() - trailing_dots);
        }
        Ok(format!("{ns}{local}"))
    }

    fn rdf_literal(&mut self) -> Result<Term, SyntaxError> {
        let value = self.string()?;
        let mut lang = None;
        let mut datatype = None;
        if self.peek() == Some('@') {
            self.bump();
            let start = self.pos;
            while let Some(c) = self.peek() {
                if c.is_ascii_alphanumeric() || c == '-' {
                    self.bump();
                } else {
                    break;
                }
            }
            if self.pos == start {
                return self.err("empty language tag");
            }
            lang = Some(self.src[start..self.pos].to_ascii_lowercase());
        } else if self.rest().starts_with("^^") {
            self.pos += 2;
            datatype = Some(if self.peek() == Some('<') {
                self.iri_ref()?
            } else {
                self.prefixed_name()?
            });
        }
        Ok(Term::Literal(Literal {
            value,
            lang,
            datatype,
        }))
    }

    fn string(&mut self) -> Result<String, SyntaxError> {
        let start = self.pos;
        let quote = self.bump().expect("caller checked quote");
        let long = self.rest().starts_with(&format!("{quote}{quote}"));
        if long {
            self.pos += 2;
        }
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.error_at(start, "unterminated string literal")),
                Some(c) if c == quote => {
                    if !long {
                        return Ok(out);
                    }
                    if self.rest().starts_with(&format!("{quote}{quote}")) {
                        self.pos += 2;
                        // up to two extra quotes may precede the terminator
                        while self.rest().starts_with(quote) {
                            out.push(quote);
                            self.pos += 1;
                        }
                        return Ok(out);
                    }
                    out.push(c);
                }
                Some('\\') => {
                    let c = match self.bump() {
                        Some('t') => '\t',
                        Some('b') => '\u{8}',
                        Some('n') => '\n',
                        Some('r') => '\r',
                        Some('f') => '\u{c}',
                        Some('"') => '"',
                        Some('\'') => '\'',
                        Some('\\') => '\\',
                        Some('u') => self.hex_char(4)?,
                        Some('U') => self.hex_char(8)?,
                        _ => return self.err("invalid string escape"),
                    };
                    out.push(c);
                }
                Some('\n') | Some('\r') if !long => {
                    return self.err("newline in single-line string literal");
                }
                Some(c) => out.push(c),
            }
        }
    }

    fn numeric_literal(&mut self) -> Result<Term, SyntaxError> {
        let start = self.pos;
        if matches!(self.peek(), Some('+') | Some('-')) {
            self.bump();
        }
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.peek().is_some_and(|c| c.is_ascii_digit()) {
                p.bump();
            }
            p.pos - s
        };
        let int_digits = digits(self);
        let mut frac_digits = 0;
        let mut kind = "integer";
        if self.peek() == Some('.')
            && self.rest()[1..].chars().next().is_some_and(|c| c.is_ascii_digit())
        {
            self.bump();
            frac_digits = digits(self);
            kind = "decimal";
        }
        if int_digits + frac_digits == 0 {
            return Err(self.error_at(start, "invalid numeric literal"));
        }
        if matches!(self.peek(), Some('e') | Some('E')) {
            self.bump();
            if matches!(self.peek(), Some('+') | Some('-')) {
                self.bump();
            }
            if digits(self) == 0 {
                return self.err("invalid exponent");
            }
            kind = "double";
        }
        Ok(Term::Literal(Literal {
            value: self.src[start..self.pos].to_string(),
            lang: None,
            datatype: Some(format!("{XSD}{kind}")),
        }))
    }
}

fn is_pn_chars(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-' || c == '\u{b7}'
}

pub(crate) fn has_scheme(iri: &str) -> bool {
    match iri.find(':') {
        Some(i) if i > 0 => {
            let scheme = &iri[..i];
            scheme.starts_with(|c: char| c.is_ascii_alphabetic())
                && scheme
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
        }
        _ => false,
    }
}
