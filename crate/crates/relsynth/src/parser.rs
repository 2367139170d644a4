//! Parser for the `.spec` text format: schema declarations, transducers,
//! named constraints, and an optional inline scope.
//!
//! The surface syntax mirrors the notation the formulas are usually written
//! in: `#u` for session variables, `$x` for input parameters, `sat(...)`,
//! `sel[2 = #u](Member)`, `proj[1](E)`, `x` for cross product, `+`/`-` for
//! union and difference, `|Sessions| + 1` for cardinality terms, `'s1'` for
//! named constants, and `null`. Column indices are 1-based in the text and
//! 0-based in the AST. Line comments start with `//`.
//!
//! Parser output is verbatim: frame closure is *not* applied. All symbol
//! references are resolved against the schema; unresolved or duplicate names
//! are reported as distinct error kinds with line/column positions.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::expr::{Formula, RelAlgExpr, Term, Transducer};
use crate::model::{
    ForeignKey, RelationSchema, Schema, Scope, SortId, SortKind, Value,
};

/// Sentinel sort for named constants whose sort has not been inferred yet.
const UNRESOLVED_SORT: SortId = SortId(usize::MAX);

/// A parsed specification file. Cross-references are resolved; frame closure
/// has not been applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecFile {
    pub schema: Schema,
    pub transducers: Vec<Transducer>,
    /// Named constraints in declaration order.
    pub constraints: Vec<(String, Formula)>,
    pub default_scope: Option<Scope>,
}

impl SpecFile {
    pub fn transducer(&self, name: &str) -> Option<&Transducer> {
        self.transducers.iter().find(|t| t.name == name)
    }

    pub fn constraint(&self, name: &str) -> Option<&Formula> {
        self.constraints.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    /// All named constants mentioned anywhere in the spec, grouped by sort
    /// name. Used to seed scope carriers.
    pub fn named_constants(&self) -> BTreeMap<String, BTreeSet<std::sync::Arc<str>>> {
        let mut use_all = crate::expr::SymbolUse::default();
        for t in &self.transducers {
            use_all.merge(&crate::expr::SymbolUse::scan_formula(&t.formula));
        }
        for (_, f) in &self.constraints {
            use_all.merge(&crate::expr::SymbolUse::scan_formula(f));
        }
        use_all
            .named
            .into_iter()
            .map(|(sort, labels)| (self.schema.sort_name(sort).to_string(), labels))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Lexical,
    Syntax,
    Unresolved,
    Duplicate,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub kind: ErrorKind,
    pub line: u32,
    pub col: u32,
    pub message: String,
    /// For syntax errors, the token kinds that would have been accepted.
    pub expected: Vec<String>,
}

impl ParseError {
    fn new(kind: ErrorKind, line: u32, col: u32, message: impl Into<String>) -> ParseError {
        ParseError { kind, line, col, message: message.into(), expected: Vec::new() }
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String, bool),
    HashIdent(String, bool),
    DollarIdent(String),
    Label(String),
    Int(i64),
    Str(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Colon,
    Dot,
    Arrow,
    Eq,
    NotEq,
    Plus,
    Minus,
    Pipe,
    KwSchema,
    KwSort,
    KwRelation,
    KwVar,
    KwFunc,
    KwPred,
    KwKey,
    KwRef,
    KwInjective,
    KwTransducer,
    KwAt,
    KwLinks,
    KwConstraint,
    KwScope,
    KwAnd,
    KwOr,
    KwNot,
    KwTrue,
    KwFalse,
    KwNull,
    KwSat,
    KwSel,
    KwProj,
    KwIn,
    KwX,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(n, primed) => format!("identifier `{n}{}`", if *primed { "'" } else { "" }),
            Tok::HashIdent(n, _) => format!("session variable `#{n}`"),
            Tok::DollarIdent(n) => format!("parameter `${n}`"),
            Tok::Label(l) => format!("constant '{l}'"),
            Tok::Int(n) => format!("integer {n}"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::Eq => "`=`".into(),
            Tok::NotEq => "`!=`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Pipe => "`|`".into(),
            Tok::Eof => "end of input".into(),
            kw => format!("`{}`", kw.keyword_text()),
        }
    }

    fn keyword_text(&self) -> &'static str {
        match self {
            Tok::KwSchema => "schema",
            Tok::KwSort => "sort",
            Tok::KwRelation => "relation",
            Tok::KwVar => "var",
            Tok::KwFunc => "func",
            Tok::KwPred => "pred",
            Tok::KwKey => "key",
            Tok::KwRef => "ref",
            Tok::KwInjective => "injective",
            Tok::KwTransducer => "transducer",
            Tok::KwAt => "at",
            Tok::KwLinks => "links",
            Tok::KwConstraint => "constraint",
            Tok::KwScope => "scope",
            Tok::KwAnd => "and",
            Tok::KwOr => "or",
            Tok::KwNot => "not",
            Tok::KwTrue => "true",
            Tok::KwFalse => "false",
            Tok::KwNull => "null",
            Tok::KwSat => "sat",
            Tok::KwSel => "sel",
            Tok::KwProj => "proj",
            Tok::KwIn => "in",
            Tok::KwX => "x",
            _ => "",
        }
    }
}

fn keyword(s: &str) -> Option<Tok> {
    Some(match s {
        "schema" => Tok::KwSchema,
        "sort" => Tok::KwSort,
        "relation" => Tok::KwRelation,
        "var" => Tok::KwVar,
        "func" => Tok::KwFunc,
        "pred" => Tok::KwPred,
        "key" => Tok::KwKey,
        "ref" => Tok::KwRef,
        "injective" => Tok::KwInjective,
        "transducer" => Tok::KwTransducer,
        "at" => Tok::KwAt,
        "links" => Tok::KwLinks,
        "constraint" => Tok::KwConstraint,
        "scope" => Tok::KwScope,
        "and" => Tok::KwAnd,
        "or" => Tok::KwOr,
        "not" => Tok::KwNot,
        "true" => Tok::KwTrue,
        "false" => Tok::KwFalse,
        "null" => Tok::KwNull,
        "sat" => Tok::KwSat,
        "sel" => Tok::KwSel,
        "proj" => Tok::KwProj,
        "in" => Tok::KwIn,
        "x" => Tok::KwX,
        _ => return None,
    })
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

type Spanned = (Tok, u32, u32);

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Lexer<'a> {
        Lexer { src: src.as_bytes(), pos: 0, line: 1, col: 1 }
    }

    fn error(&self, msg: impl Into<String>) -> ParseError {
        ParseError::new(ErrorKind::Lexical, self.line, self.col, msg)
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.src.get(self.pos).copied()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<u8> {
        self.src.get(self.pos + 1).copied()
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'/') if self.peek2() == Some(b'/') => {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => break,
            }
        }
    }

    fn ident_tail(&mut self, first: u8) -> String {
        let mut s = String::new();
        s.push(first as char);
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'_' || c == b'@' {
                s.push(c as char);
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    fn tokenize(mut self) -> Result<Vec<Spanned>, ParseError> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia();
            let (line, col) = (self.line, self.col);
            let c = match self.bump() {
                None => {
                    out.push((Tok::Eof, line, col));
                    return Ok(out);
                }
                Some(c) => c,
            };
            let tok = match c {
                b'(' => Tok::LParen,
                b')' => Tok::RParen,
                b'{' => Tok::LBrace,
                b'}' => Tok::RBrace,
                b'[' => Tok::LBracket,
                b']' => Tok::RBracket,
                b',' => Tok::Comma,
                b';' => Tok::Semi,
                b':' => Tok::Colon,
                b'.' => Tok::Dot,
                b'=' => Tok::Eq,
                b'+' => Tok::Plus,
                b'|' => Tok::Pipe,
                b'-' => {
                    if self.peek() == Some(b'>') {
                        self.bump();
                        Tok::Arrow
                    } else {
                        Tok::Minus
                    }
                }
                b'!' => {
                    if self.peek() == Some(b'=') {
                        self.bump();
                        Tok::NotEq
                    } else {
                        return Err(self.error("unexpected `!` (did you mean `!=`?)"));
                    }
                }
                b'#' => {
                    let first = match self.peek() {
                        Some(c) if c.is_ascii_alphabetic() || c == b'_' => c,
                        _ => return Err(self.error("expected identifier after `#`")),
                    };
                    self.bump();
                    let name = self.ident_tail(first);
                    let primed = self.peek() == Some(b'\'');
                    if primed {
                        self.bump();
                    }
                    Tok::HashIdent(name, primed)
                }
                b'$' => {
                    let first = match self.peek() {
                        Some(c) if c.is_ascii_alphabetic() || c == b'_' => c,
                        _ => return Err(self.error("expected identifier after `$`")),
                    };
                    self.bump();
                    Tok::DollarIdent(self.ident_tail(first))
                }
                b'\'' => {
                    let mut label = String::new();
                    loop {
                        match self.bump() {
                            None | Some(b'\n') => {
                                return Err(self.error("unterminated constant literal"))
                            }
                            Some(b'\'') => break,
                            Some(c) => label.push(c as char),
                        }
                    }
                    Tok::Label(label)
                }
                b'"' => {
                    let mut s = String::new();
                    loop {
                        match self.bump() {
                            None | Some(b'\n') => return Err(self.error("unterminated string")),
                            Some(b'"') => break,
                            Some(c) => s.push(c as char),
                        }
                    }
                    Tok::Str(s)
                }
                c if c.is_ascii_digit() => {
                    let mut n = i64::from(c - b'0');
                    while let Some(d) = self.peek() {
                        if d.is_ascii_digit() {
                            n = n
                                .checked_mul(10)
                                .and_then(|n| n.checked_add(i64::from(d - b'0')))
                                .ok_or_else(|| self.error("integer literal overflows"))?;
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    Tok::Int(n)
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let name = self.ident_tail(c);
                    match keyword(&name) {
                        Some(kw) => kw,
                        None => {
                            let primed = self.peek() == Some(b'\'');
                            if primed {
                                self.bump();
                            }
                            Tok::Ident(name, primed)
                        }
                    }
                }
                other => {
                    return Err(ParseError::new(
                        ErrorKind::Lexical,
                        line,
                        col,
                        format!("unexpected character `{}`", other as char),
                    ))
                }
            };
            out.push((tok, line, col));
        }
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

/// Foreign keys recorded during relation parsing, resolved once the whole
/// schema block is available: (owning relation, [(span, target span, column,
/// target relation, target column name)]).
type PendingFks = Vec<(String, Vec<((u32, u32), (u32, u32), usize, String, String)>)>;

struct Parser {
    tokens: Vec<Spanned>,
    pos: usize,
    schema: Schema,
    transducer_names: BTreeSet<String>,
    constraint_names: BTreeSet<String>,
    pending_fks: PendingFks,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].0
    }

    fn span(&self) -> (u32, u32) {
        let (_, l, c) = self.tokens[self.pos];
        (l, c)
    }

    fn next(&mut self) -> Tok {
        let t = self.tokens[self.pos].0.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.next();
            true
        } else {
            false
        }
    }

    fn syntax_error(&self, expected: &[&Tok]) -> ParseError {
        let (line, col) = self.span();
        let expected: Vec<String> = expected.iter().map(|t| t.describe()).collect();
        ParseError {
            kind: ErrorKind::Syntax,
            line,
            col,
            message: format!(
                "unexpected {}; expected {}",
                self.peek().describe(),
                expected.join(" or ")
            ),
            expected,
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if self.peek() == &tok {
            self.next();
            Ok(())
        } else {
            Err(self.syntax_error(&[&tok]))
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(name, false) => {
                self.next();
                Ok(name)
            }
            _ => {
                let (line, col) = self.span();
                Err(ParseError::new(
                    ErrorKind::Syntax,
                    line,
                    col,
                    format!("expected {what}, found {}", self.peek().describe()),
                ))
            }
        }
    }

    fn unresolved(&self, at: (u32, u32), msg: impl Into<String>) -> ParseError {
        ParseError::new(ErrorKind::Unresolved, at.0, at.1, msg)
    }

    fn duplicate(&self, at: (u32, u32), msg: impl Into<String>) -> ParseError {
        ParseError::new(ErrorKind::Duplicate, at.0, at.1, msg)
    }

    fn sort_ref(&mut self) -> Result<SortId, ParseError> {
        let at = self.span();
        let name = self.expect_ident("a sort name")?;
        self.schema
            .sort_id(&name)
            .ok_or_else(|| self.unresolved(at, format!("unknown sort `{name}`")))
    }

    // --- schema ---

    fn parse_schema_block(&mut self) -> Result<(), ParseError> {
        self.expect(Tok::KwSchema)?;
        self.expect(Tok::LBrace)?;
        while !self.eat(&Tok::RBrace) {
            match self.peek().clone() {
                Tok::KwSort => {
                    self.next();
                    let at = self.span();
                    let name = self.expect_ident("a sort name")?;
                    if self.schema.sort_id(&name).is_some() {
                        return Err(self.duplicate(at, format!("duplicate sort `{name}`")));
                    }
                    self.schema.add_sort(&name);
                    self.expect(Tok::Semi)?;
                }
                Tok::KwRelation => {
                    self.next();
                    self.parse_relation_decl()?;
                }
                Tok::KwVar => {
                    self.next();
                    let at = self.span();
                    let name = match self.next() {
                        Tok::HashIdent(n, false) => n,
                        _ => {
                            return Err(ParseError::new(
                                ErrorKind::Syntax,
                                at.0,
                                at.1,
                                "expected `#name` after `var`",
                            ))
                        }
                    };
                    self.expect(Tok::Colon)?;
                    let sort = self.sort_ref()?;
                    if self.schema.session_var_sort(&name).is_some() {
                        return Err(
                            self.duplicate(at, format!("duplicate session variable `#{name}`"))
                        );
                    }
                    self.schema.session_vars.push((name, sort));
                    self.expect(Tok::Semi)?;
                }
                Tok::KwFunc => {
                    self.next();
                    let at = self.span();
                    let name = self.expect_ident("a function name")?;
                    if self.schema.function(&name).is_some() {
                        return Err(self.duplicate(at, format!("duplicate function `{name}`")));
                    }
                    self.expect(Tok::LParen)?;
                    let mut arg_sorts = Vec::new();
                    if self.peek() != &Tok::RParen {
                        loop {
                            arg_sorts.push(self.sort_ref()?);
                            if !self.eat(&Tok::Comma) {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen)?;
                    self.expect(Tok::Colon)?;
                    let result_sort = self.sort_ref()?;
                    let injective = self.eat(&Tok::KwInjective);
                    self.schema.functions.push(crate::model::FunctionDecl {
                        name,
                        arg_sorts,
                        result_sort,
                        injective,
                    });
                    self.expect(Tok::Semi)?;
                }
                Tok::KwPred => {
                    self.next();
                    let at = self.span();
                    let name = self.expect_ident("a predicate name")?;
                    if self.schema.predicate(&name).is_some() {
                        return Err(self.duplicate(at, format!("duplicate predicate `{name}`")));
                    }
                    self.expect(Tok::LParen)?;
                    let mut arg_sorts = Vec::new();
                    if self.peek() != &Tok::RParen {
                        loop {
                            arg_sorts.push(self.sort_ref()?);
                            if !self.eat(&Tok::Comma) {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen)?;
                    self.schema.predicates.push(crate::model::PredicateDecl { name, arg_sorts });
                    self.expect(Tok::Semi)?;
                }
                _ => {
                    return Err(self.syntax_error(&[
                        &Tok::KwSort,
                        &Tok::KwRelation,
                        &Tok::KwVar,
                        &Tok::KwFunc,
                        &Tok::KwPred,
                        &Tok::RBrace,
                    ]))
                }
            }
        }
        Ok(())
    }

    fn parse_relation_decl(&mut self) -> Result<(), ParseError> {
        let at = self.span();
        let name = self.expect_ident("a relation name")?;
        if self.schema.relation(&name).is_some() {
            return Err(self.duplicate(at, format!("duplicate relation `{name}`")));
        }
        self.expect(Tok::LParen)?;
        let mut columns = Vec::new();
        loop {
            let col_name = self.expect_ident("a column name")?;
            self.expect(Tok::Colon)?;
            let sort = self.sort_ref()?;
            columns.push((col_name, sort));
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RParen)?;

        let col_index = |columns: &[(String, SortId)], n: &str| -> Option<usize> {
            columns.iter().position(|(c, _)| c == n)
        };

        let mut primary_key = Vec::new();
        if self.eat(&Tok::KwKey) {
            self.expect(Tok::LParen)?;
            loop {
                let at = self.span();
                let col = self.expect_ident("a column name")?;
                let idx = col_index(&columns, &col)
                    .ok_or_else(|| self.unresolved(at, format!("unknown column `{col}`")))?;
                primary_key.push(idx);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
            self.expect(Tok::RParen)?;
        }

        let mut foreign_keys = Vec::new();
        if self.eat(&Tok::KwRef) {
            self.expect(Tok::LParen)?;
            loop {
                let at = self.span();
                let col = self.expect_ident("a column name")?;
                let column = col_index(&columns, &col)
                    .ok_or_else(|| self.unresolved(at, format!("unknown column `{col}`")))?;
                self.expect(Tok::Arrow)?;
                let target_at = self.span();
                let target_relation = self.expect_ident("a relation name")?;
                self.expect(Tok::Dot)?;
                let target_col_name = self.expect_ident("a column name")?;
                foreign_keys.push((at, target_at, column, target_relation, target_col_name));
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
            self.expect(Tok::RParen)?;
        }
        self.expect(Tok::Semi)?;

        // Targets may be declared later in the block; resolve column names
        // once the whole schema is parsed. Store the textual target column
        // for now and fix it up in `resolve_foreign_keys`.
        self.pending_fks.push((name.clone(), foreign_keys));
        self.schema.relations.push(RelationSchema {
            name,
            columns,
            primary_key,
            foreign_keys: Vec::new(),
        });
        Ok(())
    }

    fn resolve_foreign_keys(&mut self) -> Result<(), ParseError> {
        let pending = std::mem::take(&mut self.pending_fks);
        for (rel_name, fks) in pending {
            let mut resolved = Vec::new();
            for (at, target_at, column, target_relation, target_col_name) in fks {
                let target = self
                    .schema
                    .relation(&target_relation)
                    .ok_or_else(|| {
                        self.unresolved(
                            target_at,
                            format!("unknown relation `{target_relation}` in foreign key"),
                        )
                    })?
                    .clone();
                let target_column = target
                    .columns
                    .iter()
                    .position(|(c, _)| c == &target_col_name)
                    .ok_or_else(|| {
                        self.unresolved(
                            at,
                            format!("unknown column `{target_col_name}` of `{target_relation}`"),
                        )
                    })?;
                resolved.push(ForeignKey { column, target_relation, target_column });
            }
            let rel = self
                .schema
                .relations
                .iter_mut()
                .find(|r| r.name == rel_name)
                .expect("relation was just declared");
            rel.foreign_keys = resolved;
        }
        Ok(())
    }

    // --- formulas ---

    fn parse_formula(&mut self) -> Result<Formula, ParseError> {
        let mut parts = vec![self.parse_and_formula()?];
        while self.eat(&Tok::KwOr) {
            parts.push(self.parse_and_formula()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::Or(parts) })
    }

    fn parse_and_formula(&mut self) -> Result<Formula, ParseError> {
        let mut parts = vec![self.parse_not_formula()?];
        while self.eat(&Tok::KwAnd) {
            parts.push(self.parse_not_formula()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::And(parts) })
    }

    fn parse_not_formula(&mut self) -> Result<Formula, ParseError> {
        if self.eat(&Tok::KwNot) {
            Ok(Formula::Not(Box::new(self.parse_not_formula()?)))
        } else {
            self.parse_atom()
        }
    }

    fn parse_atom(&mut self) -> Result<Formula, ParseError> {
        match self.peek().clone() {
            Tok::KwTrue => {
                self.next();
                Ok(Formula::True)
            }
            Tok::KwFalse => {
                self.next();
                Ok(Formula::False)
            }
            Tok::KwSat => {
                self.next();
                self.expect(Tok::LParen)?;
                let e = self.parse_relalg()?;
                self.expect(Tok::RParen)?;
                Ok(Formula::Sat(e))
            }
            Tok::LParen => {
                // Either a membership tuple `(t, ...) in E` or a
                // parenthesized formula; try membership first.
                let save = self.pos;
                match self.try_parse_membership() {
                    Ok(f) => Ok(f),
                    Err(_) => {
                        self.pos = save;
                        self.expect(Tok::LParen)?;
                        let f = self.parse_formula()?;
                        self.expect(Tok::RParen)?;
                        Ok(f)
                    }
                }
            }
            Tok::Ident(name, primed) => {
                let at = self.span();
                if !primed && self.schema.predicate(&name).is_some() {
                    self.next();
                    self.expect(Tok::LParen)?;
                    let mut args = Vec::new();
                    if self.peek() != &Tok::RParen {
                        loop {
                            args.push(self.parse_term()?);
                            if !self.eat(&Tok::Comma) {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen)?;
                    return Ok(Formula::Pred { name, args });
                }
                if self.schema.relation(&name).is_some() {
                    self.next();
                    self.expect(Tok::Eq)?;
                    let rhs = self.parse_relalg()?;
                    return Ok(Formula::RelEq { name, primed, rhs });
                }
                if self.schema.function(&name).is_some() {
                    return self.parse_term_comparison();
                }
                Err(self.unresolved(at, format!("unresolved symbol `{name}`")))
            }
            Tok::HashIdent(..) | Tok::DollarIdent(..) | Tok::Label(..) | Tok::Int(..)
            | Tok::KwNull | Tok::Pipe => self.parse_term_comparison(),
            _ => Err(self.syntax_error(&[
                &Tok::KwTrue,
                &Tok::KwFalse,
                &Tok::KwNot,
                &Tok::KwSat,
                &Tok::LParen,
            ])),
        }
    }

    fn try_parse_membership(&mut self) -> Result<Formula, ParseError> {
        self.expect(Tok::LParen)?;
        let mut tuple = vec![self.parse_term()?];
        while self.eat(&Tok::Comma) {
            tuple.push(self.parse_term()?);
        }
        self.expect(Tok::RParen)?;
        self.expect(Tok::KwIn)?;
        let rel = self.parse_relalg()?;
        Ok(Formula::Member { tuple, rel })
    }

    fn parse_term_comparison(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.parse_term()?;
        if self.eat(&Tok::KwIn) {
            let rel = self.parse_relalg()?;
            return Ok(Formula::Member { tuple: vec![lhs], rel });
        }
        match self.next() {
            Tok::Eq => Ok(Formula::Eq(lhs, self.parse_term()?)),
            Tok::NotEq => Ok(Formula::Eq(lhs, self.parse_term()?).not()),
            _ => {
                self.pos -= 1;
                Err(self.syntax_error(&[&Tok::Eq, &Tok::NotEq, &Tok::KwIn]))
            }
        }
    }

    fn parse_term(&mut self) -> Result<Term, ParseError> {
        match self.peek().clone() {
            Tok::KwNull => {
                self.next();
                Ok(Term::Value(Value::Null))
            }
            Tok::Int(n) => {
                self.next();
                Ok(Term::Value(Value::Int(n)))
            }
            Tok::Label(label) => {
                self.next();
                Ok(Term::Value(Value::Named(UNRESOLVED_SORT, label.as_str().into())))
            }
            Tok::HashIdent(name, primed) => {
                let at = self.span();
                self.next();
                if self.schema.session_var_sort(&name).is_none() {
                    return Err(self.unresolved(at, format!("unresolved session variable `#{name}`")));
                }
                Ok(Term::Var { name, primed })
            }
            Tok::DollarIdent(name) => {
                self.next();
                Ok(Term::Param { name })
            }
            Tok::Ident(name, false) => {
                let at = self.span();
                if self.schema.function(&name).is_none() {
                    return Err(self.unresolved(at, format!("unresolved symbol `{name}`")));
                }
                self.next();
                self.expect(Tok::LParen)?;
                let mut args = Vec::new();
                if self.peek() != &Tok::RParen {
                    loop {
                        args.push(self.parse_term()?);
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                }
                self.expect(Tok::RParen)?;
                Ok(Term::App { func: name, args })
            }
            Tok::Pipe => {
                self.next();
                let rel = self.parse_relalg()?;
                self.expect(Tok::Pipe)?;
                let offset = if self.eat(&Tok::Plus) {
                    let at = self.span();
                    match self.next() {
                        Tok::Int(n) if n >= 0 => n as u32,
                        _ => {
                            return Err(ParseError::new(
                                ErrorKind::Syntax,
                                at.0,
                                at.1,
                                "expected a non-negative integer after `+`",
                            ))
                        }
                    }
                } else {
                    0
                };
                Ok(Term::CardinalityPlus { rel: Box::new(rel), offset })
            }
            Tok::LParen => {
                self.next();
                let t = self.parse_term()?;
                self.expect(Tok::RParen)?;
                Ok(t)
            }
            _ => Err(self.syntax_error(&[
                &Tok::KwNull,
                &Tok::Pipe,
                &Tok::LParen,
                &Tok::Int(0),
                &Tok::Label(String::new()),
                &Tok::HashIdent(String::new(), false),
                &Tok::DollarIdent(String::new()),
            ])),
        }
    }

    // --- relational algebra ---

    fn parse_relalg(&mut self) -> Result<RelAlgExpr, ParseError> {
        let mut lhs = self.parse_relalg_product()?;
        loop {
            if self.eat(&Tok::Plus) {
                lhs = lhs.union(self.parse_relalg_product()?);
            } else if self.eat(&Tok::Minus) {
                lhs = lhs.difference(self.parse_relalg_product()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn parse_relalg_product(&mut self) -> Result<RelAlgExpr, ParseError> {
        let mut lhs = self.parse_relalg_primary()?;
        while self.eat(&Tok::KwX) {
            lhs = lhs.product(self.parse_relalg_primary()?);
        }
        Ok(lhs)
    }

    fn column_index(&mut self) -> Result<usize, ParseError> {
        let at = self.span();
        match self.next() {
            Tok::Int(n) if n >= 1 => Ok((n - 1) as usize),
            _ => Err(ParseError::new(
                ErrorKind::Syntax,
                at.0,
                at.1,
                "expected a 1-based column index",
            )),
        }
    }

    fn parse_relalg_primary(&mut self) -> Result<RelAlgExpr, ParseError> {
        match self.peek().clone() {
            Tok::Ident(name, primed) => {
                let at = self.span();
                self.next();
                if self.schema.relation(&name).is_none() {
                    return Err(self.unresolved(at, format!("unresolved relation `{name}`")));
                }
                Ok(RelAlgExpr::Rel { name, primed })
            }
            Tok::LBrace => {
                self.next();
                let mut rows = Vec::new();
                if self.peek() != &Tok::RBrace {
                    loop {
                        self.expect(Tok::LParen)?;
                        let mut row = vec![self.parse_term()?];
                        while self.eat(&Tok::Comma) {
                            row.push(self.parse_term()?);
                        }
                        self.expect(Tok::RParen)?;
                        rows.push(row);
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                }
                self.expect(Tok::RBrace)?;
                Ok(RelAlgExpr::Lit { rows })
            }
            Tok::KwSel => {
                self.next();
                self.expect(Tok::LBracket)?;
                let col = self.column_index()?;
                self.expect(Tok::Eq)?;
                // A bare integer on the right denotes a column index
                // (column-column selection); anything else is a term.
                // `(3)` forces an integer-valued term.
                enum SelRhs {
                    Col(usize),
                    Term(Term),
                }
                let rhs = if matches!(self.peek(), Tok::Int(_)) {
                    SelRhs::Col(self.column_index()?)
                } else {
                    SelRhs::Term(self.parse_term()?)
                };
                self.expect(Tok::RBracket)?;
                self.expect(Tok::LParen)?;
                let child = self.parse_relalg()?;
                self.expect(Tok::RParen)?;
                Ok(match rhs {
                    SelRhs::Col(right) => child.select_cols(col, right),
                    SelRhs::Term(term) => child.select_value(col, term),
                })
            }
            Tok::KwProj => {
                self.next();
                self.expect(Tok::LBracket)?;
                let mut cols = vec![self.column_index()?];
                while self.eat(&Tok::Comma) {
                    cols.push(self.column_index()?);
                }
                self.expect(Tok::RBracket)?;
                self.expect(Tok::LParen)?;
                let child = self.parse_relalg()?;
                self.expect(Tok::RParen)?;
                Ok(child.project(cols))
            }
            Tok::LParen => {
                self.next();
                let e = self.parse_relalg()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            _ => Err(self.syntax_error(&[
                &Tok::KwSel,
                &Tok::KwProj,
                &Tok::LBrace,
                &Tok::LParen,
                &Tok::Ident(String::new(), false),
            ])),
        }
    }

    // --- top-level items ---

    fn parse_transducer(&mut self) -> Result<Transducer, ParseError> {
        self.expect(Tok::KwTransducer)?;
        let at = self.span();
        let name = self.expect_ident("a transducer name")?;
        if !self.transducer_names.insert(name.clone()) {
            return Err(self.duplicate(at, format!("duplicate transducer `{name}`")));
        }
        self.expect(Tok::KwAt)?;
        let base_url = match self.next() {
            Tok::Str(s) => s,
            _ => {
                self.pos -= 1;
                return Err(self.syntax_error(&[&Tok::Str(String::new())]));
            }
        };
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        if self.peek() != &Tok::RParen {
            loop {
                let at = self.span();
                let pname = match self.next() {
                    Tok::DollarIdent(n) => n,
                    _ => {
                        return Err(ParseError::new(
                            ErrorKind::Syntax,
                            at.0,
                            at.1,
                            "expected `$name: sort` parameter declaration",
                        ))
                    }
                };
                if pname.contains('@') {
                    return Err(ParseError::new(
                        ErrorKind::Syntax,
                        at.0,
                        at.1,
                        "`@` is reserved for internal parameter instances",
                    ));
                }
                self.expect(Tok::Colon)?;
                let sort = self.sort_ref()?;
                if params.iter().any(|(n, _)| n == &pname) {
                    return Err(self.duplicate(at, format!("duplicate parameter `${pname}`")));
                }
                params.push((pname, sort));
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(Tok::RParen)?;
        let links = if self.eat(&Tok::KwLinks) {
            self.expect(Tok::LParen)?;
            let mut urls = BTreeSet::new();
            if self.peek() != &Tok::RParen {
                loop {
                    match self.next() {
                        Tok::Str(s) => {
                            urls.insert(s);
                        }
                        _ => {
                            self.pos -= 1;
                            return Err(self.syntax_error(&[&Tok::Str(String::new())]));
                        }
                    }
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
            }
            self.expect(Tok::RParen)?;
            Some(urls)
        } else {
            None
        };
        self.expect(Tok::LBrace)?;
        let formula = self.parse_formula()?;
        self.expect(Tok::RBrace)?;
        Ok(Transducer { name, base_url, params, formula, links, frame_closed: false })
    }

    fn parse_scope_block(&mut self) -> Result<Scope, ParseError> {
        self.expect(Tok::KwScope)?;
        self.expect(Tok::LBrace)?;
        let mut scope = Scope::default();
        while !self.eat(&Tok::RBrace) {
            let at = self.span();
            let key = self.expect_ident("a scope setting")?;
            let take_u32 = |p: &mut Parser| -> Result<u32, ParseError> {
                let at = p.span();
                match p.next() {
                    Tok::Int(n) if n >= 0 && n <= i64::from(u32::MAX) => Ok(n as u32),
                    _ => Err(ParseError::new(
                        ErrorKind::Syntax,
                        at.0,
                        at.1,
                        "expected a non-negative integer",
                    )),
                }
            };
            match key.as_str() {
                "sort_size" => {
                    if let Tok::Ident(sort, false) = self.peek().clone() {
                        self.next();
                        let n = take_u32(self)?;
                        scope.sort_sizes.insert(sort, n);
                    } else {
                        scope.default_sort_size = take_u32(self)?;
                    }
                }
                "max_rows" => {
                    if let Tok::Ident(rel, false) = self.peek().clone() {
                        self.next();
                        let n = take_u32(self)?;
                        scope.max_rows.insert(rel, n);
                    } else {
                        scope.default_max_rows = take_u32(self)?;
                    }
                }
                "int_max" => {
                    let n = take_u32(self)?;
                    scope.int_max = Some(i64::from(n));
                }
                "max_seq_len" => scope.max_seq_len = take_u32(self)?,
                "model_limit" => scope.model_limit = u64::from(take_u32(self)?),
                "budget" => scope.budget = u64::from(take_u32(self)?),
                other => {
                    return Err(ParseError::new(
                        ErrorKind::Syntax,
                        at.0,
                        at.1,
                        format!("unknown scope setting `{other}`"),
                    ))
                }
            }
            self.expect(Tok::Semi)?;
        }
        scope.validate().map_err(|e| {
            ParseError::new(ErrorKind::Syntax, 1, 1, format!("invalid scope: {e}"))
        })?;
        Ok(scope)
    }
}

/// Parse a complete `.spec` file.
pub fn parse_spec(text: &str) -> Result<SpecFile, ParseError> {
    let tokens = Lexer::new(text).tokenize()?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        schema: Schema::new(),
        transducer_names: BTreeSet::new(),
        constraint_names: BTreeSet::new(),
        pending_fks: Vec::new(),
    };
    if parser.peek() == &Tok::Eof {
        return Err(ParseError::new(ErrorKind::Syntax, 1, 1, "empty input: expected `schema`"));
    }
    parser.parse_schema_block()?;
    parser.resolve_foreign_keys()?;
    parser.schema.validate().map_err(|e| {
        ParseError::new(ErrorKind::Duplicate, 1, 1, format!("invalid schema: {e}"))
    })?;

    let mut transducers = Vec::new();
    let mut constraints: Vec<(String, Formula)> = Vec::new();
    let mut default_scope = None;
    loop {
        match parser.peek().clone() {
            Tok::Eof => break,
            Tok::KwTransducer => transducers.push(parser.parse_transducer()?),
            Tok::KwConstraint => {
                parser.next();
                let at = parser.span();
                let name = parser.expect_ident("a constraint name")?;
                if !parser.constraint_names.insert(name.clone()) {
                    return Err(parser.duplicate(at, format!("duplicate constraint `{name}`")));
                }
                parser.expect(Tok::LBrace)?;
                let f = parser.parse_formula()?;
                parser.expect(Tok::RBrace)?;
                constraints.push((name, f));
            }
            Tok::KwScope => {
                if default_scope.is_some() {
                    let at = parser.span();
                    return Err(parser.duplicate(at, "duplicate scope block"));
                }
                default_scope = Some(parser.parse_scope_block()?);
            }
            _ => {
                return Err(parser.syntax_error(&[
                    &Tok::KwTransducer,
                    &Tok::KwConstraint,
                    &Tok::KwScope,
                    &Tok::Eof,
                ]))
            }
        }
    }

    let mut spec = SpecFile {
        schema: parser.schema,
        transducers,
        constraints,
        default_scope,
    };
    resolve_spec(&mut spec)?;
    Ok(spec)
}

/// Parse a single formula against an existing schema (used by the CLI and by
/// round-trip tests on printed constraints).
pub fn parse_formula(text: &str, schema: &Schema) -> Result<Formula, ParseError> {
    let tokens = Lexer::new(text).tokenize()?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        schema: schema.clone(),
        transducer_names: BTreeSet::new(),
        constraint_names: BTreeSet::new(),
        pending_fks: Vec::new(),
    };
    let mut f = parser.parse_formula()?;
    parser.expect(Tok::Eof)?;
    let mut resolver = Resolver { schema, context: "formula".into() };
    resolver.resolve_formula(&mut f)?;
    Ok(f)
}

// ---------------------------------------------------------------------------
// Resolution: parameter registry, named-constant sort inference, arity checks
// ---------------------------------------------------------------------------

fn resolve_spec(spec: &mut SpecFile) -> Result<(), ParseError> {
    // Build the parameter registry from all transducer declarations; a name
    // reused with a different sort is a conflict.
    let mut params: BTreeMap<String, SortId> = BTreeMap::new();
    for t in &spec.transducers {
        for (name, sort) in &t.params {
            if let Some(prev) = params.insert(name.clone(), *sort) {
                if prev != *sort {
                    return Err(ParseError::new(
                        ErrorKind::Duplicate,
                        1,
                        1,
                        format!("parameter `${name}` declared with conflicting sorts"),
                    ));
                }
            }
        }
    }
    spec.schema.params = params;

    // Every `$x` in a transducer formula must be among its own parameters.
    for t in &spec.transducers {
        let uses = crate::expr::SymbolUse::scan_formula(&t.formula);
        for p in &uses.params {
            if !t.params.iter().any(|(n, _)| n == p) {
                return Err(ParseError::new(
                    ErrorKind::Unresolved,
                    1,
                    1,
                    format!("transducer `{}` uses undeclared parameter `${p}`", t.name),
                ));
            }
        }
    }

    // Constraints may use any registered parameter.
    for (name, f) in &spec.constraints {
        let uses = crate::expr::SymbolUse::scan_formula(f);
        for p in &uses.params {
            if !spec.schema.params.contains_key(p) {
                return Err(ParseError::new(
                    ErrorKind::Unresolved,
                    1,
                    1,
                    format!("constraint `{name}` uses undeclared parameter `${p}`"),
                ));
            }
        }
    }

    let schema = spec.schema.clone();
    for t in &mut spec.transducers {
        let mut resolver =
            Resolver { schema: &schema, context: format!("transducer `{}`", t.name) };
        resolver.resolve_formula(&mut t.formula)?;
    }
    for (name, f) in &mut spec.constraints {
        let mut resolver = Resolver { schema: &schema, context: format!("constraint `{name}`") };
        resolver.resolve_formula(f)?;
    }
    Ok(())
}

struct Resolver<'a> {
    schema: &'a Schema,
    context: String,
}

impl<'a> Resolver<'a> {
    fn err(&self, msg: impl std::fmt::Display) -> ParseError {
        ParseError::new(ErrorKind::Unresolved, 1, 1, format!("in {}: {msg}", self.context))
    }

    fn resolve_formula(&mut self, f: &mut Formula) -> Result<(), ParseError> {
        match f {
            Formula::True | Formula::False => Ok(()),
            Formula::Eq(a, b) => {
                self.resolve_term(a)?;
                self.resolve_term(b)?;
                match (self.term_sort(a), self.term_sort(b)) {
                    (Some(s), None) => self.expect_term_sort(b, s)?,
                    (None, Some(s)) => self.expect_term_sort(a, s)?,
                    (Some(sa), Some(sb)) => {
                        // Comparing across sorts is legal (it is just false
                        // unless null is involved), so nothing to check.
                        let _ = (sa, sb);
                    }
                    (None, None) => {
                        if has_unresolved_term(a) || has_unresolved_term(b) {
                            return Err(self.err("cannot infer the sort of a quoted constant"));
                        }
                    }
                }
                Ok(())
            }
            Formula::RelEq { name, rhs, .. } => {
                let rel = self
                    .schema
                    .relation(name)
                    .ok_or_else(|| self.err(format!("unresolved relation `{name}`")))?;
                let expected: Vec<Option<SortId>> =
                    rel.columns.iter().map(|(_, s)| Some(*s)).collect();
                self.resolve_expr(rhs, Some(&expected))?;
                Ok(())
            }
            Formula::Sat(e) => {
                self.resolve_expr(e, None)?;
                Ok(())
            }
            Formula::Member { tuple, rel } => {
                let cols = self.resolve_expr(rel, None)?;
                if let Some(cols) = &cols {
                    if cols.len() != tuple.len() {
                        return Err(self.err(format!(
                            "membership tuple arity {} does not match relation arity {}",
                            tuple.len(),
                            cols.len()
                        )));
                    }
                    for (t, col_sort) in tuple.iter_mut().zip(cols.iter()) {
                        self.resolve_term(t)?;
                        if let Some(s) = col_sort {
                            self.expect_term_sort(t, *s)?;
                        }
                    }
                } else {
                    for t in tuple.iter_mut() {
                        self.resolve_term(t)?;
                    }
                }
                Ok(())
            }
            Formula::Pred { name, args } => {
                let decl = self
                    .schema
                    .predicate(name)
                    .ok_or_else(|| self.err(format!("unresolved predicate `{name}`")))?
                    .clone();
                if decl.arg_sorts.len() != args.len() {
                    return Err(self.err(format!(
                        "predicate `{name}` expects {} arguments, got {}",
                        decl.arg_sorts.len(),
                        args.len()
                    )));
                }
                for (a, s) in args.iter_mut().zip(decl.arg_sorts.iter()) {
                    self.resolve_term(a)?;
                    self.expect_term_sort(a, *s)?;
                }
                Ok(())
            }
            Formula::Not(f) => self.resolve_formula(f),
            Formula::And(parts) | Formula::Or(parts) => {
                for p in parts {
                    self.resolve_formula(p)?;
                }
                Ok(())
            }
        }
    }

    /// Resolve an expression, inferring named-constant sorts from `expected`
    /// column sorts where available. Returns the expression's column sorts
    /// (`None` for indeterminate arity).
    fn resolve_expr(
        &mut self,
        e: &mut RelAlgExpr,
        expected: Option<&[Option<SortId>]>,
    ) -> Result<Option<Vec<Option<SortId>>>, ParseError> {
        match e {
            RelAlgExpr::Rel { name, .. } => {
                let rel = self
                    .schema
                    .relation(name)
                    .ok_or_else(|| self.err(format!("unresolved relation `{name}`")))?;
                Ok(Some(rel.columns.iter().map(|(_, s)| Some(*s)).collect()))
            }
            RelAlgExpr::Lit { rows } => {
                if rows.is_empty() {
                    return Ok(None);
                }
                let arity = rows[0].len();
                if rows.iter().any(|r| r.len() != arity) {
                    return Err(self.err("literal relation has rows of differing arity"));
                }
                if let Some(expected) = expected {
                    if expected.len() != arity {
                        return Err(self.err(format!(
                            "literal relation arity {} does not match expected arity {}",
                            arity,
                            expected.len()
                        )));
                    }
                }
                let mut cols: Vec<Option<SortId>> = vec![None; arity];
                for row in rows.iter_mut() {
                    for (i, t) in row.iter_mut().enumerate() {
                        self.resolve_term(t)?;
                        let want = expected.and_then(|e| e[i]).or(cols[i]);
                        if let Some(s) = want {
                            self.expect_term_sort(t, s)?;
                        }
                        if cols[i].is_none() {
                            cols[i] = self.term_sort(t).or(want);
                        }
                    }
                }
                Ok(Some(cols))
            }
            RelAlgExpr::SelectValue { child, col, term } => {
                let cols = self.resolve_expr(child, expected)?;
                self.resolve_term(term)?;
                if let Some(cols) = &cols {
                    if *col >= cols.len() {
                        return Err(self.err(format!(
                            "selection column {} out of range (arity {})",
                            *col + 1,
                            cols.len()
                        )));
                    }
                    if let Some(s) = cols[*col] {
                        self.expect_term_sort(term, s)?;
                    }
                }
                Ok(cols)
            }
            RelAlgExpr::SelectCols { child, left, right } => {
                let cols = self.resolve_expr(child, expected)?;
                if let Some(cols) = &cols {
                    if *left >= cols.len() || *right >= cols.len() {
                        return Err(self.err(format!(
                            "selection columns {}={} out of range (arity {})",
                            *left + 1,
                            *right + 1,
                            cols.len()
                        )));
                    }
                }
                Ok(cols)
            }
            RelAlgExpr::Project { child, cols } => {
                let child_cols = self.resolve_expr(child, None)?;
                if let Some(child_cols) = &child_cols {
                    if let Some(&bad) = cols.iter().find(|&&c| c >= child_cols.len()) {
                        return Err(self.err(format!(
                            "projection column {} out of range (arity {})",
                            bad + 1,
                            child_cols.len()
                        )));
                    }
                    Ok(Some(cols.iter().map(|&c| child_cols[c]).collect()))
                } else {
                    Ok(Some(vec![None; cols.len()]))
                }
            }
            RelAlgExpr::Product { left, right } => {
                // Split the expectation between the two sides when their
                // arities are known; otherwise resolve without expectations.
                let lc = self.resolve_expr(left, None)?;
                let rc = self.resolve_expr(right, None)?;
                match (lc, rc) {
                    (Some(mut l), Some(r)) => {
                        l.extend(r);
                        if let Some(expected) = expected {
                            if expected.len() == l.len() {
                                // Re-push expectations for still-unknown columns.
                                self.repush_product(left, right, expected)?;
                            }
                        }
                        Ok(Some(l))
                    }
                    _ => Ok(None),
                }
            }
            RelAlgExpr::Union { left, right } | RelAlgExpr::Difference { left, right } => {
                let lc = self.resolve_expr(left, expected)?;
                let merged: Option<Vec<Option<SortId>>> = match (&lc, expected) {
                    (Some(l), _) => Some(l.clone()),
                    (None, Some(e)) => Some(e.to_vec()),
                    (None, None) => None,
                };
                let rc = self.resolve_expr(right, merged.as_deref())?;
                match (lc, rc) {
                    (Some(l), Some(r)) => {
                        if l.len() != r.len() {
                            return Err(self.err(format!(
                                "set operands have mismatched arity: {} vs {}",
                                l.len(),
                                r.len()
                            )));
                        }
                        let cols = l
                            .iter()
                            .zip(r.iter())
                            .map(|(a, b)| a.or(*b))
                            .collect();
                        Ok(Some(cols))
                    }
                    (Some(l), None) => Ok(Some(l)),
                    (None, Some(r)) => Ok(Some(r)),
                    (None, None) => Ok(None),
                }
            }
        }
    }

    fn repush_product(
        &mut self,
        left: &mut RelAlgExpr,
        right: &mut RelAlgExpr,
        expected: &[Option<SortId>],
    ) -> Result<(), ParseError> {
        if let Some(la) = self.arity_of(left) {
            let (le, re) = expected.split_at(la);
            self.resolve_expr(left, Some(le))?;
            self.resolve_expr(right, Some(re))?;
        }
        Ok(())
    }

    fn arity_of(&self, e: &RelAlgExpr) -> Option<usize> {
        e.arity(self.schema).ok().flatten()
    }

    fn resolve_term(&mut self, t: &mut Term) -> Result<(), ParseError> {
        match t {
            Term::Value(_) | Term::Param { .. } => Ok(()),
            Term::Var { name, .. } => {
                if self.schema.session_var_sort(name).is_none() {
                    return Err(self.err(format!("unresolved session variable `#{name}`")));
                }
                Ok(())
            }
            Term::App { func, args } => {
                let decl = self
                    .schema
                    .function(func)
                    .ok_or_else(|| self.err(format!("unresolved function `{func}`")))?
                    .clone();
                if decl.arg_sorts.len() != args.len() {
                    return Err(self.err(format!(
                        "function `{func}` expects {} arguments, got {}",
                        decl.arg_sorts.len(),
                        args.len()
                    )));
                }
                for (a, s) in args.iter_mut().zip(decl.arg_sorts.iter()) {
                    self.resolve_term(a)?;
                    self.expect_term_sort(a, *s)?;
                }
                Ok(())
            }
            Term::CardinalityPlus { rel, .. } => {
                self.resolve_expr(rel, None)?;
                Ok(())
            }
        }
    }

    /// The sort of a term when it is determined by declarations alone.
    fn term_sort(&self, t: &Term) -> Option<SortId> {
        match t {
            Term::Value(Value::Null) => None,
            Term::Value(Value::Int(_)) => Some(crate::model::INT_SORT),
            Term::Value(Value::Anon(s, _)) => Some(*s),
            Term::Value(Value::Named(s, _)) => {
                if *s == UNRESOLVED_SORT {
                    None
                } else {
                    Some(*s)
                }
            }
            Term::Var { name, .. } => self.schema.session_var_sort(name),
            Term::Param { name } => self.schema.params.get(name).copied(),
            Term::App { func, .. } => self.schema.function(func).map(|f| f.result_sort),
            Term::CardinalityPlus { .. } => Some(crate::model::INT_SORT),
        }
    }

    /// Push an expected sort into a term, fixing unresolved named constants.
    fn expect_term_sort(&mut self, t: &mut Term, sort: SortId) -> Result<(), ParseError> {
        if let Term::Value(Value::Named(s, label)) = t {
            if *s == UNRESOLVED_SORT {
                if self.schema.sort(sort).kind != SortKind::Uninterpreted {
                    return Err(self.err(format!(
                        "constant '{label}' cannot belong to integer sort"
                    )));
                }
                *s = sort;
            }
        }
        Ok(())
    }
}

fn has_unresolved_term(t: &Term) -> bool {
    match t {
        Term::Value(Value::Named(s, _)) => *s == UNRESOLVED_SORT,
        Term::App { args, .. } => args.iter().any(has_unresolved_term),
        _ => false,
    }
}

/// Verify that a resolved formula contains no named constants whose sort was
/// never inferred.
pub fn fully_resolved(f: &Formula) -> bool {
    let uses = crate::expr::SymbolUse::scan_formula(f);
    uses.named.keys().all(|s| *s != UNRESOLVED_SORT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::printer::print_spec;

    fn fixture() -> String {
        std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/fixtures/simplescarf.spec"
        ))
        .unwrap()
    }

    #[test]
    fn bundled_corpus_parses_with_expected_shape() {
        let spec = parse_spec(&fixture()).unwrap();
        assert_eq!(spec.schema.relations.len(), 3);
        assert_eq!(spec.schema.session_vars.len(), 1);
        assert_eq!(spec.transducers.len(), 5);
        assert_eq!(spec.schema.functions.len(), 1);
        assert!(spec.schema.functions[0].injective);
        assert_eq!(spec.schema.predicates.len(), 1);
        assert!(spec.constraint("S0").is_some());
        assert!(spec.constraint("N0").is_some());
        let scope = spec.default_scope.as_ref().unwrap();
        assert_eq!(scope.default_sort_size, 3);
        assert_eq!(scope.max_seq_len, 6);
        // Foreign keys resolved onto Member.
        let member = spec.schema.relation("Member").unwrap();
        assert_eq!(member.foreign_keys.len(), 2);
        // Named constants in Q resolved to the varchar sort.
        let q = spec.constraint("Q").unwrap();
        assert!(fully_resolved(q));
    }

    #[test]
    fn empty_input_is_a_syntax_error_at_1_1() {
        let err = parse_spec("").unwrap_err();
        assert_eq!(err.kind, ErrorKind::Syntax);
        assert_eq!((err.line, err.col), (1, 1));
    }

    #[test]
    fn undeclared_relation_is_an_unresolved_error_naming_it() {
        let text = "schema { sort varchar; var #u: varchar; }\nconstraint C { sat(Q) }\n";
        let err = parse_spec(text).unwrap_err();
        assert_eq!(err.kind, ErrorKind::Unresolved);
        assert!(err.message.contains("Q"), "message: {}", err.message);
    }

    #[test]
    fn duplicate_declaration_is_reported_distinctly() {
        let text = "schema { sort varchar; sort varchar; }\n";
        let err = parse_spec(text).unwrap_err();
        assert_eq!(err.kind, ErrorKind::Duplicate);
    }

    #[test]
    fn lexical_error_is_reported_with_position() {
        let err = parse_spec("schema { ? }").unwrap_err();
        assert_eq!(err.kind, ErrorKind::Lexical);
        assert_eq!(err.line, 1);
        assert_eq!(err.col, 10);
    }

    #[test]
    fn print_parse_reaches_fixpoint_on_the_corpus() {
        let spec1 = parse_spec(&fixture()).unwrap();
        let printed1 = print_spec(&spec1);
        let spec2 = parse_spec(&printed1).unwrap_or_else(|e| {
            panic!("printed spec failed to parse: {e}\n---\n{printed1}")
        });
        assert_eq!(spec1, spec2);
        let printed2 = print_spec(&spec2);
        assert_eq!(printed1, printed2);
    }

    #[test]
    fn formula_parser_rejects_trailing_tokens() {
        let spec = parse_spec(&fixture()).unwrap();
        assert!(parse_formula("#u = null null", &spec.schema).is_err());
        let f = parse_formula("#u = null", &spec.schema).unwrap();
        assert_eq!(
            f,
            Formula::Eq(Term::var("u"), Term::Value(Value::Null))
        );
    }

    #[test]
    fn membership_and_parenthesized_formulas_disambiguate() {
        let spec = parse_spec(&fixture()).unwrap();
        let member = parse_formula("($u_L, f($p_L)) in Users", &spec.schema).unwrap();
        assert!(matches!(member, Formula::Member { ref tuple, .. } if tuple.len() == 2));
        let paren = parse_formula("(#u = null and true)", &spec.schema).unwrap();
        assert!(matches!(paren, Formula::And(_)));
        let single = parse_formula("($u_A) in proj[2](Member)", &spec.schema).unwrap();
        assert!(matches!(single, Formula::Member { ref tuple, .. } if tuple.len() == 1));
    }

    #[test]
    fn selection_rhs_integer_means_column_and_parenthesized_means_value() {
        let spec = parse_spec(&fixture()).unwrap();
        let colcol = parse_formula("sat(sel[1 = 3](Sessions x Member))", &spec.schema).unwrap();
        match &colcol {
            Formula::Sat(RelAlgExpr::SelectCols { left, right, .. }) => {
                assert_eq!((*left, *right), (0, 2));
            }
            other => panic!("expected column-column selection, got {other:?}"),
        }
        let colval = parse_formula("sat(sel[1 = (3)](Sessions))", &spec.schema).unwrap();
        match &colval {
            Formula::Sat(RelAlgExpr::SelectValue { col, term, .. }) => {
                assert_eq!(*col, 0);
                assert_eq!(term, &Term::int(3));
            }
            other => panic!("expected column-value selection, got {other:?}"),
        }
    }

    #[test]
    fn product_binds_tighter_than_union() {
        let spec = parse_spec(&fixture()).unwrap();
        let f = parse_formula(
            "Member' = Member + proj[1](sel[2 = $s_A](Sessions)) x {($u_A)}",
            &spec.schema,
        )
        .unwrap();
        match f {
            Formula::RelEq { rhs: RelAlgExpr::Union { left, right }, .. } => {
                assert_eq!(*left, RelAlgExpr::rel("Member"));
                assert!(matches!(*right, RelAlgExpr::Product { .. }));
            }
            other => panic!("unexpected parse {other:?}"),
        }
    }

    #[test]
    fn error_positions_are_monotone_in_prefix_length() {
        let text = fixture();
        let mut last = (0u32, 0u32);
        // Truncate at a few byte offsets; the reported error position should
        // never move backwards as more of the file becomes available.
        for cut in [40, 120, 400, 900, 1400] {
            if cut > text.len() {
                break;
            }
            let prefix = &text[..cut];
            if let Err(e) = parse_spec(prefix) {
                assert!(
                    (e.line, e.col) >= last,
                    "error position went backwards at cut {cut}: {:?} < {:?}",
                    (e.line, e.col),
                    last
                );
                last = (e.line, e.col);
            }
        }
    }
}
