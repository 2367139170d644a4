//! The expression and constraint language: relational algebra expressions,
//! terms, transition formulas, and transducers.
//!
//! Formulas are plain immutable trees. Priming, substitution and frame
//! closure live in [`crate::transform`]; evaluation lives in
//! [`crate::eval`].

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::model::{Schema, SortId, Value};

/// A relational algebra expression. Column indices are 0-based internally;
/// the surface syntax uses 1-based indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum RelAlgExpr {
    /// Reference to a declared relation, possibly in the next state.
    Rel { name: String, primed: bool },
    /// A literal relation: a set of tuples of terms. `{}` is the empty
    /// relation of indeterminate arity.
    Lit { rows: Vec<Vec<Term>> },
    /// Selection `sel[col = term]`: keep rows whose column equals the term.
    SelectValue { child: Box<RelAlgExpr>, col: usize, term: Term },
    /// Selection `sel[i = j]`: keep rows whose two columns are equal.
    SelectCols { child: Box<RelAlgExpr>, left: usize, right: usize },
    /// Projection onto the given columns (with duplicate elimination).
    Project { child: Box<RelAlgExpr>, cols: Vec<usize> },
    Product { left: Box<RelAlgExpr>, right: Box<RelAlgExpr> },
    Union { left: Box<RelAlgExpr>, right: Box<RelAlgExpr> },
    Difference { left: Box<RelAlgExpr>, right: Box<RelAlgExpr> },
}

impl RelAlgExpr {
    pub fn rel(name: &str) -> RelAlgExpr {
        RelAlgExpr::Rel { name: name.into(), primed: false }
    }

    pub fn rel_primed(name: &str) -> RelAlgExpr {
        RelAlgExpr::Rel { name: name.into(), primed: true }
    }

    pub fn select_value(self, col: usize, term: Term) -> RelAlgExpr {
        RelAlgExpr::SelectValue { child: Box::new(self), col, term }
    }

    pub fn select_cols(self, left: usize, right: usize) -> RelAlgExpr {
        RelAlgExpr::SelectCols { child: Box::new(self), left, right }
    }

    pub fn project(self, cols: Vec<usize>) -> RelAlgExpr {
        RelAlgExpr::Project { child: Box::new(self), cols }
    }

    pub fn product(self, other: RelAlgExpr) -> RelAlgExpr {
        RelAlgExpr::Product { left: Box::new(self), right: Box::new(other) }
    }

    pub fn union(self, other: RelAlgExpr) -> RelAlgExpr {
        RelAlgExpr::Union { left: Box::new(self), right: Box::new(other) }
    }

    pub fn difference(self, other: RelAlgExpr) -> RelAlgExpr {
        RelAlgExpr::Difference { left: Box::new(self), right: Box::new(other) }
    }

    /// Statically computed arity. `None` means indeterminate: an empty
    /// literal relation matches any arity.
    pub fn arity(&self, schema: &Schema) -> Result<Option<usize>, ExprError> {
        match self {
            RelAlgExpr::Rel { name, .. } => {
                let rel = schema
                    .relation(name)
                    .ok_or_else(|| ExprError::UnknownRelation { name: name.clone() })?;
                Ok(Some(rel.arity()))
            }
            RelAlgExpr::Lit { rows } => {
                if rows.is_empty() {
                    return Ok(None);
                }
                let arity = rows[0].len();
                if rows.iter().any(|r| r.len() != arity) {
                    return Err(ExprError::RaggedLiteral);
                }
                Ok(Some(arity))
            }
            RelAlgExpr::SelectValue { child, col, .. } => {
                let a = child.arity(schema)?;
                if let Some(a) = a {
                    if *col >= a {
                        return Err(ExprError::ColumnOutOfRange { col: *col, arity: a });
                    }
                }
                Ok(a)
            }
            RelAlgExpr::SelectCols { child, left, right } => {
                let a = child.arity(schema)?;
                if let Some(a) = a {
                    if *left >= a || *right >= a {
                        return Err(ExprError::ColumnOutOfRange {
                            col: (*left).max(*right),
                            arity: a,
                        });
                    }
                }
                Ok(a)
            }
            RelAlgExpr::Project { child, cols } => {
                let a = child.arity(schema)?;
                if let Some(a) = a {
                    if let Some(&bad) = cols.iter().find(|&&c| c >= a) {
                        return Err(ExprError::ColumnOutOfRange { col: bad, arity: a });
                    }
                }
                Ok(Some(cols.len()))
            }
            RelAlgExpr::Product { left, right } => {
                match (left.arity(schema)?, right.arity(schema)?) {
                    (Some(a), Some(b)) => Ok(Some(a + b)),
                    // An empty side makes the product empty; arity stays open.
                    _ => Ok(None),
                }
            }
            RelAlgExpr::Union { left, right } | RelAlgExpr::Difference { left, right } => {
                match (left.arity(schema)?, right.arity(schema)?) {
                    (Some(a), Some(b)) if a != b => {
                        Err(ExprError::ArityMismatch { left: a, right: b })
                    }
                    (Some(a), _) | (_, Some(a)) => Ok(Some(a)),
                    (None, None) => Ok(None),
                }
            }
        }
    }
}

/// A term denoting a single value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Term {
    Value(Value),
    /// Session variable `#name`, possibly primed.
    Var { name: String, primed: bool },
    /// Input parameter `$name`. Parameters are rigid: never primed.
    Param { name: String },
    /// Application of an uninterpreted function.
    App { func: String, args: Vec<Term> },
    /// Cardinality term `|E| + offset`.
    CardinalityPlus { rel: Box<RelAlgExpr>, offset: u32 },
}

impl Term {
    pub fn var(name: &str) -> Term {
        Term::Var { name: name.into(), primed: false }
    }

    pub fn var_primed(name: &str) -> Term {
        Term::Var { name: name.into(), primed: true }
    }

    pub fn param(name: &str) -> Term {
        Term::Param { name: name.into() }
    }

    pub fn null() -> Term {
        Term::Value(Value::Null)
    }

    pub fn int(n: i64) -> Term {
        Term::Value(Value::Int(n))
    }

    pub fn app(func: &str, args: Vec<Term>) -> Term {
        Term::App { func: func.into(), args }
    }
}

/// A relational constraint or transition formula: a Boolean combination of
/// equality terms, satisfiability checks, membership sugar, and predicate
/// applications.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Formula {
    True,
    False,
    /// Term equality. A primed session variable on the left-hand side makes
    /// this an assignment inside a transducer formula.
    Eq(Term, Term),
    /// Relation equality `R = E` (or assignment `R' = E`).
    RelEq { name: String, primed: bool, rhs: RelAlgExpr },
    /// `sat(E)`: the expression evaluates to a non-empty set.
    Sat(RelAlgExpr),
    /// Membership sugar `(t1, ..., tk) in E`, desugared to nested selections
    /// at evaluation time.
    Member { tuple: Vec<Term>, rel: RelAlgExpr },
    /// Application of an uninterpreted predicate.
    Pred { name: String, args: Vec<Term> },
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    pub fn and(parts: Vec<Formula>) -> Formula {
        Formula::And(parts)
    }

    pub fn not(self) -> Formula {
        Formula::Not(Box::new(self))
    }

    pub fn eq(lhs: Term, rhs: Term) -> Formula {
        Formula::Eq(lhs, rhs)
    }

    pub fn neq(lhs: Term, rhs: Term) -> Formula {
        Formula::Eq(lhs, rhs).not()
    }

    /// Flatten nested conjunctions into a conjunct list, dropping literal
    /// `true` conjuncts. Returns `None` if a literal `false` conjunct makes
    /// the whole formula false.
    pub fn conjuncts(&self) -> Option<Vec<&Formula>> {
        let mut out = Vec::new();
        fn walk<'a>(f: &'a Formula, out: &mut Vec<&'a Formula>) -> bool {
            match f {
                Formula::True => true,
                Formula::False => false,
                Formula::And(parts) => parts.iter().all(|p| walk(p, out)),
                other => {
                    out.push(other);
                    true
                }
            }
        }
        if walk(self, &mut out) {
            Some(out)
        } else {
            None
        }
    }

    /// Conjoin, flattening one level.
    pub fn conjoin(self, other: Formula) -> Formula {
        match (self, other) {
            (Formula::True, f) | (f, Formula::True) => f,
            (Formula::And(mut a), Formula::And(b)) => {
                a.extend(b);
                Formula::And(a)
            }
            (Formula::And(mut a), f) => {
                a.push(f);
                Formula::And(a)
            }
            (f, Formula::And(b)) => {
                let mut parts = vec![f];
                parts.extend(b);
                Formula::And(parts)
            }
            (a, b) => Formula::And(vec![a, b]),
        }
    }

    /// Number of AST nodes, used for the polynomial-size check on preimages.
    pub fn size(&self) -> usize {
        fn term_size(t: &Term) -> usize {
            match t {
                Term::Value(_) | Term::Var { .. } | Term::Param { .. } => 1,
                Term::App { args, .. } => 1 + args.iter().map(term_size).sum::<usize>(),
                Term::CardinalityPlus { rel, .. } => 1 + expr_size(rel),
            }
        }
        fn expr_size(e: &RelAlgExpr) -> usize {
            match e {
                RelAlgExpr::Rel { .. } => 1,
                RelAlgExpr::Lit { rows } => {
                    1 + rows.iter().flat_map(|r| r.iter().map(term_size)).sum::<usize>()
                }
                RelAlgExpr::SelectValue { child, term, .. } => {
                    1 + expr_size(child) + term_size(term)
                }
                RelAlgExpr::SelectCols { child, .. } => 1 + expr_size(child),
                RelAlgExpr::Project { child, .. } => 1 + expr_size(child),
                RelAlgExpr::Product { left, right }
                | RelAlgExpr::Union { left, right }
                | RelAlgExpr::Difference { left, right } => {
                    1 + expr_size(left) + expr_size(right)
                }
            }
        }
        match self {
            Formula::True | Formula::False => 1,
            Formula::Eq(a, b) => 1 + term_size(a) + term_size(b),
            Formula::RelEq { rhs, .. } => 2 + expr_size(rhs),
            Formula::Sat(e) => 1 + expr_size(e),
            Formula::Member { tuple, rel } => {
                1 + tuple.iter().map(term_size).sum::<usize>() + expr_size(rel)
            }
            Formula::Pred { args, .. } => 1 + args.iter().map(term_size).sum::<usize>(),
            Formula::Not(f) => 1 + f.size(),
            Formula::And(parts) | Formula::Or(parts) => {
                1 + parts.iter().map(Formula::size).sum::<usize>()
            }
        }
    }

    /// Canonical form for comparing formulas modulo conjunct order: nested
    /// conjunctions are flattened, `true` conjuncts dropped, and conjunct
    /// lists sorted structurally. Applied recursively.
    pub fn normalize_conjuncts(&self) -> Formula {
        match self {
            Formula::And(_) | Formula::True => match self.conjuncts() {
                None => Formula::False,
                Some(parts) => {
                    let mut parts: Vec<Formula> =
                        parts.into_iter().map(Formula::normalize_conjuncts).collect();
                    parts.sort();
                    parts.dedup();
                    match parts.len() {
                        0 => Formula::True,
                        1 => parts.pop().unwrap(),
                        _ => Formula::And(parts),
                    }
                }
            },
            Formula::Not(f) => Formula::Not(Box::new(f.normalize_conjuncts())),
            Formula::Or(parts) => {
                Formula::Or(parts.iter().map(Formula::normalize_conjuncts).collect())
            }
            other => other.clone(),
        }
    }

    /// Structural equality modulo conjunct order and `true`-conjunct elision.
    pub fn equiv_mod_conjuncts(&self, other: &Formula) -> bool {
        self.normalize_conjuncts() == other.normalize_conjuncts()
    }
}

/// Which symbols a formula mentions, split by namespace and primedness.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolUse {
    pub vars: BTreeSet<String>,
    pub primed_vars: BTreeSet<String>,
    pub rels: BTreeSet<String>,
    pub primed_rels: BTreeSet<String>,
    pub params: BTreeSet<String>,
    pub funcs: BTreeSet<String>,
    pub preds: BTreeSet<String>,
    /// Named constants mentioned, grouped by sort.
    pub named: BTreeMap<SortId, BTreeSet<Arc<str>>>,
    /// Anonymous constants mentioned (relevant for symmetry breaking).
    pub anon_sorts: BTreeSet<SortId>,
}

impl SymbolUse {
    pub fn has_primed(&self) -> bool {
        !self.primed_vars.is_empty() || !self.primed_rels.is_empty()
    }

    pub fn scan_formula(f: &Formula) -> SymbolUse {
        let mut u = SymbolUse::default();
        u.visit_formula(f);
        u
    }

    pub fn scan_term(t: &Term) -> SymbolUse {
        let mut u = SymbolUse::default();
        u.visit_term(t);
        u
    }

    pub fn scan_expr(e: &RelAlgExpr) -> SymbolUse {
        let mut u = SymbolUse::default();
        u.visit_expr(e);
        u
    }

    pub fn merge(&mut self, other: &SymbolUse) {
        self.vars.extend(other.vars.iter().cloned());
        self.primed_vars.extend(other.primed_vars.iter().cloned());
        self.rels.extend(other.rels.iter().cloned());
        self.primed_rels.extend(other.primed_rels.iter().cloned());
        self.params.extend(other.params.iter().cloned());
        self.funcs.extend(other.funcs.iter().cloned());
        self.preds.extend(other.preds.iter().cloned());
        for (sort, labels) in &other.named {
            self.named.entry(*sort).or_default().extend(labels.iter().cloned());
        }
        self.anon_sorts.extend(other.anon_sorts.iter().copied());
    }

    fn visit_formula(&mut self, f: &Formula) {
        match f {
            Formula::True | Formula::False => {}
            Formula::Eq(a, b) => {
                self.visit_term(a);
                self.visit_term(b);
            }
            Formula::RelEq { name, primed, rhs } => {
                if *primed {
                    self.primed_rels.insert(name.clone());
                } else {
                    self.rels.insert(name.clone());
                }
                self.visit_expr(rhs);
            }
            Formula::Sat(e) => self.visit_expr(e),
            Formula::Member { tuple, rel } => {
                for t in tuple {
                    self.visit_term(t);
                }
                self.visit_expr(rel);
            }
            Formula::Pred { name, args } => {
                self.preds.insert(name.clone());
                for t in args {
                    self.visit_term(t);
                }
            }
            Formula::Not(f) => self.visit_formula(f),
            Formula::And(parts) | Formula::Or(parts) => {
                for p in parts {
                    self.visit_formula(p);
                }
            }
        }
    }

    fn visit_term(&mut self, t: &Term) {
        match t {
            Term::Value(Value::Named(sort, label)) => {
                self.named.entry(*sort).or_default().insert(label.clone());
            }
            Term::Value(Value::Anon(sort, _)) => {
                self.anon_sorts.insert(*sort);
            }
            Term::Value(_) => {}
            Term::Var { name, primed } => {
                if *primed {
                    self.primed_vars.insert(name.clone());
                } else {
                    self.vars.insert(name.clone());
                }
            }
            Term::Param { name } => {
                self.params.insert(name.clone());
            }
            Term::App { func, args } => {
                self.funcs.insert(func.clone());
                for a in args {
                    self.visit_term(a);
                }
            }
            Term::CardinalityPlus { rel, .. } => self.visit_expr(rel),
        }
    }

    fn visit_expr(&mut self, e: &RelAlgExpr) {
        match e {
            RelAlgExpr::Rel { name, primed } => {
                if *primed {
                    self.primed_rels.insert(name.clone());
                } else {
                    self.rels.insert(name.clone());
                }
            }
            RelAlgExpr::Lit { rows } => {
                for row in rows {
                    for t in row {
                        self.visit_term(t);
                    }
                }
            }
            RelAlgExpr::SelectValue { child, term, .. } => {
                self.visit_expr(child);
                self.visit_term(term);
            }
            RelAlgExpr::SelectCols { child, .. } | RelAlgExpr::Project { child, .. } => {
                self.visit_expr(child)
            }
            RelAlgExpr::Product { left, right }
            | RelAlgExpr::Union { left, right }
            | RelAlgExpr::Difference { left, right } => {
                self.visit_expr(left);
                self.visit_expr(right);
            }
        }
    }
}

/// A path transducer: one transition rule of one servlet, expressed as a
/// Boolean combination of guard terms and single-assignment updates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transducer {
    pub name: String,
    pub base_url: String,
    /// Declared input parameters in declaration order.
    pub params: Vec<(String, SortId)>,
    pub formula: Formula,
    /// Base URLs this servlet's response links to; required for workflow
    /// attack detection.
    pub links: Option<BTreeSet<String>>,
    /// Set by [`crate::transform::frame_close`]; a closed transducer has
    /// exactly one primed definition per session variable and relation.
    pub frame_closed: bool,
}

impl Transducer {
    /// Rename every parameter with an `@index` suffix so that repeated
    /// occurrences of the same servlet in a synthesized sequence use fresh
    /// rigid symbols.
    pub fn instantiate(&self, index: usize) -> Transducer {
        let mut renames: BTreeMap<String, String> = BTreeMap::new();
        let params = self
            .params
            .iter()
            .map(|(n, s)| {
                let fresh = format!("{n}@{index}");
                renames.insert(n.clone(), fresh.clone());
                (fresh, *s)
            })
            .collect();
        Transducer {
            name: self.name.clone(),
            base_url: self.base_url.clone(),
            params,
            formula: rename_params_formula(&self.formula, &renames),
            links: self.links.clone(),
            frame_closed: self.frame_closed,
        }
    }
}

/// Strip an `@index` suffix added by [`Transducer::instantiate`].
pub fn strip_instance_suffix(name: &str) -> &str {
    match name.rfind('@') {
        Some(pos) if name[pos + 1..].chars().all(|c| c.is_ascii_digit()) => &name[..pos],
        _ => name,
    }
}

fn rename_params_formula(f: &Formula, renames: &BTreeMap<String, String>) -> Formula {
    match f {
        Formula::True => Formula::True,
        Formula::False => Formula::False,
        Formula::Eq(a, b) => {
            Formula::Eq(rename_params_term(a, renames), rename_params_term(b, renames))
        }
        Formula::RelEq { name, primed, rhs } => Formula::RelEq {
            name: name.clone(),
            primed: *primed,
            rhs: rename_params_expr(rhs, renames),
        },
        Formula::Sat(e) => Formula::Sat(rename_params_expr(e, renames)),
        Formula::Member { tuple, rel } => Formula::Member {
            tuple: tuple.iter().map(|t| rename_params_term(t, renames)).collect(),
            rel: rename_params_expr(rel, renames),
        },
        Formula::Pred { name, args } => Formula::Pred {
            name: name.clone(),
            args: args.iter().map(|t| rename_params_term(t, renames)).collect(),
        },
        Formula::Not(f) => Formula::Not(Box::new(rename_params_formula(f, renames))),
        Formula::And(parts) => {
            Formula::And(parts.iter().map(|p| rename_params_formula(p, renames)).collect())
        }
        Formula::Or(parts) => {
            Formula::Or(parts.iter().map(|p| rename_params_formula(p, renames)).collect())
        }
    }
}

fn rename_params_term(t: &Term, renames: &BTreeMap<String, String>) -> Term {
    match t {
        Term::Param { name } => Term::Param {
            name: renames.get(name).cloned().unwrap_or_else(|| name.clone()),
        },
        Term::App { func, args } => Term::App {
            func: func.clone(),
            args: args.iter().map(|a| rename_params_term(a, renames)).collect(),
        },
        Term::CardinalityPlus { rel, offset } => Term::CardinalityPlus {
            rel: Box::new(rename_params_expr(rel, renames)),
            offset: *offset,
        },
        other => other.clone(),
    }
}

fn rename_params_expr(e: &RelAlgExpr, renames: &BTreeMap<String, String>) -> RelAlgExpr {
    match e {
        RelAlgExpr::Rel { .. } => e.clone(),
        RelAlgExpr::Lit { rows } => RelAlgExpr::Lit {
            rows: rows
                .iter()
                .map(|row| row.iter().map(|t| rename_params_term(t, renames)).collect())
                .collect(),
        },
        RelAlgExpr::SelectValue { child, col, term } => RelAlgExpr::SelectValue {
            child: Box::new(rename_params_expr(child, renames)),
            col: *col,
            term: rename_params_term(term, renames),
        },
        RelAlgExpr::SelectCols { child, left, right } => RelAlgExpr::SelectCols {
            child: Box::new(rename_params_expr(child, renames)),
            left: *left,
            right: *right,
        },
        RelAlgExpr::Project { child, cols } => RelAlgExpr::Project {
            child: Box::new(rename_params_expr(child, renames)),
            cols: cols.clone(),
        },
        RelAlgExpr::Product { left, right } => RelAlgExpr::Product {
            left: Box::new(rename_params_expr(left, renames)),
            right: Box::new(rename_params_expr(right, renames)),
        },
        RelAlgExpr::Union { left, right } => RelAlgExpr::Union {
            left: Box::new(rename_params_expr(left, renames)),
            right: Box::new(rename_params_expr(right, renames)),
        },
        RelAlgExpr::Difference { left, right } => RelAlgExpr::Difference {
            left: Box::new(rename_params_expr(left, renames)),
            right: Box::new(rename_params_expr(right, renames)),
        },
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExprError {
    #[error("relation `{name}` is not declared")]
    UnknownRelation { name: String },
    #[error("column {col} out of range (arity {arity})")]
    ColumnOutOfRange { col: usize, arity: usize },
    #[error("operands have mismatched arity: {left} vs {right}")]
    ArityMismatch { left: usize, right: usize },
    #[error("literal relation has rows of differing arity")]
    RaggedLiteral,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conjunct_flattening_drops_true_and_detects_false() {
        let f = Formula::And(vec![
            Formula::True,
            Formula::And(vec![Formula::Sat(RelAlgExpr::rel("R")), Formula::True]),
        ]);
        let parts = f.conjuncts().unwrap();
        assert_eq!(parts.len(), 1);
        let g = Formula::And(vec![Formula::Sat(RelAlgExpr::rel("R")), Formula::False]);
        assert!(g.conjuncts().is_none());
    }

    #[test]
    fn equiv_mod_conjuncts_ignores_order_and_true() {
        let a = Formula::And(vec![
            Formula::eq(Term::var("u"), Term::null()),
            Formula::Sat(RelAlgExpr::rel("M")),
        ]);
        let b = Formula::And(vec![
            Formula::True,
            Formula::Sat(RelAlgExpr::rel("M")),
            Formula::eq(Term::var("u"), Term::null()),
        ]);
        assert!(a.equiv_mod_conjuncts(&b));
        let c = Formula::Sat(RelAlgExpr::rel("M"));
        assert!(!a.equiv_mod_conjuncts(&c));
    }

    #[test]
    fn instance_suffix_roundtrip() {
        let t = Transducer {
            name: "Login".into(),
            base_url: "/Login.php".into(),
            params: vec![("u_L".into(), SortId(1)), ("p_L".into(), SortId(1))],
            formula: Formula::eq(Term::param("u_L"), Term::param("p_L")),
            links: None,
            frame_closed: false,
        };
        let inst = t.instantiate(3);
        assert_eq!(inst.params[0].0, "u_L@3");
        match &inst.formula {
            Formula::Eq(Term::Param { name }, _) => assert_eq!(name, "u_L@3"),
            other => panic!("unexpected formula {other:?}"),
        }
        assert_eq!(strip_instance_suffix("u_L@3"), "u_L");
        assert_eq!(strip_instance_suffix("u_L"), "u_L");
    }
}
