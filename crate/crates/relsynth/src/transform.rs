//! Syntactic manipulation of formulas: priming, simultaneous substitution of
//! primed symbols, frame closure of transducers, and the writes-set.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::expr::{Formula, RelAlgExpr, SymbolUse, Term, Transducer};
use crate::model::Schema;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransformError {
    #[error("formula already contains primed symbol `{name}`")]
    AlreadyPrimed { name: String },
    #[error("no substitution provided for primed symbol `{name}`")]
    UnmappedPrimed { name: String },
    #[error("symbol `{name}` has more than one primed definition")]
    DuplicateDefinition { name: String },
    #[error("primed symbol `{name}` occurs outside a top-level definition")]
    IllegalPrimedOccurrence { name: String },
    #[error("definition of `{name}` has primed symbols on its right-hand side")]
    PrimedRhs { name: String },
    #[error("transducer `{name}` is not frame-closed")]
    NotFrameClosed { name: String },
    #[error("postcondition contains primed symbols")]
    PrimedPost,
}

/// Convert every current-state session variable and relation reference in a
/// prime-free formula to its next-state form. Parameters and constants are
/// untouched.
pub fn prime(f: &Formula) -> Result<Formula, TransformError> {
    let uses = SymbolUse::scan_formula(f);
    if let Some(name) = uses.primed_vars.iter().chain(uses.primed_rels.iter()).next() {
        return Err(TransformError::AlreadyPrimed { name: name.clone() });
    }
    Ok(prime_formula(f))
}

fn prime_formula(f: &Formula) -> Formula {
    match f {
        Formula::True => Formula::True,
        Formula::False => Formula::False,
        Formula::Eq(a, b) => Formula::Eq(prime_term(a), prime_term(b)),
        Formula::RelEq { name, primed: _, rhs } => {
            Formula::RelEq { name: name.clone(), primed: true, rhs: prime_expr(rhs) }
        }
        Formula::Sat(e) => Formula::Sat(prime_expr(e)),
        Formula::Member { tuple, rel } => Formula::Member {
            tuple: tuple.iter().map(prime_term).collect(),
            rel: prime_expr(rel),
        },
        Formula::Pred { name, args } => {
            Formula::Pred { name: name.clone(), args: args.iter().map(prime_term).collect() }
        }
        Formula::Not(f) => Formula::Not(Box::new(prime_formula(f))),
        Formula::And(parts) => Formula::And(parts.iter().map(prime_formula).collect()),
        Formula::Or(parts) => Formula::Or(parts.iter().map(prime_formula).collect()),
    }
}

fn prime_term(t: &Term) -> Term {
    match t {
        Term::Var { name, primed: _ } => Term::Var { name: name.clone(), primed: true },
        Term::App { func, args } => {
            Term::App { func: func.clone(), args: args.iter().map(prime_term).collect() }
        }
        Term::CardinalityPlus { rel, offset } => {
            Term::CardinalityPlus { rel: Box::new(prime_expr(rel)), offset: *offset }
        }
        other => other.clone(),
    }
}

fn prime_expr(e: &RelAlgExpr) -> RelAlgExpr {
    match e {
        RelAlgExpr::Rel { name, primed: _ } => RelAlgExpr::Rel { name: name.clone(), primed: true },
        RelAlgExpr::Lit { rows } => RelAlgExpr::Lit {
            rows: rows.iter().map(|r| r.iter().map(prime_term).collect()).collect(),
        },
        RelAlgExpr::SelectValue { child, col, term } => RelAlgExpr::SelectValue {
            child: Box::new(prime_expr(child)),
            col: *col,
            term: prime_term(term),
        },
        RelAlgExpr::SelectCols { child, left, right } => RelAlgExpr::SelectCols {
            child: Box::new(prime_expr(child)),
            left: *left,
            right: *right,
        },
        RelAlgExpr::Project { child, cols } => {
            RelAlgExpr::Project { child: Box::new(prime_expr(child)), cols: cols.clone() }
        }
        RelAlgExpr::Product { left, right } => RelAlgExpr::Product {
            left: Box::new(prime_expr(left)),
            right: Box::new(prime_expr(right)),
        },
        RelAlgExpr::Union { left, right } => RelAlgExpr::Union {
            left: Box::new(prime_expr(left)),
            right: Box::new(prime_expr(right)),
        },
        RelAlgExpr::Difference { left, right } => RelAlgExpr::Difference {
            left: Box::new(prime_expr(left)),
            right: Box::new(prime_expr(right)),
        },
    }
}

/// A simultaneous substitution for primed symbols: each primed session
/// variable maps to a term, each primed relation to an expression.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Substitution {
    pub vars: BTreeMap<String, Term>,
    pub rels: BTreeMap<String, RelAlgExpr>,
}

impl Substitution {
    /// The identity substitution `x' -> x` over the schema's symbols.
    pub fn identity(schema: &Schema) -> Substitution {
        Substitution {
            vars: schema
                .session_vars
                .iter()
                .map(|(n, _)| (n.clone(), Term::var(n)))
                .collect(),
            rels: schema
                .relations
                .iter()
                .map(|r| (r.name.clone(), RelAlgExpr::rel(&r.name)))
                .collect(),
        }
    }
}

/// Replace every primed symbol in `f` by its image under `subst`,
/// simultaneously. Errors if a primed symbol has no mapping; the result is
/// prime-free provided the substitution's right-hand sides are.
pub fn substitute(f: &Formula, subst: &Substitution) -> Result<Formula, TransformError> {
    let uses = SymbolUse::scan_formula(f);
    for v in &uses.primed_vars {
        if !subst.vars.contains_key(v) {
            return Err(TransformError::UnmappedPrimed { name: v.clone() });
        }
    }
    for r in &uses.primed_rels {
        if !subst.rels.contains_key(r) {
            return Err(TransformError::UnmappedPrimed { name: r.clone() });
        }
    }
    Ok(subst_formula(f, subst))
}

fn subst_formula(f: &Formula, s: &Substitution) -> Formula {
    match f {
        Formula::True => Formula::True,
        Formula::False => Formula::False,
        Formula::Eq(a, b) => Formula::Eq(subst_term(a, s), subst_term(b, s)),
        Formula::RelEq { name, primed, rhs } => {
            let rhs = subst_expr(rhs, s);
            if *primed {
                // R' = E turns into (image of R') = E; the image is a general
                // expression, so express the equality as two set inclusions
                // only when the image is still a plain reference. In practice
                // substitution targets are preimage posts whose relation
                // equalities come from initial-state constraints, and images
                // of those stay references or literals.
                match s.rels.get(name).expect("checked in substitute") {
                    RelAlgExpr::Rel { name: n2, primed: p2 } => {
                        Formula::RelEq { name: n2.clone(), primed: *p2, rhs }
                    }
                    image => {
                        // Fall back to emptiness of the symmetric difference.
                        let image = image.clone();
                        let left = Formula::Sat(RelAlgExpr::Difference {
                            left: Box::new(image.clone()),
                            right: Box::new(rhs.clone()),
                        })
                        .not();
                        let right = Formula::Sat(RelAlgExpr::Difference {
                            left: Box::new(rhs),
                            right: Box::new(image),
                        })
                        .not();
                        Formula::And(vec![left, right])
                    }
                }
            } else {
                Formula::RelEq { name: name.clone(), primed: false, rhs }
            }
        }
        Formula::Sat(e) => Formula::Sat(subst_expr(e, s)),
        Formula::Member { tuple, rel } => Formula::Member {
            tuple: tuple.iter().map(|t| subst_term(t, s)).collect(),
            rel: subst_expr(rel, s),
        },
        Formula::Pred { name, args } => Formula::Pred {
            name: name.clone(),
            args: args.iter().map(|t| subst_term(t, s)).collect(),
        },
        Formula::Not(f) => Formula::Not(Box::new(subst_formula(f, s))),
        Formula::And(parts) => Formula::And(parts.iter().map(|p| subst_formula(p, s)).collect()),
        Formula::Or(parts) => Formula::Or(parts.iter().map(|p| subst_formula(p, s)).collect()),
    }
}

fn subst_term(t: &Term, s: &Substitution) -> Term {
    match t {
        Term::Var { name, primed: true } => {
            s.vars.get(name).expect("checked in substitute").clone()
        }
        Term::App { func, args } => Term::App {
            func: func.clone(),
            args: args.iter().map(|a| subst_term(a, s)).collect(),
        },
        Term::CardinalityPlus { rel, offset } => {
            Term::CardinalityPlus { rel: Box::new(subst_expr(rel, s)), offset: *offset }
        }
        other => other.clone(),
    }
}

fn subst_expr(e: &RelAlgExpr, s: &Substitution) -> RelAlgExpr {
    match e {
        RelAlgExpr::Rel { name, primed: true } => {
            s.rels.get(name).expect("checked in substitute").clone()
        }
        RelAlgExpr::Rel { .. } => e.clone(),
        RelAlgExpr::Lit { rows } => RelAlgExpr::Lit {
            rows: rows.iter().map(|r| r.iter().map(|t| subst_term(t, s)).collect()).collect(),
        },
        RelAlgExpr::SelectValue { child, col, term } => RelAlgExpr::SelectValue {
            child: Box::new(subst_expr(child, s)),
            col: *col,
            term: subst_term(term, s),
        },
        RelAlgExpr::SelectCols { child, left, right } => RelAlgExpr::SelectCols {
            child: Box::new(subst_expr(child, s)),
            left: *left,
            right: *right,
        },
        RelAlgExpr::Project { child, cols } => {
            RelAlgExpr::Project { child: Box::new(subst_expr(child, s)), cols: cols.clone() }
        }
        RelAlgExpr::Product { left, right } => RelAlgExpr::Product {
            left: Box::new(subst_expr(left, s)),
            right: Box::new(subst_expr(right, s)),
        },
        RelAlgExpr::Union { left, right } => RelAlgExpr::Union {
            left: Box::new(subst_expr(left, s)),
            right: Box::new(subst_expr(right, s)),
        },
        RelAlgExpr::Difference { left, right } => RelAlgExpr::Difference {
            left: Box::new(subst_expr(left, s)),
            right: Box::new(subst_expr(right, s)),
        },
    }
}

/// The transducer's update definitions (one per primed symbol) and its guard
/// (everything else), extracted from the top-level conjunction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub guard: Vec<Formula>,
    pub subst: Substitution,
}

/// Split a transducer formula into guard conjuncts and primed definitions,
/// enforcing the single-assignment discipline: primed symbols appear only as
/// the left-hand side of top-level defining equalities, right-hand sides are
/// prime-free, and no symbol is defined twice.
pub fn decompose(t: &Transducer) -> Result<Decomposition, TransformError> {
    let conjuncts = match t.formula.conjuncts() {
        Some(c) => c,
        None => {
            // A literally false transducer: guard false, no definitions.
            return Ok(Decomposition { guard: vec![Formula::False], subst: Substitution::default() });
        }
    };
    let mut guard = Vec::new();
    let mut subst = Substitution::default();
    for c in conjuncts {
        match c {
            Formula::Eq(Term::Var { name, primed: true }, rhs) => {
                let rhs_uses = SymbolUse::scan_term(rhs);
                if rhs_uses.has_primed() {
                    return Err(TransformError::PrimedRhs { name: name.clone() });
                }
                if subst.vars.insert(name.clone(), rhs.clone()).is_some() {
                    return Err(TransformError::DuplicateDefinition { name: name.clone() });
                }
            }
            Formula::RelEq { name, primed: true, rhs } => {
                let rhs_uses = SymbolUse::scan_expr(rhs);
                if rhs_uses.has_primed() {
                    return Err(TransformError::PrimedRhs { name: name.clone() });
                }
                if subst.rels.insert(name.clone(), rhs.clone()).is_some() {
                    return Err(TransformError::DuplicateDefinition { name: name.clone() });
                }
            }
            other => {
                let uses = SymbolUse::scan_formula(other);
                if let Some(name) =
                    uses.primed_vars.iter().chain(uses.primed_rels.iter()).next()
                {
                    return Err(TransformError::IllegalPrimedOccurrence { name: name.clone() });
                }
                guard.push(other.clone());
            }
        }
    }
    Ok(Decomposition { guard, subst })
}

/// Conjoin an identity frame `x' = x` for every session variable and relation
/// the transducer does not explicitly update, so that every symbol has
/// exactly one primed definition. Idempotent.
pub fn frame_close(t: &Transducer, schema: &Schema) -> Result<Transducer, TransformError> {
    let decomp = decompose(t)?;
    let mut formula = t.formula.clone();
    let mut frames = Vec::new();
    for (name, _) in &schema.session_vars {
        if !decomp.subst.vars.contains_key(name) {
            frames.push(Formula::Eq(Term::var_primed(name), Term::var(name)));
        }
    }
    for rel in &schema.relations {
        if !decomp.subst.rels.contains_key(&rel.name) {
            frames.push(Formula::RelEq {
                name: rel.name.clone(),
                primed: true,
                rhs: RelAlgExpr::rel(&rel.name),
            });
        }
    }
    for frame in frames {
        formula = formula.conjoin(frame);
    }
    Ok(Transducer { formula, frame_closed: true, ..t.clone() })
}

/// The symbols a frame-closed transducer updates non-trivially: those whose
/// primed definition differs syntactically from the identity frame.
pub fn writes_set(t: &Transducer) -> Result<std::collections::BTreeSet<String>, TransformError> {
    if !t.frame_closed {
        return Err(TransformError::NotFrameClosed { name: t.name.clone() });
    }
    let decomp = decompose(t)?;
    let mut out = std::collections::BTreeSet::new();
    for (name, rhs) in &decomp.subst.vars {
        if rhs != &Term::var(name) {
            out.insert(name.clone());
        }
    }
    for (name, rhs) in &decomp.subst.rels {
        if rhs != &RelAlgExpr::rel(name) {
            out.insert(name.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SortId;

    fn vc() -> SortId {
        SortId(1)
    }

    /// The guard of the session-listing servlet.
    fn show_guard() -> Formula {
        Formula::And(vec![
            Formula::neq(Term::var("u"), Term::null()),
            Formula::Sat(RelAlgExpr::rel("M").select_value(1, Term::var("u"))),
        ])
    }

    fn mini_schema() -> Schema {
        let mut schema = Schema::new();
        let varchar = schema.add_sort("varchar");
        for name in ["S", "M", "U"] {
            schema.relations.push(crate::model::RelationSchema {
                name: name.into(),
                columns: vec![("a".into(), varchar), ("b".into(), varchar)],
                primary_key: vec![],
                foreign_keys: vec![],
            });
        }
        schema.session_vars.push(("u".into(), varchar));
        schema
    }

    #[test]
    fn priming_marks_vars_and_relations_but_not_params() {
        let f = Formula::And(vec![
            Formula::neq(Term::var("u"), Term::null()),
            Formula::Sat(RelAlgExpr::rel("M").select_value(1, Term::var("u"))),
            Formula::neq(Term::param("u_L"), Term::null()),
        ]);
        let primed = prime(&f).unwrap();
        let uses = SymbolUse::scan_formula(&primed);
        assert!(uses.vars.is_empty());
        assert_eq!(uses.primed_vars.len(), 1);
        assert_eq!(uses.primed_rels.len(), 1);
        assert!(uses.params.contains("u_L"));
    }

    #[test]
    fn priming_true_is_identity_and_double_priming_errors() {
        assert_eq!(prime(&Formula::True).unwrap(), Formula::True);
        let f = Formula::eq(Term::var_primed("u"), Term::param("x"));
        assert!(matches!(prime(&f), Err(TransformError::AlreadyPrimed { .. })));
    }

    #[test]
    fn substitution_replaces_primed_symbols_simultaneously() {
        // sat(sel[2=#u'](M')) with #u' -> $u_L, M' -> M.
        let f = Formula::Sat(RelAlgExpr::rel_primed("M").select_value(1, Term::var_primed("u")));
        let mut subst = Substitution::default();
        subst.vars.insert("u".into(), Term::param("u_L"));
        subst.rels.insert("M".into(), RelAlgExpr::rel("M"));
        let out = substitute(&f, &subst).unwrap();
        assert_eq!(
            out,
            Formula::Sat(RelAlgExpr::rel("M").select_value(1, Term::param("u_L")))
        );
    }

    #[test]
    fn substitution_without_primes_is_identity_and_unmapped_errors() {
        let f = show_guard();
        assert_eq!(substitute(&f, &Substitution::default()).unwrap(), f);
        let g = Formula::Sat(RelAlgExpr::rel_primed("M"));
        assert!(matches!(
            substitute(&g, &Substitution::default()),
            Err(TransformError::UnmappedPrimed { .. })
        ));
    }

    #[test]
    fn substitute_after_prime_with_identity_is_identity() {
        let schema = mini_schema();
        let f = show_guard();
        let round =
            substitute(&prime(&f).unwrap(), &Substitution::identity(&schema)).unwrap();
        assert_eq!(round, f);
    }

    #[test]
    fn frame_close_adds_missing_frames_and_is_idempotent() {
        let schema = mini_schema();
        let t = Transducer {
            name: "Show".into(),
            base_url: "/show".into(),
            params: vec![],
            formula: show_guard(),
            links: None,
            frame_closed: false,
        };
        let closed = frame_close(&t, &schema).unwrap();
        let decomp = decompose(&closed).unwrap();
        assert_eq!(decomp.subst.vars.len(), 1);
        assert_eq!(decomp.subst.rels.len(), 3);
        let twice = frame_close(&closed, &schema).unwrap();
        assert_eq!(closed.formula, twice.formula);
    }

    #[test]
    fn frame_close_keeps_existing_definितions() {
        let schema = mini_schema();
        // S' = S + {($s)}
        let t = Transducer {
            name: "Insert".into(),
            base_url: "/insert".into(),
            params: vec![("s".into(), vc())],
            formula: Formula::RelEq {
                name: "S".into(),
                primed: true,
                rhs: RelAlgExpr::rel("S")
                    .union(RelAlgExpr::Lit { rows: vec![vec![Term::param("s"), Term::param("s")]] }),
            },
            links: None,
            frame_closed: false,
        };
        let closed = frame_close(&t, &schema).unwrap();
        let decomp = decompose(&closed).unwrap();
        assert!(matches!(decomp.subst.rels.get("S"), Some(RelAlgExpr::Union { .. })));
        assert_eq!(decomp.subst.rels.get("M"), Some(&RelAlgExpr::rel("M")));
        assert_eq!(decomp.subst.vars.get("u"), Some(&Term::var("u")));
        assert_eq!(writes_set(&closed).unwrap(), ["S".to_string()].into_iter().collect());
    }

    #[test]
    fn duplicate_definition_is_rejected() {
        let t = Transducer {
            name: "Bad".into(),
            base_url: "/bad".into(),
            params: vec![],
            formula: Formula::And(vec![
                Formula::eq(Term::var_primed("u"), Term::null()),
                Formula::eq(Term::var_primed("u"), Term::var("u")),
            ]),
            links: None,
            frame_closed: false,
        };
        assert!(matches!(decompose(&t), Err(TransformError::DuplicateDefinition { .. })));
    }

    #[test]
    fn writes_set_of_pure_guard_is_empty() {
        let schema = mini_schema();
        let t = Transducer {
            name: "Show".into(),
            base_url: "/show".into(),
            params: vec![],
            formula: show_guard(),
            links: None,
            frame_closed: false,
        };
        let closed = frame_close(&t, &schema).unwrap();
        assert!(writes_set(&closed).unwrap().is_empty());
    }

    #[test]
    fn writes_set_of_assigning_transducer_names_the_symbol() {
        let schema = mini_schema();
        let t = Transducer {
            name: "Login".into(),
            base_url: "/login".into(),
            params: vec![("u_L".into(), vc())],
            formula: Formula::And(vec![
                Formula::eq(Term::var_primed("u"), Term::param("u_L")),
                Formula::eq(Term::var("u"), Term::null()),
            ]),
            links: None,
            frame_closed: false,
        };
        let closed = frame_close(&t, &schema).unwrap();
        assert_eq!(writes_set(&closed).unwrap(), ["u".to_string()].into_iter().collect());
    }
}
