//! Concrete evaluation of terms, relational algebra expressions and formulas
//! over states.
//!
//! Evaluation takes a pair of states `(current, next)`; primed symbols read
//! from the next state and are an error when it is absent. Uninterpreted
//! functions and predicates are interpreted by explicit finite tables in an
//! [`Environment`]. A function applied to a `null` argument is `null`; a
//! predicate applied to a `null` argument is false.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::expr::{Formula, RelAlgExpr, Term};
use crate::model::{State, Table, Tuple, Value};

pub type FuncTable = BTreeMap<Vec<Value>, Value>;
pub type PredTable = BTreeMap<Vec<Value>, bool>;

/// Finite interpretations for uninterpreted functions and predicates.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct Environment {
    pub functions: BTreeMap<String, FuncTable>,
    pub predicates: BTreeMap<String, PredTable>,
}

impl Environment {
    pub fn empty() -> Environment {
        Environment::default()
    }
}

/// Parameter bindings for one evaluation.
pub type Bindings = BTreeMap<String, Value>;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("relation `{name}` is not present in the state")]
    UnknownRelation { name: String },
    #[error("session variable `{name}` is not present in the state")]
    UnknownVar { name: String },
    #[error("parameter `{name}` is unbound")]
    UnboundParam { name: String },
    #[error("function `{name}` has no interpretation")]
    UnknownFunction { name: String },
    #[error("predicate `{name}` has no interpretation")]
    UnknownPredicate { name: String },
    #[error("function `{name}` table has no entry for {args:?}")]
    MissingFuncEntry { name: String, args: Vec<Value> },
    #[error("predicate `{name}` table has no entry for {args:?}")]
    MissingPredEntry { name: String, args: Vec<Value> },
    #[error("primed symbol `{name}` used without a next state")]
    MissingNextState { name: String },
    #[error("column {col} out of range for a tuple of arity {arity}")]
    ColumnOutOfRange { col: usize, arity: usize },
    #[error("set operands have mismatched arity: {left} vs {right}")]
    ArityMismatch { left: usize, right: usize },
    #[error("membership tuple arity {tuple} does not match relation arity {relation}")]
    MemberArityMismatch { tuple: usize, relation: usize },
}

/// The pair of states an evaluation runs over.
#[derive(Debug, Clone, Copy)]
pub struct StatePair<'a> {
    pub current: &'a State,
    pub next: Option<&'a State>,
}

impl<'a> StatePair<'a> {
    pub fn single(current: &'a State) -> StatePair<'a> {
        StatePair { current, next: None }
    }

    pub fn pair(current: &'a State, next: &'a State) -> StatePair<'a> {
        StatePair { current, next: Some(next) }
    }

    fn state_for(&self, primed: bool, name: &str) -> Result<&'a State, EvalError> {
        if primed {
            self.next.ok_or_else(|| EvalError::MissingNextState { name: name.to_string() })
        } else {
            Ok(self.current)
        }
    }
}

pub fn eval_term(
    t: &Term,
    pair: StatePair<'_>,
    env: &Environment,
    bindings: &Bindings,
) -> Result<Value, EvalError> {
    match t {
        Term::Value(v) => Ok(v.clone()),
        Term::Var { name, primed } => {
            let state = pair.state_for(*primed, name)?;
            state
                .vars
                .get(name)
                .cloned()
                .ok_or_else(|| EvalError::UnknownVar { name: name.clone() })
        }
        Term::Param { name } => bindings
            .get(name)
            .cloned()
            .ok_or_else(|| EvalError::UnboundParam { name: name.clone() }),
        Term::App { func, args } => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                vals.push(eval_term(a, pair, env, bindings)?);
            }
            // Strict null propagation: any null argument makes the result null.
            if vals.iter().any(Value::is_null) {
                return Ok(Value::Null);
            }
            let table = env
                .functions
                .get(func)
                .ok_or_else(|| EvalError::UnknownFunction { name: func.clone() })?;
            table
                .get(&vals)
                .cloned()
                .ok_or_else(|| EvalError::MissingFuncEntry { name: func.clone(), args: vals })
        }
        Term::CardinalityPlus { rel, offset } => {
            let set = eval_relalg(rel, pair, env, bindings)?;
            Ok(Value::Int(set.len() as i64 + i64::from(*offset)))
        }
    }
}

pub fn eval_relalg(
    e: &RelAlgExpr,
    pair: StatePair<'_>,
    env: &Environment,
    bindings: &Bindings,
) -> Result<Table, EvalError> {
    match e {
        RelAlgExpr::Rel { name, primed } => {
            let state = pair.state_for(*primed, name)?;
            state
                .db
                .table(name)
                .cloned()
                .ok_or_else(|| EvalError::UnknownRelation { name: name.clone() })
        }
        RelAlgExpr::Lit { rows } => {
            let mut out = Table::new();
            for row in rows {
                let mut tuple = Tuple::with_capacity(row.len());
                for t in row {
                    tuple.push(eval_term(t, pair, env, bindings)?);
                }
                out.insert(tuple);
            }
            Ok(out)
        }
        RelAlgExpr::SelectValue { child, col, term } => {
            let rows = eval_relalg(child, pair, env, bindings)?;
            let value = eval_term(term, pair, env, bindings)?;
            let mut out = Table::new();
            for row in rows {
                if *col >= row.len() {
                    return Err(EvalError::ColumnOutOfRange { col: *col, arity: row.len() });
                }
                if row[*col] == value {
                    out.insert(row);
                }
            }
            Ok(out)
        }
        RelAlgExpr::SelectCols { child, left, right } => {
            let rows = eval_relalg(child, pair, env, bindings)?;
            let mut out = Table::new();
            for row in rows {
                let max = (*left).max(*right);
                if max >= row.len() {
                    return Err(EvalError::ColumnOutOfRange { col: max, arity: row.len() });
                }
                if row[*left] == row[*right] {
                    out.insert(row);
                }
            }
            Ok(out)
        }
        RelAlgExpr::Project { child, cols } => {
            let rows = eval_relalg(child, pair, env, bindings)?;
            let mut out = Table::new();
            for row in rows {
                let mut projected = Tuple::with_capacity(cols.len());
                for &c in cols {
                    if c >= row.len() {
                        return Err(EvalError::ColumnOutOfRange { col: c, arity: row.len() });
                    }
                    projected.push(row[c].clone());
                }
                out.insert(projected);
            }
            Ok(out)
        }
        RelAlgExpr::Product { left, right } => {
            let l = eval_relalg(left, pair, env, bindings)?;
            let r = eval_relalg(right, pair, env, bindings)?;
            let mut out = Table::new();
            for a in &l {
                for b in &r {
                    let mut row = a.clone();
                    row.extend(b.iter().cloned());
                    out.insert(row);
                }
            }
            Ok(out)
        }
        RelAlgExpr::Union { left, right } => {
            let mut l = eval_relalg(left, pair, env, bindings)?;
            let r = eval_relalg(right, pair, env, bindings)?;
            check_set_arity(&l, &r)?;
            l.extend(r);
            Ok(l)
        }
        RelAlgExpr::Difference { left, right } => {
            let l = eval_relalg(left, pair, env, bindings)?;
            let r = eval_relalg(right, pair, env, bindings)?;
            check_set_arity(&l, &r)?;
            Ok(l.difference(&r).cloned().collect())
        }
    }
}

fn check_set_arity(l: &Table, r: &Table) -> Result<(), EvalError> {
    if let (Some(a), Some(b)) = (l.iter().next(), r.iter().next()) {
        if a.len() != b.len() {
            return Err(EvalError::ArityMismatch { left: a.len(), right: b.len() });
        }
    }
    Ok(())
}

/// Desugar membership `(t1, ..., tk) in E` into `sat` of nested selections,
/// one per tuple position.
pub fn desugar_member(tuple: &[Term], rel: &RelAlgExpr) -> Formula {
    let mut expr = rel.clone();
    for (i, t) in tuple.iter().enumerate() {
        expr = expr.select_value(i, t.clone());
    }
    Formula::Sat(expr)
}

pub fn eval_formula(
    f: &Formula,
    pair: StatePair<'_>,
    env: &Environment,
    bindings: &Bindings,
) -> Result<bool, EvalError> {
    match f {
        Formula::True => Ok(true),
        Formula::False => Ok(false),
        Formula::Eq(a, b) => {
            Ok(eval_term(a, pair, env, bindings)? == eval_term(b, pair, env, bindings)?)
        }
        Formula::RelEq { name, primed, rhs } => {
            let state = pair.state_for(*primed, name)?;
            let lhs = state
                .db
                .table(name)
                .ok_or_else(|| EvalError::UnknownRelation { name: name.clone() })?;
            let rhs = eval_relalg(rhs, pair, env, bindings)?;
            Ok(*lhs == rhs)
        }
        Formula::Sat(e) => Ok(!eval_relalg(e, pair, env, bindings)?.is_empty()),
        Formula::Member { tuple, rel } => {
            // Evaluated through the desugared selection form; the tests also
            // cross-check against direct tuple containment.
            eval_formula(&desugar_member(tuple, rel), pair, env, bindings)
        }
        Formula::Pred { name, args } => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                vals.push(eval_term(a, pair, env, bindings)?);
            }
            // Strict: a predicate never holds of null arguments.
            if vals.iter().any(Value::is_null) {
                return Ok(false);
            }
            let table = env
                .predicates
                .get(name)
                .ok_or_else(|| EvalError::UnknownPredicate { name: name.clone() })?;
            table
                .get(&vals)
                .copied()
                .ok_or_else(|| EvalError::MissingPredEntry { name: name.clone(), args: vals })
        }
        Formula::Not(f) => Ok(!eval_formula(f, pair, env, bindings)?),
        Formula::And(parts) => {
            for p in parts {
                if !eval_formula(p, pair, env, bindings)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Formula::Or(parts) => {
            for p in parts {
                if eval_formula(p, pair, env, bindings)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DatabaseInstance, RelationSchema, Schema, SortId, INT_SORT};

    fn varchar() -> SortId {
        SortId(1)
    }

    fn schema_with_m() -> Schema {
        let mut schema = Schema::new();
        let vc = schema.add_sort("varchar");
        schema.relations.push(RelationSchema {
            name: "M".into(),
            columns: vec![("sid".into(), INT_SORT), ("uname".into(), vc)],
            primary_key: vec![],
            foreign_keys: vec![],
        });
        schema.session_vars.push(("u".into(), vc));
        schema
    }

    fn state_with_m(rows: Vec<Tuple>, u: Value) -> State {
        let schema = schema_with_m();
        let mut db = DatabaseInstance::empty(&schema);
        db.tables.get_mut("M").unwrap().extend(rows);
        State { db, vars: [("u".to_string(), u)].into_iter().collect() }
    }

    #[test]
    fn selection_filters_on_value() {
        let a = Value::named(varchar(), "a");
        let state = state_with_m(
            vec![
                vec![Value::Int(1), a.clone()],
                vec![Value::Int(2), Value::named(varchar(), "b")],
            ],
            Value::Null,
        );
        let expr = RelAlgExpr::rel("M").select_value(1, Term::Value(a.clone()));
        let out = eval_relalg(&expr, StatePair::single(&state), &Environment::empty(), &Bindings::new())
            .unwrap();
        assert_eq!(out.len(), 1);
        assert!(out.contains(&vec![Value::Int(1), a]));
    }

    /// Product, column-column selection, projection and difference combined:
    /// users in session 's1' but not 's2'.
    #[test]
    fn users_in_s1_but_not_s2() {
        let mut schema = Schema::new();
        let vc = schema.add_sort("varchar");
        for (name, cols) in [("S", ("sid", "sname")), ("M", ("sid", "uname"))] {
            schema.relations.push(RelationSchema {
                name: name.into(),
                columns: vec![(cols.0.into(), INT_SORT), (cols.1.into(), vc)],
                primary_key: vec![],
                foreign_keys: vec![],
            });
        }
        let mut db = DatabaseInstance::empty(&schema);
        let u1 = Value::named(vc, "u1");
        db.tables.get_mut("S").unwrap().insert(vec![Value::Int(1), Value::named(vc, "s1")]);
        db.tables.get_mut("M").unwrap().insert(vec![Value::Int(1), u1.clone()]);
        let state = State { db, vars: BTreeMap::new() };

        let side = |label: &str| {
            RelAlgExpr::rel("S")
                .product(RelAlgExpr::rel("M"))
                .select_cols(0, 2)
                .select_value(1, Term::Value(Value::named(vc, label)))
                .project(vec![3])
        };
        let expr = side("s1").difference(side("s2"));
        let out = eval_relalg(&expr, StatePair::single(&state), &Environment::empty(), &Bindings::new())
            .unwrap();
        assert_eq!(out, Table::from([vec![u1]]));
    }

    #[test]
    fn empty_tables_yield_empty_results() {
        let state = state_with_m(vec![], Value::Null);
        let expr = RelAlgExpr::rel("M")
            .select_value(0, Term::int(1))
            .project(vec![1])
            .product(RelAlgExpr::rel("M"));
        let out = eval_relalg(&expr, StatePair::single(&state), &Environment::empty(), &Bindings::new())
            .unwrap();
        assert!(out.is_empty());
    }

    /// The guard "session user is set and is a member of some session".
    #[test]
    fn guard_formula_on_member_row() {
        let a = Value::named(varchar(), "a");
        let guard = Formula::And(vec![
            Formula::neq(Term::var("u"), Term::null()),
            Formula::Sat(RelAlgExpr::rel("M").select_value(1, Term::var("u"))),
        ]);
        let good = state_with_m(vec![vec![Value::Int(1), a.clone()]], a.clone());
        assert!(eval_formula(&guard, StatePair::single(&good), &Environment::empty(), &Bindings::new())
            .unwrap());
        let bad = state_with_m(vec![vec![Value::Int(1), a]], Value::Null);
        assert!(!eval_formula(&guard, StatePair::single(&bad), &Environment::empty(), &Bindings::new())
            .unwrap());
    }

    #[test]
    fn membership_desugars_to_selection_chain_and_matches_direct_lookup() {
        let a = Value::named(varchar(), "a");
        let fv = Value::named(varchar(), "fv");
        let b = Value::named(varchar(), "b");
        let mut schema = Schema::new();
        let vc = schema.add_sort("varchar");
        schema.relations.push(RelationSchema {
            name: "U".into(),
            columns: vec![("uname".into(), vc), ("enc_wd".into(), vc)],
            primary_key: vec![],
            foreign_keys: vec![],
        });
        let mut db = DatabaseInstance::empty(&schema);
        db.tables.get_mut("U").unwrap().insert(vec![a.clone(), fv.clone()]);
        let state = State { db, vars: BTreeMap::new() };

        let mut env = Environment::empty();
        env.functions.insert("f".into(), FuncTable::from([(vec![b.clone()], fv.clone())]));
        let bindings =
            Bindings::from([("u".to_string(), a.clone()), ("p".to_string(), b.clone())]);

        let member = Formula::Member {
            tuple: vec![Term::param("u"), Term::app("f", vec![Term::param("p")])],
            rel: RelAlgExpr::rel("U"),
        };
        let via_desugar =
            eval_formula(&member, StatePair::single(&state), &env, &bindings).unwrap();
        assert!(via_desugar);

        // Direct containment oracle.
        let tuple = vec![a, fv];
        assert_eq!(via_desugar, state.db.table("U").unwrap().contains(&tuple));
    }

    #[test]
    fn sat_is_monotone_under_union() {
        let a = Value::named(varchar(), "a");
        let state = state_with_m(vec![vec![Value::Int(1), a.clone()]], Value::Null);
        let base = RelAlgExpr::rel("M").select_value(1, Term::Value(a));
        let wider = base.clone().union(RelAlgExpr::rel("M"));
        let env = Environment::empty();
        let b = Bindings::new();
        let narrow = eval_formula(&Formula::Sat(base), StatePair::single(&state), &env, &b).unwrap();
        let wide = eval_formula(&Formula::Sat(wider), StatePair::single(&state), &env, &b).unwrap();
        assert!(!narrow || wide);
        assert!(narrow && wide);
    }

    #[test]
    fn cardinality_reads_table_size_plus_offset() {
        let state = state_with_m(
            vec![
                vec![Value::Int(1), Value::named(varchar(), "a")],
                vec![Value::Int(2), Value::named(varchar(), "b")],
            ],
            Value::Null,
        );
        let t = Term::CardinalityPlus { rel: Box::new(RelAlgExpr::rel("M")), offset: 1 };
        let v = eval_term(&t, StatePair::single(&state), &Environment::empty(), &Bindings::new())
            .unwrap();
        assert_eq!(v, Value::Int(3));
    }

    #[test]
    fn primed_reference_without_next_state_is_an_error() {
        let state = state_with_m(vec![], Value::Null);
        let f = Formula::Sat(RelAlgExpr::rel_primed("M"));
        let err = eval_formula(&f, StatePair::single(&state), &Environment::empty(), &Bindings::new())
            .unwrap_err();
        assert!(matches!(err, EvalError::MissingNextState { .. }));
    }

    #[test]
    fn unbound_parameter_is_an_error() {
        let state = state_with_m(vec![], Value::Null);
        let f = Formula::eq(Term::param("q"), Term::null());
        let err = eval_formula(&f, StatePair::single(&state), &Environment::empty(), &Bindings::new())
            .unwrap_err();
        assert!(matches!(err, EvalError::UnboundParam { .. }));
    }
}
