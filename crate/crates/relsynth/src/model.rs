//! Concrete data model: sorts, values, relation schemas, database instances,
//! states, and the finite scopes that bound every search.
//!
//! Everything here is an immutable value type. Operations are pure functions,
//! so the whole module is safe to use from concurrent callers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Index of a sort within its [`Schema`]. Sort 0 is always the built-in
/// bounded-integer sort `int`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SortId(pub usize);

/// The built-in bounded-integer sort.
pub const INT_SORT: SortId = SortId(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SortKind {
    /// An uninterpreted value domain (e.g. `varchar`), realized as a finite
    /// carrier of anonymous constants plus any named constants in play.
    Uninterpreted,
    /// Integers in `[0, int_max]`.
    BoundedInt,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sort {
    pub name: String,
    pub kind: SortKind,
}

/// A concrete value. `Null` is a single distinguished bottom value shared by
/// all sorts; it compares equal only to itself.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Null,
    Int(i64),
    /// The `idx`-th anonymous constant of a sort's scoped carrier.
    Anon(SortId, u32),
    /// A named constant such as `'s1'`, housed in a specific sort.
    Named(SortId, Arc<str>),
}

impl Value {
    pub fn named(sort: SortId, label: &str) -> Value {
        Value::Named(sort, Arc::from(label))
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }
}

pub type Tuple = Vec<Value>;
pub type Table = BTreeSet<Tuple>;

/// A foreign-key dependency: `column` of the owning relation must appear in
/// `target_column` of `target_relation`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForeignKey {
    pub column: usize,
    pub target_relation: String,
    pub target_column: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSchema {
    pub name: String,
    /// Ordered columns: `(column name, sort)`.
    pub columns: Vec<(String, SortId)>,
    /// Column indices forming the primary key. Empty means no key constraint.
    pub primary_key: Vec<usize>,
    pub foreign_keys: Vec<ForeignKey>,
}

impl RelationSchema {
    pub fn arity(&self) -> usize {
        self.columns.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDecl {
    pub name: String,
    pub arg_sorts: Vec<SortId>,
    pub result_sort: SortId,
    /// When set, every model must interpret this function injectively:
    /// `f(a) = f(b)` iff `a = b` over the table.
    pub injective: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateDecl {
    pub name: String,
    pub arg_sorts: Vec<SortId>,
}

/// Declarations for one specification: sorts, relations, session variables,
/// uninterpreted functions and predicates, and the parameter registry
/// (every `$x` declared by any transducer, so that standalone constraints
/// mentioning parameters can be solved).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schema {
    pub sorts: Vec<Sort>,
    pub relations: Vec<RelationSchema>,
    pub session_vars: Vec<(String, SortId)>,
    pub functions: Vec<FunctionDecl>,
    pub predicates: Vec<PredicateDecl>,
    pub params: BTreeMap<String, SortId>,
}

impl Schema {
    /// A schema containing only the built-in `int` sort.
    pub fn new() -> Schema {
        Schema {
            sorts: vec![Sort { name: "int".into(), kind: SortKind::BoundedInt }],
            relations: Vec::new(),
            session_vars: Vec::new(),
            functions: Vec::new(),
            predicates: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn sort_id(&self, name: &str) -> Option<SortId> {
        self.sorts.iter().position(|s| s.name == name).map(SortId)
    }

    pub fn sort(&self, id: SortId) -> &Sort {
        &self.sorts[id.0]
    }

    pub fn sort_name(&self, id: SortId) -> &str {
        &self.sorts[id.0].name
    }

    /// Declare a new uninterpreted sort, returning its id.
    pub fn add_sort(&mut self, name: &str) -> SortId {
        self.sorts.push(Sort { name: name.into(), kind: SortKind::Uninterpreted });
        SortId(self.sorts.len() - 1)
    }

    pub fn relation(&self, name: &str) -> Option<&RelationSchema> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn session_var_sort(&self, name: &str) -> Option<SortId> {
        self.session_vars.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }

    pub fn function(&self, name: &str) -> Option<&FunctionDecl> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn predicate(&self, name: &str) -> Option<&PredicateDecl> {
        self.predicates.iter().find(|p| p.name == name)
    }

    /// Structural well-formedness: unique names per namespace, key columns in
    /// range, foreign keys resolving to declared relations with matching
    /// sorts.
    pub fn validate(&self) -> Result<(), StructuralError> {
        let mut seen = BTreeSet::new();
        for s in &self.sorts {
            if !seen.insert(s.name.clone()) {
                return Err(StructuralError::DuplicateName { kind: "sort", name: s.name.clone() });
            }
        }
        let mut seen = BTreeSet::new();
        for r in &self.relations {
            if !seen.insert(r.name.clone()) {
                return Err(StructuralError::DuplicateName { kind: "relation", name: r.name.clone() });
            }
            for &k in &r.primary_key {
                if k >= r.arity() {
                    return Err(StructuralError::KeyColumnOutOfRange {
                        relation: r.name.clone(),
                        column: k,
                    });
                }
            }
            for fk in &r.foreign_keys {
                if fk.column >= r.arity() {
                    return Err(StructuralError::KeyColumnOutOfRange {
                        relation: r.name.clone(),
                        column: fk.column,
                    });
                }
                let target = self.relation(&fk.target_relation).ok_or_else(|| {
                    StructuralError::UnknownRelation { name: fk.target_relation.clone() }
                })?;
                if fk.target_column >= target.arity() {
                    return Err(StructuralError::KeyColumnOutOfRange {
                        relation: target.name.clone(),
                        column: fk.target_column,
                    });
                }
                if target.columns[fk.target_column].1 != r.columns[fk.column].1 {
                    return Err(StructuralError::ForeignKeySortMismatch {
                        relation: r.name.clone(),
                        column: fk.column,
                        target: fk.target_relation.clone(),
                    });
                }
            }
        }
        let mut seen = BTreeSet::new();
        for (v, _) in &self.session_vars {
            if !seen.insert(v.clone()) {
                return Err(StructuralError::DuplicateName { kind: "session variable", name: v.clone() });
            }
        }
        let mut seen = BTreeSet::new();
        for f in &self.functions {
            if !seen.insert(f.name.clone()) {
                return Err(StructuralError::DuplicateName { kind: "function", name: f.name.clone() });
            }
        }
        let mut seen = BTreeSet::new();
        for p in &self.predicates {
            if !seen.insert(p.name.clone()) {
                return Err(StructuralError::DuplicateName { kind: "predicate", name: p.name.clone() });
            }
        }
        Ok(())
    }
}

/// A concrete finite database instance: one set of tuples per relation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct DatabaseInstance {
    pub tables: BTreeMap<String, Table>,
}

impl DatabaseInstance {
    /// The empty instance over `schema`: every declared relation present,
    /// every table empty.
    pub fn empty(schema: &Schema) -> DatabaseInstance {
        DatabaseInstance {
            tables: schema.relations.iter().map(|r| (r.name.clone(), Table::new())).collect(),
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.get(name)
    }
}

/// A state: a database instance plus a valuation of every session variable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct State {
    pub db: DatabaseInstance,
    pub vars: BTreeMap<String, Value>,
}

impl State {
    /// All tables empty, all session variables `null`.
    pub fn initial(schema: &Schema) -> State {
        State {
            db: DatabaseInstance::empty(schema),
            vars: schema.session_vars.iter().map(|(n, _)| (n.clone(), Value::Null)).collect(),
        }
    }
}

/// Structural problems that are not data-level constraint violations.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum StructuralError {
    #[error("relation `{name}` is not declared in the schema")]
    UnknownRelation { name: String },
    #[error("duplicate {kind} name `{name}`")]
    DuplicateName { kind: &'static str, name: String },
    #[error("key column {column} out of range for relation `{relation}`")]
    KeyColumnOutOfRange { relation: String, column: usize },
    #[error("foreign key on `{relation}` column {column} has mismatched sort with `{target}`")]
    ForeignKeySortMismatch { relation: String, column: usize, target: String },
}

/// One broken data-level invariant, naming the relation and offending tuple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Arity { relation: String, tuple: Tuple, expected: usize },
    ColumnSort { relation: String, tuple: Tuple, column: usize },
    PrimaryKey { relation: String, first: Tuple, second: Tuple },
    ForeignKey { relation: String, tuple: Tuple, column: usize, target: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Arity { relation, tuple, expected } => {
                write!(f, "arity violation in `{relation}`: tuple {tuple:?} (expected {expected} columns)")
            }
            Violation::ColumnSort { relation, tuple, column } => {
                write!(f, "sort violation in `{relation}` column {column}: tuple {tuple:?}")
            }
            Violation::PrimaryKey { relation, first, second } => {
                write!(f, "primary key violation in `{relation}`: {first:?} / {second:?}")
            }
            Violation::ForeignKey { relation, tuple, column, target } => {
                write!(f, "foreign key violation in `{relation}` column {column} -> `{target}`: {tuple:?}")
            }
        }
    }
}

fn value_fits_sort(schema: &Schema, v: &Value, sort: SortId) -> bool {
    match v {
        // Null is admissible for any sort.
        Value::Null => true,
        Value::Int(_) => schema.sort(sort).kind == SortKind::BoundedInt,
        Value::Anon(s, _) | Value::Named(s, _) => *s == sort,
    }
}

/// Check a database instance against all arity, sort, primary-key and
/// foreign-key invariants of `schema`. Returns the (possibly empty) list of
/// violations; an undeclared relation name is a structural error instead.
pub fn check_instance(
    schema: &Schema,
    db: &DatabaseInstance,
) -> Result<Vec<Violation>, StructuralError> {
    let mut violations = Vec::new();
    for (name, table) in &db.tables {
        let rel = schema
            .relation(name)
            .ok_or_else(|| StructuralError::UnknownRelation { name: name.clone() })?;
        for tuple in table {
            if tuple.len() != rel.arity() {
                violations.push(Violation::Arity {
                    relation: name.clone(),
                    tuple: tuple.clone(),
                    expected: rel.arity(),
                });
                continue;
            }
            for (i, v) in tuple.iter().enumerate() {
                if !value_fits_sort(schema, v, rel.columns[i].1) {
                    violations.push(Violation::ColumnSort {
                        relation: name.clone(),
                        tuple: tuple.clone(),
                        column: i,
                    });
                }
            }
        }
        if !rel.primary_key.is_empty() {
            let rows: Vec<&Tuple> = table.iter().filter(|t| t.len() == rel.arity()).collect();
            for (i, a) in rows.iter().enumerate() {
                for b in rows.iter().skip(i + 1) {
                    if rel.primary_key.iter().all(|&k| a[k] == b[k]) {
                        violations.push(Violation::PrimaryKey {
                            relation: name.clone(),
                            first: (*a).clone(),
                            second: (*b).clone(),
                        });
                    }
                }
            }
        }
        for fk in &rel.foreign_keys {
            let target = db.tables.get(&fk.target_relation);
            for tuple in table {
                if tuple.len() != rel.arity() {
                    continue;
                }
                let present = target.map_or(false, |t| {
                    t.iter().any(|row| row.get(fk.target_column) == Some(&tuple[fk.column]))
                });
                if !present {
                    violations.push(Violation::ForeignKey {
                        relation: name.clone(),
                        tuple: tuple.clone(),
                        column: fk.column,
                        target: fk.target_relation.clone(),
                    });
                }
            }
        }
    }
    Ok(violations)
}

/// Finite bounds for bounded search: carrier sizes, row bounds, the integer
/// range, sequence length, enumeration and search budgets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scope {
    pub default_sort_size: u32,
    pub sort_sizes: BTreeMap<String, u32>,
    pub default_max_rows: u32,
    pub max_rows: BTreeMap<String, u32>,
    /// `None` derives `max_rows + 1` over the largest relation bound, so that
    /// a cardinality term `|R| + 1` stays representable in scope.
    pub int_max: Option<i64>,
    pub max_seq_len: u32,
    pub model_limit: u64,
    pub budget: u64,
    /// Extra named constants per sort name, included in the carrier on top of
    /// the anonymous ones. Solvers add the constants mentioned by the formula
    /// under consideration automatically.
    pub named_values: BTreeMap<String, BTreeSet<Arc<str>>>,
}

impl Default for Scope {
    fn default() -> Scope {
        Scope {
            default_sort_size: 3,
            sort_sizes: BTreeMap::new(),
            default_max_rows: 3,
            max_rows: BTreeMap::new(),
            int_max: None,
            max_seq_len: 6,
            model_limit: 1000,
            budget: 50_000_000,
            named_values: BTreeMap::new(),
        }
    }
}

impl Scope {
    pub fn sort_size(&self, sort_name: &str) -> u32 {
        self.sort_sizes.get(sort_name).copied().unwrap_or(self.default_sort_size)
    }

    pub fn rows_bound(&self, relation: &str) -> u32 {
        self.max_rows.get(relation).copied().unwrap_or(self.default_max_rows)
    }

    pub fn int_max(&self, schema: &Schema) -> i64 {
        self.int_max.unwrap_or_else(|| {
            let largest = schema
                .relations
                .iter()
                .map(|r| self.rows_bound(&r.name))
                .max()
                .unwrap_or(self.default_max_rows);
            i64::from(largest) + 1
        })
    }

    pub fn validate(&self) -> Result<(), StructuralError> {
        if self.max_seq_len < 1 {
            return Err(StructuralError::DuplicateName {
                kind: "scope bound (max_seq_len must be >= 1)",
                name: self.max_seq_len.to_string(),
            });
        }
        Ok(())
    }

    /// The scoped carrier of a sort, in canonical order. For uninterpreted
    /// sorts: anonymous constants first, then the named constants registered
    /// in the scope (plus `extra_named` supplied by the caller, typically the
    /// constants mentioned in a formula). Integers run `0..=int_max`. `null`
    /// is never part of a carrier.
    pub fn carrier(
        &self,
        schema: &Schema,
        sort: SortId,
        extra_named: &BTreeSet<Arc<str>>,
    ) -> Vec<Value> {
        let s = schema.sort(sort);
        match s.kind {
            SortKind::BoundedInt => (0..=self.int_max(schema)).map(Value::Int).collect(),
            SortKind::Uninterpreted => {
                let mut out: Vec<Value> =
                    (0..self.sort_size(&s.name)).map(|i| Value::Anon(sort, i)).collect();
                let mut named: BTreeSet<Arc<str>> =
                    self.named_values.get(&s.name).cloned().unwrap_or_default();
                named.extend(extra_named.iter().cloned());
                out.extend(named.into_iter().map(|l| Value::Named(sort, l)));
                out
            }
        }
    }
}

/// All candidate tuples for one relation within scope, in canonical order.
pub fn tuple_space(
    schema: &Schema,
    scope: &Scope,
    rel: &RelationSchema,
    extra_named: &BTreeMap<String, BTreeSet<Arc<str>>>,
) -> Vec<Tuple> {
    let empty = BTreeSet::new();
    let column_carriers: Vec<Vec<Value>> = rel
        .columns
        .iter()
        .map(|(_, sort)| {
            let extra = extra_named.get(schema.sort_name(*sort)).unwrap_or(&empty);
            scope.carrier(schema, *sort, extra)
        })
        .collect();
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(rel.arity());
    fn rec(carriers: &[Vec<Value>], current: &mut Tuple, out: &mut Vec<Tuple>) {
        if carriers.is_empty() {
            out.push(current.clone());
            return;
        }
        for v in &carriers[0] {
            current.push(v.clone());
            rec(&carriers[1..], current, out);
            current.pop();
        }
    }
    rec(&column_carriers, &mut current, &mut out);
    out.sort();
    out
}

/// All candidate tables for a relation: subsets of the tuple space of size at
/// most the row bound that satisfy the relation's own primary key. Ordered by
/// size, then lexicographically, so the empty table comes first.
pub fn table_candidates(
    schema: &Schema,
    scope: &Scope,
    rel: &RelationSchema,
    extra_named: &BTreeMap<String, BTreeSet<Arc<str>>>,
) -> Vec<Table> {
    let space = tuple_space(schema, scope, rel, extra_named);
    let bound = scope.rows_bound(&rel.name) as usize;
    let mut out: Vec<Table> = Vec::new();
    let mut chosen: Vec<usize> = Vec::new();
    fn rec(
        space: &[Tuple],
        rel: &RelationSchema,
        start: usize,
        remaining: usize,
        chosen: &mut Vec<usize>,
        out: &mut Vec<Table>,
    ) {
        out.push(chosen.iter().map(|&i| space[i].clone()).collect());
        if remaining == 0 {
            return;
        }
        for i in start..space.len() {
            let candidate = &space[i];
            let key_clash = !rel.primary_key.is_empty()
                && chosen.iter().any(|&j| {
                    rel.primary_key.iter().all(|&k| space[j][k] == candidate[k])
                });
            if key_clash {
                continue;
            }
            chosen.push(i);
            rec(space, rel, i + 1, remaining - 1, chosen, out);
            chosen.pop();
        }
    }
    rec(&space, rel, 0, bound, &mut chosen, &mut out);
    // The recursion emits supersets immediately after each prefix; re-sort to
    // the documented (size, lex) order and drop duplicates.
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out.dedup();
    out
}

/// Enumerate every state within scope that passes [`check_instance`], in a
/// deterministic order with no duplicates.
pub fn enumerate_states(schema: &Schema, scope: &Scope) -> impl Iterator<Item = State> {
    let extra = scope.named_values.clone();
    let rel_names: Vec<String> = schema.relations.iter().map(|r| r.name.clone()).collect();
    let table_options: Vec<Vec<Table>> = schema
        .relations
        .iter()
        .map(|r| table_candidates(schema, scope, r, &extra))
        .collect();
    let var_names: Vec<String> = schema.session_vars.iter().map(|(n, _)| n.clone()).collect();
    let var_options: Vec<Vec<Value>> = schema
        .session_vars
        .iter()
        .map(|(_, sort)| {
            let empty = BTreeSet::new();
            let named = extra.get(schema.sort_name(*sort)).unwrap_or(&empty);
            let mut vals = vec![Value::Null];
            vals.extend(scope.carrier(schema, *sort, named));
            vals
        })
        .collect();
    let schema = schema.clone();
    Odometer::new(table_options, var_options).filter_map(move |(tables, vars)| {
        let db = DatabaseInstance {
            tables: rel_names.iter().cloned().zip(tables).collect(),
        };
        let ok = check_instance(&schema, &db).map(|v| v.is_empty()).unwrap_or(false);
        if ok {
            Some(State { db, vars: var_names.iter().cloned().zip(vars).collect() })
        } else {
            None
        }
    })
}

/// Cartesian-product iterator over table choices and variable valuations.
struct Odometer {
    tables: Vec<Vec<Table>>,
    vars: Vec<Vec<Value>>,
    indices: Vec<usize>,
    done: bool,
}

impl Odometer {
    fn new(tables: Vec<Vec<Table>>, vars: Vec<Vec<Value>>) -> Odometer {
        let done = tables.iter().any(|t| t.is_empty()) || vars.iter().any(|v| v.is_empty());
        let indices = vec![0; tables.len() + vars.len()];
        Odometer { tables, vars, indices, done }
    }
}

impl Iterator for Odometer {
    type Item = (Vec<Table>, Vec<Value>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let nt = self.tables.len();
        let tables: Vec<Table> =
            (0..nt).map(|i| self.tables[i][self.indices[i]].clone()).collect();
        let vars: Vec<Value> =
            (0..self.vars.len()).map(|i| self.vars[i][self.indices[nt + i]].clone()).collect();
        // Advance, rightmost slot fastest.
        let mut pos = self.indices.len();
        loop {
            if pos == 0 {
                self.done = true;
                break;
            }
            pos -= 1;
            let limit =
                if pos < nt { self.tables[pos].len() } else { self.vars[pos - nt].len() };
            self.indices[pos] += 1;
            if self.indices[pos] < limit {
                break;
            }
            self.indices[pos] = 0;
        }
        Some((tables, vars))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini_schema() -> Schema {
        let mut schema = Schema::new();
        let varchar = schema.add_sort("varchar");
        schema.relations.push(RelationSchema {
            name: "R".into(),
            columns: vec![("a".into(), varchar)],
            primary_key: vec![],
            foreign_keys: vec![],
        });
        schema.session_vars.push(("v".into(), varchar));
        schema
    }

    /// Schema with the shape of the bundled corpus: three relations, foreign
    /// keys from the membership table into both others.
    pub(crate) fn scarf_schema() -> Schema {
        let mut schema = Schema::new();
        let varchar = schema.add_sort("varchar");
        schema.relations.push(RelationSchema {
            name: "Users".into(),
            columns: vec![("uname".into(), varchar), ("enc_wd".into(), varchar)],
            primary_key: vec![0],
            foreign_keys: vec![],
        });
        schema.relations.push(RelationSchema {
            name: "Sessions".into(),
            columns: vec![("sid".into(), INT_SORT), ("sname".into(), varchar)],
            primary_key: vec![0],
            foreign_keys: vec![],
        });
        schema.relations.push(RelationSchema {
            name: "Member".into(),
            columns: vec![("sid".into(), INT_SORT), ("uname".into(), varchar)],
            primary_key: vec![0, 1],
            foreign_keys: vec![
                ForeignKey { column: 0, target_relation: "Sessions".into(), target_column: 0 },
                ForeignKey { column: 1, target_relation: "Users".into(), target_column: 0 },
            ],
        });
        schema.session_vars.push(("u".into(), varchar));
        schema
    }

    #[test]
    fn foreign_key_into_empty_table_is_reported() {
        let schema = scarf_schema();
        let varchar = schema.sort_id("varchar").unwrap();
        let mut db = DatabaseInstance::empty(&schema);
        db.tables.get_mut("Member").unwrap().insert(vec![
            Value::Int(1),
            Value::named(varchar, "a"),
        ]);
        let violations = check_instance(&schema, &db).unwrap();
        // Both foreign keys dangle: sid into Sessions and uname into Users.
        assert_eq!(violations.len(), 2);
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::ForeignKey { target, .. } if target == "Sessions")));
    }

    #[test]
    fn empty_instance_satisfies_all_constraints() {
        let schema = scarf_schema();
        let db = DatabaseInstance::empty(&schema);
        assert!(check_instance(&schema, &db).unwrap().is_empty());
    }

    #[test]
    fn duplicate_primary_key_is_reported() {
        let schema = scarf_schema();
        let varchar = schema.sort_id("varchar").unwrap();
        let mut db = DatabaseInstance::empty(&schema);
        let t = db.tables.get_mut("Sessions").unwrap();
        t.insert(vec![Value::Int(1), Value::named(varchar, "x")]);
        t.insert(vec![Value::Int(1), Value::named(varchar, "y")]);
        let violations = check_instance(&schema, &db).unwrap();
        assert_eq!(violations.len(), 1);
        assert!(matches!(&violations[0], Violation::PrimaryKey { relation, .. } if relation == "Sessions"));
    }

    #[test]
    fn undeclared_relation_is_structural_error() {
        let schema = scarf_schema();
        let mut db = DatabaseInstance::empty(&schema);
        db.tables.insert("Q".into(), Table::new());
        assert!(matches!(
            check_instance(&schema, &db),
            Err(StructuralError::UnknownRelation { .. })
        ));
    }

    #[test]
    fn micro_scope_state_count_matches_hand_enumeration() {
        let schema = mini_schema();
        let scope = Scope {
            default_sort_size: 1,
            default_max_rows: 1,
            ..Scope::default()
        };
        // 2 table choices (empty, one anonymous row) x 2 var values (null, anon0).
        let states: Vec<State> = enumerate_states(&schema, &scope).collect();
        assert_eq!(states.len(), 4);
        // No duplicates.
        let set: BTreeSet<&State> = states.iter().collect();
        assert_eq!(set.len(), 4);
    }

    #[test]
    fn zero_rows_and_no_vars_yields_exactly_the_empty_instance() {
        let mut schema = mini_schema();
        schema.session_vars.clear();
        let scope = Scope { default_max_rows: 0, ..Scope::default() };
        let states: Vec<State> = enumerate_states(&schema, &scope).collect();
        assert_eq!(states.len(), 1);
        assert!(states[0].db.tables["R"].is_empty());
    }

    #[test]
    fn every_enumerated_state_passes_check_instance() {
        let schema = scarf_schema();
        let scope = Scope {
            default_sort_size: 1,
            default_max_rows: 1,
            ..Scope::default()
        };
        let mut count = 0;
        for state in enumerate_states(&schema, &scope) {
            assert!(check_instance(&schema, &state.db).unwrap().is_empty());
            count += 1;
        }
        assert!(count > 0);
    }

    #[test]
    fn enumeration_is_exhaustive_on_micro_scope() {
        let schema = mini_schema();
        let scope = Scope {
            default_sort_size: 1,
            default_max_rows: 1,
            ..Scope::default()
        };
        let varchar = schema.sort_id("varchar").unwrap();
        // Hand-built state within scope must appear in the stream.
        let mut db = DatabaseInstance::empty(&schema);
        db.tables.get_mut("R").unwrap().insert(vec![Value::Anon(varchar, 0)]);
        let target = State {
            db,
            vars: [("v".to_string(), Value::Null)].into_iter().collect(),
        };
        assert!(enumerate_states(&schema, &scope).any(|s| s == target));
    }

    #[test]
    fn null_differs_from_every_non_null_value() {
        let vals = [
            Value::Int(0),
            Value::Anon(SortId(1), 0),
            Value::named(SortId(1), "a"),
        ];
        for v in &vals {
            assert_ne!(&Value::Null, v);
        }
        assert_eq!(Value::Null, Value::Null);
    }
}
