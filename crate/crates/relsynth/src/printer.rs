//! Deterministic pretty-printer for the `.spec` format. Printed output
//! re-parses to a structurally equal spec; printing a freshly parsed file and
//! parsing it again reaches a fixpoint after one print.

use std::fmt::Write;

use crate::expr::{Formula, RelAlgExpr, Term, Transducer};
use crate::model::{Schema, Scope, SortKind, Value};
use crate::parser::SpecFile;

pub fn print_spec(spec: &SpecFile) -> String {
    let mut out = String::new();
    print_schema(&mut out, &spec.schema);
    for t in &spec.transducers {
        out.push('\n');
        print_transducer(&mut out, t, &spec.schema);
    }
    for (name, f) in &spec.constraints {
        out.push('\n');
        let _ = writeln!(out, "constraint {name} {{\n  {}\n}}", print_formula(f));
    }
    if let Some(scope) = &spec.default_scope {
        out.push('\n');
        print_scope(&mut out, scope);
    }
    out
}

fn print_schema(out: &mut String, schema: &Schema) {
    out.push_str("schema {\n");
    for sort in &schema.sorts {
        if sort.kind == SortKind::Uninterpreted {
            let _ = writeln!(out, "  sort {};", sort.name);
        }
    }
    for rel in &schema.relations {
        let cols: Vec<String> = rel
            .columns
            .iter()
            .map(|(n, s)| format!("{n}: {}", schema.sort_name(*s)))
            .collect();
        let _ = write!(out, "  relation {}({})", rel.name, cols.join(", "));
        if !rel.primary_key.is_empty() {
            let keys: Vec<&str> =
                rel.primary_key.iter().map(|&i| rel.columns[i].0.as_str()).collect();
            let _ = write!(out, " key({})", keys.join(", "));
        }
        if !rel.foreign_keys.is_empty() {
            let refs: Vec<String> = rel
                .foreign_keys
                .iter()
                .map(|fk| {
                    format!(
                        "{} -> {}.{}",
                        rel.columns[fk.column].0,
                        fk.target_relation,
                        schema
                            .relation(&fk.target_relation)
                            .map(|t| t.columns[fk.target_column].0.as_str())
                            .unwrap_or("?")
                    )
                })
                .collect();
            let _ = write!(out, "\n    ref({})", refs.join(", "));
        }
        out.push_str(";\n");
    }
    for (name, sort) in &schema.session_vars {
        let _ = writeln!(out, "  var #{name}: {};", schema.sort_name(*sort));
    }
    for f in &schema.functions {
        let args: Vec<&str> = f.arg_sorts.iter().map(|s| schema.sort_name(*s)).collect();
        let _ = writeln!(
            out,
            "  func {}({}): {}{};",
            f.name,
            args.join(", "),
            schema.sort_name(f.result_sort),
            if f.injective { " injective" } else { "" }
        );
    }
    for p in &schema.predicates {
        let args: Vec<&str> = p.arg_sorts.iter().map(|s| schema.sort_name(*s)).collect();
        let _ = writeln!(out, "  pred {}({});", p.name, args.join(", "));
    }
    out.push_str("}\n");
}

fn print_transducer(out: &mut String, t: &Transducer, schema: &Schema) {
    let _ = write!(out, "transducer {} at \"{}\" (", t.name, t.base_url);
    let params: Vec<String> = t
        .params
        .iter()
        .map(|(n, s)| format!("${n}: {}", schema.sort_name(*s)))
        .collect();
    let _ = write!(out, "{})", params.join(", "));
    if let Some(links) = &t.links {
        let urls: Vec<String> = links.iter().map(|u| format!("\"{u}\"")).collect();
        let _ = write!(out, "\n  links({})", urls.join(", "));
    }
    let _ = writeln!(out, " {{\n  {}\n}}", print_formula(&t.formula));
}

fn print_scope(out: &mut String, scope: &Scope) {
    out.push_str("scope {\n");
    let _ = writeln!(out, "  sort_size {};", scope.default_sort_size);
    for (sort, n) in &scope.sort_sizes {
        let _ = writeln!(out, "  sort_size {sort} {n};");
    }
    let _ = writeln!(out, "  max_rows {};", scope.default_max_rows);
    for (rel, n) in &scope.max_rows {
        let _ = writeln!(out, "  max_rows {rel} {n};");
    }
    if let Some(n) = scope.int_max {
        let _ = writeln!(out, "  int_max {n};");
    }
    let _ = writeln!(out, "  max_seq_len {};", scope.max_seq_len);
    let _ = writeln!(out, "  model_limit {};", scope.model_limit);
    let _ = writeln!(out, "  budget {};", scope.budget);
    out.push_str("}\n");
}

// Formula precedence levels: or < and < not < atom.
const PREC_OR: u8 = 1;
const PREC_AND: u8 = 2;
const PREC_NOT: u8 = 3;

pub fn print_formula(f: &Formula) -> String {
    print_formula_prec(f, 0)
}

fn print_formula_prec(f: &Formula, min_prec: u8) -> String {
    let (text, prec) = match f {
        Formula::True => ("true".to_string(), u8::MAX),
        Formula::False => ("false".to_string(), u8::MAX),
        Formula::Eq(a, b) => (format!("{} = {}", print_term(a), print_term(b)), u8::MAX),
        Formula::RelEq { name, primed, rhs } => (
            format!("{name}{} = {}", if *primed { "'" } else { "" }, print_expr(rhs)),
            u8::MAX,
        ),
        Formula::Sat(e) => (format!("sat({})", print_expr(e)), u8::MAX),
        Formula::Member { tuple, rel } => {
            let parts: Vec<String> = tuple.iter().map(print_term).collect();
            (format!("({}) in {}", parts.join(", "), print_expr(rel)), u8::MAX)
        }
        Formula::Pred { name, args } => {
            let parts: Vec<String> = args.iter().map(print_term).collect();
            (format!("{name}({})", parts.join(", ")), u8::MAX)
        }
        Formula::Not(inner) => match inner.as_ref() {
            Formula::Eq(a, b) => {
                (format!("{} != {}", print_term(a), print_term(b)), u8::MAX)
            }
            _ => (format!("not {}", print_formula_prec(inner, PREC_NOT)), PREC_NOT),
        },
        Formula::And(parts) => {
            let joined: Vec<String> =
                parts.iter().map(|p| print_formula_prec(p, PREC_AND + 1)).collect();
            (joined.join(" and "), PREC_AND)
        }
        Formula::Or(parts) => {
            let joined: Vec<String> =
                parts.iter().map(|p| print_formula_prec(p, PREC_OR + 1)).collect();
            (joined.join(" or "), PREC_OR)
        }
    };
    if prec < min_prec {
        format!("({text})")
    } else {
        text
    }
}

pub fn print_term(t: &Term) -> String {
    match t {
        Term::Value(v) => print_value(v),
        Term::Var { name, primed } => format!("#{name}{}", if *primed { "'" } else { "" }),
        Term::Param { name } => format!("${name}"),
        Term::App { func, args } => {
            let parts: Vec<String> = args.iter().map(print_term).collect();
            format!("{func}({})", parts.join(", "))
        }
        Term::CardinalityPlus { rel, offset } => {
            if *offset == 0 {
                format!("|{}|", print_expr(rel))
            } else {
                format!("|{}| + {offset}", print_expr(rel))
            }
        }
    }
}

fn print_value(v: &Value) -> String {
    match v {
        Value::Null => "null".to_string(),
        Value::Int(n) => n.to_string(),
        Value::Named(_, label) => format!("'{label}'"),
        // Anonymous constants have no surface syntax; they only appear in
        // solver-internal formulas that are never printed by the CLI.
        Value::Anon(sort, i) => format!("'@anon_{}_{i}'", sort.0),
    }
}

// Expression precedence: union/difference < product < primary.
const PREC_SET: u8 = 1;
const PREC_PROD: u8 = 2;

pub fn print_expr(e: &RelAlgExpr) -> String {
    print_expr_prec(e, 0)
}

fn print_expr_prec(e: &RelAlgExpr, min_prec: u8) -> String {
    let (text, prec) = match e {
        RelAlgExpr::Rel { name, primed } => {
            (format!("{name}{}", if *primed { "'" } else { "" }), u8::MAX)
        }
        RelAlgExpr::Lit { rows } => {
            let parts: Vec<String> = rows
                .iter()
                .map(|row| {
                    let terms: Vec<String> = row.iter().map(print_term).collect();
                    format!("({})", terms.join(", "))
                })
                .collect();
            (format!("{{{}}}", parts.join(", ")), u8::MAX)
        }
        RelAlgExpr::SelectValue { child, col, term } => (
            format!("sel[{} = {}]({})", col + 1, print_sel_term(term), print_expr(child)),
            u8::MAX,
        ),
        RelAlgExpr::SelectCols { child, left, right } => (
            format!("sel[{} = {}]({})", left + 1, right + 1, print_expr(child)),
            u8::MAX,
        ),
        RelAlgExpr::Project { child, cols } => {
            let idx: Vec<String> = cols.iter().map(|c| (c + 1).to_string()).collect();
            (format!("proj[{}]({})", idx.join(", "), print_expr(child)), u8::MAX)
        }
        RelAlgExpr::Product { left, right } => (
            format!(
                "{} x {}",
                print_expr_prec(left, PREC_PROD),
                print_expr_prec(right, PREC_PROD + 1)
            ),
            PREC_PROD,
        ),
        RelAlgExpr::Union { left, right } => (
            format!(
                "{} + {}",
                print_expr_prec(left, PREC_SET),
                print_expr_prec(right, PREC_SET + 1)
            ),
            PREC_SET,
        ),
        RelAlgExpr::Difference { left, right } => (
            format!(
                "{} - {}",
                print_expr_prec(left, PREC_SET),
                print_expr_prec(right, PREC_SET + 1)
            ),
            PREC_SET,
        ),
    };
    if prec < min_prec {
        format!("({text})")
    } else {
        text
    }
}

/// In selection brackets a bare integer means a column index, so an
/// integer-valued term must be parenthesized to survive the round trip.
fn print_sel_term(t: &Term) -> String {
    match t {
        Term::Value(Value::Int(_)) => format!("({})", print_term(t)),
        _ => print_term(t),
    }
}
