//! Canonical text form of a script. Output reparses to an equal tree.

use std::fmt::Write;

use super::ast::*;

const P_COND: u8 = 0;
const P_CMP: u8 = 1;
const P_ADD: u8 = 2;
const P_MUL: u8 = 3;
const P_UNARY: u8 = 4;
const P_ATOM: u8 = 5;

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Cond { .. } => P_COND,
        Expr::Compare { .. } => P_CMP,
        Expr::Binary {
            op: BinOp::Add | BinOp::Sub,
            ..
        } => P_ADD,
        Expr::Binary { .. } => P_MUL,
        Expr::Neg(_) => P_UNARY,
        Expr::Num(v) if *v < 0.0 || v.is_sign_negative() => P_UNARY,
        _ => P_ATOM,
    }
}

fn write_expr(out: &mut String, e: &Expr, min: u8) {
    let paren = prec(e) < min;
    if paren {
        out.push('(');
    }
    match e {
        Expr::Num(v) => {
            let _ = write!(out, "{v}");
        }
        Expr::Ident { name, .. } => out.push_str(name),
        Expr::Neg(inner) => {
            out.push('-');
            write_expr(out, inner, P_UNARY);
        }
        Expr::Binary { op, lhs, rhs } => {
            let (l, r) = match op {
                BinOp::Add | BinOp::Sub => (P_ADD, P_MUL),
                BinOp::Mul | BinOp::Div => (P_MUL, P_UNARY),
            };
            write_expr(out, lhs, l);
            let _ = write!(out, " {} ", op.symbol());
            write_expr(out, rhs, r);
        }
        Expr::Compare { op, lhs, rhs } => {
            write_expr(out, lhs, P_ADD);
            let _ = write!(out, " {} ", op.symbol());
            write_expr(out, rhs, P_ADD);
        }
        Expr::Call { func, args, .. } => {
            out.push_str(func);
            out.push('(');
            write_list(out, args);
            out.push(')');
        }
        Expr::Cond { cond, then, otherwise } => {
            write_expr(out, then, P_CMP);
            out.push_str(" if ");
            write_expr(out, cond, P_CMP);
            out.push_str(" else ");
            write_expr(out, otherwise, P_COND);
        }
        Expr::Index { name, time, .. } => {
            out.push_str(name);
            out.push('[');
            write_expr(out, time, P_COND);
            out.push(']');
        }
        Expr::List(items) => {
            out.push('[');
            write_list(out, items);
            out.push(']');
        }
    }
    if paren {
        out.push(')');
    }
}

fn write_list(out: &mut String, items: &[Expr]) {
    for (i, a) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_expr(out, a, P_COND);
    }
}

pub fn expr_to_string(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e, P_COND);
    s
}

/// Renders the script one statement per line, grouped by statement kind.
pub fn pretty_print(ast: &ScriptAst) -> String {
    let mut out = String::new();
    for f in &ast.function_defs {
        let _ = writeln!(out, "{}({}) = {}", f.name, f.params.join(", "), expr_to_string(&f.body));
    }
    for c in &ast.components {
        match c.kind {
            ComponentKind::Sde => {
                let mut terms = Vec::new();
                if let Some(d) = &c.drift {
                    terms.push(differential_term(d, "t"));
                }
                for v in &c.vol_terms {
                    terms.push(differential_term(&v.coeff, &v.brownian));
                }
                let _ = writeln!(out, "d_{} = {}", c.name, terms.join(" + "));
            }
            ComponentKind::Function | ComponentKind::Update => {
                let _ = writeln!(out, "{} = {}", c.name, expr_to_string(c.expr.as_ref().unwrap()));
            }
        }
    }
    for corr in &ast.correlations {
        let _ = writeln!(out, "d_{}*d_{} = {}", corr.a, corr.b, expr_to_string(&corr.expr));
    }
    for (name, init) in &ast.inits {
        let _ = writeln!(out, "init: {} = {}", name, expr_to_string(&init.expr));
    }
    for p in &ast.payoffs {
        let discount = match &p.discount {
            Discount::By(d) => format!("discountby {}", expr_to_string(d)),
            Discount::None => "nodiscount".to_string(),
        };
        let _ = writeln!(
            out,
            "{}: {} pays {} {}",
            expr_to_string(&p.at_time),
            p.name,
            expr_to_string(&p.payoff),
            discount
        );
    }
    out
}

fn differential_term(coeff: &Expr, target: &str) -> String {
    let mut s = String::new();
    write_expr(&mut s, coeff, P_MUL);
    let _ = write!(s, "*d_{target}");
    s
}
