//! Typed syntax tree for parsed scripts.
//!
//! Source positions are carried in [`Span`] values that always compare equal,
//! so `==` on any tree type is structural equality.

use std::collections::BTreeMap;

use super::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Ident {
        name: String,
        span: Span,
    },
    Neg(Box<Expr>),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Compare {
        op: CmpOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Call {
        func: String,
        args: Vec<Expr>,
        span: Span,
    },
    /// `then if cond else otherwise`
    Cond {
        cond: Box<Expr>,
        then: Box<Expr>,
        otherwise: Box<Expr>,
    },
    /// `name[time]`: the value of a component at an observation time.
    Index {
        name: String,
        time: Box<Expr>,
        span: Span,
    },
    /// `[a, b]` shape literal; only meaningful as the argument of `ones`/`zeros`.
    List(Vec<Expr>),
}

impl Expr {
    pub fn ident(name: impl Into<String>) -> Expr {
        Expr::Ident {
            name: name.into(),
            span: Span::default(),
        }
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    /// Visits every sub-expression in pre-order.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Num(_) | Expr::Ident { .. } => {}
            Expr::Neg(e) => e.walk(f),
            Expr::Binary { lhs, rhs, .. } | Expr::Compare { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            Expr::Call { args, .. } | Expr::List(args) => args.iter().for_each(|a| a.walk(f)),
            Expr::Cond { cond, then, otherwise } => {
                cond.walk(f);
                then.walk(f);
                otherwise.walk(f);
            }
            Expr::Index { time, .. } => time.walk(f),
        }
    }

    /// True if a plain identifier `name` occurs anywhere in the expression.
    pub fn mentions(&self, name: &str) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if let Expr::Ident { name: n, .. } = e {
                found |= n == name;
            }
        });
        found
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentKind {
    Sde,
    Function,
    Update,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolTerm {
    pub coeff: Expr,
    pub brownian: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentDef {
    pub name: String,
    pub kind: ComponentKind,
    /// Coefficient of `d_t` (SDE kind only).
    pub drift: Option<Expr>,
    /// Coefficients of the Brownian increments (SDE kind only).
    pub vol_terms: Vec<VolTerm>,
    /// Right-hand side for Function and Update kinds.
    pub expr: Option<Expr>,
    pub span: Span,
}

impl ComponentDef {
    /// An SDE component without volatility terms.
    pub fn is_ode(&self) -> bool {
        self.kind == ComponentKind::Sde && self.vol_terms.is_empty()
    }

    /// Every expression attached to the component.
    pub fn exprs(&self) -> impl Iterator<Item = &Expr> {
        self.drift
            .iter()
            .chain(self.vol_terms.iter().map(|v| &v.coeff))
            .chain(self.expr.iter())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDef {
    pub name: String,
    pub params: Vec<String>,
    pub body: Expr,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub a: String,
    pub b: String,
    pub expr: Expr,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Discount {
    By(Expr),
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayoffDef {
    pub at_time: Expr,
    pub name: String,
    pub payoff: Expr,
    pub discount: Discount,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitDef {
    pub expr: Expr,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScriptAst {
    pub function_defs: Vec<FunctionDef>,
    pub components: Vec<ComponentDef>,
    pub correlations: Vec<Correlation>,
    pub inits: BTreeMap<String, InitDef>,
    pub payoffs: Vec<PayoffDef>,
}

impl ScriptAst {
    pub fn component(&self, name: &str) -> Option<&ComponentDef> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn component_index(&self, name: &str) -> Option<usize> {
        self.components.iter().position(|c| c.name == name)
    }

    pub fn function(&self, name: &str) -> Option<&FunctionDef> {
        self.function_defs.iter().find(|f| f.name == name)
    }

    /// Brownian names in order of first appearance in a vol term.
    pub fn brownians(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.components {
            for v in &c.vol_terms {
                if !out.contains(&v.brownian) {
                    out.push(v.brownian.clone());
                }
            }
        }
        out
    }
}
