//! Name resolution and structural checks over a parsed script.

use std::collections::{BTreeMap, BTreeSet};

use super::ast::*;
use super::{Diagnostic, Span};

/// Identifiers with fixed meaning inside scripts.
pub const RESERVED: &[&str] = &["t", "batchsize"];

/// Suffix marking the current-step value of a component inside an update.
pub const NEW_SUFFIX: &str = "_new";

/// Built-in functions and their arities.
pub const BUILTINS: &[(&str, usize)] = &[
    ("exp", 1),
    ("log", 1),
    ("sqrt", 1),
    ("abs", 1),
    ("positivepart", 1),
    ("max", 2),
    ("min", 2),
    ("oneslike", 1),
    ("zeroslike", 1),
    ("ones", 1),
    ("zeros", 1),
];

pub fn builtin_arity(name: &str) -> Option<usize> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, a)| *a)
}

/// A script that passed [`validate`], with its per-step evaluation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedScript {
    pub ast: ScriptAst,
    /// Component indices: SDE/ODE components first (they only read the
    /// previous state), then functions and updates in declaration order.
    pub order: Vec<usize>,
    pub brownians: Vec<String>,
    /// External parameters the script actually references.
    pub externals: BTreeSet<String>,
    /// External parameters that appear in observation-time expressions and so
    /// must be scalar and fixed when the simulator is compiled.
    pub time_symbols: BTreeSet<String>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Ctx {
    /// Drift / vol coefficient or correlation: previous-step state.
    Coefficient,
    /// Function component `i`: same-step values of earlier components.
    Function(usize),
    /// Update component `i`: previous values, plus `_new` of earlier ones.
    Update(usize),
    Init,
    Payoff,
    /// Payoff observation time and `x[...]` index expressions.
    Time,
    /// Body of a user function definition.
    FunctionBody,
}

struct Checker<'a> {
    ast: &'a ScriptAst,
    external: &'a BTreeSet<String>,
    diags: Vec<Diagnostic>,
    used_externals: BTreeSet<String>,
    time_symbols: BTreeSet<String>,
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

impl<'a> Checker<'a> {
    fn err(&mut self, span: Span, msg: impl Into<String>) {
        self.diags.push(Diagnostic::new(span, msg));
    }

    fn candidates(&self) -> Vec<String> {
        let mut v: Vec<String> = self.ast.components.iter().map(|c| c.name.clone()).collect();
        v.extend(self.external.iter().cloned());
        v.extend(RESERVED.iter().map(|s| s.to_string()));
        v
    }

    fn unresolved(&mut self, name: &str, span: Span) {
        let mut close: Vec<(usize, String)> = self
            .candidates()
            .into_iter()
            .map(|c| (levenshtein(name, &c), c))
            .filter(|(d, c)| *d <= (name.len().max(c.len()) / 3).max(1))
            .collect();
        close.sort();
        let msg = if close.is_empty() {
            format!("unresolved symbol {name}")
        } else {
            let names: Vec<String> = close.into_iter().take(3).map(|(_, c)| format!("`{c}`")).collect();
            format!("unresolved symbol {name} (did you mean {}?)", names.join(", "))
        };
        self.err(span, msg);
    }

    fn ident(&mut self, name: &str, span: Span, ctx: Ctx, formals: &[String]) {
        if formals.iter().any(|f| f == name) {
            return;
        }
        if name == "batchsize" {
            self.err(span, "`batchsize` may only be used inside a shape list such as ones([batchsize])");
            return;
        }
        if name == "t" {
            return;
        }
        if let Some(idx) = self.ast.component_index(name) {
            match ctx {
                Ctx::Function(i) if idx >= i => self.err(
                    span,
                    format!(
                        "function component `{}` references `{name}`, which is not computed before it",
                        self.ast.components[i].name
                    ),
                ),
                Ctx::Init => self.err(span, format!("initial value references component `{name}`")),
                Ctx::Time => self.err(span, format!("observation time references component `{name}`; times must be fixed")),
                Ctx::FunctionBody => self.err(span, format!("function definitions may not reference component `{name}`")),
                _ => {}
            }
            return;
        }
        if let Some(base) = name.strip_suffix(NEW_SUFFIX) {
            if let Some(idx) = self.ast.component_index(base) {
                match ctx {
                    Ctx::Update(i) if idx < i => {}
                    Ctx::Update(i) => self.err(
                        span,
                        format!(
                            "update `{}` reads `{name}`, but `{base}` is not computed before it",
                            self.ast.components[i].name
                        ),
                    ),
                    Ctx::Payoff | Ctx::Coefficient => self.err(span, format!("`{name}` is only meaningful inside update components")),
                    _ => self.err(span, format!("`{name}` may only be used inside update components")),
                }
                return;
            }
        }
        if self.external.contains(name) {
            self.used_externals.insert(name.to_string());
            if ctx == Ctx::Time {
                self.time_symbols.insert(name.to_string());
            }
            return;
        }
        self.unresolved(name, span);
    }

    fn expr(&mut self, e: &Expr, ctx: Ctx, formals: &[String]) {
        match e {
            Expr::Num(_) => {}
            Expr::Ident { name, span } => self.ident(name, *span, ctx, formals),
            Expr::Neg(inner) => self.expr(inner, ctx, formals),
            Expr::Binary { lhs, rhs, .. } | Expr::Compare { lhs, rhs, .. } => {
                self.expr(lhs, ctx, formals);
                self.expr(rhs, ctx, formals);
            }
            Expr::Cond { cond, then, otherwise } => {
                self.expr(cond, ctx, formals);
                self.expr(then, ctx, formals);
                self.expr(otherwise, ctx, formals);
            }
            Expr::List(_) => {
                self.err(Span::default(), "shape list outside of ones(...)/zeros(...)");
            }
            Expr::Call { func, args, span } => {
                if func == "ones" || func == "zeros" {
                    match args.as_slice() {
                        [Expr::List(items)] if !items.is_empty() => {
                            for item in items {
                                let ok = matches!(item, Expr::Ident { name, .. } if name == "batchsize")
                                    || matches!(item, Expr::Num(v) if *v == 1.0);
                                if !ok {
                                    self.err(*span, format!("`{func}` shapes may only contain `batchsize`"));
                                }
                            }
                        }
                        _ => self.err(*span, format!("`{func}` takes a shape list, e.g. {func}([batchsize])")),
                    }
                    return;
                }
                let arity = if let Some(a) = builtin_arity(func) {
                    Some(a)
                } else {
                    self.ast.function(func).map(|f| f.params.len())
                };
                match arity {
                    None => {
                        let mut names: Vec<String> = BUILTINS.iter().map(|(n, _)| n.to_string()).collect();
                        names.extend(self.ast.function_defs.iter().map(|f| f.name.clone()));
                        let best = names.into_iter().map(|n| (levenshtein(func, &n), n)).filter(|(d, _)| *d <= 2).min();
                        let msg = match best {
                            Some((_, n)) => format!("unknown function {func} (did you mean `{n}`?)"),
                            None => format!("unknown function {func}"),
                        };
                        self.err(*span, msg);
                    }
                    Some(n) if n != args.len() => self.err(*span, format!("`{func}` takes {n} argument(s), got {}", args.len())),
                    Some(_) => {}
                }
                for a in args {
                    self.expr(a, ctx, formals);
                }
            }
            Expr::Index { name, time, span } => {
                if ctx != Ctx::Payoff {
                    self.err(*span, format!("time-indexing `{name}[...]` is only allowed in payoffs"));
                }
                if self.ast.component(name).is_none() {
                    self.err(*span, format!("`{name}` is not a component and cannot be time-indexed"));
                }
                self.expr(time, Ctx::Time, formals);
            }
        }
    }
}

/// Checks every structural invariant of `ast` against the set of symbols the
/// host will bind, returning the script annotated with its evaluation order.
pub fn validate(ast: &ScriptAst, external_params: &BTreeSet<String>) -> Result<ValidatedScript, Vec<Diagnostic>> {
    let mut ck = Checker {
        ast,
        external: external_params,
        diags: Vec::new(),
        used_externals: BTreeSet::new(),
        time_symbols: BTreeSet::new(),
    };

    if ast.components.is_empty() {
        ck.err(Span::new(1, 1), "no components");
    }

    for f in &ast.function_defs {
        if builtin_arity(&f.name).is_some() || ast.component(&f.name).is_some() {
            ck.err(f.span, format!("function `{}` shadows a built-in or component", f.name));
        }
        let mut callees = Vec::new();
        f.body.walk(&mut |e| {
            if let Expr::Call { func, span, .. } = e {
                callees.push((func.clone(), *span));
            }
        });
        for (callee, span) in callees {
            if callee == f.name {
                ck.err(span, format!("function `{}` is recursive", f.name));
            }
        }
        ck.expr(&f.body, Ctx::FunctionBody, &f.params);
    }

    let brownians = ast.brownians();
    for b in &brownians {
        if ast.component(b).is_some() {
            let span = ast
                .components
                .iter()
                .find(|c| c.vol_terms.iter().any(|v| &v.brownian == b))
                .map(|c| c.span)
                .unwrap_or_default();
            ck.err(span, format!("Brownian increment d_{b} collides with component `{b}`"));
        }
    }

    for (i, c) in ast.components.iter().enumerate() {
        if RESERVED.contains(&c.name.as_str()) || external_params.contains(&c.name) {
            ck.err(c.span, format!("component `{}` shadows a reserved or external symbol", c.name));
        }
        match c.kind {
            ComponentKind::Sde => {
                if c.drift.is_none() && c.vol_terms.is_empty() {
                    ck.err(c.span, format!("SDE `{}` has neither drift nor volatility", c.name));
                }
                for e in c.exprs() {
                    ck.expr(e, Ctx::Coefficient, &[]);
                }
            }
            ComponentKind::Function => ck.expr(c.expr.as_ref().unwrap(), Ctx::Function(i), &[]),
            ComponentKind::Update => ck.expr(c.expr.as_ref().unwrap(), Ctx::Update(i), &[]),
        }
        let has_init = ast.inits.contains_key(&c.name);
        match c.kind {
            ComponentKind::Sde | ComponentKind::Update if !has_init => {
                let kind = if c.kind == ComponentKind::Sde { "SDE" } else { "update" };
                ck.err(c.span, format!("{kind} component `{}` needs an `init:` value", c.name));
            }
            ComponentKind::Function if has_init => {
                let span = ast.inits[&c.name].span;
                ck.err(span, format!("function component `{}` must not have an initial value", c.name));
            }
            _ => {}
        }
    }

    for (name, init) in &ast.inits {
        if ast.component(name).is_none() {
            ck.unresolved(name, init.span);
        }
        ck.expr(&init.expr, Ctx::Init, &[]);
    }

    for corr in &ast.correlations {
        for b in [&corr.a, &corr.b] {
            if !brownians.contains(b) {
                ck.err(corr.span, format!("Brownian d_{b} is correlated but drives no component"));
            }
        }
        let mut payoff_only = None;
        corr.expr.walk(&mut |e| {
            if let Expr::Index { name, span, .. } = e {
                payoff_only.get_or_insert((name.clone(), *span));
            }
        });
        if let Some((name, span)) = payoff_only {
            ck.err(span, format!("correlation expression references payoff-only symbol `{name}[...]`"));
            continue;
        }
        ck.expr(&corr.expr, Ctx::Coefficient, &[]);
    }

    for p in &ast.payoffs {
        if ast.component(&p.name).is_some() {
            ck.err(p.span, format!("payoff `{}` shadows a component", p.name));
        }
        ck.expr(&p.at_time, Ctx::Time, &[]);
        ck.expr(&p.payoff, Ctx::Payoff, &[]);
        if let Discount::By(d) = &p.discount {
            ck.expr(d, Ctx::Payoff, &[]);
        }
    }

    if !ck.diags.is_empty() {
        let mut diags = ck.diags;
        diags.sort_by_key(|d| (d.span.line, d.span.col));
        diags.dedup();
        return Err(diags);
    }

    let mut order: Vec<usize> = (0..ast.components.len())
        .filter(|&i| ast.components[i].kind == ComponentKind::Sde)
        .collect();
    order.extend((0..ast.components.len()).filter(|&i| ast.components[i].kind != ComponentKind::Sde));

    Ok(ValidatedScript {
        ast: ast.clone(),
        order,
        brownians,
        externals: ck.used_externals,
        time_symbols: ck.time_symbols,
    })
}

/// Identifiers that are not components, `_new` values, reserved names or
/// function formals, with the position of their first use. These are the
/// symbols a host would have to bind.
pub fn free_symbols(ast: &ScriptAst) -> BTreeMap<String, Span> {
    let mut out = BTreeMap::new();
    let visit = |e: &Expr, formals: &[String], out: &mut BTreeMap<String, Span>| {
        e.walk(&mut |x| {
            if let Expr::Ident { name, span } = x {
                let is_new = name.strip_suffix(NEW_SUFFIX).is_some_and(|b| ast.component_index(b).is_some());
                if !(RESERVED.contains(&name.as_str()) || ast.component_index(name).is_some() || is_new || formals.contains(name)) {
                    out.entry(name.clone()).or_insert(*span);
                }
            }
        });
    };
    for f in &ast.function_defs {
        visit(&f.body, &f.params, &mut out);
    }
    for c in &ast.components {
        for e in c.exprs() {
            visit(e, &[], &mut out);
        }
    }
    for c in &ast.correlations {
        visit(&c.expr, &[], &mut out);
    }
    for i in ast.inits.values() {
        visit(&i.expr, &[], &mut out);
    }
    for p in &ast.payoffs {
        visit(&p.at_time, &[], &mut out);
        visit(&p.payoff, &[], &mut out);
        if let Discount::By(e) = &p.discount {
            visit(e, &[], &mut out);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::parse_source;

    fn ext(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn free_symbols_of_corpus_validate() {
        let ast = parse_source(crate::script::corpus::HESTON_LOG_EULER).unwrap();
        let free = free_symbols(&ast);
        let names: Vec<&str> = free.keys().map(String::as_str).collect();
        assert_eq!(
            names,
            [
                "initiallogspot",
                "initialvariance",
                "kappa",
                "longtermvariance",
                "maturity",
                "rho",
                "shortrate",
                "strike",
                "volofvol"
            ]
        );
        for (_, src) in crate::script::corpus::ALL {
            let ast = parse_source(src).unwrap();
            let free: BTreeSet<String> = free_symbols(&ast).into_keys().collect();
            let v = validate(&ast, &free).unwrap();
            assert_eq!(v.externals, free);
        }
        let ast = parse_source("f(x) = x*k\nd_y = f(y)*d_t\ninit: y = x").unwrap();
        assert_eq!(free_symbols(&ast).into_keys().collect::<Vec<_>>(), ["k", "x"]);
    }

    #[test]
    fn missing_init_for_update() {
        let ast = parse_source("x = x + 1").unwrap();
        let diags = validate(&ast, &ext(&[])).unwrap_err();
        assert!(diags[0].message.contains("needs an `init:`"), "{:?}", diags);
    }

    #[test]
    fn unresolved_symbol_with_suggestion() {
        let ast = parse_source("d_x = kappa*d_t\ninit: x = 0").unwrap();
        let diags = validate(&ast, &ext(&["kapa"])).unwrap_err();
        assert!(diags[0].message.starts_with("unresolved symbol kappa"), "{}", diags[0].message);
        assert!(diags[0].message.contains("`kapa`"));
        assert_eq!((diags[0].span.line, diags[0].span.col), (1, 7));
    }

    #[test]
    fn forward_reference_in_function_component() {
        let ast = parse_source("d_x = v*d_t\nv = w*2\nw = x\ninit: x = 0").unwrap();
        let diags = validate(&ast, &ext(&[])).unwrap_err();
        assert!(diags[0].message.contains("not computed before it"), "{:?}", diags);
        assert_eq!(diags[0].span.line, 2);
    }

    #[test]
    fn order_puts_sdes_first() {
        let ast = parse_source("v = 2\nd_x = v*d_t\nm = max(m, x_new)\ninit: x = 0\ninit: m = 0").unwrap();
        let v = validate(&ast, &ext(&[])).unwrap();
        assert_eq!(v.order, vec![1, 0, 2]);
    }

    #[test]
    fn new_suffix_rules() {
        let ast = parse_source("m = max(m, x_new)\nd_x = d_t\ninit: x = 0\ninit: m = 0").unwrap();
        assert!(validate(&ast, &ext(&[])).is_err());
        let ast = parse_source("d_x = d_t\ny = x_new\ninit: x = 0").unwrap();
        assert!(validate(&ast, &ext(&[])).is_err());
    }

    #[test]
    fn correlation_requires_driving_brownian() {
        let ast = parse_source("d_x = d_W\nd_W*d_Q = 0.3\ninit: x = 0").unwrap();
        let diags = validate(&ast, &ext(&[])).unwrap_err();
        assert!(diags[0].message.contains("d_Q"));
    }

    #[test]
    fn correlation_cannot_use_payoff_symbols() {
        let ast = parse_source("d_x = d_W\nd_y = d_Z\nd_W*d_Z = x[1]\ninit: x = 0\ninit: y = 0").unwrap();
        let diags = validate(&ast, &ext(&[])).unwrap_err();
        assert!(diags[0].message.contains("payoff-only"), "{:?}", diags);
    }

    #[test]
    fn empty_script_has_no_components() {
        let ast = parse_source("# nothing\n").unwrap();
        let diags = validate(&ast, &ext(&[])).unwrap_err();
        assert_eq!(diags[0].message, "no components");
    }

    #[test]
    fn time_symbols_are_collected() {
        let ast = parse_source("d_x = d_W\ninit: x = 0\nT: c pays x[0.5*T] + x nodiscount").unwrap();
        let v = validate(&ast, &ext(&["T"])).unwrap();
        assert!(v.time_symbols.contains("T"));
    }

    #[test]
    fn levenshtein_distances() {
        assert_eq!(levenshtein("kappa", "kapa"), 1);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", "abc"), 0);
    }
}
