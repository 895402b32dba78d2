//! Recursive-descent parser from tokens to [`ScriptAst`].
//!
//! Statement shapes:
//!
//! ```text
//! g(x) = expr                                  function definition
//! d_name = a*d_t + b*d_W                       SDE / ODE component
//! name = expr                                  function component (update if self-referencing)
//! d_W*d_Z = expr                               correlation
//! init: name = expr                            initial value
//! when: name pays expr discountby expr         payoff (or `nodiscount`)
//! ```

use super::ast::*;
use super::lexer::{Token, TokenKind};
use super::{Diagnostic, Span};

pub(crate) const TIME_DIFFERENTIAL: &str = "d_t";

/// `d_foo` → `Some("foo")`.
pub(crate) fn differential_target(name: &str) -> Option<&str> {
    name.strip_prefix("d_").filter(|rest| !rest.is_empty())
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

type PResult<T> = Result<T, Diagnostic>;

impl<'a> Parser<'a> {
    fn peek(&self) -> &TokenKind {
        &self.tokens[self.pos].kind
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn bump(&mut self) -> &Token {
        let t = &self.tokens[self.pos];
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek() == kind {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: TokenKind, context: &str) -> PResult<Span> {
        if self.peek() == &kind {
            Ok(self.bump().span)
        } else {
            Err(Diagnostic::new(
                self.span(),
                format!("expected {} {context}, found {}", kind.describe(), self.peek().describe()),
            ))
        }
    }

    fn expect_ident(&mut self, context: &str) -> PResult<(String, Span)> {
        match self.peek().clone() {
            TokenKind::Ident(name) => {
                let span = self.bump().span;
                Ok((name, span))
            }
            other => Err(Diagnostic::new(
                self.span(),
                format!("expected identifier {context}, found {}", other.describe()),
            )),
        }
    }

    fn expect_end_of_statement(&mut self) -> PResult<()> {
        match self.peek() {
            TokenKind::Newline => {
                self.bump();
                Ok(())
            }
            TokenKind::Eof => Ok(()),
            other => Err(Diagnostic::new(
                self.span(),
                format!("unexpected {} after end of statement", other.describe()),
            )),
        }
    }

    fn statement_has(&self, kind: &TokenKind) -> bool {
        self.tokens[self.pos..]
            .iter()
            .take_while(|t| !matches!(t.kind, TokenKind::Newline | TokenKind::Eof))
            .any(|t| &t.kind == kind)
    }

    // ---- expressions -------------------------------------------------

    fn expr(&mut self) -> PResult<Expr> {
        let then = self.comparison()?;
        if self.eat(&TokenKind::If) {
            let cond = self.comparison()?;
            self.expect(TokenKind::Else, "in conditional expression")?;
            let otherwise = self.expr()?;
            return Ok(Expr::Cond {
                cond: Box::new(cond),
                then: Box::new(then),
                otherwise: Box::new(otherwise),
            });
        }
        Ok(then)
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let lhs = self.additive()?;
        let op = match self.peek() {
            TokenKind::Lt => CmpOp::Lt,
            TokenKind::Le => CmpOp::Le,
            TokenKind::Gt => CmpOp::Gt,
            TokenKind::Ge => CmpOp::Ge,
            TokenKind::EqEq => CmpOp::Eq,
            TokenKind::Ne => CmpOp::Ne,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.additive()?;
        Ok(Expr::Compare {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        })
    }

    fn additive(&mut self) -> PResult<Expr> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                TokenKind::Plus => BinOp::Add,
                TokenKind::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.multiplicative()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn multiplicative(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                TokenKind::Star => BinOp::Mul,
                TokenKind::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.eat(&TokenKind::Minus) {
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        if self.eat(&TokenKind::Plus) {
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        let span = self.span();
        match self.peek().clone() {
            TokenKind::Number(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            TokenKind::Ident(name) => {
                self.bump();
                if self.eat(&TokenKind::LParen) {
                    let mut args = Vec::new();
                    if !self.eat(&TokenKind::RParen) {
                        loop {
                            args.push(self.expr()?);
                            if self.eat(&TokenKind::RParen) {
                                break;
                            }
                            self.expect(TokenKind::Comma, "between call arguments")?;
                        }
                    }
                    Ok(Expr::Call { func: name, args, span })
                } else if self.eat(&TokenKind::LBracket) {
                    let time = self.expr()?;
                    self.expect(TokenKind::RBracket, "to close time index")?;
                    Ok(Expr::Index {
                        name,
                        time: Box::new(time),
                        span,
                    })
                } else {
                    Ok(Expr::Ident { name, span })
                }
            }
            TokenKind::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(TokenKind::RParen, "to close parenthesis")?;
                Ok(e)
            }
            TokenKind::LBracket => {
                self.bump();
                let mut items = Vec::new();
                if !self.eat(&TokenKind::RBracket) {
                    loop {
                        items.push(self.expr()?);
                        if self.eat(&TokenKind::RBracket) {
                            break;
                        }
                        self.expect(TokenKind::Comma, "between list items")?;
                    }
                }
                Ok(Expr::List(items))
            }
            other => Err(Diagnostic::new(span, format!("expected expression, found {}", other.describe()))),
        }
    }
}

/// Splits an SDE right-hand side into per-differential coefficients.
///
/// Products distribute over sums, so both `a*d_t + b*d_W` and
/// `s*(a*d_t + b*d_W)` are accepted; every addend must end up carrying
/// exactly one differential.
fn linear_in_differentials(e: &Expr) -> PResult<Option<Vec<(String, Option<Expr>, Span)>>> {
    fn scale(terms: Vec<(String, Option<Expr>, Span)>, f: &dyn Fn(Option<Expr>) -> Expr) -> Vec<(String, Option<Expr>, Span)> {
        terms.into_iter().map(|(d, c, s)| (d, Some(f(c)), s)).collect()
    }
    fn first_span(e: &Expr) -> Span {
        let mut span = Span::default();
        let mut set = false;
        e.walk(&mut |x| {
            if set {
                return;
            }
            if let Expr::Ident { span: s, .. } | Expr::Call { span: s, .. } | Expr::Index { span: s, .. } = x {
                span = *s;
                set = true;
            }
        });
        span
    }
    match e {
        Expr::Ident { name, span } if differential_target(name).is_some() => Ok(Some(vec![(name.clone(), None, *span)])),
        Expr::Binary { op, lhs, rhs } => {
            let l = linear_in_differentials(lhs)?;
            let r = linear_in_differentials(rhs)?;
            match op {
                BinOp::Add | BinOp::Sub => match (l, r) {
                    (None, None) => Ok(None),
                    (Some(mut l), Some(r)) => {
                        let r = if *op == BinOp::Sub {
                            scale(r, &|c| Expr::Neg(Box::new(c.unwrap_or(Expr::Num(1.0)))))
                        } else {
                            r
                        };
                        l.extend(r);
                        Ok(Some(l))
                    }
                    (Some(_), None) => Err(Diagnostic::new(
                        first_span(rhs),
                        "every term of an SDE right-hand side must multiply d_t or a Brownian increment",
                    )),
                    (None, Some(_)) => Err(Diagnostic::new(
                        first_span(lhs),
                        "every term of an SDE right-hand side must multiply d_t or a Brownian increment",
                    )),
                },
                BinOp::Mul => match (l, r) {
                    (None, None) => Ok(None),
                    (Some(_), Some(_)) => Err(Diagnostic::new(
                        first_span(e),
                        "product of two differentials in SDE right-hand side",
                    )),
                    (Some(terms), None) => Ok(Some(scale(terms, &|c| match c {
                        Some(c) => Expr::binary(BinOp::Mul, c, (**rhs).clone()),
                        None => (**rhs).clone(),
                    }))),
                    (None, Some(terms)) => Ok(Some(scale(terms, &|c| match c {
                        Some(c) => Expr::binary(BinOp::Mul, (**lhs).clone(), c),
                        None => (**lhs).clone(),
                    }))),
                },
                BinOp::Div => match (l, r) {
                    (None, None) => Ok(None),
                    (Some(terms), None) => Ok(Some(scale(terms, &|c| {
                        Expr::binary(BinOp::Div, c.unwrap_or(Expr::Num(1.0)), (**rhs).clone())
                    }))),
                    _ => Err(Diagnostic::new(first_span(rhs), "differential in a denominator")),
                },
            }
        }
        Expr::Neg(inner) => {
            Ok(linear_in_differentials(inner)?.map(|terms| scale(terms, &|c| Expr::Neg(Box::new(c.unwrap_or(Expr::Num(1.0)))))))
        }
        other => {
            let mut bad = None;
            other.walk(&mut |x| {
                if let Expr::Ident { name, span } = x {
                    if bad.is_none() && differential_target(name).is_some() {
                        bad = Some((name.clone(), *span));
                    }
                }
            });
            match bad {
                Some((name, span)) => Err(Diagnostic::new(
                    span,
                    format!("`{name}` may only appear as a top-level factor of an SDE term"),
                )),
                None => Ok(None),
            }
        }
    }
}

fn reject_differentials(e: &Expr, context: &str) -> PResult<()> {
    let mut bad = None;
    e.walk(&mut |x| {
        if let Expr::Ident { name, span } = x {
            if bad.is_none() && differential_target(name).is_some() {
                bad = Some((name.clone(), *span));
            }
        }
    });
    match bad {
        Some((name, span)) => Err(Diagnostic::new(
            span,
            format!("`{name}` appears outside an SDE right-hand side ({context})"),
        )),
        None => Ok(()),
    }
}

fn sum_coefficients(coeffs: Vec<Expr>) -> Expr {
    let mut it = coeffs.into_iter();
    let first = it.next().expect("at least one coefficient");
    it.fold(first, |acc, c| Expr::binary(BinOp::Add, acc, c))
}

/// Parses a token stream into a script AST.
pub fn parse_script(tokens: &[Token]) -> Result<ScriptAst, Diagnostic> {
    assert!(
        matches!(tokens.last().map(|t| &t.kind), Some(TokenKind::Eof)),
        "token stream must end with Eof"
    );
    let mut p = Parser { tokens, pos: 0 };
    let mut ast = ScriptAst::default();

    loop {
        match p.peek() {
            TokenKind::Eof => break,
            TokenKind::Newline => {
                p.bump();
                continue;
            }
            _ => {}
        }
        let stmt_span = p.span();

        if p.statement_has(&TokenKind::Pays) {
            let at_time = p.expr()?;
            reject_differentials(&at_time, "payoff time")?;
            p.expect(TokenKind::Colon, "after payoff time")?;
            let (name, _) = p.expect_ident("naming the payoff")?;
            p.expect(TokenKind::Pays, "after payoff name")?;
            let payoff = p.expr()?;
            reject_differentials(&payoff, "payoff")?;
            let discount = match p.peek() {
                TokenKind::DiscountBy => {
                    p.bump();
                    let d = p.expr()?;
                    reject_differentials(&d, "discount")?;
                    Discount::By(d)
                }
                TokenKind::NoDiscount => {
                    p.bump();
                    Discount::None
                }
                other => {
                    return Err(Diagnostic::new(
                        p.span(),
                        format!("expected `discountby` or `nodiscount`, found {}", other.describe()),
                    ))
                }
            };
            p.expect_end_of_statement()?;
            if ast.payoffs.iter().any(|q| q.name == name) {
                return Err(Diagnostic::new(stmt_span, format!("duplicate payoff `{name}`")));
            }
            ast.payoffs.push(PayoffDef {
                at_time,
                name,
                payoff,
                discount,
                span: stmt_span,
            });
            continue;
        }

        if p.eat(&TokenKind::Init) {
            let (name, span) = p.expect_ident("after `init:`")?;
            p.expect(TokenKind::Assign, "in initial value")?;
            let expr = p.expr()?;
            reject_differentials(&expr, "initial value")?;
            p.expect_end_of_statement()?;
            if ast.inits.contains_key(&name) {
                return Err(Diagnostic::new(span, format!("duplicate initial value for `{name}`")));
            }
            ast.inits.insert(name, InitDef { expr, span });
            continue;
        }

        let (lhs_name, lhs_span) = p.expect_ident("at start of statement")?;

        // Correlation: d_W*d_Z = rho
        if p.peek() == &TokenKind::Star {
            let a = differential_target(&lhs_name)
                .ok_or_else(|| Diagnostic::new(lhs_span, "correlation statements have the form `d_W*d_Z = expr`"))?;
            p.bump();
            let (rhs_name, rhs_span) = p.expect_ident("in correlation")?;
            let b = differential_target(&rhs_name)
                .ok_or_else(|| Diagnostic::new(rhs_span, "correlation statements have the form `d_W*d_Z = expr`"))?;
            if lhs_name == TIME_DIFFERENTIAL || rhs_name == TIME_DIFFERENTIAL {
                return Err(Diagnostic::new(lhs_span, "`d_t` cannot be correlated"));
            }
            if a == b {
                return Err(Diagnostic::new(rhs_span, "a Brownian cannot be correlated with itself"));
            }
            let (a, b) = (a.to_string(), b.to_string());
            p.expect(TokenKind::Assign, "in correlation")?;
            let expr = p.expr()?;
            reject_differentials(&expr, "correlation")?;
            p.expect_end_of_statement()?;
            if ast.correlations.iter().any(|c| (c.a == a && c.b == b) || (c.a == b && c.b == a)) {
                return Err(Diagnostic::new(lhs_span, format!("duplicate correlation between `{a}` and `{b}`")));
            }
            ast.correlations.push(Correlation {
                a,
                b,
                expr,
                span: lhs_span,
            });
            continue;
        }

        // Function definition: g(x, y) = expr
        if p.peek() == &TokenKind::LParen {
            p.bump();
            let mut params = Vec::new();
            if !p.eat(&TokenKind::RParen) {
                loop {
                    let (param, span) = p.expect_ident("as function parameter")?;
                    if params.contains(&param) {
                        return Err(Diagnostic::new(span, format!("duplicate parameter `{param}`")));
                    }
                    params.push(param);
                    if p.eat(&TokenKind::RParen) {
                        break;
                    }
                    p.expect(TokenKind::Comma, "between function parameters")?;
                }
            }
            p.expect(TokenKind::Assign, "in function definition")?;
            let body = p.expr()?;
            reject_differentials(&body, "function definition")?;
            p.expect_end_of_statement()?;
            if ast.function(&lhs_name).is_some() {
                return Err(Diagnostic::new(lhs_span, format!("duplicate function definition `{lhs_name}`")));
            }
            ast.function_defs.push(FunctionDef {
                name: lhs_name,
                params,
                body,
                span: lhs_span,
            });
            continue;
        }

        p.expect(TokenKind::Assign, "after component name")?;
        let rhs = p.expr()?;
        p.expect_end_of_statement()?;

        let component = if let Some(target) = differential_target(&lhs_name) {
            if lhs_name == TIME_DIFFERENTIAL {
                return Err(Diagnostic::new(lhs_span, "`d_t` cannot be defined"));
            }
            let terms = linear_in_differentials(&rhs)?.ok_or_else(|| {
                Diagnostic::new(
                    lhs_span,
                    format!("right-hand side of `{lhs_name}` contains no d_t or Brownian increment"),
                )
            })?;
            let mut drift: Vec<Expr> = Vec::new();
            let mut vols: Vec<(String, Vec<Expr>)> = Vec::new();
            for (diff, coeff, _) in terms {
                let coeff = coeff.unwrap_or(Expr::Num(1.0));
                if diff == TIME_DIFFERENTIAL {
                    drift.push(coeff);
                } else {
                    let brownian = differential_target(&diff).unwrap().to_string();
                    match vols.iter_mut().find(|(b, _)| *b == brownian) {
                        Some((_, cs)) => cs.push(coeff),
                        None => vols.push((brownian, vec![coeff])),
                    }
                }
            }
            ComponentDef {
                name: target.to_string(),
                kind: ComponentKind::Sde,
                drift: (!drift.is_empty()).then(|| sum_coefficients(drift)),
                vol_terms: vols
                    .into_iter()
                    .map(|(brownian, cs)| VolTerm {
                        coeff: sum_coefficients(cs),
                        brownian,
                    })
                    .collect(),
                expr: None,
                span: lhs_span,
            }
        } else {
            reject_differentials(&rhs, "component definition")?;
            let kind = if rhs.mentions(&lhs_name) {
                ComponentKind::Update
            } else {
                ComponentKind::Function
            };
            ComponentDef {
                name: lhs_name,
                kind,
                drift: None,
                vol_terms: Vec::new(),
                expr: Some(rhs),
                span: lhs_span,
            }
        };
        if ast.component(&component.name).is_some() {
            return Err(Diagnostic::new(
                lhs_span,
                format!("duplicate component definition `{}`", component.name),
            ));
        }
        ast.components.push(component);
    }
    Ok(ast)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::lexer::tokenize;

    fn parse(src: &str) -> PResult<ScriptAst> {
        parse_script(&tokenize(src)?)
    }

    #[test]
    fn extracts_drift_and_vol() {
        let ast = parse("d_x = (mu - x)*d_t + sigma*d_W\n").unwrap();
        let c = &ast.components[0];
        assert_eq!(c.kind, ComponentKind::Sde);
        assert_eq!(c.drift, Some(Expr::binary(BinOp::Sub, Expr::ident("mu"), Expr::ident("x"))));
        assert_eq!(c.vol_terms.len(), 1);
        assert_eq!(c.vol_terms[0].brownian, "W");
        assert_eq!(c.vol_terms[0].coeff, Expr::ident("sigma"));
    }

    #[test]
    fn distributes_products_over_differential_sums() {
        let ast = parse("d_s = s*(r*d_t + v*d_Z)").unwrap();
        let c = &ast.components[0];
        assert_eq!(c.drift, Some(Expr::binary(BinOp::Mul, Expr::ident("s"), Expr::ident("r"))));
        assert_eq!(c.vol_terms[0].coeff, Expr::binary(BinOp::Mul, Expr::ident("s"), Expr::ident("v")));
    }

    #[test]
    fn bare_differential_has_unit_coefficient() {
        let ast = parse("d_x = d_t - d_W").unwrap();
        let c = &ast.components[0];
        assert_eq!(c.drift, Some(Expr::Num(1.0)));
        assert_eq!(c.vol_terms[0].coeff, Expr::Neg(Box::new(Expr::Num(1.0))));
    }

    #[test]
    fn term_without_differential_is_rejected() {
        let err = parse("d_x = mu*d_t + 1").unwrap_err();
        assert!(err.message.contains("every term"), "{}", err.message);
    }

    #[test]
    fn differential_outside_sde_is_rejected() {
        let err = parse("y = x*d_t").unwrap_err();
        assert!(err.message.contains("outside an SDE"), "{}", err.message);
        assert_eq!((err.span.line, err.span.col), (1, 7));
        assert!(parse("d_x = exp(d_t)").is_err());
        assert!(parse("d_x = d_t*d_W").is_err());
    }

    #[test]
    fn duplicate_component_is_rejected() {
        let err = parse("x = 1\nx = 2").unwrap_err();
        assert!(err.message.contains("duplicate component"));
        assert_eq!(err.span.line, 2);
    }

    #[test]
    fn kinds_follow_statement_shape() {
        let ast = parse("m = max(m, s_new)\nv = sqrt(q)\ng(x) = x*x").unwrap();
        assert_eq!(ast.components[0].kind, ComponentKind::Update);
        assert_eq!(ast.components[1].kind, ComponentKind::Function);
        assert_eq!(ast.function_defs[0].params, vec!["x".to_string()]);
    }

    #[test]
    fn conditional_and_comparison() {
        let ast = parse("T: p pays a if (b < c) else zeroslike(a) nodiscount").unwrap();
        match &ast.payoffs[0].payoff {
            Expr::Cond { cond, .. } => assert!(matches!(**cond, Expr::Compare { op: CmpOp::Lt, .. })),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(ast.payoffs[0].discount, Discount::None);
    }

    #[test]
    fn correlation_statement() {
        let ast = parse("d_W*d_Z=rho").unwrap();
        assert_eq!(ast.correlations[0].a, "W");
        assert_eq!(ast.correlations[0].b, "Z");
        assert!(parse("d_W*d_W=rho").is_err());
        assert!(parse("d_W*d_Z=rho\nd_Z*d_W=0.1").is_err());
    }

    #[test]
    fn malformed_statement_reports_position() {
        let err = parse("x = (1 + 2\n").unwrap_err();
        assert_eq!(err.span.line, 1);
        let err = parse("init x = 2").unwrap_err();
        assert!(err.message.contains("expected"));
    }
}
