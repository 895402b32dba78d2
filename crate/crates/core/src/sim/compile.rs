use std::collections::BTreeMap;

use super::*;
use crate::graph::{CmpKind, Shape};
use crate::script::validate::NEW_SUFFIX;
use crate::script::{BinOp, CmpOp, ComponentKind, Discount, Expr, ScriptAst, ValidatedScript};

/// Tag bit marking nodes that assemble or factor the correlation matrix.
pub(super) const CHOLESKY_BIT: u32 = 1 << 31;

type State = BTreeMap<String, NodeId>;

#[derive(Clone, Copy)]
struct Scope<'a> {
    comps: &'a State,
    /// Current-step values visible as `name_new` (updates only).
    new: Option<&'a State>,
    t: f64,
    formals: &'a [(String, NodeId)],
    payoff: bool,
}

enum ParamNode {
    Plain(NodeId),
    Piecewise { breaks: Vec<f64>, pieces: Vec<NodeId> },
}

struct Compiler<'a> {
    g: Graph,
    ast: &'a ScriptAst,
    grid: TimeGrid,
    params: BTreeMap<String, ParamNode>,
    time_values: &'a BTreeMap<String, f64>,
    history: Vec<State>,
}

fn cmp_kind(op: CmpOp) -> CmpKind {
    match op {
        CmpOp::Lt => CmpKind::Lt,
        CmpOp::Le => CmpKind::Le,
        CmpOp::Gt => CmpKind::Gt,
        CmpOp::Ge => CmpKind::Ge,
        CmpOp::Eq => CmpKind::Eq,
        CmpOp::Ne => CmpKind::Ne,
    }
}

/// Evaluates an observation-time expression to a number.
pub(super) fn eval_time(e: &Expr, ast: &ScriptAst, env: &BTreeMap<String, f64>) -> Result<f64, SimError> {
    let rec = |x: &Expr| eval_time(x, ast, env);
    Ok(match e {
        Expr::Num(v) => *v,
        Expr::Ident { name, .. } => *env
            .get(name)
            .ok_or_else(|| SimError::Eval(format!("`{name}` cannot be used in an observation time")))?,
        Expr::Neg(a) => -rec(a)?,
        Expr::Binary { op, lhs, rhs } => {
            let (a, b) = (rec(lhs)?, rec(rhs)?);
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
            }
        }
        Expr::Compare { op, lhs, rhs } => f64::from(u8::from(cmp_kind(*op).apply(rec(lhs)?, rec(rhs)?))),
        Expr::Cond { cond, then, otherwise } => {
            if rec(cond)? != 0.0 {
                rec(then)?
            } else {
                rec(otherwise)?
            }
        }
        Expr::Call { func, args, .. } => {
            let vals = args.iter().map(rec).collect::<Result<Vec<_>, _>>()?;
            match (func.as_str(), vals.as_slice()) {
                ("exp", [x]) => x.exp(),
                ("log", [x]) => x.ln(),
                ("sqrt", [x]) => x.sqrt(),
                ("abs", [x]) => x.abs(),
                ("positivepart", [x]) => x.max(0.0),
                ("oneslike", [_]) => 1.0,
                ("zeroslike", [_]) => 0.0,
                ("max", [x, y]) => x.max(*y),
                ("min", [x, y]) => x.min(*y),
                _ => {
                    let f = ast
                        .function(func)
                        .ok_or_else(|| SimError::Eval(format!("`{func}` cannot be used in an observation time")))?;
                    let mut inner = env.clone();
                    for (p, v) in f.params.iter().zip(vals) {
                        inner.insert(p.clone(), v);
                    }
                    eval_time(&f.body, ast, &inner)?
                }
            }
        }
        Expr::Index { .. } | Expr::List(_) => return Err(SimError::Eval("invalid observation-time expression".into())),
    })
}

/// Payoff observation times and every time-indexed observation, in payoff order.
fn observation_times(ast: &ScriptAst, time_values: &BTreeMap<String, f64>) -> Result<(Vec<f64>, Vec<f64>), SimError> {
    let mut at_times = Vec::new();
    let mut all = Vec::new();
    for p in &ast.payoffs {
        let at = eval_time(&p.at_time, ast, time_values)?;
        let mut env = time_values.clone();
        env.insert("t".into(), at);
        let mut idx_exprs = Vec::new();
        let mut visit = |e: &Expr| {
            e.walk(&mut |x| {
                if let Expr::Index { time, .. } = x {
                    idx_exprs.push((**time).clone());
                }
            })
        };
        visit(&p.payoff);
        if let Discount::By(d) = &p.discount {
            visit(d);
        }
        for e in idx_exprs {
            all.push(eval_time(&e, ast, &env)?);
        }
        at_times.push(at);
        all.push(at);
    }
    Ok((at_times, all))
}

impl<'a> Compiler<'a> {
    fn err<T>(msg: String) -> Result<T, SimError> {
        Err(SimError::Eval(msg))
    }

    fn param(&mut self, name: &str, t: f64) -> Option<NodeId> {
        match self.params.get(name)? {
            ParamNode::Plain(id) => Some(*id),
            ParamNode::Piecewise { breaks, pieces } => Some(pieces[Binding::piece_at(breaks, t)]),
        }
    }

    fn like(&mut self, x: NodeId, v: f64) -> NodeId {
        match self.g.shape(x) {
            Shape::Batch => self.g.fill(v),
            Shape::Scalar => self.g.constant(v),
        }
    }

    fn expr(&mut self, e: &Expr, sc: Scope) -> Result<NodeId, SimError> {
        Ok(match e {
            Expr::Num(v) => self.g.constant(*v),
            Expr::Ident { name, .. } => {
                if let Some((_, id)) = sc.formals.iter().rev().find(|(f, _)| f == name) {
                    return Ok(*id);
                }
                if name == "t" {
                    return Ok(self.g.constant(sc.t));
                }
                if let Some(id) = sc.comps.get(name) {
                    return Ok(*id);
                }
                if let (Some(new), Some(base)) = (sc.new, name.strip_suffix(NEW_SUFFIX)) {
                    if let Some(id) = new.get(base) {
                        return Ok(*id);
                    }
                }
                if let Some(v) = self.time_values.get(name) {
                    return Ok(self.g.constant(*v));
                }
                match self.param(name, sc.t) {
                    Some(id) => id,
                    None => return Err(SimError::Unbound(name.clone())),
                }
            }
            Expr::Neg(a) => {
                let a = self.expr(a, sc)?;
                self.g.neg(a)
            }
            Expr::Binary { op, lhs, rhs } => {
                let a = self.expr(lhs, sc)?;
                let b = self.expr(rhs, sc)?;
                match op {
                    BinOp::Add => self.g.add(a, b),
                    BinOp::Sub => self.g.sub(a, b),
                    BinOp::Mul => self.g.mul(a, b),
                    BinOp::Div => self.g.div(a, b),
                }
            }
            Expr::Compare { op, lhs, rhs } => {
                let a = self.expr(lhs, sc)?;
                let b = self.expr(rhs, sc)?;
                self.g.compare(cmp_kind(*op), a, b)
            }
            Expr::Cond { cond, then, otherwise } => {
                let c = self.expr(cond, sc)?;
                let a = self.expr(then, sc)?;
                let b = self.expr(otherwise, sc)?;
                self.g.select(c, a, b)
            }
            Expr::Call { func, args, .. } => {
                if func == "ones" || func == "zeros" {
                    return Ok(self.g.fill(if func == "ones" { 1.0 } else { 0.0 }));
                }
                let vals = args.iter().map(|a| self.expr(a, sc)).collect::<Result<Vec<_>, _>>()?;
                match (func.as_str(), vals.as_slice()) {
                    ("exp", [x]) => self.g.exp(*x),
                    ("log", [x]) => self.g.log(*x),
                    ("sqrt", [x]) => self.g.sqrt(*x),
                    ("abs", [x]) => self.g.abs(*x),
                    ("positivepart", [x]) => self.g.positive_part(*x),
                    ("max", [x, y]) => self.g.max(*x, *y),
                    ("min", [x, y]) => self.g.min(*x, *y),
                    ("oneslike", [x]) => self.like(*x, 1.0),
                    ("zeroslike", [x]) => self.like(*x, 0.0),
                    _ => {
                        let ast = self.ast;
                        let f = match ast.function(func) {
                            Some(f) if f.params.len() == vals.len() => f,
                            _ => return Self::err(format!("bad call to `{func}`")),
                        };
                        let formals: Vec<(String, NodeId)> = f.params.iter().cloned().zip(vals).collect();
                        let inner = Scope { formals: &formals, ..sc };
                        self.expr(&f.body, inner)?
                    }
                }
            }
            Expr::Index { name, time, .. } => {
                if !sc.payoff {
                    return Self::err(format!("`{name}[...]` outside a payoff"));
                }
                let mut env = self.time_values.clone();
                env.insert("t".into(), sc.t);
                let tau = eval_time(time, self.ast, &env)?;
                let idx = self.grid.snap(tau)?;
                match self.history[idx].get(name) {
                    Some(id) => *id,
                    None => return Self::err(format!("`{name}` is not a component")),
                }
            }
            Expr::List(_) => return Self::err("shape list outside ones/zeros".into()),
        })
    }

    fn const_of(&self, id: NodeId) -> Option<f64> {
        match self.g.node(id).op {
            crate::graph::Op::Const(v) => Some(v),
            _ => None,
        }
    }

    /// Lower-triangular Cholesky factor of the correlation matrix, built from
    /// graph nodes so it may depend on the state path by path.
    fn cholesky(&mut self, sigma: &[Vec<NodeId>]) -> Vec<Vec<NodeId>> {
        let m = sigma.len();
        let zero = self.g.constant(0.0);
        let mut l = vec![vec![zero; m]; m];
        for j in 0..m {
            let mut s = sigma[j][j];
            for k in 0..j {
                if self.const_of(l[j][k]) == Some(0.0) {
                    continue;
                }
                let sq = self.g.mul(l[j][k], l[j][k]);
                s = self.g.sub(s, sq);
            }
            l[j][j] = self.g.sqrt(s);
            for r in j + 1..m {
                let mut s = sigma[r][j];
                for k in 0..j {
                    if self.const_of(l[r][k]) == Some(0.0) || self.const_of(l[j][k]) == Some(0.0) {
                        continue;
                    }
                    let p = self.g.mul(l[r][k], l[j][k]);
                    s = self.g.sub(s, p);
                }
                l[r][j] = if self.const_of(s) == Some(0.0) {
                    zero
                } else {
                    self.g.div(s, l[j][j])
                };
            }
        }
        l
    }
}

fn numeric_cholesky_ok(sigma: &[Vec<f64>]) -> bool {
    let m = sigma.len();
    let mut l = vec![vec![0.0; m]; m];
    for j in 0..m {
        let s = sigma[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if !(s > 0.0) {
            return false;
        }
        l[j][j] = s.sqrt();
        for r in j + 1..m {
            l[r][j] = (sigma[r][j] - (0..j).map(|k| l[r][k] * l[j][k]).sum::<f64>()) / l[j][j];
        }
    }
    true
}

impl Simulator {
    /// Unrolls the script over the grid implied by `config.grid` and the
    /// payoff observation times.
    ///
    /// Bindings fix which parameters are scalar, per-path or piecewise and
    /// the values of parameters that set observation times; other values may
    /// change between runs.
    pub fn compile(script: &ValidatedScript, bindings: &Bindings, config: &SimConfig) -> Result<Simulator, SimError> {
        let ast = &script.ast;

        let mut time_values = BTreeMap::new();
        for name in &script.time_symbols {
            match bindings.get(name) {
                Some(Binding::Scalar(v)) => {
                    time_values.insert(name.clone(), *v);
                }
                Some(_) => return Err(SimError::TimeSymbolNotScalar(name.clone())),
                None => return Err(SimError::Unbound(name.clone())),
            }
        }
        for d in &config.diff_wrt {
            if time_values.contains_key(d) {
                return Err(SimError::BadDiffWrt(d.clone()));
            }
        }
        let (at_times, observations) = observation_times(ast, &time_values)?;
        let grid = TimeGrid::build(&config.grid, &observations)?;

        let mut c = Compiler {
            g: Graph::new(),
            ast,
            grid,
            params: BTreeMap::new(),
            time_values: &time_values,
            history: Vec::new(),
        };

        // Parameter inputs, in name order.
        let mut params = Vec::new();
        for (name, binding) in bindings {
            let wanted = script.externals.contains(name) || config.diff_wrt.iter().any(|d| d == name || d.starts_with(&format!("{name}@")));
            if !wanted || time_values.contains_key(name) {
                continue;
            }
            let mut make = |c: &mut Compiler, input_name: String, b: &Binding| -> Result<NodeId, SimError> {
                let per_path = match b {
                    Binding::Scalar(_) => false,
                    Binding::PerPath(_) => true,
                    Binding::Piecewise { .. } => return Err(SimError::BindingShape(input_name)),
                };
                let id = c.g.input(&input_name, if per_path { Shape::Batch } else { Shape::Scalar });
                params.push(ParamInput {
                    slot: c.g.input_slot(&input_name).unwrap(),
                    name: input_name,
                    per_path,
                });
                Ok(id)
            };
            let node = match binding {
                Binding::Piecewise { breaks, pieces } => {
                    if pieces.len() != breaks.len() + 1 || breaks.windows(2).any(|w| !(w[1] > w[0])) {
                        return Err(SimError::BindingShape(name.clone()));
                    }
                    let ids = pieces
                        .iter()
                        .enumerate()
                        .map(|(k, p)| make(&mut c, piece_name(name, k), p))
                        .collect::<Result<Vec<_>, _>>()?;
                    ParamNode::Piecewise {
                        breaks: breaks.clone(),
                        pieces: ids,
                    }
                }
                b => ParamNode::Plain(make(&mut c, name.clone(), b)?),
            };
            c.params.insert(name.clone(), node);
        }
        for name in &script.externals {
            if !bindings.contains_key(name) {
                return Err(SimError::Unbound(name.clone()));
            }
        }
        let diff_slots = config
            .diff_wrt
            .iter()
            .map(|d| {
                params
                    .iter()
                    .find(|p| &p.name == d)
                    .map(|p| p.slot)
                    .ok_or_else(|| SimError::BadDiffWrt(d.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;

        // Initial state: inits, then function components from it.
        let empty = State::new();
        let mut state = State::new();
        for comp in &ast.components {
            if comp.kind != ComponentKind::Function {
                let init = &ast.inits[&comp.name].expr;
                let sc = Scope {
                    comps: &empty,
                    new: None,
                    t: 0.0,
                    formals: &[],
                    payoff: false,
                };
                let id = c.expr(init, sc)?;
                state.insert(comp.name.clone(), id);
            }
        }
        for comp in &ast.components {
            if comp.kind == ComponentKind::Function {
                let sc = Scope {
                    comps: &state,
                    new: None,
                    t: 0.0,
                    formals: &[],
                    payoff: false,
                };
                let id = c.expr(comp.expr.as_ref().unwrap(), sc)?;
                state.insert(comp.name.clone(), id);
            }
        }
        c.history.push(state.clone());

        let brownians = script.brownians.clone();
        let m = brownians.len();
        let mut checked_constant_corr = false;
        let mut noise_slots = Vec::with_capacity(c.grid.n_steps());

        for step in 0..c.grid.n_steps() {
            let (t0, t1) = (c.grid.times()[step], c.grid.times()[step + 1]);
            let dt = t1 - t0;
            c.g.set_tag(step as u32);
            let sc = Scope {
                comps: &state,
                new: None,
                t: t0,
                formals: &[],
                payoff: false,
            };

            let mut slots = Vec::with_capacity(m);
            let mut xi = Vec::with_capacity(m);
            for j in 0..m {
                let name = format!("xi{step}_{j}");
                xi.push(c.g.input(&name, Shape::Batch));
                slots.push(c.g.input_slot(&name).unwrap());
            }
            noise_slots.push(slots);

            let sqrt_dt = c.g.constant(dt.sqrt());
            let dw: Vec<NodeId> = if ast.correlations.is_empty() {
                xi.iter().map(|&x| c.g.mul(sqrt_dt, x)).collect()
            } else {
                c.g.set_tag(step as u32 | CHOLESKY_BIT);
                let one = c.g.constant(1.0);
                let zero = c.g.constant(0.0);
                let mut sigma = vec![vec![zero; m]; m];
                for (j, row) in sigma.iter_mut().enumerate() {
                    row[j] = one;
                }
                for corr in &ast.correlations {
                    let i = brownians.iter().position(|b| b == &corr.a).unwrap();
                    let j = brownians.iter().position(|b| b == &corr.b).unwrap();
                    let v = c.expr(&corr.expr, sc)?;
                    sigma[i][j] = v;
                    sigma[j][i] = v;
                }
                if !checked_constant_corr {
                    checked_constant_corr = true;
                    let consts: Option<Vec<Vec<f64>>> = sigma.iter().map(|row| row.iter().map(|&id| c.const_of(id)).collect()).collect();
                    if let Some(s) = consts {
                        if !numeric_cholesky_ok(&s) {
                            return Err(SimError::NotPositiveDefinite);
                        }
                    }
                }
                let l = c.cholesky(&sigma);
                c.g.set_tag(step as u32);
                (0..m)
                    .map(|r| {
                        let mut acc: Option<NodeId> = None;
                        for j in 0..=r {
                            if c.const_of(l[r][j]) == Some(0.0) {
                                continue;
                            }
                            let term = c.g.mul(l[r][j], xi[j]);
                            acc = Some(match acc {
                                None => term,
                                Some(a) => c.g.add(a, term),
                            });
                        }
                        let sum = acc.unwrap_or(zero);
                        c.g.mul(sqrt_dt, sum)
                    })
                    .collect()
            };

            let mut next = state.clone();
            let dt_node = c.g.constant(dt);
            for &ci in &script.order {
                let comp = &ast.components[ci];
                if comp.kind != ComponentKind::Sde {
                    continue;
                }
                let mut x = state[&comp.name];
                if let Some(drift) = &comp.drift {
                    let d = c.expr(drift, sc)?;
                    let inc = c.g.mul(d, dt_node);
                    x = c.g.add(x, inc);
                }
                for v in &comp.vol_terms {
                    let k = brownians.iter().position(|b| b == &v.brownian).unwrap();
                    let s = c.expr(&v.coeff, sc)?;
                    let inc = c.g.mul(s, dw[k]);
                    x = c.g.add(x, inc);
                }
                next.insert(comp.name.clone(), x);
            }
            for &ci in &script.order {
                let comp = &ast.components[ci];
                let id = match comp.kind {
                    ComponentKind::Sde => continue,
                    ComponentKind::Function => {
                        let sc_new = Scope {
                            comps: &next,
                            new: None,
                            t: t1,
                            formals: &[],
                            payoff: false,
                        };
                        c.expr(comp.expr.as_ref().unwrap(), sc_new)?
                    }
                    ComponentKind::Update => {
                        let sc_upd = Scope {
                            comps: &state,
                            new: Some(&next),
                            t: t1,
                            formals: &[],
                            payoff: false,
                        };
                        c.expr(comp.expr.as_ref().unwrap(), sc_upd)?
                    }
                };
                next.insert(comp.name.clone(), id);
            }
            state = next;
            c.history.push(state.clone());
        }

        c.g.set_tag(c.grid.n_steps() as u32);
        let mut payoff_nodes = Vec::new();
        for (p, &at) in ast.payoffs.iter().zip(&at_times) {
            let idx = c.grid.snap(at)?;
            let snapshot = c.history[idx].clone();
            let sc = Scope {
                comps: &snapshot,
                new: None,
                t: at,
                formals: &[],
                payoff: true,
            };
            let mut v = c.expr(&p.payoff, sc)?;
            if let Discount::By(d) = &p.discount {
                let df = c.expr(d, sc)?;
                v = c.g.mul(v, df);
            }
            c.g.mark_output(v);
            payoff_nodes.push(v);
        }

        Ok(Simulator {
            graph: c.g,
            grid: c.grid,
            payoff_names: ast.payoffs.iter().map(|p| p.name.clone()).collect(),
            payoff_nodes,
            params,
            noise_slots,
            brownians,
            diff_wrt: config.diff_wrt.clone(),
            diff_slots,
            time_values,
        })
    }
}
