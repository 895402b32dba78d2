use super::{Graph, GraphError, NodeId, Op, Shape};

/// Forward values of one evaluation, stored in a flat arena.
#[derive(Debug, Clone)]
pub struct Tape {
    width: usize,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl Tape {
    /// Batch width of this evaluation.
    pub fn width(&self) -> usize {
        self.width
    }

    /// One value for scalar nodes, `width` values for batch nodes.
    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.values[self.offsets[id]..self.offsets[id + 1]]
    }
}

#[inline(always)]
fn at(s: &[f64], stride: usize, j: usize) -> f64 {
    s[j * stride]
}

#[inline(always)]
fn stride(s: &[f64]) -> usize {
    usize::from(s.len() > 1)
}

/// Value of an elementwise op on scalar arguments.
pub(super) fn apply_scalar(op: &Op, a: &[f64]) -> f64 {
    match op {
        Op::Add => a[0] + a[1],
        Op::Sub => a[0] - a[1],
        Op::Mul => a[0] * a[1],
        Op::Div => a[0] / a[1],
        Op::Neg => -a[0],
        Op::Exp => a[0].exp(),
        Op::Log => a[0].ln(),
        Op::Sqrt => a[0].sqrt(),
        Op::Abs => a[0].abs(),
        Op::Max => a[0].max(a[1]),
        Op::Min => a[0].min(a[1]),
        Op::PositivePart => a[0].max(0.0),
        Op::Compare(k) => f64::from(u8::from(k.apply(a[0], a[1]))),
        Op::Select => {
            if a[0] != 0.0 {
                a[1]
            } else {
                a[2]
            }
        }
        Op::Activation(act) => act.value(a[0]),
        Op::Affine { coeffs, bias } => coeffs.iter().zip(a).map(|(c, x)| c * x).sum::<f64>() + bias,
        Op::Const(_) | Op::Input(_) | Op::Fill(_) | Op::ReduceMean => unreachable!("not elementwise"),
    }
}

fn unary(out: &mut [f64], a: &[f64], f: impl Fn(f64) -> f64) {
    let sa = stride(a);
    for (j, o) in out.iter_mut().enumerate() {
        *o = f(at(a, sa, j));
    }
}

fn binary(out: &mut [f64], a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) {
    match (a.len() == out.len(), b.len() == out.len()) {
        (true, true) => {
            for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
                *o = f(x, y);
            }
        }
        (true, false) => {
            let y = b[0];
            for (o, &x) in out.iter_mut().zip(a) {
                *o = f(x, y);
            }
        }
        (false, true) => {
            let x = a[0];
            for (o, &y) in out.iter_mut().zip(b) {
                *o = f(x, y);
            }
        }
        (false, false) => {
            let v = f(a[0], b[0]);
            out.iter_mut().for_each(|o| *o = v);
        }
    }
}

pub(super) fn forward(g: &Graph, slots: &[&[f64]]) -> Result<Tape, GraphError> {
    if slots.len() != g.inputs.len() {
        let missing = g.inputs.get(slots.len()).map(|(n, _)| n.clone()).unwrap_or_default();
        return Err(GraphError::UnboundInput(missing));
    }
    let mut width = 1;
    for ((name, id), s) in g.inputs.iter().zip(slots) {
        if g.nodes[*id].shape == Shape::Batch && s.len() > 1 {
            if width > 1 && s.len() != width {
                return Err(GraphError::ShapeMismatch {
                    name: name.clone(),
                    expected: format!("{width} (batch)"),
                    got: s.len(),
                });
            }
            width = s.len();
        }
    }
    for ((name, id), s) in g.inputs.iter().zip(slots) {
        let expected = match g.nodes[*id].shape {
            Shape::Scalar => 1,
            Shape::Batch => width,
        };
        if s.len() != expected {
            return Err(GraphError::ShapeMismatch {
                name: name.clone(),
                expected: if expected == 1 {
                    "1 (scalar)".into()
                } else {
                    format!("{width} (batch)")
                },
                got: s.len(),
            });
        }
    }

    let mut offsets = Vec::with_capacity(g.nodes.len() + 1);
    let mut total = 0;
    for n in &g.nodes {
        offsets.push(total);
        total += if n.shape == Shape::Batch { width } else { 1 };
    }
    offsets.push(total);
    let mut values = vec![0.0; total];

    for (id, node) in g.nodes.iter().enumerate() {
        let (done, rest) = values.split_at_mut(offsets[id]);
        let out = &mut rest[..offsets[id + 1] - offsets[id]];
        let arg = |k: usize| -> &[f64] {
            let a = node.args[k];
            &done[offsets[a]..offsets[a + 1]]
        };
        match &node.op {
            Op::Const(v) | Op::Fill(v) => out.iter_mut().for_each(|o| *o = *v),
            Op::Input(slot) => out.copy_from_slice(slots[*slot]),
            Op::Add => binary(out, arg(0), arg(1), |x, y| x + y),
            Op::Sub => binary(out, arg(0), arg(1), |x, y| x - y),
            Op::Mul => binary(out, arg(0), arg(1), |x, y| x * y),
            Op::Div => binary(out, arg(0), arg(1), |x, y| x / y),
            Op::Max => binary(out, arg(0), arg(1), f64::max),
            Op::Min => binary(out, arg(0), arg(1), f64::min),
            Op::Compare(k) => {
                let k = *k;
                binary(out, arg(0), arg(1), move |x, y| f64::from(u8::from(k.apply(x, y))))
            }
            Op::Neg => unary(out, arg(0), |x| -x),
            Op::Exp => unary(out, arg(0), f64::exp),
            Op::Log => unary(out, arg(0), f64::ln),
            Op::Sqrt => unary(out, arg(0), f64::sqrt),
            Op::Abs => unary(out, arg(0), f64::abs),
            Op::PositivePart => unary(out, arg(0), |x| x.max(0.0)),
            Op::Activation(act) => {
                let act = *act;
                unary(out, arg(0), move |x| act.value(x))
            }
            Op::Select => {
                let (c, a, b) = (arg(0), arg(1), arg(2));
                let (sc, sa, sb) = (stride(c), stride(a), stride(b));
                for (j, o) in out.iter_mut().enumerate() {
                    *o = if at(c, sc, j) != 0.0 { at(a, sa, j) } else { at(b, sb, j) };
                }
            }
            Op::Affine { coeffs, bias } => {
                out.iter_mut().for_each(|o| *o = *bias);
                for (k, &c) in coeffs.iter().enumerate() {
                    let a = arg(k);
                    let sa = stride(a);
                    for (j, o) in out.iter_mut().enumerate() {
                        *o += c * at(a, sa, j);
                    }
                }
            }
            Op::ReduceMean => {
                let a = arg(0);
                out[0] = a.iter().sum::<f64>() / a.len() as f64;
            }
        }
        if let Some(lane) = out.iter().position(|v| !v.is_finite()) {
            return Err(GraphError::NonFinite { node: id, lane });
        }
    }
    Ok(Tape { width, offsets, values })
}

/// Reverse sweep over the nodes that `output` depends on. Adjoints are kept
/// per lane for every node, including scalars.
pub(super) fn backward(g: &Graph, tape: &Tape, output: NodeId, wrt: &[usize]) -> Vec<Vec<f64>> {
    let n = tape.width;
    let mut live = vec![false; output + 1];
    live[output] = true;
    for id in (0..=output).rev() {
        if live[id] {
            for &a in &g.nodes[id].args {
                live[a] = true;
            }
        }
    }
    // Compact adjoint storage for live nodes only.
    let mut slot = vec![usize::MAX; output + 1];
    let mut count = 0;
    for id in 0..=output {
        if live[id] {
            slot[id] = count;
            count += 1;
        }
    }
    let mut adj = vec![0.0; count * n];

    let out_shape = g.nodes[output].shape;
    {
        let s = slot[output] * n;
        match out_shape {
            Shape::Batch => adj[s..s + n].iter_mut().for_each(|v| *v = 1.0),
            Shape::Scalar => adj[s] = 1.0,
        }
    }

    for id in (0..=output).rev() {
        if !live[id] || g.nodes[id].args.is_empty() {
            continue;
        }
        let node = &g.nodes[id];
        let (lo, hi) = adj.split_at_mut(slot[id] * n);
        let gbar = &hi[..n];
        if gbar.iter().all(|&v| v == 0.0) {
            continue;
        }
        let y = tape.value(id);
        let sy = stride(y);
        let val = |k: usize| tape.value(node.args[k]);
        let target = |k: usize| slot[node.args[k]] * n;

        // Accumulates gbar[j]·d(j) into the adjoint lanes of argument k.
        macro_rules! acc {
            ($k:expr, |$j:ident| $d:expr) => {{
                let t = target($k);
                let dst = &mut lo[t..t + n];
                for ($j, (o, &gb)) in dst.iter_mut().zip(gbar).enumerate() {
                    *o += gb * $d;
                }
            }};
        }

        match &node.op {
            Op::Const(_) | Op::Input(_) | Op::Fill(_) | Op::Compare(_) => {}
            Op::Add => {
                acc!(0, |_j| 1.0);
                acc!(1, |_j| 1.0);
            }
            Op::Sub => {
                acc!(0, |_j| 1.0);
                acc!(1, |_j| -1.0);
            }
            Op::Mul => {
                let (a, b) = (val(0), val(1));
                let (sa, sb) = (stride(a), stride(b));
                acc!(0, |j| at(b, sb, j));
                acc!(1, |j| at(a, sa, j));
            }
            Op::Div => {
                let b = val(1);
                let sb = stride(b);
                acc!(0, |j| 1.0 / at(b, sb, j));
                acc!(1, |j| -at(y, sy, j) / at(b, sb, j));
            }
            Op::Neg => acc!(0, |_j| -1.0),
            Op::Exp => acc!(0, |j| at(y, sy, j)),
            Op::Log => {
                let a = val(0);
                let sa = stride(a);
                acc!(0, |j| 1.0 / at(a, sa, j));
            }
            Op::Sqrt => acc!(0, |j| {
                let r = at(y, sy, j);
                // Derivative at 0 is taken as 0 so that full-truncation paths
                // stuck at zero variance do not produce 0·∞.
                if r > 0.0 {
                    0.5 / r
                } else {
                    0.0
                }
            }),
            Op::Abs => {
                let a = val(0);
                let sa = stride(a);
                acc!(0, |j| {
                    let x = at(a, sa, j);
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
            }
            Op::PositivePart => {
                let a = val(0);
                let sa = stride(a);
                acc!(0, |j| if at(a, sa, j) > 0.0 { 1.0 } else { 0.0 });
            }
            Op::Max | Op::Min => {
                let (a, b) = (val(0), val(1));
                let (sa, sb) = (stride(a), stride(b));
                let sign = if node.op == Op::Max { 1.0 } else { -1.0 };
                let route = |j: usize| {
                    let d = sign * (at(a, sa, j) - at(b, sb, j));
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        0.0
                    } else {
                        0.5
                    }
                };
                acc!(0, |j| route(j));
                acc!(1, |j| 1.0 - route(j));
            }
            Op::Select => {
                let c = val(0);
                let sc = stride(c);
                acc!(1, |j| if at(c, sc, j) != 0.0 { 1.0 } else { 0.0 });
                acc!(2, |j| if at(c, sc, j) != 0.0 { 0.0 } else { 1.0 });
            }
            Op::Affine { coeffs, .. } => {
                for (k, &c) in coeffs.iter().enumerate() {
                    acc!(k, |_j| c);
                }
            }
            Op::Activation(act) => {
                let act = *act;
                let a = val(0);
                let sa = stride(a);
                acc!(0, |j| act.d1(at(a, sa, j)));
            }
            Op::ReduceMean => {
                let a = node.args[0];
                let t = slot[a] * n;
                if g.nodes[a].shape == Shape::Batch {
                    let share = gbar.iter().sum::<f64>() / n as f64;
                    lo[t..t + n].iter_mut().for_each(|o| *o += share);
                } else {
                    for (o, &gb) in lo[t..t + n].iter_mut().zip(gbar) {
                        *o += gb;
                    }
                }
            }
        }
    }

    wrt.iter()
        .map(|&s| {
            let id = g.inputs[s].1;
            let lanes = if id <= output && live[id] {
                adj[slot[id] * n..slot[id] * n + n].to_vec()
            } else {
                vec![0.0; n]
            };
            if g.nodes[id].shape == Shape::Scalar && out_shape == Shape::Scalar {
                vec![lanes.iter().sum()]
            } else {
                lanes
            }
        })
        .collect()
}
