use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// How the shapes of a two-input elementwise op line up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pair {
    /// Identical shapes.
    Same,
    /// Left operand is a single element, broadcast over the right.
    ScalarLhs,
    /// Right operand is a single element, broadcast over the left.
    ScalarRhs,
    /// Right operand is rank-1 and matches the left's last axis (bias add).
    BiasRhs,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: Var, b: Var },
    Add { a: Var, b: Var, pair: Pair },
    Mul { a: Var, b: Var, pair: Pair },
    Div { a: Var, b: Var, pair: Pair },
    MulScalar { a: Var, c: f64 },
    AddScalar { a: Var },
    Relu { a: Var },
    Tanh { a: Var },
    Exp { a: Var },
    Log { a: Var },
    SoftmaxLastAxis { a: Var },
    Mean { a: Var },
    Sum { a: Var },
    MinScalar { a: Var, c: f64 },
    MaxScalar { a: Var, c: f64 },
    ConcatLastAxis { parts: Vec<Var>, widths: Vec<usize> },
    SliceLastAxis { a: Var, start: usize },
    Reparameterize { mu: Var, logvar: Var, eps: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

impl Node {
    fn numel(&self) -> usize {
        self.values.len()
    }

    fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }
}

/// Reverse-mode tape. Operations are recorded in forward order; node ids are
/// already a topological order, so [`Tape::backward`] is a single reverse
/// sweep. Gradients for repeated uses of a value accumulate additively.
///
/// A tape is built fresh for every forward pass and allows exactly one
/// backward call.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    backward_ran: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        debug_assert!(
            values.iter().all(|v| v.is_finite()),
            "non-finite values out of {:?}",
            op_name(&op)
        );
        let grad = vec![0.0; values.len()];
        self.nodes.push(Node {
            shape,
            values,
            grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record an input tensor as a leaf.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf)
    }

    /// Record a named parameter as a leaf. Registering the same name again
    /// returns the existing node, so a network can be applied several times
    /// on one tape while its weights stay a single node each.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.leaf(t);
        self.params.insert(name.to_string(), v);
        v
    }

    /// Gradient of a named parameter, if it was registered on this tape.
    pub fn param_grad(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name).map(|&v| self.grad(v))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].numel(), 1);
        self.nodes[v.0].values[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.values(v).to_vec())
            .expect("tape node is internally consistent")
    }

    // ── forward ops ──────────────────────────────────────────────────

    /// `(m, k) @ (k, n) -> (m, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_acc(self.values(a), self.values(b), &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::Matmul { a, b }))
    }

    fn classify_pair(&self, op: &'static str, a: Var, b: Var, bias_ok: bool) -> Result<Pair> {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if na.shape == nb.shape {
            Ok(Pair::Same)
        } else if nb.numel() == 1 {
            Ok(Pair::ScalarRhs)
        } else if na.numel() == 1 {
            Ok(Pair::ScalarLhs)
        } else if bias_ok && nb.shape.len() == 1 && nb.numel() == na.last_dim() {
            Ok(Pair::BiasRhs)
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: na.shape.clone(),
                rhs: nb.shape.clone(),
            })
        }
    }

    /// Elementwise addition. The right operand may also be a single element
    /// (broadcast everywhere) or a rank-1 bias matching the last axis.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let pair = self.classify_pair("add", a, b, true)?;
        let (av, bv) = (self.values(a), self.values(b));
        let out = match pair {
            Pair::Same => av.iter().zip(bv).map(|(x, y)| x + y).collect(),
            Pair::ScalarRhs => {
                let c = bv[0];
                av.iter().map(|x| x + c).collect()
            }
            Pair::ScalarLhs => {
                let c = av[0];
                bv.iter().map(|y| c + y).collect()
            }
            Pair::BiasRhs => {
                let w = bv.len();
                av.iter()
                    .enumerate()
                    .map(|(i, x)| x + bv[i % w])
                    .collect::<Vec<f64>>()
            }
        };
        let shape = if pair == Pair::ScalarLhs {
            self.shape(b).to_vec()
        } else {
            self.shape(a).to_vec()
        };
        Ok(self.push(shape, out, Op::Add { a, b, pair }))
    }

    /// Elementwise product; either operand may be a single element.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let pair = self.classify_pair("multiply", a, b, false)?;
        let (av, bv) = (self.values(a), self.values(b));
        let out = match pair {
            Pair::Same => av.iter().zip(bv).map(|(x, y)| x * y).collect(),
            Pair::ScalarRhs => {
                let c = bv[0];
                av.iter().map(|x| x * c).collect()
            }
            Pair::ScalarLhs => {
                let c = av[0];
                bv.iter().map(|y| c * y).collect()
            }
            Pair::BiasRhs => unreachable!(),
        };
        let shape = if pair == Pair::ScalarLhs {
            self.shape(b).to_vec()
        } else {
            self.shape(a).to_vec()
        };
        Ok(self.push(shape, out, Op::Mul { a, b, pair }))
    }

    /// Elementwise division; the divisor may be a single element.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let pair = self.classify_pair("divide", a, b, false)?;
        if pair == Pair::ScalarLhs {
            return Err(Error::ShapeMismatch {
                op: "divide",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let (av, bv) = (self.values(a), self.values(b));
        let out = match pair {
            Pair::Same => av.iter().zip(bv).map(|(x, y)| x / y).collect(),
            Pair::ScalarRhs => {
                let c = bv[0];
                av.iter().map(|x| x / c).collect::<Vec<f64>>()
            }
            _ => unreachable!(),
        };
        Ok(self.push(self.shape(a).to_vec(), out, Op::Div { a, b, pair }))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.values(a).iter().map(|x| x * c).collect();
        self.push(self.shape(a).to_vec(), out, Op::MulScalar { a, c })
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.values(a).iter().map(|x| x + c).collect();
        self.push(self.shape(a).to_vec(), out, Op::AddScalar { a })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.values(a).iter().map(|x| x.max(0.0)).collect();
        self.push(self.shape(a).to_vec(), out, Op::Relu { a })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.values(a).iter().map(|x| x.tanh()).collect();
        self.push(self.shape(a).to_vec(), out, Op::Tanh { a })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.values(a).iter().map(|x| x.exp()).collect();
        self.push(self.shape(a).to_vec(), out, Op::Exp { a })
    }

    /// Natural log. Callers are responsible for flooring inputs away from 0.
    pub fn log(&mut self, a: Var) -> Var {
        let out = self.values(a).iter().map(|x| x.ln()).collect();
        self.push(self.shape(a).to_vec(), out, Op::Log { a })
    }

    /// `min(x, c)` elementwise. The subgradient at the kink is taken from the
    /// clamped side, i.e. zero once `x >= c`.
    pub fn min_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.values(a).iter().map(|x| x.min(c)).collect();
        self.push(self.shape(a).to_vec(), out, Op::MinScalar { a, c })
    }

    /// `max(x, c)` elementwise; zero subgradient once `x <= c`.
    pub fn max_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.values(a).iter().map(|x| x.max(c)).collect();
        self.push(self.shape(a).to_vec(), out, Op::MaxScalar { a, c })
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax_last_axis(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "softmax_last_axis",
                lhs: shape,
                rhs: vec![],
            });
        }
        let w = *shape.last().unwrap();
        let av = self.values(a);
        let mut out = vec![0.0; av.len()];
        for (row, orow) in av.chunks_exact(w).zip(out.chunks_exact_mut(w)) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &x) in orow.iter_mut().zip(row) {
                *o = (x - mx).exp();
                z += *o;
            }
            for o in orow.iter_mut() {
                *o /= z;
            }
        }
        Ok(self.push(shape, out, Op::SoftmaxLastAxis { a }))
    }

    /// Mean over all elements, producing a scalar (shape `[]`).
    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.values(a);
        let m = av.iter().sum::<f64>() / av.len() as f64;
        self.push(vec![], vec![m], Op::Mean { a })
    }

    /// Sum over all elements, producing a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.values(a).iter().sum::<f64>();
        self.push(vec![], vec![s], Op::Sum { a })
    }

    /// Concatenate along the last axis; all leading axes must agree.
    pub fn concat_last_axis(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidInput("concat_last_axis of no tensors".into()));
        }
        let first = self.shape(parts[0]).to_vec();
        if first.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "concat_last_axis",
                lhs: first,
                rhs: vec![],
            });
        }
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(Error::ShapeMismatch {
                    op: "concat_last_axis",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.values(p);
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&pv[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(self.push(
            shape,
            out,
            Op::ConcatLastAxis {
                parts: parts.to_vec(),
                widths,
            },
        ))
    }

    /// Take `[start, start+len)` of the last axis.
    pub fn slice_last_axis(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let w = shape.last().copied().unwrap_or(1);
        if shape.is_empty() || len == 0 || start + len > w {
            return Err(Error::InvalidInput(format!(
                "slice_last_axis [{start}, {}) out of last axis {w} for shape {shape:?}",
                start + len
            )));
        }
        let rows = self.nodes[a.0].numel() / w;
        let av = self.values(a);
        let mut out = vec![0.0; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len].copy_from_slice(&av[r * w + start..r * w + start + len]);
        }
        let mut oshape = shape.clone();
        *oshape.last_mut().unwrap() = len;
        Ok(self.push(oshape, out, Op::SliceLastAxis { a, start }))
    }

    /// Gaussian reparameterization `mu + exp(logvar / 2) * eps` with the
    /// standard-normal draw `eps` supplied by the caller.
    pub fn reparameterize(&mut self, mu: Var, logvar: Var, eps: Vec<f64>) -> Result<Var> {
        let (sm, sl) = (self.shape(mu).to_vec(), self.shape(logvar).to_vec());
        if sm != sl || eps.len() != self.nodes[mu.0].numel() {
            return Err(Error::ShapeMismatch {
                op: "gaussian_reparameterize",
                lhs: sm,
                rhs: sl,
            });
        }
        let out: Vec<f64> = self
            .values(mu)
            .iter()
            .zip(self.values(logvar))
            .zip(&eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect();
        Ok(self.push(sm, out, Op::Reparameterize { mu, logvar, eps }))
    }

    /// [`Tape::reparameterize`] drawing `eps` from the given seeded generator.
    pub fn reparameterize_with<R: Rng>(
        &mut self,
        mu: Var,
        logvar: Var,
        rng: &mut R,
    ) -> Result<Var> {
        let n = self.nodes[mu.0].numel();
        let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        self.reparameterize(mu, logvar, eps)
    }

    // ── backward ─────────────────────────────────────────────────────

    fn accumulate(&mut self, v: Var, contrib: &[f64]) {
        let g = &mut self.nodes[v.0].grad;
        debug_assert_eq!(g.len(), contrib.len());
        for (dst, src) in g.iter_mut().zip(contrib) {
            *dst += src;
        }
    }

    /// Populate gradients of every ancestor of `loss` with d loss / d node.
    /// `loss` must be a single element; a tape allows one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_ran {
            return Err(Error::BackwardAlreadyRan);
        }
        let n = &self.nodes[loss.0];
        if n.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: n.shape.clone(),
            });
        }
        self.backward_ran = true;
        self.nodes[loss.0].grad[0] += 1.0;

        for id in (0..=loss.0).rev() {
            let op = self.nodes[id].op.clone();
            let g = self.nodes[id].grad.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (m, k) = {
                        let s = &self.nodes[a.0].shape;
                        (s[0], s[1])
                    };
                    let nn = self.nodes[b.0].shape[1];
                    let mut da = vec![0.0; m * k];
                    matmul_acc_grad_lhs(&g, self.values(b), &mut da, m, k, nn);
                    let mut db = vec![0.0; k * nn];
                    matmul_acc_grad_rhs(self.values(a), &g, &mut db, m, k, nn);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Add { a, b, pair } => match pair {
                    Pair::Same => {
                        self.accumulate(a, &g);
                        self.accumulate(b, &g);
                    }
                    Pair::ScalarRhs => {
                        self.accumulate(a, &g);
                        self.accumulate(b, &[g.iter().sum()]);
                    }
                    Pair::ScalarLhs => {
                        self.accumulate(a, &[g.iter().sum()]);
                        self.accumulate(b, &g);
                    }
                    Pair::BiasRhs => {
                        let w = self.nodes[b.0].numel();
                        let mut db = vec![0.0; w];
                        for (i, gv) in g.iter().enumerate() {
                            db[i % w] += gv;
                        }
                        self.accumulate(a, &g);
                        self.accumulate(b, &db);
                    }
                },
                Op::Mul { a, b, pair } => match pair {
                    Pair::Same => {
                        let da: Vec<f64> =
                            g.iter().zip(self.values(b)).map(|(g, y)| g * y).collect();
                        let db: Vec<f64> =
                            g.iter().zip(self.values(a)).map(|(g, x)| g * x).collect();
                        self.accumulate(a, &da);
                        self.accumulate(b, &db);
                    }
                    Pair::ScalarRhs => {
                        let c = self.values(b)[0];
                        let da: Vec<f64> = g.iter().map(|g| g * c).collect();
                        let db = [g.iter().zip(self.values(a)).map(|(g, x)| g * x).sum()];
                        self.accumulate(a, &da);
                        self.accumulate(b, &db);
                    }
                    Pair::ScalarLhs => {
                        let c = self.values(a)[0];
                        let db: Vec<f64> = g.iter().map(|g| g * c).collect();
                        let da = [g.iter().zip(self.values(b)).map(|(g, y)| g * y).sum()];
                        self.accumulate(a, &da);
                        self.accumulate(b, &db);
                    }
                    Pair::BiasRhs => unreachable!(),
                },
                Op::Div { a, b, pair } => match pair {
                    Pair::Same => {
                        let da: Vec<f64> =
                            g.iter().zip(self.values(b)).map(|(g, y)| g / y).collect();
                        let db: Vec<f64> = g
                            .iter()
                            .zip(self.values(a))
                            .zip(self.values(b))
                            .map(|((g, x), y)| -g * x / (y * y))
                            .collect();
                        self.accumulate(a, &da);
                        self.accumulate(b, &db);
                    }
                    Pair::ScalarRhs => {
                        let c = self.values(b)[0];
                        let da: Vec<f64> = g.iter().map(|g| g / c).collect();
                        let db = [g
                            .iter()
                            .zip(self.values(a))
                            .map(|(g, x)| -g * x / (c * c))
                            .sum()];
                        self.accumulate(a, &da);
                        self.accumulate(b, &db);
                    }
                    _ => unreachable!(),
                },
                Op::MulScalar { a, c } => {
                    let da: Vec<f64> = g.iter().map(|g| g * c).collect();
                    self.accumulate(a, &da);
                }
                Op::AddScalar { a } => self.accumulate(a, &g),
                Op::Relu { a } => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.values(a))
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::Tanh { a } => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[id].values)
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::Exp { a } => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[id].values)
                        .map(|(g, y)| g * y)
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::Log { a } => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.values(a))
                        .map(|(g, x)| g / x)
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::SoftmaxLastAxis { a } => {
                    let w = self.nodes[id].last_dim();
                    let y = &self.nodes[id].values;
                    let mut da = vec![0.0; y.len()];
                    for ((yrow, grow), drow) in y
                        .chunks_exact(w)
                        .zip(g.chunks_exact(w))
                        .zip(da.chunks_exact_mut(w))
                    {
                        let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                        for ((d, &yv), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                            *d = yv * (gv - dot);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::Mean { a } => {
                    let n = self.nodes[a.0].numel();
                    let c = g[0] / n as f64;
                    self.accumulate(a, &vec![c; n]);
                }
                Op::Sum { a } => {
                    let n = self.nodes[a.0].numel();
                    self.accumulate(a, &vec![g[0]; n]);
                }
                Op::MinScalar { a, c } => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.values(a))
                        .map(|(g, x)| if *x < c { *g } else { 0.0 })
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::MaxScalar { a, c } => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.values(a))
                        .map(|(g, x)| if *x > c { *g } else { 0.0 })
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::ConcatLastAxis { parts, widths } => {
                    let total: usize = widths.iter().sum();
                    let rows = g.len() / total;
                    let mut offset = 0;
                    for (&p, &w) in parts.iter().zip(&widths) {
                        let mut dp = vec![0.0; rows * w];
                        for r in 0..rows {
                            dp[r * w..(r + 1) * w]
                                .copy_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(p, &dp);
                        offset += w;
                    }
                }
                Op::SliceLastAxis { a, start } => {
                    let w = self.nodes[a.0].last_dim();
                    let len = self.nodes[id].last_dim();
                    let rows = g.len() / len;
                    let mut da = vec![0.0; self.nodes[a.0].numel()];
                    for r in 0..rows {
                        da[r * w + start..r * w + start + len]
                            .copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    self.accumulate(a, &da);
                }
                Op::Reparameterize { mu, logvar, eps } => {
                    let dlv: Vec<f64> = g
                        .iter()
                        .zip(self.values(logvar))
                        .zip(&eps)
                        .map(|((g, lv), e)| g * 0.5 * (0.5 * lv).exp() * e)
                        .collect();
                    self.accumulate(mu, &g);
                    self.accumulate(logvar, &dlv);
                }
            }
        }
        Ok(())
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Matmul { .. } => "matmul",
        Op::Add { .. } => "add",
        Op::Mul { .. } => "multiply",
        Op::Div { .. } => "divide",
        Op::MulScalar { .. } => "multiply_scalar",
        Op::AddScalar { .. } => "add_scalar",
        Op::Relu { .. } => "relu",
        Op::Tanh { .. } => "tanh",
        Op::Exp { .. } => "exp",
        Op::Log { .. } => "log",
        Op::SoftmaxLastAxis { .. } => "softmax_last_axis",
        Op::Mean { .. } => "mean",
        Op::Sum { .. } => "sum",
        Op::MinScalar { .. } => "elementwise_min_with_scalar",
        Op::MaxScalar { .. } => "elementwise_max_with_scalar",
        Op::ConcatLastAxis { .. } => "concat_last_axis",
        Op::SliceLastAxis { .. } => "slice_last_axis",
        Op::Reparameterize { .. } => "gaussian_reparameterize",
    }
}

/// `out += a(m,k) @ b(k,n)`.
fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// `da += g(m,n) @ b(k,n)^T`.
fn matmul_acc_grad_lhs(g: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let darow = &mut da[i * k..(i + 1) * k];
        for (kk, d) in darow.iter_mut().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut s = 0.0;
            for (x, y) in grow.iter().zip(brow) {
                s += x * y;
            }
            *d += s;
        }
    }
}

/// `db += a(m,k)^T @ g(m,n)`.
fn matmul_acc_grad_rhs(a: &[f64], g: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let dbrow = &mut db[kk * n..(kk + 1) * n];
            for (o, &gv) in dbrow.iter_mut().zip(grow) {
                *o += aik * gv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        Tensor::new(shape, values).unwrap()
    }

    #[test]
    fn matmul_identity_passthrough() {
        let mut tape = Tape::new();
        let eye = tape.leaf(&t(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let a = tape.leaf(&t(vec![3, 3], (1..=9).map(f64::from).collect()));
        let out = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.values(out), tape.values(a));
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(vec![2, 3], vec![0.0; 6]));
        let b = tape.leaf(&t(vec![2, 3], vec![0.0; 6]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(vec![1, 4], vec![0.0; 4]));
        let s = tape.softmax_last_axis(a).unwrap();
        for v in tape.values(s) {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_backward_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![2, 2], vec![1., 2., 3., 4.]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn mean_relu_backward_dead_and_live() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![2], vec![-1.0, 2.0]));
        let r = tape.relu(x);
        let l = tape.mean(r);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x), &[0.0, 0.5]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // sum(x) + sum(x) must give exactly twice the gradient of sum(x).
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![3], vec![0.5, -1.5, 2.0]));
        let s1 = tape.sum(x);
        let s2 = tape.sum(x);
        let l = tape.add(s1, s2).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![2], vec![1.0, 2.0]));
        assert!(matches!(
            tape.backward(x),
            Err(Error::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn backward_rejects_second_call() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![2], vec![1.0, 2.0]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::BackwardAlreadyRan)));
    }

    #[test]
    fn reparameterize_zero_sigma_returns_mean() {
        // logvar low enough that exp(logvar/2) underflows to exactly 0.
        let mut tape = Tape::new();
        let mu = tape.leaf(&t(vec![3], vec![0.3, -0.7, 1.1]));
        let lv = tape.leaf(&t(vec![3], vec![-1500.0; 3]));
        let y = tape.reparameterize(mu, lv, vec![2.0, -3.0, 4.0]).unwrap();
        assert_eq!(tape.values(y), tape.values(mu));
    }

    #[test]
    fn param_registration_is_memoized() {
        let mut tape = Tape::new();
        let w = t(vec![2], vec![1.0, 2.0]);
        let v1 = tape.param("w", &w);
        let v2 = tape.param("w", &w);
        assert_eq!(v1, v2);
        // Used twice, gradients accumulate on the single node.
        let s1 = tape.sum(v1);
        let s2 = tape.sum(v2);
        let l = tape.add(s1, s2).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.param_grad("w").unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn min_scalar_kink_gradient_is_zero_on_clamped_side() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![3], vec![-0.5, 0.0, 0.5]));
        let y = tape.min_scalar(x, 0.0);
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x), &[1.0, 0.0, 0.0]);
    }
}
