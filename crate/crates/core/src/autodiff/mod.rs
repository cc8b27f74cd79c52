//! Tensor differentiation engine.
//!
//! A [`Graph`] is built eagerly: every operation computes its value as soon
//! as it is recorded. Values are row-major 2D arrays whose rows usually
//! enumerate (walker, electron) or (walker, electron, partner) tuples, so one
//! graph evaluates a whole batch of walkers.
//!
//! Two kinds of derivatives are available:
//!
//! * forward mode: a node may carry a [`Jet`], i.e. its first derivatives
//!   along `D` input directions plus the sum of its pure second derivatives
//!   along those directions. Seeding electron positions with unit tangents
//!   gives gradients and Laplacians with respect to electron coordinates in
//!   a single forward sweep;
//! * reverse mode: when the graph records a tape, [`Graph::backward`]
//!   propagates a cotangent from any node back to the parameters.
//!
//! Parameters and constants never carry jets.

mod linalg;
mod rowmap;

use std::sync::Arc;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Zip};

pub use linalg::{lu_logdet_inverse, LogDet};
pub use rowmap::RowMap;

use crate::params::Params;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// First derivatives along `D` directions (`tan[d]` has the node's shape)
/// and the sum of second derivatives along the same directions.
#[derive(Debug, Clone)]
pub struct Jet {
    pub tan: Array3<f64>,
    pub lap: Array2<f64>,
}

impl Jet {
    fn zeros(d: usize, rows: usize, cols: usize) -> Self {
        Jet { tan: Array3::zeros((d, rows, cols)), lap: Array2::zeros((rows, cols)) }
    }

    fn n_dirs(&self) -> usize {
        self.tan.dim().0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    RowMap(Vec<Var>, Arc<RowMap>),
    ConcatCols(Vec<Var>),
    SelectCols(Var, Arc<Vec<usize>>),
    Reshape(Var),
    GroupNorm(Var, usize),
    Envelope { rho: Var, omega: Var, pi: Var },
    LogDet { x: Var, n: usize, inverses: Vec<f64> },
    LogSumExp { x: Var, weights: Array2<f64> },
    SumAll(Var),
}

struct Node {
    value: Array2<f64>,
    jet: Option<Jet>,
    /// Signs accompanying log-magnitude outputs (one per row).
    sign: Option<Array1<f64>>,
    op: Op,
}

/// Eagerly evaluated computation graph.
pub struct Graph<'p> {
    params: &'p Params,
    nodes: Vec<Node>,
    record: bool,
}

fn std_layout(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

impl<'p> Graph<'p> {
    /// A graph that only computes values (and jets when inputs carry them).
    pub fn new(params: &'p Params) -> Self {
        Graph { params, nodes: Vec::new(), record: false }
    }

    /// A graph that records a tape for [`Graph::backward`].
    pub fn with_tape(params: &'p Params) -> Self {
        Graph { params, nodes: Vec::new(), record: true }
    }

    pub fn params(&self) -> &'p Params {
        self.params
    }

    fn push(&mut self, value: Array2<f64>, jet: Option<Jet>, op: Op) -> Var {
        let op = if self.record { op } else { Op::Leaf };
        let jet = jet.map(|j| Jet {
            tan: if j.tan.is_standard_layout() { j.tan } else { j.tan.as_standard_layout().into_owned() },
            lap: std_layout(j.lap),
        });
        self.nodes.push(Node { value: std_layout(value), jet, sign: None, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn jet(&self, v: Var) -> Option<&Jet> {
        self.nodes[v.0].jet.as_ref()
    }

    pub fn sign(&self, v: Var) -> Option<&Array1<f64>> {
        self.nodes[v.0].sign.as_ref()
    }

    /// Attaches a sign vector to a node holding log magnitudes.
    pub fn set_sign(&mut self, v: Var, sign: Array1<f64>) {
        assert_eq!(sign.len(), self.nodes[v.0].value.len());
        self.nodes[v.0].sign = Some(sign);
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    fn n_dirs(&self, vars: &[Var]) -> Option<usize> {
        vars.iter().find_map(|v| self.jet(*v).map(Jet::n_dirs))
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, None, Op::Leaf)
    }

    /// An input with an explicitly supplied jet.
    pub fn input(&mut self, value: Array2<f64>, jet: Option<Jet>) -> Var {
        if let Some(j) = &jet {
            assert_eq!(j.lap.dim(), value.dim());
            assert_eq!((j.tan.dim().1, j.tan.dim().2), value.dim());
        }
        self.push(value, jet, Op::Leaf)
    }

    /// Electron positions `(batch * n_el) x 3`. With `jets`, tangent
    /// direction `3 j + c` is the unit displacement of coordinate `c` of
    /// electron `j` of every walker.
    pub fn positions(&mut self, value: Array2<f64>, n_el: usize, jets: bool) -> Var {
        let rows = value.nrows();
        let jet = jets.then(|| {
            let mut j = Jet::zeros(3 * n_el, rows, 3);
            for r in 0..rows {
                let e = r % n_el;
                for c in 0..3 {
                    j.tan[[3 * e + c, r, c]] = 1.0;
                }
            }
            j
        });
        self.input(value, jet)
    }

    pub fn param(&mut self, id: usize) -> Var {
        let value = self.params.tensor(id).clone();
        self.push(value, None, Op::Param(id))
    }

    pub fn param_named(&mut self, name: &str) -> Var {
        let id = self.params.id(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param(id)
    }

    /// Matrix product `a b`; `b` must not carry a jet.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        assert!(self.jet(b).is_none(), "right matmul operand must be constant in the jet directions");
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let value = av.dot(bv);
        let jet = self.jet(a).map(|ja| {
            let (d, r, c) = ja.tan.dim();
            let flat = ja.tan.view().into_shape_with_order((d * r, c)).unwrap();
            let tan = flat.dot(bv).into_shape_with_order((d, r, bv.ncols())).unwrap();
            Jet { tan, lap: ja.lap.dot(bv) }
        });
        self.push(value, jet, Op::MatMul(a, b))
    }

    /// `x + b` with the single-row `b` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        assert!(self.jet(b).is_none());
        let value = &self.nodes[x.0].value + &self.nodes[b.0].value;
        let jet = self.jet(x).cloned();
        self.push(value, jet, Op::AddBias(x, b))
    }

    /// Affine map `x w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_bias(y, b)
    }

    fn combine_jets(
        &self,
        a: Var,
        b: Var,
        f: impl Fn(Option<&Jet>, Option<&Jet>, usize, usize, usize) -> Jet,
    ) -> Option<Jet> {
        let d = self.n_dirs(&[a, b])?;
        let (r, c) = self.shape(a);
        Some(f(self.jet(a), self.jet(b), d, r, c))
    }

    /// Elementwise sum. Sign vectors, if present, multiply: adding the log
    /// magnitudes of two signed factors gives the log of their product.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b));
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let jet = self.combine_jets(a, b, |ja, jb, d, r, c| {
            let mut j = Jet::zeros(d, r, c);
            for src in [ja, jb].into_iter().flatten() {
                j.tan += &src.tan;
                j.lap += &src.lap;
            }
            j
        });
        let sign = match (self.sign(a), self.sign(b)) {
            (None, None) => None,
            (Some(s), None) | (None, Some(s)) => Some(s.clone()),
            (Some(s), Some(t)) => Some(s * t),
        };
        let v = self.push(value, jet, Op::Add(a, b));
        self.nodes[v.0].sign = sign;
        v
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b));
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let jet = self.combine_jets(a, b, |ja, jb, d, r, c| {
            let mut j = Jet::zeros(d, r, c);
            if let Some(s) = ja {
                j.tan += &s.tan;
                j.lap += &s.lap;
            }
            if let Some(s) = jb {
                j.tan -= &s.tan;
                j.lap -= &s.lap;
            }
            j
        });
        self.push(value, jet, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b));
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let value = av * bv;
        let jet = self.combine_jets(a, b, |ja, jb, d, r, c| {
            let mut j = Jet::zeros(d, r, c);
            if let Some(s) = ja {
                Zip::from(&mut j.lap).and(&s.lap).and(bv).for_each(|l, &x, &y| *l += x * y);
                for k in 0..d {
                    let mut t = j.tan.index_axis_mut(Axis(0), k);
                    Zip::from(&mut t).and(&s.tan.index_axis(Axis(0), k)).and(bv).for_each(|o, &x, &y| *o += x * y);
                }
            }
            if let Some(s) = jb {
                Zip::from(&mut j.lap).and(&s.lap).and(av).for_each(|l, &x, &y| *l += x * y);
                for k in 0..d {
                    let mut t = j.tan.index_axis_mut(Axis(0), k);
                    Zip::from(&mut t).and(&s.tan.index_axis(Axis(0), k)).and(av).for_each(|o, &x, &y| *o += x * y);
                }
            }
            if let (Some(sa), Some(sb)) = (ja, jb) {
                Zip::from(&mut j.lap)
                    .and(sa.tan.lanes(Axis(0)))
                    .and(sb.tan.lanes(Axis(0)))
                    .for_each(|l, ta, tb| *l += 2.0 * ta.dot(&tb));
            }
            j
        });
        self.push(value, jet, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = &self.nodes[x.0].value * c;
        let jet = self.jet(x).map(|j| Jet { tan: &j.tan * c, lap: &j.lap * c });
        self.push(value, jet, Op::Scale(x, c))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(f64::tanh);
        let jet = self.jet(x).map(|jx| {
            let d = jx.n_dirs();
            let mut tan = jx.tan.clone();
            for k in 0..d {
                Zip::from(tan.index_axis_mut(Axis(0), k)).and(&value).for_each(|t, &y| *t *= 1.0 - y * y);
            }
            let mut lap = jx.lap.clone();
            Zip::from(&mut lap).and(&value).and(jx.tan.lanes(Axis(0))).for_each(|l, &y, tx| {
                let d1 = 1.0 - y * y;
                *l = d1 * *l - 2.0 * y * d1 * tx.dot(&tx);
            });
            Jet { tan, lap }
        });
        self.push(value, jet, Op::Tanh(x))
    }

    /// Sparse linear combination of rows of one or more inputs.
    pub fn row_map(&mut self, inputs: &[Var], map: Arc<RowMap>) -> Var {
        assert_eq!(inputs.len(), map.n_inputs());
        let cols = self.shape(inputs[0]).1;
        for (k, v) in inputs.iter().enumerate() {
            assert_eq!(self.shape(*v), (map.input_rows(k), cols), "row map input {k} has wrong shape");
        }
        let vals: Vec<ArrayView2<f64>> = inputs.iter().map(|v| self.nodes[v.0].value.view()).collect();
        let value = map.apply(&vals);
        let jet = self.n_dirs(inputs).map(|d| {
            let rows = map.n_out();
            let mut j = Jet::zeros(d, rows, cols);
            let zero = Array2::zeros((0, 0));
            for k in 0..d {
                let tans: Vec<ArrayView2<f64>> = inputs
                    .iter()
                    .map(|v| match self.jet(*v) {
                        Some(jv) => jv.tan.index_axis(Axis(0), k),
                        None => zero.view(),
                    })
                    .collect();
                j.tan.index_axis_mut(Axis(0), k).assign(&map.apply_partial(&tans));
            }
            let laps: Vec<ArrayView2<f64>> = inputs
                .iter()
                .map(|v| match self.jet(*v) {
                    Some(jv) => jv.lap.view(),
                    None => zero.view(),
                })
                .collect();
            j.lap = map.apply_partial(&laps);
            j
        });
        self.push(value, jet, Op::RowMap(inputs.to_vec(), map))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|v| self.nodes[v.0].value.view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts match");
        let jet = self.n_dirs(parts).map(|d| {
            let total: usize = parts.iter().map(|v| self.shape(*v).1).sum();
            let mut j = Jet::zeros(d, rows, total);
            let mut off = 0;
            for v in parts {
                let c = self.shape(*v).1;
                if let Some(jv) = self.jet(*v) {
                    j.tan.slice_mut(s![.., .., off..off + c]).assign(&jv.tan);
                    j.lap.slice_mut(s![.., off..off + c]).assign(&jv.lap);
                }
                off += c;
            }
            j
        });
        self.push(value, jet, Op::ConcatCols(parts.to_vec()))
    }

    pub fn select_cols(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Var {
        let xv = &self.nodes[x.0].value;
        let value = xv.select(Axis(1), &idx);
        let jet = self.jet(x).map(|j| Jet { tan: j.tan.select(Axis(2), &idx), lap: j.lap.select(Axis(1), &idx) });
        self.push(value, jet, Op::SelectCols(x, idx))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let value = self.nodes[x.0].value.clone().into_shape_with_order((rows, cols)).expect("size preserved");
        let jet = self.jet(x).map(|j| {
            let d = j.n_dirs();
            Jet {
                tan: j.tan.clone().into_shape_with_order((d, rows, cols)).unwrap(),
                lap: j.lap.clone().into_shape_with_order((rows, cols)).unwrap(),
            }
        });
        let sign = self.sign(x).cloned();
        let v = self.push(value, jet, Op::Reshape(x));
        self.nodes[v.0].sign = sign;
        v
    }

    /// Euclidean norms of consecutive column groups of width `g`. The norm of
    /// a zero vector is given zero derivatives.
    pub fn group_norm(&mut self, x: Var, g: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        let (r, c) = xv.dim();
        assert_eq!(c % g, 0);
        let k = c / g;
        let mut value = Array2::zeros((r, k));
        for i in 0..r {
            for q in 0..k {
                let s: f64 = (0..g).map(|t| xv[[i, q * g + t]].powi(2)).sum();
                value[[i, q]] = s.sqrt();
            }
        }
        let jet = self.jet(x).map(|jx| {
            let d = jx.n_dirs();
            let mut j = Jet::zeros(d, r, k);
            for i in 0..r {
                for q in 0..k {
                    let n = value[[i, q]];
                    if n == 0.0 {
                        continue;
                    }
                    let mut lap = 0.0;
                    for t in 0..g {
                        lap += xv[[i, q * g + t]] * jx.lap[[i, q * g + t]];
                    }
                    for dd in 0..d {
                        let mut dot = 0.0;
                        let mut sq = 0.0;
                        for t in 0..g {
                            let tv = jx.tan[[dd, i, q * g + t]];
                            dot += xv[[i, q * g + t]] * tv;
                            sq += tv * tv;
                        }
                        let dn = dot / n;
                        j.tan[[dd, i, q]] = dn;
                        lap += sq - dn * dn;
                    }
                    j.lap[[i, q]] = lap / n;
                }
            }
            j
        });
        self.push(value, jet, Op::GroupNorm(x, g))
    }

    /// `out[r, k] = sum_I pi[I, k] exp(-|omega[I, k]| rho[r, I])`.
    pub fn envelope(&mut self, rho: Var, omega: Var, pi: Var) -> Var {
        assert!(self.jet(omega).is_none() && self.jet(pi).is_none());
        let rv = &self.nodes[rho.0].value;
        let ov = &self.nodes[omega.0].value;
        let pv = &self.nodes[pi.0].value;
        let (r, n_nuc) = rv.dim();
        let k = ov.ncols();
        assert_eq!(ov.dim(), (n_nuc, k));
        assert_eq!(pv.dim(), (n_nuc, k));
        let mut value = Array2::zeros((r, k));
        let jr = self.jet(rho);
        let mut jet = jr.map(|j| Jet::zeros(j.n_dirs(), r, k));
        for i in 0..r {
            for nuc in 0..n_nuc {
                let rho_v = rv[[i, nuc]];
                for c in 0..k {
                    let w = ov[[nuc, c]].abs();
                    let e = pv[[nuc, c]] * (-w * rho_v).exp();
                    value[[i, c]] += e;
                    if let (Some(jo), Some(ji)) = (jet.as_mut(), jr) {
                        let mut sq = 0.0;
                        for dd in 0..ji.n_dirs() {
                            let t = ji.tan[[dd, i, nuc]];
                            jo.tan[[dd, i, c]] -= w * e * t;
                            sq += t * t;
                        }
                        jo.lap[[i, c]] += e * (w * w * sq - w * ji.lap[[i, nuc]]);
                    }
                }
            }
        }
        self.push(value, jet, Op::Envelope { rho, omega, pi })
    }

    /// Signed log-determinants of the consecutive `n x n` row blocks of `x`.
    /// The result has one row per block; a singular block gives sign 0 and
    /// log magnitude `-inf`.
    pub fn logdet(&mut self, x: Var, n: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = xv.dim();
        assert_eq!(cols, n);
        assert_eq!(rows % n, 0);
        let m = rows / n;
        let data = xv.as_slice().expect("standard layout");
        let mut value = Array2::zeros((m, 1));
        let mut sign = Array1::zeros(m);
        let mut inverses = vec![0.0; m * n * n];
        for b in 0..m {
            let ld = lu_logdet_inverse(&data[b * n * n..(b + 1) * n * n], n, &mut inverses[b * n * n..(b + 1) * n * n]);
            value[[b, 0]] = ld.log_abs;
            sign[b] = ld.sign;
        }
        let jet = self.jet(x).map(|jx| {
            let d = jx.n_dirs();
            let mut j = Jet::zeros(d, m, 1);
            let tan = jx.tan.as_slice().expect("standard layout");
            let lapx = jx.lap.as_slice().expect("standard layout");
            let mut prod = vec![0.0; n * n];
            for b in 0..m {
                let inv = &inverses[b * n * n..(b + 1) * n * n];
                if sign[b] == 0.0 {
                    for dd in 0..d {
                        j.tan[[dd, b, 0]] = f64::NAN;
                    }
                    j.lap[[b, 0]] = f64::NAN;
                    continue;
                }
                // tr(A^-1 lap A)
                let mut lap = linalg::trace_product(inv, &lapx[b * n * n..(b + 1) * n * n], n);
                for dd in 0..d {
                    let da = &tan[dd * rows * n + b * n * n..dd * rows * n + (b + 1) * n * n];
                    linalg::matmul_into(inv, da, n, &mut prod);
                    let tr: f64 = (0..n).map(|i| prod[i * n + i]).sum();
                    j.tan[[dd, b, 0]] = tr;
                    lap -= linalg::trace_product(&prod, &prod, n);
                }
                j.lap[[b, 0]] = lap;
            }
            j
        });
        let v = self.push(value, jet, Op::LogDet { x, n, inverses: Vec::new() });
        if let Op::LogDet { inverses: slot, .. } = &mut self.nodes[v.0].op {
            *slot = inverses;
        }
        self.nodes[v.0].sign = Some(sign);
        v
    }

    /// Row-wise signed log-sum-exp: for each row, `log|sum_k s_k exp(x_k)|`
    /// with signs `s` taken from the input's sign vector (one sign per
    /// element, row-major). The result carries the sign of the sum.
    pub fn logsumexp_signed(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let (r, k) = xv.dim();
        let signs = self.sign(x).expect("signed input").clone();
        assert_eq!(signs.len(), r * k);
        let mut value = Array2::zeros((r, 1));
        let mut sign = Array1::zeros(r);
        let mut weights = Array2::zeros((r, k));
        for i in 0..r {
            let mut lmax = f64::NEG_INFINITY;
            for c in 0..k {
                if signs[i * k + c] != 0.0 {
                    lmax = lmax.max(xv[[i, c]]);
                }
            }
            if lmax == f64::NEG_INFINITY {
                value[[i, 0]] = f64::NEG_INFINITY;
                continue;
            }
            let mut sum = 0.0;
            for c in 0..k {
                let s = signs[i * k + c];
                if s != 0.0 {
                    let t = s * (xv[[i, c]] - lmax).exp();
                    weights[[i, c]] = t;
                    sum += t;
                }
            }
            if sum == 0.0 {
                value[[i, 0]] = f64::NEG_INFINITY;
                weights.row_mut(i).fill(0.0);
                continue;
            }
            value[[i, 0]] = lmax + sum.abs().ln();
            sign[i] = sum.signum();
            weights.row_mut(i).mapv_inplace(|w| w / sum);
        }
        let jet = self.jet(x).map(|jx| {
            let d = jx.n_dirs();
            let mut j = Jet::zeros(d, r, 1);
            for i in 0..r {
                let mut lap = 0.0;
                for c in 0..k {
                    let w = weights[[i, c]];
                    if w == 0.0 {
                        continue;
                    }
                    let mut sq = 0.0;
                    for dd in 0..d {
                        let t = jx.tan[[dd, i, c]];
                        j.tan[[dd, i, 0]] += w * t;
                        sq += t * t;
                    }
                    lap += w * (jx.lap[[i, c]] + sq);
                }
                for dd in 0..d {
                    lap -= j.tan[[dd, i, 0]].powi(2);
                }
                j.lap[[i, 0]] = lap;
            }
            j
        });
        let v = self.push(value, jet, Op::LogSumExp { x, weights: Array2::zeros((0, 0)) });
        if let Op::LogSumExp { weights: slot, .. } = &mut self.nodes[v.0].op {
            *slot = weights;
        }
        self.nodes[v.0].sign = Some(sign);
        v
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.nodes[x.0].value.sum());
        let jet = self.jet(x).map(|j| Jet {
            tan: j.tan.sum_axis(Axis(2)).sum_axis(Axis(1)).into_shape_with_order((j.n_dirs(), 1, 1)).unwrap(),
            lap: Array2::from_elem((1, 1), j.lap.sum()),
        });
        self.push(value, jet, Op::SumAll(x))
    }

    /// Reverse sweep from `out` with cotangent `seed`; returns one gradient
    /// array per parameter (zeros for parameters not reached).
    pub fn backward(&self, out: Var, seed: Array2<f64>) -> Vec<Array2<f64>> {
        assert!(self.record, "graph was built without a tape");
        assert_eq!(seed.dim(), self.shape(out));
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        let mut pgrads: Vec<Array2<f64>> = self.params.zeros_like();

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(x) => *x += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => pgrads[*id] += &g,
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(&mut grads, *a, g.dot(&bv.t()));
                    acc(&mut grads, *b, av.t().dot(&g));
                }
                Op::AddBias(x, b) => {
                    acc(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b));
                    acc(&mut grads, *b, &g * self.value(*a));
                }
                Op::Scale(x, c) => acc(&mut grads, *x, g * *c),
                Op::Tanh(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx).and(&node.value).for_each(|gv, &y| *gv *= 1.0 - y * y);
                    acc(&mut grads, *x, gx);
                }
                Op::RowMap(inputs, map) => {
                    for (k, gx) in map.apply_transpose(&g).into_iter().enumerate() {
                        acc(&mut grads, inputs[k], gx);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for v in parts {
                        let c = self.shape(*v).1;
                        acc(&mut grads, *v, g.slice(s![.., off..off + c]).to_owned());
                        off += c;
                    }
                }
                Op::SelectCols(x, idx) => {
                    let mut gx = Array2::zeros(self.shape(*x));
                    for (k, &c) in idx.iter().enumerate() {
                        let mut col = gx.column_mut(c);
                        col += &g.column(k);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Reshape(x) => {
                    let (r, c) = self.shape(*x);
                    acc(&mut grads, *x, g.into_shape_with_order((r, c)).unwrap());
                }
                Op::GroupNorm(x, gsize) => {
                    let xv = self.value(*x);
                    let mut gx = Array2::zeros(xv.dim());
                    let (r, k) = node.value.dim();
                    for i in 0..r {
                        for q in 0..k {
                            let n = node.value[[i, q]];
                            if n == 0.0 {
                                continue;
                            }
                            for t in 0..*gsize {
                                gx[[i, q * gsize + t]] = g[[i, q]] * xv[[i, q * gsize + t]] / n;
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Envelope { rho, omega, pi } => {
                    let rv = self.value(*rho);
                    let ov = self.value(*omega);
                    let pv = self.value(*pi);
                    let (r, n_nuc) = rv.dim();
                    let k = ov.ncols();
                    let mut gr = Array2::zeros((r, n_nuc));
                    let mut go = Array2::zeros((n_nuc, k));
                    let mut gp = Array2::zeros((n_nuc, k));
                    for i in 0..r {
                        for nuc in 0..n_nuc {
                            let rho_v = rv[[i, nuc]];
                            for c in 0..k {
                                let o = ov[[nuc, c]];
                                let e = (-o.abs() * rho_v).exp();
                                let gv = g[[i, c]];
                                gp[[nuc, c]] += gv * e;
                                let pe = gv * pv[[nuc, c]] * e;
                                gr[[i, nuc]] -= pe * o.abs();
                                go[[nuc, c]] -= pe * rho_v * o.signum();
                            }
                        }
                    }
                    acc(&mut grads, *rho, gr);
                    acc(&mut grads, *omega, go);
                    acc(&mut grads, *pi, gp);
                }
                Op::LogDet { x, n, inverses } => {
                    let n = *n;
                    let (rows, _) = self.shape(*x);
                    let m = rows / n;
                    let mut gx = Array2::zeros((rows, n));
                    let sign = node.sign.as_ref().unwrap();
                    for b in 0..m {
                        if sign[b] == 0.0 {
                            continue;
                        }
                        let inv = &inverses[b * n * n..(b + 1) * n * n];
                        let gb = g[[b, 0]];
                        // d log|det A| / dA = A^-T
                        for i in 0..n {
                            for j in 0..n {
                                gx[[b * n + i, j]] = gb * inv[j * n + i];
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::LogSumExp { x, weights } => {
                    let gx = weights * &g;
                    acc(&mut grads, *x, gx);
                }
                Op::SumAll(x) => {
                    let gv = g[[0, 0]];
                    acc(&mut grads, *x, Array2::from_elem(self.shape(*x), gv));
                }
            }
        }
        pgrads
    }
}
