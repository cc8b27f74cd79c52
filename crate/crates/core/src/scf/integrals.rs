//! One- and two-electron integrals over s/p Cartesian Gaussians
//! (McMurchie-Davidson Hermite expansion).

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use super::basis::{MolecularBasis, Shell};
use super::boys::boys_array;
use crate::system::Molecule;

/// Two-electron integrals `(ij|kl)` in chemists' notation, stored once per
/// 8-fold permutation class.
#[derive(Debug, Clone)]
pub struct Eri {
    n: usize,
    data: Vec<f64>,
}

#[inline]
fn pair_index(i: usize, j: usize) -> usize {
    if i >= j {
        i * (i + 1) / 2 + j
    } else {
        j * (j + 1) / 2 + i
    }
}

impl Eri {
    fn zeros(n: usize) -> Self {
        let npair = n * (n + 1) / 2;
        Eri { n, data: vec![0.0; npair * (npair + 1) / 2] }
    }

    pub fn n_functions(&self) -> usize {
        self.n
    }

    /// Number of stored unique values.
    pub fn n_unique(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[pair_index(pair_index(i, j), pair_index(k, l))]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        self.data[pair_index(pair_index(i, j), pair_index(k, l))] = v;
    }
}

#[derive(Debug, Clone)]
pub struct IntegralTables {
    pub overlap: DMatrix<f64>,
    pub kinetic: DMatrix<f64>,
    pub nuclear: DMatrix<f64>,
    pub eri: Eri,
}

impl IntegralTables {
    pub fn core_hamiltonian(&self) -> DMatrix<f64> {
        &self.kinetic + &self.nuclear
    }

    /// Plain-text dump of all tables (version line first).
    pub fn dump(&self) -> String {
        let n = self.overlap.nrows();
        let mut out = format!("dlvmc-integrals v1\nn_functions {n}\n");
        for (name, m) in [("S", &self.overlap), ("T", &self.kinetic), ("V", &self.nuclear)] {
            writeln!(out, "[{name}]").unwrap();
            for i in 0..n {
                for j in 0..n {
                    writeln!(out, "{i} {j} {:e}", m[(i, j)]).unwrap();
                }
            }
        }
        writeln!(out, "[ERI]").unwrap();
        for i in 0..n {
            for j in 0..=i {
                for k in 0..n {
                    for l in 0..=k {
                        if pair_index(i, j) >= pair_index(k, l) {
                            writeln!(out, "{i} {j} {k} {l} {:e}", self.eri.get(i, j, k, l)).unwrap();
                        }
                    }
                }
            }
        }
        out
    }
}

/// Hermite expansion coefficients `E[i][j][t]` of a 1D Gaussian product,
/// for `i <= imax`, `j <= jmax`.
#[derive(Clone, Copy)]
struct Hermite1d {
    e: [[[f64; 6]; 4]; 2],
}

impl Hermite1d {
    fn new(imax: usize, jmax: usize, a: f64, b: f64, xa: f64, xb: f64) -> Self {
        let p = a + b;
        let mu = a * b / p;
        let xab = xa - xb;
        let xpa = -b * xab / p;
        let xpb = a * xab / p;
        let half_p = 0.5 / p;
        let mut e = [[[0.0; 6]; 4]; 2];
        e[0][0][0] = (-mu * xab * xab).exp();
        for i in 0..imax {
            for t in 0..=(i + 1) {
                let mut v = xpa * e[i][0][t] + (t + 1) as f64 * e[i][0][t + 1];
                if t > 0 {
                    v += half_p * e[i][0][t - 1];
                }
                e[i + 1][0][t] = v;
            }
        }
        for i in 0..=imax {
            for j in 0..jmax {
                for t in 0..=(i + j + 1) {
                    let mut v = xpb * e[i][j][t] + (t + 1) as f64 * e[i][j][t + 1];
                    if t > 0 {
                        v += half_p * e[i][j][t - 1];
                    }
                    e[i][j + 1][t] = v;
                }
            }
        }
        Hermite1d { e }
    }

    #[inline]
    fn get(&self, i: usize, j: usize, t: usize) -> f64 {
        self.e[i][j][t]
    }
}

/// Hermite Coulomb integrals `R_{tuv}` with `t+u+v <= lmax`.
struct HermiteCoulomb {
    r: [[[[f64; 5]; 5]; 5]; 5],
}

impl HermiteCoulomb {
    fn new(lmax: usize, alpha: f64, pc: [f64; 3]) -> Self {
        let t_arg = alpha * (pc[0] * pc[0] + pc[1] * pc[1] + pc[2] * pc[2]);
        let mut f = [0.0; 5];
        boys_array(t_arg, &mut f[..=lmax]);
        let mut r = [[[[0.0; 5]; 5]; 5]; 5];
        let mut scale = 1.0;
        for n in 0..=lmax {
            r[n][0][0][0] = scale * f[n];
            scale *= -2.0 * alpha;
        }
        for n in (0..lmax).rev() {
            let budget = lmax - n;
            for t in 0..=budget {
                for u in 0..=(budget - t) {
                    for v in 0..=(budget - t - u) {
                        if t + u + v == 0 {
                            continue;
                        }
                        let val = if t > 0 {
                            let mut x = pc[0] * r[n + 1][t - 1][u][v];
                            if t > 1 {
                                x += (t - 1) as f64 * r[n + 1][t - 2][u][v];
                            }
                            x
                        } else if u > 0 {
                            let mut x = pc[1] * r[n + 1][t][u - 1][v];
                            if u > 1 {
                                x += (u - 1) as f64 * r[n + 1][t][u - 2][v];
                            }
                            x
                        } else {
                            let mut x = pc[2] * r[n + 1][t][u][v - 1];
                            if v > 1 {
                                x += (v - 1) as f64 * r[n + 1][t][u][v - 2];
                            }
                            x
                        };
                        r[n][t][u][v] = val;
                    }
                }
            }
        }
        HermiteCoulomb { r }
    }

    #[inline]
    fn get(&self, t: usize, u: usize, v: usize) -> f64 {
        self.r[0][t][u][v]
    }
}

/// Expansion of one basis-function pair over Hermite Gaussians at one
/// primitive pair: terms `(t, u, v, coefficient)`.
type HermiteTerms = Vec<(usize, usize, usize, f64)>;

struct PrimitivePair {
    p: f64,
    center: [f64; 3],
    /// Indexed by `fa * nb + fb`.
    terms: Vec<HermiteTerms>,
}

struct ShellPair {
    a: usize,
    b: usize,
    l: usize,
    prims: Vec<PrimitivePair>,
}

fn shell_pair(shells: &[Shell], a: usize, b: usize) -> ShellPair {
    let (sa, sb) = (&shells[a], &shells[b]);
    let mut prims = Vec::new();
    for (&ea, &ca) in sa.exponents.iter().zip(&sa.coefficients) {
        for (&eb, &cb) in sb.exponents.iter().zip(&sb.coefficients) {
            let p = ea + eb;
            let center = std::array::from_fn(|k| (ea * sa.center[k] + eb * sb.center[k]) / p);
            let h: [Hermite1d; 3] = std::array::from_fn(|k| {
                Hermite1d::new(sa.l as usize, sb.l as usize, ea, eb, sa.center[k], sb.center[k])
            });
            let mut terms = Vec::new();
            for ca_cart in sa.components() {
                for cb_cart in sb.components() {
                    let mut t_list = Vec::new();
                    let (i, j) = (ca_cart.map(|x| x as usize), cb_cart.map(|x| x as usize));
                    for t in 0..=(i[0] + j[0]) {
                        for u in 0..=(i[1] + j[1]) {
                            for v in 0..=(i[2] + j[2]) {
                                let c = ca
                                    * cb
                                    * h[0].get(i[0], j[0], t)
                                    * h[1].get(i[1], j[1], u)
                                    * h[2].get(i[2], j[2], v);
                                t_list.push((t, u, v, c));
                            }
                        }
                    }
                    terms.push(t_list);
                }
            }
            prims.push(PrimitivePair { p, center, terms });
        }
    }
    ShellPair { a, b, l: (sa.l + sb.l) as usize, prims }
}

fn one_electron(basis: &MolecularBasis, mol: &Molecule) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = basis.n_functions;
    let mut s = DMatrix::zeros(n, n);
    let mut t = DMatrix::zeros(n, n);
    let mut v = DMatrix::zeros(n, n);
    let shells = &basis.shells;
    for sa in shells {
        for sb in shells {
            for (&ea, &ca) in sa.exponents.iter().zip(&sa.coefficients) {
                for (&eb, &cb) in sb.exponents.iter().zip(&sb.coefficients) {
                    let p = ea + eb;
                    let center: [f64; 3] =
                        std::array::from_fn(|k| (ea * sa.center[k] + eb * sb.center[k]) / p);
                    let h: [Hermite1d; 3] = std::array::from_fn(|k| {
                        Hermite1d::new(sa.l as usize, sb.l as usize + 2, ea, eb, sa.center[k], sb.center[k])
                    });
                    let norm1d = (PI / p).sqrt();
                    let s1 = |k: usize, i: usize, j: usize| h[k].get(i, j, 0) * norm1d;
                    let t1 = |k: usize, i: usize, j: usize| {
                        let mut x = -2.0 * eb * (2 * j + 1) as f64 * s1(k, i, j)
                            + 4.0 * eb * eb * s1(k, i, j + 2);
                        if j >= 2 {
                            x += (j * (j - 1)) as f64 * s1(k, i, j - 2);
                        }
                        -0.5 * x
                    };
                    let couls: Vec<(f64, HermiteCoulomb)> = mol
                        .nuclei()
                        .iter()
                        .map(|nuc| {
                            let pc = std::array::from_fn(|k| center[k] - nuc.position[k]);
                            (nuc.charge as f64, HermiteCoulomb::new((sa.l + sb.l) as usize, p, pc))
                        })
                        .collect();
                    for (fa, ia) in sa.components().iter().enumerate() {
                        for (fb, ib) in sb.components().iter().enumerate() {
                            let i = ia.map(|x| x as usize);
                            let j = ib.map(|x| x as usize);
                            let c = ca * cb;
                            let (sx, sy, sz) = (s1(0, i[0], j[0]), s1(1, i[1], j[1]), s1(2, i[2], j[2]));
                            let row = sa.offset + fa;
                            let col = sb.offset + fb;
                            s[(row, col)] += c * sx * sy * sz;
                            t[(row, col)] += c
                                * (t1(0, i[0], j[0]) * sy * sz
                                    + sx * t1(1, i[1], j[1]) * sz
                                    + sx * sy * t1(2, i[2], j[2]));
                            let mut vv = 0.0;
                            for (z, r) in &couls {
                                let mut acc = 0.0;
                                for tt in 0..=(i[0] + j[0]) {
                                    for uu in 0..=(i[1] + j[1]) {
                                        for w in 0..=(i[2] + j[2]) {
                                            acc += h[0].get(i[0], j[0], tt)
                                                * h[1].get(i[1], j[1], uu)
                                                * h[2].get(i[2], j[2], w)
                                                * r.get(tt, uu, w);
                                        }
                                    }
                                }
                                vv -= z * acc;
                            }
                            v[(row, col)] += c * 2.0 * PI / p * vv;
                        }
                    }
                }
            }
        }
    }
    (s, t, v)
}

fn two_electron(basis: &MolecularBasis) -> Eri {
    let shells = &basis.shells;
    let ns = shells.len();
    let mut pairs = Vec::with_capacity(ns * (ns + 1) / 2);
    for a in 0..ns {
        for b in 0..=a {
            pairs.push(shell_pair(shells, a, b));
        }
    }
    let mut eri = Eri::zeros(basis.n_functions);
    let mut block = Vec::new();
    for (pi, ab) in pairs.iter().enumerate() {
        for cd in &pairs[..=pi] {
            let (sa, sb, sc, sd) = (&shells[ab.a], &shells[ab.b], &shells[cd.a], &shells[cd.b]);
            let nab = sa.n_functions() * sb.n_functions();
            let ncd = sc.n_functions() * sd.n_functions();
            block.clear();
            block.resize(nab * ncd, 0.0);
            let lmax = ab.l + cd.l;
            for pp in &ab.prims {
                for qq in &cd.prims {
                    let (p, q) = (pp.p, qq.p);
                    let alpha = p * q / (p + q);
                    let pq = std::array::from_fn(|k| pp.center[k] - qq.center[k]);
                    let r = HermiteCoulomb::new(lmax, alpha, pq);
                    let pref = 2.0 * PI.powf(2.5) / (p * q * (p + q).sqrt());
                    for (x, tab) in pp.terms.iter().enumerate() {
                        for (y, tcd) in qq.terms.iter().enumerate() {
                            let mut acc = 0.0;
                            for &(t, u, v, e1) in tab {
                                for &(tau, nu, phi, e2) in tcd {
                                    let sign = if (tau + nu + phi) % 2 == 0 { 1.0 } else { -1.0 };
                                    acc += e1 * e2 * sign * r.get(t + tau, u + nu, v + phi);
                                }
                            }
                            block[x * ncd + y] += pref * acc;
                        }
                    }
                }
            }
            let nb = sb.n_functions();
            let nd = sd.n_functions();
            for x in 0..nab {
                let (i, j) = (sa.offset + x / nb, sb.offset + x % nb);
                for y in 0..ncd {
                    let (k, l) = (sc.offset + y / nd, sd.offset + y % nd);
                    eri.set(i, j, k, l, block[x * ncd + y]);
                }
            }
        }
    }
    eri
}

/// Overlap, kinetic, nuclear-attraction and electron-repulsion tables.
pub fn compute_integrals(mol: &Molecule, basis: &MolecularBasis) -> IntegralTables {
    let (overlap, kinetic, nuclear) = one_electron(basis, mol);
    let eri = two_electron(basis);
    IntegralTables { overlap, kinetic, nuclear, eri }
}
