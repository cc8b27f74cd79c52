//! Helpers shared by the integration tests: system builders, a
//! finite-difference oracle and an H2/STO-3G integral oracle built from
//! one-dimensional quadrature.

#![allow(dead_code)]

use std::f64::consts::PI;

use dlvmc::diff::log_psi;
use dlvmc::frames::{compute_frames, DEFAULT_TOL_DEGENERATE};
use dlvmc::params::Params;
use dlvmc::scf::{scf_for_molecule, BasisName, ScfOptions};
use dlvmc::system::{parse_geometry, LengthUnit, Molecule};
use dlvmc::wavefunction::{Ansatz, NetworkConfig, WaveFunction};
use dlvmc::embedding::EmbeddingConfig;
use rand::Rng;
use rand_distr::StandardNormal;

pub const HYDROGEN: &str = "1\n\nH 0 0 0\n";
pub const HELIUM: &str = "1\n\nHe 0 0 0\n";
pub const LITHIUM: &str = "1\n\nLi 0 0 0\n";
pub const H2: &str = "2\n\nH 0 0 0\nH 0 0 1.4\n";
pub const LIH: &str = "2\n\nLi 0 0 0\nH 0 0 3.015\n";
pub const N2: &str = "2\n\nN 0 0 0\nN 0 0 2.068\n";
/// Bent closed-shell N-O-F chain.
pub const BENT_CHAIN: &str = "3\n\nN 0 0 0\nO 2.2 0 0\nF 3.1 2.1 0.4\n";

pub fn molecule(xyz: &str) -> Molecule {
    parse_geometry(xyz, LengthUnit::Bohr).unwrap()
}

pub fn small_network() -> NetworkConfig {
    NetworkConfig {
        embedding: EmbeddingConfig { width_one: 16, width_aux: 8, n_layers: 2, ..EmbeddingConfig::default() },
        n_det: 2,
        ..NetworkConfig::default()
    }
}

/// Wavefunction with SCF-derived frames and freshly initialized parameters.
pub fn build(xyz: &str, cfg: NetworkConfig, seed: u64) -> (WaveFunction, Params) {
    let mol = molecule(xyz);
    let scf = scf_for_molecule(&mol, BasisName::Sto6g, &ScfOptions::default()).unwrap();
    let frames = compute_frames(&scf, &mol, DEFAULT_TOL_DEGENERATE).unwrap();
    let wf = WaveFunction::new(cfg, mol, frames);
    let params = wf.init_params(seed);
    (wf, params)
}

/// Electron positions scattered around the nuclei with unit Gaussian noise.
pub fn random_config(mol: &Molecule, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    let nuc = mol.nuclei();
    (0..mol.n_el())
        .map(|i| {
            let c = nuc[i % nuc.len()].position;
            std::array::from_fn(|k| c[k] + rng.sample::<f64, _>(StandardNormal))
        })
        .collect()
}

pub struct FdResult {
    pub grad: Vec<f64>,
    pub lap: f64,
}

/// Two Richardson steps over the steps `4h, 2h, h` of a difference
/// quotient whose error is a series in `h^2`.
fn richardson(d: [f64; 3]) -> f64 {
    let r1 = (4.0 * d[1] - d[0]) / 3.0;
    let r2 = (4.0 * d[2] - d[1]) / 3.0;
    (16.0 * r2 - r1) / 15.0
}

/// Finite-difference gradient and Laplacian of log|psi|. The Richardson
/// estimate of [`finite_differences_at`] is computed for steps 5e-4 / 4^k,
/// k = 0..5; for the gradient and the Laplacian separately, the estimate
/// that changed least from the previous step is kept. Coarse steps fail
/// next to a node of the determinant (log|psi| is singular there), fine
/// steps lose to roundoff, and the smallest change marks the plateau between.
pub fn finite_differences(ans: &dyn Ansatz, params: &Params, r: &[[f64; 3]]) -> FdResult {
    let seq: Vec<FdResult> = (0..6).map(|k| finite_differences_at(ans, params, r, 5e-4 / 4f64.powi(k))).collect();
    let best = |change: &dyn Fn(&FdResult, &FdResult) -> f64| {
        (1..seq.len()).min_by(|&a, &b| change(&seq[a], &seq[a - 1]).total_cmp(&change(&seq[b], &seq[b - 1]))).unwrap()
    };
    let g = best(&|a, b| rel_err(&a.grad, &b.grad));
    let l = best(&|a, b| rel_err(&[a.lap], &[b.lap]));
    FdResult { grad: seq[g].grad.clone(), lap: seq[l].lap }
}

/// Central first and second difference quotients at steps `4h, 2h, h`,
/// Richardson extrapolated to sixth order.
pub fn finite_differences_at(ans: &dyn Ansatz, params: &Params, r: &[[f64; 3]], h: f64) -> FdResult {
    let f = |r: &[[f64; 3]]| log_psi(ans, params, r).log_abs;
    let f0 = f(r);
    let shifted = |i: usize, k: usize, d: f64| {
        let mut s = r.to_vec();
        s[i][k] += d;
        f(&s)
    };
    let steps = [4.0 * h, 2.0 * h, h];
    let mut grad = Vec::with_capacity(3 * r.len());
    let mut lap = 0.0;
    for i in 0..r.len() {
        for k in 0..3 {
            let pm = steps.map(|h| (shifted(i, k, h), shifted(i, k, -h)));
            grad.push(richardson(std::array::from_fn(|s| (pm[s].0 - pm[s].1) / (2.0 * steps[s]))));
            lap += richardson(std::array::from_fn(|s| (pm[s].0 - 2.0 * f0 + pm[s].1) / (steps[s] * steps[s])));
        }
    }
    FdResult { grad, lap }
}

/// `|a - b| / max(|b|, 1)` with Euclidean norms.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / nb.max(1.0)
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `int_0^inf g(t) dt` through `t = s / (1 - s)`.
fn half_line(g: impl Fn(f64) -> f64, n: usize) -> f64 {
    simpson(
        |s| {
            if s >= 1.0 {
                return 0.0;
            }
            let t = s / (1.0 - s);
            g(t) / ((1.0 - s) * (1.0 - s))
        },
        0.0,
        1.0,
        n,
    )
}

/// Minimal-basis H2 integrals computed without any closed-form Coulomb
/// formula: overlaps and kinetic terms by trapezoidal quadrature of the
/// separable one-dimensional factors, Coulomb terms through
/// `1/r = 2/sqrt(pi) int_0^inf exp(-t^2 r^2) dt` with the t-integral done
/// numerically.
pub struct H2Oracle {
    pub r: f64,
    pub s: [[f64; 2]; 2],
    pub t: [[f64; 2]; 2],
    pub v: [[f64; 2]; 2],
    /// `(ij|kl)` indexed `[i][j][k][l]`.
    pub eri: [[[[f64; 2]; 2]; 2]; 2],
}

/// Hydrogen STO-3G: exponents and contraction coefficients.
pub const H_STO3G: [(f64, f64); 3] =
    [(3.425250914, 0.1543289673), (0.6239137298, 0.5353281423), (0.1688554040, 0.4446345422)];

const N_T: usize = 4000;

impl H2Oracle {
    pub fn new(r: f64) -> Self {
        let centers = [0.0, r];
        let prim = |a: f64| (2.0 * a / PI).powf(0.75);
        // (exponent, coefficient) with primitive normalization folded in
        let mut contr: Vec<(f64, f64)> = H_STO3G.iter().map(|&(a, c)| (a, c * prim(a))).collect();
        // 1D trapezoid over a wide box; spectrally accurate for Gaussians
        let grid: Vec<f64> = (0..=6000).map(|i| -10.0 + i as f64 * 0.004).collect();
        let h = 0.004;
        let line = |f: &dyn Fn(f64) -> f64| grid.iter().map(|&x| f(x)).sum::<f64>() * h;
        let s_prim = |a: f64, za: f64, b: f64, zb: f64| {
            let perp = line(&|x| (-(a + b) * x * x).exp());
            let along = line(&|z| (-a * (z - za).powi(2) - b * (z - zb).powi(2)).exp());
            perp * perp * along
        };
        let t_prim = |a: f64, za: f64, b: f64, zb: f64| {
            let g = |x: f64| (-(a + b) * x * x).exp();
            let g2 = |x: f64| (4.0 * b * b * x * x - 2.0 * b) * (-(a + b) * x * x).exp();
            let perp = line(&g);
            let perp2 = line(&g2);
            let along = line(&|z| (-a * (z - za).powi(2) - b * (z - zb).powi(2)).exp());
            let along2 = line(&|z| {
                let d = z - zb;
                (4.0 * b * b * d * d - 2.0 * b) * (-a * (z - za).powi(2) - b * d * d).exp()
            });
            -0.5 * (2.0 * perp2 * perp * along + perp * perp * along2)
        };
        let norm = contr.iter().flat_map(|&(a, ca)| contr.iter().map(move |&(b, cb)| (a, ca, b, cb))).fold(
            0.0,
            |acc, (a, ca, b, cb)| acc + ca * cb * s_prim(a, 0.0, b, 0.0),
        );
        for p in &mut contr {
            p.1 /= norm.sqrt();
        }
        // Gaussian product: exp(-a(z-A)^2) exp(-b(z-B)^2) = K exp(-p(z-P)^2)
        let product = |a: f64, za: f64, b: f64, zb: f64| {
            let p = a + b;
            (p, (a * za + b * zb) / p, (-a * b / p * (za - zb).powi(2)).exp())
        };
        let nuclear_prim = |a: f64, za: f64, b: f64, zb: f64, zc: f64| {
            let (p, zp, k) = product(a, za, b, zb);
            let d2 = (zp - zc).powi(2);
            k * 2.0 / PI.sqrt() * half_line(|t| (PI / (p + t * t)).powf(1.5) * (-p * t * t / (p + t * t) * d2).exp(), N_T)
        };
        let eri_prim = |(a, za): (f64, f64), (b, zb): (f64, f64), (c, zc): (f64, f64), (d, zd): (f64, f64)| {
            let (p, zp, k1) = product(a, za, b, zb);
            let (q, zq, k2) = product(c, zc, d, zd);
            let d2 = (zp - zq).powi(2);
            k1 * k2 * 2.0 / PI.sqrt()
                * half_line(
                    |t| {
                        let t2 = t * t;
                        let alpha = p * t2 / (p + t2);
                        (PI / (p + t2)).powf(1.5) * (PI / (q + alpha)).powf(1.5) * (-q * alpha / (q + alpha) * d2).exp()
                    },
                    N_T,
                )
        };
        let mut o = H2Oracle { r, s: [[0.0; 2]; 2], t: [[0.0; 2]; 2], v: [[0.0; 2]; 2], eri: [[[[0.0; 2]; 2]; 2]; 2] };
        for i in 0..2 {
            for j in 0..2 {
                for &(a, ca) in &contr {
                    for &(b, cb) in &contr {
                        let (za, zb) = (centers[i], centers[j]);
                        o.s[i][j] += ca * cb * s_prim(a, za, b, zb);
                        o.t[i][j] += ca * cb * t_prim(a, za, b, zb);
                        o.v[i][j] -= ca * cb * (nuclear_prim(a, za, b, zb, 0.0) + nuclear_prim(a, za, b, zb, r));
                    }
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        let mut acc = 0.0;
                        for &(a, ca) in &contr {
                            for &(b, cb) in &contr {
                                for &(c, cc) in &contr {
                                    for &(d, cd) in &contr {
                                        acc += ca * cb * cc * cd
                                            * eri_prim((a, centers[i]), (b, centers[j]), (c, centers[k]), (d, centers[l]));
                                    }
                                }
                            }
                        }
                        o.eri[i][j][k][l] = acc;
                    }
                }
            }
        }
        o
    }

    /// Closed-shell energy with the symmetry-fixed bonding orbital
    /// `(phi_1 + phi_2) / sqrt(2 (1 + S_12))`; in a two-function basis this
    /// is the exact restricted SCF solution.
    pub fn rhf_energy(&self) -> f64 {
        let c = 1.0 / (2.0 * (1.0 + self.s[0][1])).sqrt();
        let mut h = 0.0;
        let mut j = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                h += c * c * (self.t[a][b] + self.v[a][b]);
                for k in 0..2 {
                    for l in 0..2 {
                        j += c.powi(4) * self.eri[a][b][k][l];
                    }
                }
            }
        }
        2.0 * h + j + 1.0 / self.r
    }
}
