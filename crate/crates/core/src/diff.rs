//! Batched evaluation of `log|psi|`, its electron-coordinate derivatives,
//! the local energy and parameter gradients.
//!
//! Walkers are split into fixed-size chunks, one graph per chunk, and the
//! chunks are evaluated in parallel. Chunk boundaries depend only on the
//! number of walkers and electrons, never on the thread count, and chunk
//! results are combined in chunk order, so results are bit-identical under
//! any thread pool.

use ndarray::{s, Array2, Array3, ArrayView3};
use rayon::prelude::*;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::params::Params;
use crate::system::{distance, Molecule};
use crate::wavefunction::{Ansatz, LogPsi};

/// Particles closer than this are treated as coincident.
pub const COINCIDENCE_TOL: f64 = 1e-12;

/// Walkers per graph for value-only evaluation.
fn value_chunk(n_el: usize) -> usize {
    (512 / (n_el * n_el)).clamp(1, 128)
}

/// Walkers per graph when forward jets are carried (memory grows with the
/// number of electron coordinates as well).
fn jet_chunk(n_el: usize) -> usize {
    (256 / (n_el * n_el * n_el)).clamp(1, 64)
}

fn chunks(n: usize, size: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(size)).map(|c| (c * size, ((c + 1) * size).min(n))).collect()
}

fn rows_of(pos: &ArrayView3<f64>, lo: usize, hi: usize) -> Array2<f64> {
    let (_, n_el, _) = pos.dim();
    pos.slice(s![lo..hi, .., ..]).to_owned().into_shape_with_order(((hi - lo) * n_el, 3)).unwrap()
}

/// `log|psi|` and sign for every walker of `pos` (`walkers x n_el x 3`).
pub fn log_psi_batch(ans: &dyn Ansatz, params: &Params, pos: ArrayView3<f64>) -> Vec<LogPsi> {
    let (n_w, n_el, _) = pos.dim();
    assert_eq!(n_el, ans.n_el());
    let parts: Vec<Vec<LogPsi>> = chunks(n_w, value_chunk(n_el))
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut g = Graph::new(params);
            let x = g.constant(rows_of(&pos, lo, hi));
            let out = ans.build_log_psi(&mut g, x, hi - lo);
            let sign = g.sign(out).expect("signed output");
            (0..hi - lo).map(|w| LogPsi { sign: sign[w], log_abs: g.value(out)[[w, 0]] }).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

/// `log|psi|` of a single configuration.
pub fn log_psi(ans: &dyn Ansatz, params: &Params, r: &[[f64; 3]]) -> LogPsi {
    log_psi_batch(ans, params, single(r).view())[0]
}

fn single(r: &[[f64; 3]]) -> Array3<f64> {
    Array3::from_shape_fn((1, r.len(), 3), |(_, i, c)| r[i][c])
}

/// Value, gradient and Laplacian of `log|psi|` for one walker.
#[derive(Debug, Clone)]
pub struct Derivatives {
    pub log_psi: LogPsi,
    /// `n_el x 3`.
    pub grad: Array2<f64>,
    /// Sum of all `3 n_el` pure second derivatives.
    pub laplacian: f64,
}

/// Exact first and second electron-coordinate derivatives via forward jets.
pub fn derivatives_batch(ans: &dyn Ansatz, params: &Params, pos: ArrayView3<f64>) -> Vec<Derivatives> {
    let (n_w, n_el, _) = pos.dim();
    assert_eq!(n_el, ans.n_el());
    let parts: Vec<Vec<Derivatives>> = chunks(n_w, jet_chunk(n_el))
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut g = Graph::new(params);
            let x = g.positions(rows_of(&pos, lo, hi), n_el, true);
            let out = ans.build_log_psi(&mut g, x, hi - lo);
            let sign = g.sign(out).expect("signed output");
            let jet = g.jet(out).expect("jets requested");
            (0..hi - lo)
                .map(|w| Derivatives {
                    log_psi: LogPsi { sign: sign[w], log_abs: g.value(out)[[w, 0]] },
                    grad: Array2::from_shape_fn((n_el, 3), |(j, c)| jet.tan[[3 * j + c, w, 0]]),
                    laplacian: jet.lap[[w, 0]],
                })
                .collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

fn derivatives(ans: &dyn Ansatz, params: &Params, r: &[[f64; 3]]) -> Result<Derivatives> {
    let d = derivatives_batch(ans, params, single(r).view()).pop().unwrap();
    if d.log_psi.sign == 0.0 {
        return Err(Error::NodalPoint);
    }
    Ok(d)
}

/// `grad log|psi|`, `n_el x 3`.
pub fn grad_log_psi(ans: &dyn Ansatz, params: &Params, r: &[[f64; 3]]) -> Result<Array2<f64>> {
    Ok(derivatives(ans, params, r)?.grad)
}

/// `sum_i lap_i log|psi|`.
pub fn laplacian_log_psi(ans: &dyn Ansatz, params: &Params, r: &[[f64; 3]]) -> Result<f64> {
    Ok(derivatives(ans, params, r)?.laplacian)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalEnergyParts {
    pub e_kin: f64,
    pub v_ee: f64,
    pub v_en: f64,
    pub v_nn: f64,
    pub e_local: f64,
}

/// Coulomb energies `(v_ee, v_en)` of one configuration.
pub fn potential(mol: &Molecule, r: &[[f64; 3]]) -> Result<(f64, f64)> {
    let mut v_ee = 0.0;
    for i in 0..r.len() {
        for j in i + 1..r.len() {
            let d = distance(&r[i], &r[j]);
            if d < COINCIDENCE_TOL {
                return Err(Error::RejectedConfiguration(format!("electrons {i} and {j} coincide")));
            }
            v_ee += 1.0 / d;
        }
    }
    let mut v_en = 0.0;
    for (i, ri) in r.iter().enumerate() {
        for (k, n) in mol.nuclei().iter().enumerate() {
            let d = distance(ri, &n.position);
            if d < COINCIDENCE_TOL {
                return Err(Error::RejectedConfiguration(format!("electron {i} sits on nucleus {k}")));
            }
            v_en -= n.charge as f64 / d;
        }
    }
    Ok((v_ee, v_en))
}

fn assemble(mol: &Molecule, r: &[[f64; 3]], d: &Derivatives) -> Result<LocalEnergyParts> {
    if d.log_psi.sign == 0.0 {
        return Err(Error::NodalPoint);
    }
    let (v_ee, v_en) = potential(mol, r)?;
    let v_nn = mol.nuclear_repulsion();
    let e_kin = -0.5 * (d.laplacian + d.grad.iter().map(|g| g * g).sum::<f64>());
    Ok(LocalEnergyParts { e_kin, v_ee, v_en, v_nn, e_local: e_kin + v_ee + v_en + v_nn })
}

fn config_of(pos: &ArrayView3<f64>, w: usize) -> Vec<[f64; 3]> {
    (0..pos.dim().1).map(|i| [pos[[w, i, 0]], pos[[w, i, 1]], pos[[w, i, 2]]]).collect()
}

/// Local energies of every walker together with their derivative data.
pub fn local_energy_batch(
    ans: &dyn Ansatz,
    params: &Params,
    mol: &Molecule,
    pos: ArrayView3<f64>,
) -> Result<Vec<(LocalEnergyParts, Derivatives)>> {
    let derivs = derivatives_batch(ans, params, pos);
    derivs
        .into_iter()
        .enumerate()
        .map(|(w, d)| Ok((assemble(mol, &config_of(&pos, w), &d)?, d)))
        .collect()
}

/// `E_L = H psi / psi` at one configuration.
pub fn local_energy(ans: &dyn Ansatz, params: &Params, mol: &Molecule, r: &[[f64; 3]]) -> Result<LocalEnergyParts> {
    let d = derivatives_batch(ans, params, single(r).view()).pop().unwrap();
    assemble(mol, r, &d)
}

/// `sum_w coeffs[w] * d log|psi_w| / d theta`, one array per parameter.
pub fn param_gradient(ans: &dyn Ansatz, params: &Params, pos: ArrayView3<f64>, coeffs: &[f64]) -> Vec<Array2<f64>> {
    let (n_w, n_el, _) = pos.dim();
    assert_eq!(coeffs.len(), n_w);
    let parts: Vec<Vec<Array2<f64>>> = chunks(n_w, value_chunk(n_el))
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut g = Graph::with_tape(params);
            let x = g.constant(rows_of(&pos, lo, hi));
            let out = ans.build_log_psi(&mut g, x, hi - lo);
            let seed = Array2::from_shape_fn((hi - lo, 1), |(w, _)| coeffs[lo + w]);
            g.backward(out, seed)
        })
        .collect();
    let mut total = params.zeros_like();
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            *t += &p;
        }
    }
    total
}
