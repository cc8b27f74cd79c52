//! Minimal-basis unrestricted Hartree-Fock.
//!
//! Supplies the density matrix used to build local frames and the occupied
//! orbitals used as pretraining targets.

pub mod basis;
pub mod boys;
pub mod integrals;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use basis::{BasisName, BasisSet, MolecularBasis};
pub use boys::boys_f0;
pub use integrals::{compute_integrals, Eri, IntegralTables};

use crate::error::{Error, Result};
use crate::system::Molecule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScfOptions {
    pub max_iter: usize,
    /// Weight of the freshly built density in the damped update.
    pub density_mix: f64,
    pub tol: f64,
    pub energy_tol: f64,
}

impl Default for ScfOptions {
    fn default() -> Self {
        ScfOptions { max_iter: 500, density_mix: 0.5, tol: 1e-8, energy_tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct ScfResult {
    pub basis: MolecularBasis,
    pub overlap: DMatrix<f64>,
    /// Orbital coefficients (AO x MO) for the up and down channels.
    pub coeffs: [DMatrix<f64>; 2],
    pub orbital_energies: [DVector<f64>; 2],
    /// Per-spin AO density matrices.
    pub spin_density: [DMatrix<f64>; 2],
    /// Total AO density `D = D_up + D_dn`.
    pub density: DMatrix<f64>,
    pub energy: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Energy at every iteration, evaluated on the density used to build the Fock matrix.
    pub energy_history: Vec<f64>,
    pub n_occ: [usize; 2],
}

impl ScfResult {
    /// `trace(D S)`, the electron count.
    pub fn electron_count(&self) -> f64 {
        (&self.density * &self.overlap).trace()
    }

    /// Occupied orbital values at `points`: `(M x n_up, M x n_dn)`.
    pub fn eval_orbitals(&self, points: &[[f64; 3]]) -> [Array2<f64>; 2] {
        let nbf = self.basis.n_functions;
        let mut ao = vec![0.0; nbf];
        let mut out = [
            Array2::zeros((points.len(), self.n_occ[0])),
            Array2::zeros((points.len(), self.n_occ[1])),
        ];
        for (m, p) in points.iter().enumerate() {
            self.basis.eval_into(p, &mut ao);
            for s in 0..2 {
                for k in 0..self.n_occ[s] {
                    let c = self.coeffs[s].column(k);
                    out[s][[m, k]] = ao.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
                }
            }
        }
        out
    }
}

fn canonical_orthogonalizer(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(s.clone());
    let keep: Vec<usize> = (0..s.nrows()).filter(|&i| eig.eigenvalues[i] >= 1e-8).collect();
    if keep.is_empty() {
        return Err(Error::LinearDependence);
    }
    let mut x = DMatrix::zeros(s.nrows(), keep.len());
    for (col, &i) in keep.iter().enumerate() {
        let scale = eig.eigenvalues[i].sqrt().recip();
        x.set_column(col, &(eig.eigenvectors.column(i) * scale));
    }
    Ok(x)
}

/// Diagonalizes `F` in the orthogonal basis; returns AO coefficients and
/// energies, ascending.
fn solve_fock(f: &DMatrix<f64>, x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let fp = x.transpose() * f * x;
    let eig = SymmetricEigen::new(fp);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut c = DMatrix::zeros(x.nrows(), order.len());
    let mut e = DVector::zeros(order.len());
    for (col, &i) in order.iter().enumerate() {
        c.set_column(col, &(x * eig.eigenvectors.column(i)));
        e[col] = eig.eigenvalues[i];
    }
    (c, e)
}

fn occupied_density(c: &DMatrix<f64>, n_occ: usize) -> DMatrix<f64> {
    let occ = c.columns(0, n_occ);
    &occ * occ.transpose()
}

/// Coulomb and exchange contributions `J[D_tot]` and `K[D_s]` for both spins.
fn two_electron_terms(eri: &Eri, d: &[DMatrix<f64>; 2]) -> (DMatrix<f64>, [DMatrix<f64>; 2]) {
    let n = eri.n_functions();
    let dt = &d[0] + &d[1];
    let mut j = DMatrix::zeros(n, n);
    let mut k = [DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
    for a in 0..n {
        for b in 0..=a {
            let mut jab = 0.0;
            let mut kab = [0.0; 2];
            for c in 0..n {
                for e in 0..n {
                    jab += dt[(c, e)] * eri.get(a, b, c, e);
                    let x = eri.get(a, c, b, e);
                    kab[0] += d[0][(c, e)] * x;
                    kab[1] += d[1][(c, e)] * x;
                }
            }
            j[(a, b)] = jab;
            j[(b, a)] = jab;
            for s in 0..2 {
                k[s][(a, b)] = kab[s];
                k[s][(b, a)] = kab[s];
            }
        }
    }
    (j, k)
}

fn fock_and_energy(
    h: &DMatrix<f64>,
    eri: &Eri,
    d: &[DMatrix<f64>; 2],
    e_nuc: f64,
) -> ([DMatrix<f64>; 2], f64) {
    let (j, k) = two_electron_terms(eri, d);
    let f = [h + &j - &k[0], h + &j - &k[1]];
    let dt = &d[0] + &d[1];
    let e = 0.5 * ((dt.component_mul(h)).sum()
        + d[0].component_mul(&f[0]).sum()
        + d[1].component_mul(&f[1]).sum())
        + e_nuc;
    (f, e)
}

/// Spin-unrestricted SCF with fixed `(n_up, n_dn)` occupations, core-Hamiltonian
/// guess and linear density damping. A run that exhausts `max_iter` returns
/// its last iterate with `converged = false`.
pub fn run_scf(tables: &IntegralTables, mol: &Molecule, basis: &MolecularBasis, opts: &ScfOptions) -> Result<ScfResult> {
    let n_occ = [mol.n_up(), mol.n_dn()];
    let x = canonical_orthogonalizer(&tables.overlap)?;
    if n_occ[0] > x.ncols() {
        return Err(Error::LinearDependence);
    }
    let h = tables.core_hamiltonian();
    let e_nuc = mol.nuclear_repulsion();
    let (c0, _) = solve_fock(&h, &x);
    let mut d = [occupied_density(&c0, n_occ[0]), occupied_density(&c0, n_occ[1])];
    let mut history = Vec::new();
    let mut e_prev = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mix = opts.density_mix.clamp(0.0, 1.0);
    for it in 1..=opts.max_iter {
        iterations = it;
        let (f, e) = fock_and_energy(&h, &tables.eri, &d, e_nuc);
        history.push(e);
        let (ca, _) = solve_fock(&f[0], &x);
        let (cb, _) = solve_fock(&f[1], &x);
        let d_new = [occupied_density(&ca, n_occ[0]), occupied_density(&cb, n_occ[1])];
        let delta = (&d_new[0] - &d[0]).amax().max((&d_new[1] - &d[1]).amax());
        let de = (e - e_prev).abs();
        e_prev = e;
        if delta < opts.tol && de < opts.energy_tol {
            d = d_new;
            converged = true;
            break;
        }
        for s in 0..2 {
            d[s] = &d[s] * (1.0 - mix) + &d_new[s] * mix;
        }
    }
    // final orbitals from the last density, which is idempotent at convergence
    let (f, _) = fock_and_energy(&h, &tables.eri, &d, e_nuc);
    let (ca, ea) = solve_fock(&f[0], &x);
    let (cb, eb) = solve_fock(&f[1], &x);
    let d_final = [occupied_density(&ca, n_occ[0]), occupied_density(&cb, n_occ[1])];
    let (_, energy) = fock_and_energy(&h, &tables.eri, &d_final, e_nuc);
    let density = &d_final[0] + &d_final[1];
    Ok(ScfResult {
        basis: basis.clone(),
        overlap: tables.overlap.clone(),
        coeffs: [ca, cb],
        orbital_energies: [ea, eb],
        spin_density: d_final,
        density,
        energy,
        converged,
        iterations,
        energy_history: history,
        n_occ,
    })
}

/// Builds the basis, integrals and runs the SCF in one call.
pub fn scf_for_molecule(mol: &Molecule, name: BasisName, opts: &ScfOptions) -> Result<ScfResult> {
    let basis = MolecularBasis::new(&BasisSet::builtin(name), mol)?;
    let tables = compute_integrals(mol, &basis);
    run_scf(&tables, mol, &basis, opts)
}
