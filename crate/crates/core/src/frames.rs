//! Per-nucleus local coordinate systems from the p-orbital block of the
//! Hartree-Fock density matrix.
//!
//! A frame is stored as three orthonormal axes. Local coordinates of a
//! vector `x` are its projections `axes[k] . x`, so rotating the molecule by
//! `Q` maps every axis to `Q axes[k]` and leaves local coordinates unchanged.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scf::ScfResult;
use crate::system::{distance, Molecule};

pub const DEFAULT_TOL_DEGENERATE: f64 = 1e-6;

/// Projections below this are treated as zero when fixing axis signs.
const SIGN_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameSource {
    /// Eigenvectors of this nucleus's own p block.
    Density,
    /// Copied from another nucleus (hydrogen without p functions).
    Borrowed(usize),
    /// No density information available.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    /// `axes[k]` is the k-th local axis (the k-th column of U).
    pub axes: [[f64; 3]; 3],
    /// p-block eigenvalues, descending. Zero for frames not computed from density.
    pub eigenvalues: [f64; 3],
    /// `degenerate[0]`: eigenvalues 0 and 1 tied; `degenerate[1]`: 1 and 2 tied.
    pub degenerate: [bool; 2],
    pub source: FrameSource,
}

impl Frame {
    pub fn identity() -> Self {
        Frame {
            axes: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            eigenvalues: [0.0; 3],
            degenerate: [false; 2],
            source: FrameSource::Identity,
        }
    }

    /// The matrix U with the axes as columns.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.axes[c][r])
    }

    /// Coordinates of `x` in this frame.
    pub fn local(&self, x: &[f64; 3]) -> [f64; 3] {
        let a = &self.axes;
        [
            a[0][0] * x[0] + a[0][1] * x[1] + a[0][2] * x[2],
            a[1][0] * x[0] + a[1][1] * x[1] + a[1][2] * x[2],
            a[2][0] * x[0] + a[2][1] * x[1] + a[2][2] * x[2],
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSet {
    pub frames: Vec<Frame>,
}

impl FrameSet {
    pub fn identity(n_nuc: usize) -> Self {
        FrameSet { frames: vec![Frame::identity(); n_nuc] }
    }

    /// Frames of the rotated molecule, `axes[k] -> q axes[k]`.
    pub fn rotated(&self, q: &[[f64; 3]; 3]) -> Self {
        let frames = self
            .frames
            .iter()
            .map(|f| {
                let mut g = f.clone();
                for k in 0..3 {
                    g.axes[k] = crate::system::mat_vec3(q, &f.axes[k]);
                }
                g
            })
            .collect();
        FrameSet { frames }
    }

    /// Plain-text dump: one line per nucleus holding U row-major then the
    /// three eigenvalues.
    pub fn dump(&self) -> String {
        let mut s = String::from("# dlvmc-frames v1: U[0][0] U[0][1] ... U[2][2] eig0 eig1 eig2\n");
        for f in &self.frames {
            let u = f.matrix();
            let mut vals: Vec<String> = Vec::with_capacity(12);
            for r in 0..3 {
                for c in 0..3 {
                    vals.push(format!("{:.16e}", u[(r, c)]));
                }
            }
            vals.extend(f.eigenvalues.iter().map(|e| format!("{e:.16e}")));
            s.push_str(&vals.join(" "));
            s.push('\n');
        }
        s
    }
}

/// The 3x3 block of the total density matrix over the p functions of `atom`,
/// or `None` if that atom carries no p shell.
pub fn p_block(scf: &ScfResult, atom: usize) -> Option<Matrix3<f64>> {
    let idx = scf.basis.p_functions(atom)?;
    let d = &scf.density;
    let mut m = Matrix3::from_fn(|r, c| d[(idx[r], idx[c])]);
    // exact symmetry regardless of round-off in the SCF
    for r in 0..3 {
        for c in r + 1..3 {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
    Some(m)
}

/// Unit vectors from `atom` toward the other nuclei, nearest first.
fn neighbor_directions(mol: &Molecule, atom: usize) -> Vec<Vector3<f64>> {
    let nuc = mol.nuclei();
    let here = nuc[atom].position;
    let mut others: Vec<(f64, usize)> = (0..nuc.len())
        .filter(|&j| j != atom)
        .map(|j| (distance(&here, &nuc[j].position), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others
        .into_iter()
        .map(|(d, j)| {
            let p = nuc[j].position;
            Vector3::new(p[0] - here[0], p[1] - here[1], p[2] - here[2]) / d
        })
        .collect()
}

/// Flips `u` so that its projection on the first neighbor direction with a
/// clearly nonzero projection is positive. Returns the magnitude of the
/// projection on the nearest neighbor.
fn orient_by_projection(u: &mut Vector3<f64>, dirs: &[Vector3<f64>]) -> f64 {
    let nearest = dirs.first().map_or(0.0, |d| u.dot(d).abs());
    for d in dirs {
        let p = u.dot(d);
        if p.abs() > SIGN_EPS {
            if p < 0.0 {
                *u = -*u;
            }
            break;
        }
    }
    nearest
}

/// Rotates the orthonormal pair `(a, b)` within its plane to best overlap
/// the targets `(ta, tb)`, keeping the orientation `a x b` fixed.
fn align_pair(a: &mut Vector3<f64>, b: &mut Vector3<f64>, ta: &Vector3<f64>, tb: &Vector3<f64>) {
    let m00 = a.dot(ta);
    let m01 = a.dot(tb);
    let m10 = b.dot(ta);
    let m11 = b.dot(tb);
    // maximize a'.ta + b'.tb with a' = cos a + sin b, b' = -sin a + cos b
    let theta = (m10 - m01).atan2(m00 + m11);
    let (s, c) = theta.sin_cos();
    let na = *a * c + *b * s;
    let nb = -*a * s + *b * c;
    *a = na;
    *b = nb;
}

fn to_axes(u: &[Vector3<f64>; 3]) -> [[f64; 3]; 3] {
    [
        [u[0][0], u[0][1], u[0][2]],
        [u[1][0], u[1][1], u[1][2]],
        [u[2][0], u[2][1], u[2][2]],
    ]
}

fn frame_from_block(
    block: &Matrix3<f64>,
    dirs: &[Vector3<f64>],
    previous: &[[f64; 3]; 3],
    tol_degenerate: f64,
) -> Frame {
    let eig = SymmetricEigen::new(*block);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let evals = [eig.eigenvalues[order[0]], eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]];
    let mut u: [Vector3<f64>; 3] = [
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ];
    let degenerate = [evals[0] - evals[1] < tol_degenerate, evals[1] - evals[2] < tol_degenerate];
    let prev: [Vector3<f64>; 3] = [previous[0].into(), previous[1].into(), previous[2].into()];

    if degenerate[0] && degenerate[1] {
        return Frame { axes: *previous, eigenvalues: evals, degenerate, source: FrameSource::Density };
    }

    if degenerate[0] || degenerate[1] {
        let (pa, pb, lone) = if degenerate[0] { (0, 1, 2) } else { (1, 2, 0) };
        orient_by_projection(&mut u[lone], dirs);
        // choose the pair's orientation so that the frame is right-handed
        if u[0].cross(&u[1]).dot(&u[2]) < 0.0 {
            u[pb] = -u[pb];
        }
        let (mut a, mut b) = (u[pa], u[pb]);
        align_pair(&mut a, &mut b, &prev[pa], &prev[pb]);
        u[pa] = a;
        u[pb] = b;
    } else {
        // two axes take their sign from geometry; the one least aligned with
        // the nearest neighbor is fixed by handedness instead
        let mut weakest = 0;
        let mut weakest_proj = f64::INFINITY;
        for (k, axis) in u.iter_mut().enumerate() {
            let p = orient_by_projection(axis, dirs);
            if p < weakest_proj {
                weakest_proj = p;
                weakest = k;
            }
        }
        if u[0].cross(&u[1]).dot(&u[2]) < 0.0 {
            u[weakest] = -u[weakest];
        }
    }
    Frame { axes: to_axes(&u), eigenvalues: evals, degenerate, source: FrameSource::Density }
}

/// Local frames for every nucleus.
///
/// Eigenvectors are sorted by descending eigenvalue and signed so they point
/// toward the nearest neighboring nucleus; the axis least aligned with that
/// neighbor is fixed by requiring a right-handed frame. A degenerate
/// eigenvalue pair is rotated within its plane to best match the
/// corresponding axes of the previous nucleus that has p functions (global
/// axes for the first one). Nuclei without p functions copy the frame of the
/// nearest nucleus that has them.
pub fn compute_frames(scf: &ScfResult, mol: &Molecule, tol_degenerate: f64) -> Result<FrameSet> {
    if !scf.converged {
        return Err(Error::NotConverged(format!(
            "cannot build frames from an SCF that did not converge in {} iterations",
            scf.iterations
        )));
    }
    let n = mol.n_nuc();
    if n == 1 {
        return Ok(FrameSet::identity(1));
    }
    let mut frames: Vec<Option<Frame>> = vec![None; n];
    let mut previous = Frame::identity().axes;
    for (atom, slot) in frames.iter_mut().enumerate() {
        if let Some(block) = p_block(scf, atom) {
            let dirs = neighbor_directions(mol, atom);
            let f = frame_from_block(&block, &dirs, &previous, tol_degenerate);
            previous = f.axes;
            *slot = Some(f);
        }
    }
    let nuc = mol.nuclei();
    let out = (0..n)
        .map(|atom| {
            if let Some(f) = &frames[atom] {
                return f.clone();
            }
            let donor = (0..n)
                .filter(|&j| frames[j].is_some())
                .min_by(|&i, &j| {
                    let di = distance(&nuc[atom].position, &nuc[i].position);
                    let dj = distance(&nuc[atom].position, &nuc[j].position);
                    di.total_cmp(&dj).then(i.cmp(&j))
                });
            match donor {
                Some(j) => Frame {
                    axes: frames[j].as_ref().unwrap().axes,
                    eigenvalues: [0.0; 3],
                    degenerate: [false; 2],
                    source: FrameSource::Borrowed(j),
                },
                None => Frame::identity(),
            }
        })
        .collect();
    Ok(FrameSet { frames: out })
}
