//! Network input features built from electron and nuclear coordinates.
//!
//! * `h0_i`: for every nucleus `I` in order, `[|rho_iI|, rho~_iI]`, where
//!   `rho_iI = r_i - R_I` and `rho~_iI` is that vector in the frame of `I`
//!   (or untouched in `raw_diffs` mode). `distances_only` keeps `|rho_iI|`.
//! * `v0_iI`: `[|rho_iI|, rho~_iI]` (`[|rho_iI|]` for `distances_only`).
//! * `g0_ij`: `|r_ij|`, plus the difference vector `r_i - r_j` in
//!   `raw_diffs` mode. The diagonal `i == j` is included as zero.

use std::sync::Arc;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::frames::FrameSet;
use crate::layout::Layout;
use crate::system::Molecule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    #[default]
    LocalFrames,
    RawDiffs,
    DistancesOnly,
}

impl FeatureMode {
    pub fn h0_dim(self, n_nuc: usize) -> usize {
        match self {
            FeatureMode::DistancesOnly => n_nuc,
            _ => 4 * n_nuc,
        }
    }

    pub fn v0_dim(self) -> usize {
        match self {
            FeatureMode::DistancesOnly => 1,
            _ => 4,
        }
    }

    pub fn g0_dim(self) -> usize {
        match self {
            FeatureMode::RawDiffs => 4,
            _ => 1,
        }
    }
}

/// Features of a single electron configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    /// `n_el x h0_dim`
    pub h0: Array2<f64>,
    /// `n_el x n_nuc x v0_dim`
    pub v0: Array3<f64>,
    /// `n_el x n_el x g0_dim`
    pub g0: Array3<f64>,
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn build_features(mol: &Molecule, frames: &FrameSet, r: &[[f64; 3]], mode: FeatureMode) -> FeatureBatch {
    let n_el = r.len();
    let nuc = mol.nuclei();
    let n_nuc = nuc.len();
    let mut h0 = Array2::zeros((n_el, mode.h0_dim(n_nuc)));
    let mut v0 = Array3::zeros((n_el, n_nuc, mode.v0_dim()));
    let mut g0 = Array3::zeros((n_el, n_el, mode.g0_dim()));
    for i in 0..n_el {
        for (k, n) in nuc.iter().enumerate() {
            let rho = [r[i][0] - n.position[0], r[i][1] - n.position[1], r[i][2] - n.position[2]];
            let vec = match mode {
                FeatureMode::LocalFrames => frames.frames[k].local(&rho),
                _ => rho,
            };
            let d = norm3(&rho);
            match mode {
                FeatureMode::DistancesOnly => {
                    h0[[i, k]] = d;
                    v0[[i, k, 0]] = d;
                }
                _ => {
                    h0[[i, 4 * k]] = d;
                    v0[[i, k, 0]] = d;
                    for c in 0..3 {
                        h0[[i, 4 * k + 1 + c]] = vec[c];
                        v0[[i, k, 1 + c]] = vec[c];
                    }
                }
            }
        }
        for j in 0..n_el {
            let dv = [r[i][0] - r[j][0], r[i][1] - r[j][1], r[i][2] - r[j][2]];
            g0[[i, j, 0]] = norm3(&dv);
            if mode == FeatureMode::RawDiffs {
                for c in 0..3 {
                    g0[[i, j, 1 + c]] = dv[c];
                }
            }
        }
    }
    FeatureBatch { h0, v0, g0 }
}

/// Graph nodes holding the batched features.
#[derive(Debug, Clone, Copy)]
pub struct FeatureVars {
    /// Electron rows x h0_dim.
    pub h0: Var,
    /// Nucleus rows x v0_dim.
    pub v0: Var,
    /// Same-spin pair rows x g0_dim.
    pub g_same: Var,
    /// Opposite-spin pair rows x g0_dim (absent without such pairs).
    pub g_diff: Option<Var>,
    /// Electron rows x n_nuc electron-nucleus distances.
    pub rho_norm: Var,
}

/// Precomputed constants for [`graph_features`].
#[derive(Debug, Clone)]
pub struct FeatureConstants {
    /// `3 x 3 n_nuc`: columns `3I..3I+3` are the axes of nucleus `I`.
    axes: Array2<f64>,
    /// `1 x 3 n_nuc`: nucleus positions in their own frames, negated.
    shift: Array2<f64>,
    h0_order: Arc<Vec<usize>>,
    mode: FeatureMode,
    n_nuc: usize,
}

impl FeatureConstants {
    pub fn new(mol: &Molecule, frames: &FrameSet, mode: FeatureMode) -> Self {
        let n_nuc = mol.n_nuc();
        let mut axes = Array2::zeros((3, 3 * n_nuc));
        let mut shift = Array2::zeros((1, 3 * n_nuc));
        for (k, n) in mol.nuclei().iter().enumerate() {
            let local = matches!(mode, FeatureMode::LocalFrames);
            for c in 0..3 {
                for r in 0..3 {
                    axes[[r, 3 * k + c]] = if local {
                        frames.frames[k].axes[c][r]
                    } else if r == c {
                        1.0
                    } else {
                        0.0
                    };
                }
                shift[[0, 3 * k + c]] = -(0..3).map(|r| axes[[r, 3 * k + c]] * n.position[r]).sum::<f64>();
            }
        }
        // [norms | vectors] -> per nucleus [norm, vec]
        let h0_order = (0..n_nuc).flat_map(|k| [k, n_nuc + 3 * k, n_nuc + 3 * k + 1, n_nuc + 3 * k + 2]).collect();
        FeatureConstants { axes, shift, h0_order: Arc::new(h0_order), mode, n_nuc }
    }
}

/// Builds the batched features from electron rows `x` (`batch * n_el x 3`).
pub fn graph_features(g: &mut Graph, consts: &FeatureConstants, layout: &Layout, x: Var) -> FeatureVars {
    let axes = g.constant(consts.axes.clone());
    let shift = g.constant(consts.shift.clone());
    let rot = g.matmul(x, axes);
    let local = g.add_bias(rot, shift);
    let rho_norm = g.group_norm(local, 3);
    let rows = layout.batch * layout.n_el;
    let n_nuc = consts.n_nuc;
    let (h0, v0) = match consts.mode {
        FeatureMode::DistancesOnly => {
            let v0 = g.reshape(rho_norm, rows * n_nuc, 1);
            (rho_norm, v0)
        }
        _ => {
            let cat = g.concat_cols(&[rho_norm, local]);
            let h0 = g.select_cols(cat, consts.h0_order.clone());
            let v0 = g.reshape(h0, rows * n_nuc, 4);
            (h0, v0)
        }
    };
    let pair = |g: &mut Graph, map| {
        let delta = g.row_map(&[x], map);
        let dist = g.group_norm(delta, 3);
        if consts.mode == FeatureMode::RawDiffs {
            g.concat_cols(&[dist, delta])
        } else {
            dist
        }
    };
    let g_same = pair(g, layout.same_delta.clone());
    let g_diff = (!layout.diff_pairs.is_empty()).then(|| pair(g, layout.diff_delta.clone()));
    FeatureVars { h0, v0, g_same, g_diff, rho_norm }
}
