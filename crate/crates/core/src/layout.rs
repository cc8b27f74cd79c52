//! Row bookkeeping for batched evaluation.
//!
//! Electron rows are ordered `(walker, electron)`, nucleus rows
//! `(walker, electron, nucleus)`. Electron pairs are split by spin relation:
//! same-spin pairs (including `i == j`) and opposite-spin pairs, each
//! ordered `(walker, i, j)` with `j` ascending.

use std::sync::Arc;

use crate::autodiff::RowMap;

#[derive(Debug)]
pub struct Layout {
    pub batch: usize,
    pub n_el: usize,
    pub n_up: usize,
    pub n_nuc: usize,
    /// `(i, j)` per walker, same spin.
    pub same_pairs: Vec<(usize, usize)>,
    /// `(i, j)` per walker, opposite spin.
    pub diff_pairs: Vec<(usize, usize)>,
    /// Electron rows -> same-spin pair rows, `x_i - x_j`.
    pub same_delta: Arc<RowMap>,
    pub diff_delta: Arc<RowMap>,
    /// Electron rows -> pair rows, picking electron `j`.
    pub same_gather_j: Arc<RowMap>,
    pub diff_gather_j: Arc<RowMap>,
    /// (same pairs, opposite pairs) -> electron rows, summing over `j`.
    pub pair_scatter_i: Arc<RowMap>,
    /// Electron rows -> electron rows, mean over spin-up (spin-down)
    /// electrons of the same walker. Empty channels give zero rows.
    pub mean_up: Arc<RowMap>,
    pub mean_dn: Arc<RowMap>,
    /// Nucleus-table rows (`n_nuc`) -> nucleus rows.
    pub nuc_gather: Arc<RowMap>,
    /// Nucleus rows -> electron rows, summing over nuclei.
    pub nuc_scatter: Arc<RowMap>,
    /// Electron rows -> spin-up (spin-down) electron rows.
    pub select_up: Arc<RowMap>,
    pub select_dn: Arc<RowMap>,
}

impl Layout {
    pub fn new(batch: usize, n_el: usize, n_up: usize, n_nuc: usize) -> Self {
        let n_dn = n_el - n_up;
        let up = |i: usize| i < n_up;
        let mut same_pairs = Vec::new();
        let mut diff_pairs = Vec::new();
        for i in 0..n_el {
            for j in 0..n_el {
                if up(i) == up(j) {
                    same_pairs.push((i, j));
                } else {
                    diff_pairs.push((i, j));
                }
            }
        }
        let rows = batch * n_el;
        let pair_maps = |pairs: &[(usize, usize)]| {
            let n = batch * pairs.len();
            let mut delta = RowMap::builder(vec![rows], n);
            let mut gather = RowMap::builder(vec![rows], n);
            for w in 0..batch {
                for (p, &(i, j)) in pairs.iter().enumerate() {
                    let o = w * pairs.len() + p;
                    if i != j {
                        delta.add(o, 0, w * n_el + i, 1.0);
                        delta.add(o, 0, w * n_el + j, -1.0);
                    }
                    gather.add(o, 0, w * n_el + j, 1.0);
                }
            }
            (Arc::new(delta.build()), Arc::new(gather.build()))
        };
        let (same_delta, same_gather_j) = pair_maps(&same_pairs);
        let (diff_delta, diff_gather_j) = pair_maps(&diff_pairs);

        let ns = same_pairs.len();
        let nd = diff_pairs.len();
        let mut scatter = RowMap::builder(vec![batch * ns, batch * nd], rows);
        for w in 0..batch {
            for (p, &(i, _)) in same_pairs.iter().enumerate() {
                scatter.add(w * n_el + i, 0, w * ns + p, 1.0);
            }
            for (p, &(i, _)) in diff_pairs.iter().enumerate() {
                scatter.add(w * n_el + i, 1, w * nd + p, 1.0);
            }
        }

        let mean = |range: std::ops::Range<usize>| {
            let mut b = RowMap::builder(vec![rows], rows);
            let len = range.len();
            if len > 0 {
                let wgt = 1.0 / len as f64;
                for w in 0..batch {
                    for i in 0..n_el {
                        for j in range.clone() {
                            b.add(w * n_el + i, 0, w * n_el + j, wgt);
                        }
                    }
                }
            }
            Arc::new(b.build())
        };

        let nrows = rows * n_nuc;
        let mut nuc_gather = RowMap::builder(vec![n_nuc], nrows);
        let mut nuc_scatter = RowMap::builder(vec![nrows], rows);
        for r in 0..rows {
            for nuc in 0..n_nuc {
                nuc_gather.add(r * n_nuc + nuc, 0, nuc, 1.0);
                nuc_scatter.add(r, 0, r * n_nuc + nuc, 1.0);
            }
        }

        let select = |range: std::ops::Range<usize>| {
            let len = range.len();
            let mut b = RowMap::builder(vec![rows], batch * len);
            for w in 0..batch {
                for (k, i) in range.clone().enumerate() {
                    b.add(w * len + k, 0, w * n_el + i, 1.0);
                }
            }
            Arc::new(b.build())
        };

        Layout {
            batch,
            n_el,
            n_up,
            n_nuc,
            same_delta,
            diff_delta,
            same_gather_j,
            diff_gather_j,
            pair_scatter_i: Arc::new(scatter.build()),
            mean_up: mean(0..n_up),
            mean_dn: mean(n_up..n_el),
            nuc_gather: Arc::new(nuc_gather.build()),
            nuc_scatter: Arc::new(nuc_scatter.build()),
            select_up: select(0..n_up),
            select_dn: select(n_up..n_up + n_dn),
            same_pairs,
            diff_pairs,
        }
    }

    pub fn n_dn(&self) -> usize {
        self.n_el - self.n_up
    }

    /// Maps per-spin orbital blocks to determinant rows.
    ///
    /// Inputs are `(walker, electron-in-channel, det)` rows of width `n_orb`
    /// for the up and down channels; the output holds, for every
    /// `(walker, det)`, the `n_orb x n_orb` matrix whose row `i` is electron
    /// `i`'s orbital values. With `dense`, both channels feed one
    /// `n_el x n_el` matrix; otherwise `channel` selects the block.
    pub fn det_assembly(&self, n_det: usize, dense: bool, channel: usize) -> Arc<RowMap> {
        let n_up = self.n_up;
        let n_dn = self.n_dn();
        let b = self.batch;
        if dense {
            let n = self.n_el;
            let mut m = RowMap::builder(vec![b * n_up * n_det, b * n_dn * n_det], b * n_det * n);
            for w in 0..b {
                for d in 0..n_det {
                    for i in 0..n {
                        let o = (w * n_det + d) * n + i;
                        if i < n_up {
                            m.add(o, 0, (w * n_up + i) * n_det + d, 1.0);
                        } else {
                            m.add(o, 1, (w * n_dn + i - n_up) * n_det + d, 1.0);
                        }
                    }
                }
            }
            Arc::new(m.build())
        } else {
            let n = if channel == 0 { n_up } else { n_dn };
            let mut m = RowMap::builder(vec![b * n * n_det], b * n_det * n);
            for w in 0..b {
                for d in 0..n_det {
                    for i in 0..n {
                        m.add((w * n_det + d) * n + i, 0, (w * n + i) * n_det + d, 1.0);
                    }
                }
            }
            Arc::new(m.build())
        }
    }
}
