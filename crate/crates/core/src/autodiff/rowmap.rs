use ndarray::{Array2, ArrayView2};

/// A sparse linear map on rows: output row `o` is a weighted sum of rows
/// drawn from one or more inputs with equal column counts. Gathers,
/// scatters, concatenation along rows and group means are all row maps.
#[derive(Debug, Clone)]
pub struct RowMap {
    input_rows: Vec<usize>,
    offsets: Vec<usize>,
    src_input: Vec<u32>,
    src_row: Vec<u32>,
    weight: Vec<f64>,
}

/// Collects entries for a [`RowMap`].
#[derive(Debug)]
pub struct RowMapBuilder {
    input_rows: Vec<usize>,
    rows: Vec<Vec<(u32, u32, f64)>>,
}

impl RowMapBuilder {
    /// Adds `weight * inputs[input][in_row]` to output row `out_row`.
    pub fn add(&mut self, out_row: usize, input: usize, in_row: usize, weight: f64) {
        assert!(in_row < self.input_rows[input], "row {in_row} out of range for input {input}");
        self.rows[out_row].push((input as u32, in_row as u32, weight));
    }

    pub fn build(self) -> RowMap {
        let mut offsets = Vec::with_capacity(self.rows.len() + 1);
        let mut src_input = Vec::new();
        let mut src_row = Vec::new();
        let mut weight = Vec::new();
        offsets.push(0);
        for row in self.rows {
            for (i, r, w) in row {
                src_input.push(i);
                src_row.push(r);
                weight.push(w);
            }
            offsets.push(src_input.len());
        }
        RowMap { input_rows: self.input_rows, offsets, src_input, src_row, weight }
    }
}

fn contiguous<'a>(v: &'a ArrayView2<'a, f64>, keep: &'a mut Option<Array2<f64>>) -> &'a [f64] {
    if let Some(s) = v.as_slice() {
        return s;
    }
    *keep = Some(v.as_standard_layout().into_owned());
    keep.as_ref().unwrap().as_slice().unwrap()
}

impl RowMap {
    pub fn builder(input_rows: Vec<usize>, n_out: usize) -> RowMapBuilder {
        RowMapBuilder { input_rows, rows: vec![Vec::new(); n_out] }
    }

    pub fn n_out(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_inputs(&self) -> usize {
        self.input_rows.len()
    }

    pub fn input_rows(&self, k: usize) -> usize {
        self.input_rows[k]
    }

    pub fn apply(&self, inputs: &[ArrayView2<f64>]) -> Array2<f64> {
        self.apply_partial(inputs)
    }

    /// Like [`RowMap::apply`], but inputs given as empty (0 x 0) arrays are
    /// treated as zero.
    pub fn apply_partial(&self, inputs: &[ArrayView2<f64>]) -> Array2<f64> {
        let cols = inputs.iter().map(|v| v.ncols()).max().unwrap_or(0);
        let mut keeps: Vec<Option<Array2<f64>>> = (0..inputs.len()).map(|_| None).collect();
        let slices: Vec<Option<&[f64]>> = inputs
            .iter()
            .zip(keeps.iter_mut())
            .map(|(v, k)| if v.nrows() == 0 && v.ncols() == 0 { None } else { Some(contiguous(v, k)) })
            .collect();
        let n_out = self.n_out();
        let mut out = vec![0.0; n_out * cols];
        for o in 0..n_out {
            let dst = &mut out[o * cols..(o + 1) * cols];
            for e in self.offsets[o]..self.offsets[o + 1] {
                let Some(src) = slices[self.src_input[e] as usize] else { continue };
                let r = self.src_row[e] as usize;
                let w = self.weight[e];
                let row = &src[r * cols..(r + 1) * cols];
                for (d, s) in dst.iter_mut().zip(row) {
                    *d += w * s;
                }
            }
        }
        Array2::from_shape_vec((n_out, cols), out).unwrap()
    }

    /// Transpose map: distributes output cotangents back onto each input.
    pub fn apply_transpose(&self, g: &Array2<f64>) -> Vec<Array2<f64>> {
        let cols = g.ncols();
        let mut keep = None;
        let gv = g.view();
        let gs = contiguous(&gv, &mut keep);
        let mut outs: Vec<Vec<f64>> = self.input_rows.iter().map(|&r| vec![0.0; r * cols]).collect();
        for o in 0..self.n_out() {
            let src = &gs[o * cols..(o + 1) * cols];
            for e in self.offsets[o]..self.offsets[o + 1] {
                let r = self.src_row[e] as usize;
                let w = self.weight[e];
                let dst = &mut outs[self.src_input[e] as usize][r * cols..(r + 1) * cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        outs.into_iter()
            .zip(&self.input_rows)
            .map(|(v, &r)| Array2::from_shape_vec((r, cols), v).unwrap())
            .collect()
    }
}
