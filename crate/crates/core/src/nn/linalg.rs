//! Dense kernels over row-major blocks.
//!
//! Each kernel addresses a column window `[offset, offset + cols)` of a
//! matrix whose rows are `stride` long, so a layer acting on a concatenated
//! input can be applied one half at a time.

#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub rows: usize,
    pub cols: usize,
    pub stride: usize,
    pub offset: usize,
}

impl Block {
    pub fn full(rows: usize, cols: usize) -> Self {
        Block {
            rows,
            cols,
            stride: cols,
            offset: 0,
        }
    }

    #[inline]
    fn row<'a>(&self, w: &'a [f64], r: usize) -> &'a [f64] {
        let start = r * self.stride + self.offset;
        &w[start..start + self.cols]
    }

    #[inline]
    fn row_mut<'a>(&self, w: &'a mut [f64], r: usize) -> &'a mut [f64] {
        let start = r * self.stride + self.offset;
        &mut w[start..start + self.cols]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += W x`
pub fn matvec_acc(w: &[f64], block: Block, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), block.cols);
    debug_assert_eq!(out.len(), block.rows);
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot(block.row(w, r), x);
    }
}

/// `dx += W^T dy`
pub fn matvec_t_acc(w: &[f64], block: Block, dy: &[f64], dx: &mut [f64]) {
    debug_assert_eq!(dy.len(), block.rows);
    debug_assert_eq!(dx.len(), block.cols);
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (d, &wv) in dx.iter_mut().zip(block.row(w, r)) {
            *d += g * wv;
        }
    }
}

/// `dW += dy x^T`
pub fn outer_acc(dw: &mut [f64], block: Block, dy: &[f64], x: &[f64]) {
    debug_assert_eq!(dy.len(), block.rows);
    debug_assert_eq!(x.len(), block.cols);
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (d, &xv) in block.row_mut(dw, r).iter_mut().zip(x) {
            *d += g * xv;
        }
    }
}

pub fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
