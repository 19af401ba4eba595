//! Small dense and block-tridiagonal linear algebra.
//!
//! Matrices are row-major. Multi-right-hand-side operations keep the
//! right-hand-side index contiguous so the inner loops are plain `axpy`s.

use std::ops::{Index, IndexMut};

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("matrix is singular to working precision (pivot {pivot})")]
pub struct SingularMatrix {
    pub pivot: usize,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DMat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

#[inline]
pub(crate) fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

impl<T: Real> DMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[T]) {
        assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: T, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        axpy(s, &other.data, &mut self.data);
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, other.cols);
        self.matmul_acc(T::one(), other, &mut out);
        out
    }

    /// `out += s * self * other`
    pub fn matmul_acc(&self, s: T, other: &Self, out: &mut Self) {
        assert_eq!(self.cols, other.rows);
        assert_eq!((out.rows, out.cols), (self.rows, other.cols));
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != T::zero() {
                    axpy(s * a, other.row(k), out_row);
                }
            }
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `y += s * self * x`
    pub fn mul_vec_acc(&self, s: T, x: &[T], y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += s * dot(self.row(i), x);
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn lu(&self) -> Result<Lu<T>, SingularMatrix> {
        Lu::new(self.clone())
    }

    pub fn inverse(&self) -> Result<Self, SingularMatrix> {
        let lu = self.lu()?;
        let mut inv = Self::identity(self.rows);
        lu.solve_mat(&mut inv);
        Ok(inv)
    }
}

impl<T> Index<(usize, usize)> for DMat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for DMat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: DMat<T>,
    /// Row swapped with row `k` at elimination step `k`.
    swaps: Vec<usize>,
}

impl<T: Real> Lu<T> {
    pub fn new(mut a: DMat<T>) -> Result<Self, SingularMatrix> {
        assert_eq!(a.rows, a.cols, "LU needs a square matrix");
        let n = a.rows;
        let scale = a.max_abs();
        let tiny = scale * T::epsilon() * T::from_count(n.max(1));
        let mut swaps = Vec::with_capacity(n);
        for k in 0..n {
            let mut p = k;
            let mut best = a[(k, k)].abs();
            for i in k + 1..n {
                let v = a[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) {
                return Err(SingularMatrix { pivot: k });
            }
            swaps.push(p);
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
            }
            let inv = T::one() / a[(k, k)];
            let (top, bottom) = a.data.split_at_mut((k + 1) * n);
            let pivot_row = &top[k * n + k + 1..k * n + n];
            for i in 0..n - k - 1 {
                let row = &mut bottom[i * n..(i + 1) * n];
                let l = row[k] * inv;
                row[k] = l;
                if l != T::zero() {
                    axpy(-l, pivot_row, &mut row[k + 1..]);
                }
            }
        }
        Ok(Self { lu: a, swaps })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        for (k, &p) in self.swaps.iter().enumerate() {
            b.swap(k, p);
        }
        for i in 0..n {
            let s = dot(&self.lu.row(i)[..i], &b[..i]);
            b[i] -= s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s = dot(&row[i + 1..], &b[i + 1..]);
            b[i] = (b[i] - s) / row[i];
        }
    }

    /// Solves `A X = B` in place for a row-major `B` with any number of columns.
    pub fn solve_mat(&self, b: &mut DMat<T>) {
        let n = self.dim();
        assert_eq!(b.rows, n);
        let m = b.cols;
        if m == 0 {
            return;
        }
        for (k, &p) in self.swaps.iter().enumerate() {
            if p != k {
                for j in 0..m {
                    b.data.swap(k * m + j, p * m + j);
                }
            }
        }
        for i in 1..n {
            let (done, rest) = b.data.split_at_mut(i * m);
            let target = &mut rest[..m];
            for (j, &l) in self.lu.row(i)[..i].iter().enumerate() {
                if l != T::zero() {
                    axpy(-l, &done[j * m..(j + 1) * m], target);
                }
            }
        }
        for i in (0..n).rev() {
            let (head, tail) = b.data.split_at_mut((i + 1) * m);
            let target = &mut head[i * m..];
            let row = self.lu.row(i);
            for (off, &u) in row[i + 1..].iter().enumerate() {
                if u != T::zero() {
                    axpy(-u, &tail[off * m..(off + 1) * m], target);
                }
            }
            let inv = T::one() / row[i];
            target.iter_mut().for_each(|x| *x *= inv);
        }
    }
}

/// Square block-tridiagonal matrix with dense blocks.
///
/// `lower[k]` is block `(k+1, k)` and `upper[k]` is block `(k, k+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTridiagonal<T> {
    block_size: usize,
    pub lower: Vec<DMat<T>>,
    pub diag: Vec<DMat<T>>,
    pub upper: Vec<DMat<T>>,
}

impl<T: Real> BlockTridiagonal<T> {
    pub fn zeros(blocks: usize, block_size: usize) -> Self {
        assert!(blocks >= 1);
        let z = DMat::zeros(block_size, block_size);
        Self {
            block_size,
            lower: vec![z.clone(); blocks - 1],
            diag: vec![z.clone(); blocks],
            upper: vec![z; blocks - 1],
        }
    }

    /// Wraps a dense matrix as a single diagonal block.
    pub fn from_dense(m: DMat<T>) -> Self {
        assert_eq!(m.rows(), m.cols());
        Self {
            block_size: m.rows(),
            lower: Vec::new(),
            diag: vec![m],
            upper: Vec::new(),
        }
    }

    #[inline]
    pub fn blocks(&self) -> usize {
        self.diag.len()
    }

    #[inline]
    pub fn block_size(&self) -> usize {
        self.block_size
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.block_size * self.blocks()
    }

    pub fn stored_blocks(&self) -> usize {
        self.lower.len() + self.diag.len() + self.upper.len()
    }

    pub fn set_zero(&mut self) {
        for b in self
            .lower
            .iter_mut()
            .chain(self.diag.iter_mut())
            .chain(self.upper.iter_mut())
        {
            b.fill(T::zero());
        }
    }

    pub fn to_dense(&self) -> DMat<T> {
        let b = self.block_size;
        let mut out = DMat::zeros(self.dim(), self.dim());
        let mut put = |bi: usize, bj: usize, blk: &DMat<T>| {
            for i in 0..b {
                for j in 0..b {
                    out[(bi * b + i, bj * b + j)] = blk[(i, j)];
                }
            }
        };
        for k in 0..self.blocks() {
            put(k, k, &self.diag[k]);
            if k + 1 < self.blocks() {
                put(k + 1, k, &self.lower[k]);
                put(k, k + 1, &self.upper[k]);
            }
        }
        out
    }

    /// `y = self * x`
    pub fn mul_vec(&self, x: &[T], y: &mut [T]) {
        let b = self.block_size;
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        for k in 0..self.blocks() {
            let yk = &mut y[k * b..(k + 1) * b];
            yk.iter_mut().for_each(|v| *v = T::zero());
            self.diag[k].mul_vec_acc(T::one(), &x[k * b..(k + 1) * b], yk);
            if k > 0 {
                self.lower[k - 1].mul_vec_acc(T::one(), &x[(k - 1) * b..k * b], yk);
            }
            if k + 1 < self.blocks() {
                self.upper[k].mul_vec_acc(T::one(), &x[(k + 1) * b..(k + 2) * b], yk);
            }
        }
    }

    /// `out += s * self * x` for a row-major `x` with any number of columns.
    pub fn mul_mat_acc(&self, s: T, x: &DMat<T>, out: &mut DMat<T>) {
        let b = self.block_size;
        let m = x.cols();
        assert_eq!(x.rows(), self.dim());
        assert_eq!((out.rows(), out.cols()), (self.dim(), m));
        for k in 0..self.blocks() {
            for i in 0..b {
                let row = k * b + i;
                let target = &mut out.data[row * m..(row + 1) * m];
                let mut apply = |blk: &DMat<T>, col_block: usize| {
                    for (j, &a) in blk.row(i).iter().enumerate() {
                        if a != T::zero() {
                            let src = col_block * b + j;
                            axpy(s * a, &x.data[src * m..(src + 1) * m], target);
                        }
                    }
                };
                if k > 0 {
                    apply(&self.lower[k - 1], k - 1);
                }
                apply(&self.diag[k], k);
                if k + 1 < self.blocks() {
                    apply(&self.upper[k], k + 1);
                }
            }
        }
    }

    /// Forms `I - s * self`.
    pub fn identity_minus_scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        for blk in out
            .lower
            .iter_mut()
            .chain(out.diag.iter_mut())
            .chain(out.upper.iter_mut())
        {
            blk.scale(-s);
        }
        for blk in out.diag.iter_mut() {
            for i in 0..self.block_size {
                blk[(i, i)] += T::one();
            }
        }
        out
    }

    /// Block LU without inter-block pivoting; partial pivoting inside each
    /// diagonal Schur complement.
    pub fn factorize(&self) -> Result<BlockTridiagonalLu<T>, SingularMatrix> {
        let nb = self.blocks();
        let b = self.block_size;
        let mut schur_lu = Vec::with_capacity(nb);
        let mut coupling = Vec::with_capacity(nb.saturating_sub(1));
        let mut delta = self.diag[0].clone();
        for k in 0..nb {
            if k > 0 {
                let w: &DMat<T> = &coupling[k - 1];
                delta = self.diag[k].clone();
                self.lower[k - 1].matmul_acc(-T::one(), w, &mut delta);
            }
            let lu = Lu::new(delta.clone()).map_err(|e| SingularMatrix {
                pivot: k * b + e.pivot,
            })?;
            if k + 1 < nb {
                let mut w = self.upper[k].clone();
                lu.solve_mat(&mut w);
                coupling.push(w);
            }
            schur_lu.push(lu);
        }
        Ok(BlockTridiagonalLu {
            block_size: b,
            schur_lu,
            coupling,
            lower: self.lower.clone(),
        })
    }
}

/// Factorization `A = L̃ Ũ` with block-diagonal Schur complements in `L̃`
/// and unit-diagonal `Ũ` carrying `W_k = Δ_k⁻¹ U_k`.
#[derive(Debug, Clone)]
pub struct BlockTridiagonalLu<T> {
    block_size: usize,
    schur_lu: Vec<Lu<T>>,
    coupling: Vec<DMat<T>>,
    lower: Vec<DMat<T>>,
}

impl<T: Real> BlockTridiagonalLu<T> {
    pub fn dim(&self) -> usize {
        self.block_size * self.schur_lu.len()
    }

    pub fn solve_in_place(&self, r: &mut [T]) {
        let b = self.block_size;
        let nb = self.schur_lu.len();
        assert_eq!(r.len(), self.dim());
        for k in 0..nb {
            if k > 0 {
                let (prev, cur) = r.split_at_mut(k * b);
                let g_prev = &prev[(k - 1) * b..];
                self.lower[k - 1].mul_vec_acc(-T::one(), g_prev, &mut cur[..b]);
            }
            self.schur_lu[k].solve_in_place(&mut r[k * b..(k + 1) * b]);
        }
        for k in (0..nb.saturating_sub(1)).rev() {
            let (cur, next) = r.split_at_mut((k + 1) * b);
            self.coupling[k].mul_vec_acc(-T::one(), &next[..b], &mut cur[k * b..]);
        }
    }

    /// Solves for all columns of a row-major right-hand side in place.
    pub fn solve_mat(&self, r: &mut DMat<T>) {
        let b = self.block_size;
        let nb = self.schur_lu.len();
        let m = r.cols();
        assert_eq!(r.rows(), self.dim());
        if m == 0 {
            return;
        }
        let mut block = DMat::zeros(b, m);
        for k in 0..nb {
            if k > 0 {
                let (prev, cur) = r.data.split_at_mut(k * b * m);
                let g_prev = &prev[(k - 1) * b * m..];
                let lower = &self.lower[k - 1];
                for i in 0..b {
                    let target = &mut cur[i * m..(i + 1) * m];
                    for (j, &a) in lower.row(i).iter().enumerate() {
                        if a != T::zero() {
                            axpy(-a, &g_prev[j * m..(j + 1) * m], target);
                        }
                    }
                }
            }
            block
                .data
                .copy_from_slice(&r.data[k * b * m..(k + 1) * b * m]);
            self.schur_lu[k].solve_mat(&mut block);
            r.data[k * b * m..(k + 1) * b * m].copy_from_slice(&block.data);
        }
        for k in (0..nb.saturating_sub(1)).rev() {
            let (cur, next) = r.data.split_at_mut((k + 1) * b * m);
            let x_next = &next[..b * m];
            let w = &self.coupling[k];
            for i in 0..b {
                let target = &mut cur[(k * b + i) * m..(k * b + i + 1) * m];
                for (j, &a) in w.row(i).iter().enumerate() {
                    if a != T::zero() {
                        axpy(-a, &x_next[j * m..(j + 1) * m], target);
                    }
                }
            }
        }
    }
}

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `diag`
/// and off-diagonal `off` (`off.len() == diag.len() - 1`), ascending.
///
/// Implicit QL with Wilkinson shifts; eigenvectors are not accumulated.
pub fn symmetric_tridiagonal_eigenvalues<T: Real>(diag: &[T], off: &[T]) -> Vec<T> {
    let n = diag.len();
    if n == 0 {
        return Vec::new();
    }
    assert_eq!(off.len() + 1, n, "off-diagonal length must be n - 1");
    let mut d = diag.to_vec();
    let mut e: Vec<T> = off
        .iter()
        .copied()
        .chain(std::iter::once(T::zero()))
        .collect();
    let two = T::lit(2.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= T::epsilon() * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter <= 60, "tridiagonal QL failed to converge");
            let mut g = (d[l + 1] - d[l]) / (two * e[l]);
            let mut r = g.hypot(T::one());
            g = d[m] - d[l] + e[l] / (g + r.abs().copysign(g));
            let (mut s, mut c, mut p) = (T::one(), T::one(), T::zero());
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == T::zero() {
                    d[i + 1] -= p;
                    e[m] = T::zero();
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + two * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = T::zero();
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    d
}
