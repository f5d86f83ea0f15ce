//! Small dense-vector kernels, preconditioned conjugate gradients and a
//! banded Cholesky factorization for the SPD systems that appear here.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("conjugate gradients broke down at iteration {iter}: p'Ap = {curvature:e}")]
    Breakdown { iter: usize, curvature: f64 },
    #[error("conjugate gradients stalled after {iters} iterations (relative residual {residual:e})")]
    NoConvergence { iters: usize, residual: f64 },
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("non-finite value in linear solve")]
    NonFinite,
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four independent accumulators; deterministic order
    let mut s = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        s[0] += x[0] * y[0];
        s[1] += x[1] * y[1];
        s[2] += x[2] * y[2];
        s[3] += x[3] * y[3];
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += t * x`
#[inline]
pub fn axpy(t: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += t * xi;
    }
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    /// `||b - A x|| / ||b||` as tracked by the recursion.
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients for `A x = b` with `x` as the initial
/// guess. `apply(v, out)` writes `A v`, `precond(r, out)` writes `M^{-1} r`.
pub fn pcg(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    max_iter: usize,
) -> Result<CgStats, LinalgError> {
    let n = b.len();
    let bnorm = norm2(b);
    if !bnorm.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = norm2(&r) / bnorm;
    for iter in 0..max_iter {
        if res <= rtol {
            return Ok(CgStats {
                iterations: iter,
                relative_residual: res,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(LinalgError::Breakdown {
                iter,
                curvature: pap,
            });
        }
        let a = rz / pap;
        axpy(a, &p, x);
        axpy(-a, &ap, &mut r);
        res = norm2(&r) / bnorm;
        if !res.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if res <= rtol {
        return Ok(CgStats {
            iterations: max_iter,
            relative_residual: res,
        });
    }
    Err(LinalgError::NoConvergence {
        iters: max_iter,
        residual: res,
    })
}

/// Symmetric band matrix; only the lower band is stored.
///
/// Entry `(i, j)` with `i - bw <= j <= i` lives at `data[i*(bw+1) + j + bw - i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBand {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, bw: usize) -> Self {
        SymBand {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + j + self.bw - i
    }

    /// Entry `(i,j)`, zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds `v` to entries `(i,j)` and `(j,i)` (once on the diagonal).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "entry ({i},{j}) outside band {}", self.bw);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = 0.0;
            for j in lo..i {
                let a = self.data[self.idx(i, j)];
                s += a * x[j];
                out[j] += a * x[i];
            }
            s += self.data[self.idx(i, i)] * x[i];
            out[i] += s;
        }
    }

    /// In-place banded Cholesky `A = L L^T`.
    pub fn cholesky(mut self) -> Result<BandCholesky, LinalgError> {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = self.data[self.idx(i, j)];
                let ri = i * (bw + 1) + bw - i;
                let rj = j * (bw + 1) + bw - j;
                s -= dot(&self.data[ri + klo..ri + j], &self.data[rj + klo..rj + j]);
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(LinalgError::NotPositiveDefinite { row: i, pivot: s });
                    }
                    let d = self.idx(i, i);
                    self.data[d] = s.sqrt();
                } else {
                    let d = self.data[self.idx(j, j)];
                    let k = self.idx(i, j);
                    self.data[k] = s / d;
                }
            }
        }
        Ok(BandCholesky { l: self })
    }
}

/// Banded Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct BandCholesky {
    l: SymBand,
}

impl BandCholesky {
    pub fn dim(&self) -> usize {
        self.l.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw) = (self.l.n, self.l.bw);
        let d = &self.l.data;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let ri = i * (bw + 1) + bw - i;
            let s = x[i] - dot(&d[ri + lo..ri + i], &x[lo..i]);
            x[i] = s / d[ri + i];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = x[i];
            for k in i + 1..=hi {
                s -= d[k * (bw + 1) + bw - k + i] * x[k];
            }
            x[i] = s / d[i * (bw + 1) + bw];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// `-Delta_h + diag(c)` on the `n x n` interior nodes with zero Dirichlet data.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedLaplacian {
    pub n: usize,
    pub h: f64,
    pub shift: Vec<f64>,
}

impl ShiftedLaplacian {
    pub fn new(n: usize, h: f64, shift: Vec<f64>) -> Self {
        assert_eq!(shift.len(), n * n);
        ShiftedLaplacian { n, h, shift }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        let ih2 = 1.0 / (self.h * self.h);
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                let mut nb = 0.0;
                if i > 0 {
                    nb += x[k - 1];
                }
                if i + 1 < n {
                    nb += x[k + 1];
                }
                if j > 0 {
                    nb += x[k - n];
                }
                if j + 1 < n {
                    nb += x[k + n];
                }
                out[k] = (4.0 * x[k] - nb) * ih2 + self.shift[k] * x[k];
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let d = 4.0 / (self.h * self.h);
        self.shift.iter().map(|c| d + c).collect()
    }

    pub fn assemble(&self) -> SymBand {
        let n = self.n;
        let ih2 = 1.0 / (self.h * self.h);
        let mut a = SymBand::zeros(n * n, n);
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                a.add(k, k, 4.0 * ih2 + self.shift[k]);
                if i > 0 {
                    a.add(k, k - 1, -ih2);
                }
                if j > 0 {
                    a.add(k, k - n, -ih2);
                }
            }
        }
        a
    }
}
