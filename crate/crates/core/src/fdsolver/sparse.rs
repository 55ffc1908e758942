//! Complex sparse storage and the two linear solvers behind the FD reference:
//! a banded LU with partial pivoting (direct) and Jacobi-preconditioned
//! BiCGStab (iterative fallback).

use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("zero pivot in column {column}: matrix is singular")]
    Singular { column: usize },
    #[error("entry ({row}, {col}) lies outside the half-bandwidth {band}")]
    OutsideBand { row: usize, col: usize, band: usize },
    #[error("BiCGStab stalled after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("dimension mismatch: matrix {expected}, vector {found}")]
    Dimension { expected: usize, found: usize },
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<Complex64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists. Columns within a row are
    /// sorted; duplicates are summed.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, Complex64)>>) -> Self {
        assert_eq!(rows.len(), n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                assert!(c < n, "column {c} out of range");
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { n, row_ptr, col_idx, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.row(r).find(|&(cc, _)| cc == c).map_or(Complex64::new(0.0, 0.0), |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.n).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    /// Largest `|r - c|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|r| self.row(r).map(move |(c, _)| r.abs_diff(c)))
            .max()
            .unwrap_or(0)
    }

    /// True when the sparsity pattern is structurally symmetric.
    pub fn is_pattern_symmetric(&self) -> bool {
        (0..self.n).all(|r| self.row(r).all(|(c, _)| self.row(c).any(|(cc, _)| cc == r)))
    }

    pub fn diagonal(&self) -> Vec<Complex64> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }
}

pub fn norm2(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// `||A x - b|| / ||b||` (or `||A x||` when `b` is zero).
pub fn relative_residual(a: &CsrMatrix, x: &[Complex64], b: &[Complex64]) -> f64 {
    let ax = a.mul_vec(x);
    let r: Vec<Complex64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    let nb = norm2(b);
    if nb == 0.0 {
        norm2(&r)
    } else {
        norm2(&r) / nb
    }
}

/// LU factorization of a banded matrix with partial (row) pivoting, stored in
/// the LAPACK `gbtrf` layout: column-major with `2 kl + ku + 1` rows, entry
/// `(r, c)` at `c * ldab + kl + ku + r - c`.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<Complex64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn factor(a: &CsrMatrix, band: usize) -> Result<Self, SolverError> {
        let n = a.dim();
        let (kl, ku) = (band, band);
        let kv = kl + ku;
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![Complex64::new(0.0, 0.0); n * ldab];
        for r in 0..n {
            for (c, v) in a.row(r) {
                if r.abs_diff(c) > band {
                    return Err(SolverError::OutsideBand { row: r, col: c, band });
                }
                ab[c * ldab + kv + r - c] = v;
            }
        }
        let mut ipiv = vec![0; n];
        let mut ju = 0;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ldab + kv;
            let mut jp = 0;
            let mut best = ab[col].norm_sqr();
            for t in 1..=km {
                let mag = ab[col + t].norm_sqr();
                if mag > best {
                    best = mag;
                    jp = t;
                }
            }
            ipiv[j] = j + jp;
            if best == 0.0 {
                return Err(SolverError::Singular { column: j });
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let base = c * ldab + kv - c;
                    ab.swap(base + j, base + j + jp);
                }
            }
            let inv = ab[col].inv();
            for t in 1..=km {
                ab[col + t] *= inv;
            }
            if km == 0 {
                continue;
            }
            let (head, tail) = ab.split_at_mut((j + 1) * ldab);
            let multipliers = &head[col + 1..=col + km];
            for c in j + 1..=ju {
                let base = (c - j - 1) * ldab + kv + j - c;
                let ujc = tail[base];
                if ujc == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for (dst, &l) in tail[base + 1..=base + km].iter_mut().zip(multipliers) {
                    *dst -= l * ujc;
                }
            }
        }
        Ok(Self { n, kl, ku, ldab, ab, ipiv })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [Complex64]) -> Result<(), SolverError> {
        if b.len() != self.n {
            return Err(SolverError::Dimension { expected: self.n, found: b.len() });
        }
        let n = self.n;
        let kv = self.kl + self.ku;
        for j in 0..n {
            let km = self.kl.min(n - 1 - j);
            let l = self.ipiv[j];
            if l != j {
                b.swap(l, j);
            }
            let bj = b[j];
            let col = j * self.ldab + kv;
            for t in 1..=km {
                b[j + t] -= self.ab[col + t] * bj;
            }
        }
        for j in (0..n).rev() {
            let col = j * self.ldab + kv;
            b[j] /= self.ab[col];
            let bj = b[j];
            for r in j.saturating_sub(kv)..j {
                b[r] -= self.ab[col + r - j] * bj;
            }
        }
        Ok(())
    }
}

/// Right-preconditioned BiCGStab with a Jacobi (diagonal) preconditioner.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[Complex64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<Complex64>, SolverError> {
    let n = a.dim();
    if b.len() != n {
        return Err(SolverError::Dimension { expected: n, found: b.len() });
    }
    let zero = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let dinv: Vec<Complex64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d == zero { one } else { d.inv() })
        .collect();
    let dot = |u: &[Complex64], v: &[Complex64]| -> Complex64 { u.iter().zip(v).map(|(p, q)| p.conj() * q).sum() };
    let nb = norm2(b);
    let mut x = vec![zero; n];
    if nb == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (one, one, one);
    let mut v = vec![zero; n];
    let mut p = vec![zero; n];
    let mut res = 1.0;
    for it in 0..max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == zero {
            return Err(SolverError::NotConverged { iterations: it, residual: res });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y: Vec<Complex64> = p.iter().zip(&dinv).map(|(a, d)| a * d).collect();
        v = a.mul_vec(&y);
        alpha = rho / dot(&r_hat, &v);
        let s: Vec<Complex64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if norm2(&s) / nb < tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(x);
        }
        let zv: Vec<Complex64> = s.iter().zip(&dinv).map(|(a, d)| a * d).collect();
        let t = a.mul_vec(&zv);
        let tt = dot(&t, &t);
        omega = if tt == zero { zero } else { dot(&t, &s) / tt };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zv[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm2(&r) / nb;
        if res < tol {
            return Ok(x);
        }
        if omega == zero {
            break;
        }
    }
    Err(SolverError::NotConverged { iterations: max_iter, residual: res })
}
