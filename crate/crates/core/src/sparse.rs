//! Compressed sparse column storage for symmetric systems and a thin
//! factorization wrapper around `faer`.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{MatMut, Side};

use crate::error::{Result, XqcError};

/// Full (both triangles) sparsity pattern of a square matrix in CSC layout
/// with sorted row indices in every column.
#[derive(Debug, Clone)]
pub struct SparsePattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl SparsePattern {
    /// Builds the pattern from `(row, col)` coordinates; duplicates are merged.
    pub fn from_coordinates(n: usize, coords: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut per_col: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (r, c) in coords {
            debug_assert!(r < n && c < n);
            per_col[c].push(r);
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for mut rows in per_col {
            rows.sort_unstable();
            rows.dedup();
            row_idx.extend_from_slice(&rows);
            col_ptr.push(row_idx.len());
        }
        Self { n, col_ptr, row_idx }
    }

    /// Builds the pattern from already sorted, duplicate-free columns.
    pub fn from_sorted_columns(n: usize, col_ptr: Vec<usize>, row_idx: Vec<usize>) -> Self {
        assert_eq!(col_ptr.len(), n + 1);
        Self { n, col_ptr, row_idx }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    /// Position of entry `(row, col)` in the value array.
    pub fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let start = self.col_ptr[col];
        let end = self.col_ptr[col + 1];
        self.row_idx[start..end]
            .binary_search(&row)
            .ok()
            .map(|k| start + k)
    }

    fn symbolic(&self) -> SymbolicSparseColMatRef<'_, usize> {
        SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.col_ptr, None, &self.row_idx)
    }

    /// `y = A x` for values laid out on this pattern.
    pub fn mul_vec(&self, values: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += values[k] * xc;
            }
        }
        y
    }

    /// Dense copy, for small problems and tests.
    pub fn to_dense(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                a[self.row_idx[k]][c] = values[k];
            }
        }
        a
    }
}

enum Factor {
    Cholesky(Llt<usize, f64>),
    Lu(Lu<usize, f64>),
}

/// Factorization of a symmetric matrix. Cholesky is attempted first; an
/// indefinite matrix falls back to partially pivoted LU.
pub struct SymmetricFactorization {
    factor: Factor,
}

impl SymmetricFactorization {
    pub fn is_cholesky(&self) -> bool {
        matches!(self.factor, Factor::Cholesky(_))
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        let mat = MatMut::from_column_major_slice_mut(rhs, n, 1);
        match &self.factor {
            Factor::Cholesky(llt) => llt.solve_in_place(mat),
            Factor::Lu(lu) => lu.solve_in_place(mat),
        }
    }
}

/// Caches the symbolic analysis of a fixed pattern so that repeated numeric
/// factorizations (Newton iterations) skip the ordering step.
pub struct SymmetricSolver {
    pattern: SparsePattern,
    symbolic_llt: Option<SymbolicLlt<usize>>,
}

impl SymmetricSolver {
    pub fn new(pattern: SparsePattern) -> Self {
        Self {
            pattern,
            symbolic_llt: None,
        }
    }

    pub fn pattern(&self) -> &SparsePattern {
        &self.pattern
    }

    pub fn factorize(&mut self, values: &[f64]) -> Result<SymmetricFactorization> {
        assert_eq!(values.len(), self.pattern.nnz());
        if self.symbolic_llt.is_none() {
            let sym = SymbolicLlt::try_new(self.pattern.symbolic(), Side::Lower)
                .map_err(|e| XqcError::LinearSolver(format!("symbolic Cholesky: {e:?}")))?;
            self.symbolic_llt = Some(sym);
        }
        let symbolic = self.symbolic_llt.clone().expect("symbolic analysis present");
        let mat = SparseColMatRef::new(self.pattern.symbolic(), values);
        match Llt::try_new_with_symbolic(symbolic, mat, Side::Lower) {
            Ok(llt) => Ok(SymmetricFactorization {
                factor: Factor::Cholesky(llt),
            }),
            Err(_) => {
                log::debug!("Cholesky failed on {}x{} system, using LU", self.pattern.n, self.pattern.n);
                let sym = SymbolicLu::try_new(self.pattern.symbolic())
                    .map_err(|e| XqcError::LinearSolver(format!("symbolic LU: {e:?}")))?;
                let lu = Lu::try_new_with_symbolic(sym, mat)
                    .map_err(|e| XqcError::LinearSolver(format!("LU: {e:?}")))?;
                Ok(SymmetricFactorization { factor: Factor::Lu(lu) })
            }
        }
    }
}

/// One-shot factorization of a symmetric matrix given on `pattern`.
pub fn factorize_symmetric(pattern: &SparsePattern, values: &[f64]) -> Result<SymmetricFactorization> {
    let mut solver = SymmetricSolver::new(pattern.clone());
    solver.factorize(values)
}
