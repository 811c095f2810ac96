//! Determinantal point process kernel and greedy MAP selection.

use nalgebra::{DMatrix, SymmetricEigen};

use super::Inference;
use crate::simmath::dot;

/// Diagonal shift used when repairing an indefinite kernel.
pub const PSD_EPSILON: f64 = 1e-6;
/// Eigenvalues above this count as non-negative (rounding noise).
const EIGEN_NOISE: f64 = 1e-12;
/// Residual variance below which adding an item no longer increases the determinant.
pub const GAIN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DppKernel {
    matrix: DMatrix<f64>,
    /// Diagonal shift applied by the PSD repair (0 when none was needed).
    shift: f64,
}

impl DppKernel {
    /// Wraps a symmetric matrix, shifting its diagonal if it is not PSD.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        assert!(matrix.is_square(), "kernel must be square");
        let mut kernel = Self { matrix, shift: 0.0 };
        kernel.repair();
        kernel
    }

    /// Quality/similarity kernel: `L_ii = τ_i`, `L_ij = √τ_i · max(cos_ij, 0) · √τ_j`.
    pub fn build(inferences: &[Inference]) -> Self {
        let n = inferences.len();
        let quality: Vec<f64> = inferences.iter().map(|i| i.confidence.max(0.0).sqrt()).collect();
        let matrix = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                inferences[i].confidence.max(0.0)
            } else {
                let sim = dot(inferences[i].embedding.values(), inferences[j].embedding.values());
                quality[i] * sim.clamp(0.0, 1.0) * quality[j]
            }
        });
        Self::from_matrix(matrix)
    }

    fn repair(&mut self) {
        if self.matrix.nrows() == 0 {
            return;
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < -EIGEN_NOISE {
            let shift = -min_eig + PSD_EPSILON;
            for i in 0..self.matrix.nrows() {
                self.matrix[(i, i)] += shift;
            }
            self.shift = shift;
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Determinant of the principal submatrix indexed by `subset`.
    pub fn subset_det(&self, subset: &[usize]) -> f64 {
        let m = DMatrix::from_fn(subset.len(), subset.len(), |a, b| self.matrix[(subset[a], subset[b])]);
        m.determinant()
    }
}

/// Greedy MAP inference with incremental Cholesky updates.
///
/// Each step adds the item with the largest residual variance `d²`, which is
/// the multiplicative determinant gain (log-det gain `ln d²`). Stops after `k`
/// items or once no remaining item has `d² > GAIN_FLOOR`. Ties go to the
/// lowest index. Returns indices in selection order.
pub fn select_diverse(kernel: &DppKernel, k: usize) -> Vec<usize> {
    let n = kernel.len();
    let l = kernel.matrix();
    let mut residual: Vec<f64> = (0..n).map(|i| l[(i, i)]).collect();
    let mut factors: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut chosen = vec![false; n];
    let mut selected = Vec::with_capacity(k.min(n));
    while selected.len() < k.min(n) {
        let mut best: Option<usize> = None;
        for i in (0..n).filter(|&i| !chosen[i]) {
            if best.is_none_or(|b| residual[i] > residual[b]) {
                best = Some(i);
            }
        }
        let Some(j) = best else { break };
        if residual[j] <= GAIN_FLOOR {
            break;
        }
        chosen[j] = true;
        selected.push(j);
        let dj = residual[j].sqrt();
        let cj = factors[j].clone();
        for i in (0..n).filter(|&i| !chosen[i]) {
            let e = (l[(j, i)] - dot(&cj, &factors[i])) / dj;
            factors[i].push(e);
            residual[i] -= e * e;
        }
    }
    selected
}
