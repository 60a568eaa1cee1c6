use nalgebra::DMatrix;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::operator::{CoCoercivityProfile, OperatorHandle, OperatorRule};
use crate::rng::{self, streams};
use crate::Vector;

/// `G_i x = A_i x` with `A_i = Q diag(d_i) Q^T`, all sharing one orthonormal
/// eigenbasis. The mean of the `d_i` is the spectrum of the mean matrix.
pub struct QuadraticRule {
    q: DMatrix<f64>,
    qt: DMatrix<f64>,
    spectrum: Vector,
    /// Row `i` holds the eigenvalues of `A_i`.
    d: DMatrix<f64>,
}

impl QuadraticRule {
    fn in_basis(&self, diag: &Vector, x: &Vector) -> Vector {
        &self.q * (&self.qt * x).component_mul(diag)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        &self.q * DMatrix::from_diagonal(&self.spectrum) * &self.qt
    }

    pub fn component_matrix(&self, i: usize) -> DMatrix<f64> {
        &self.q * DMatrix::from_diagonal(&self.d.row(i).transpose()) * &self.qt
    }
}

impl OperatorRule for QuadraticRule {
    fn dim(&self) -> usize {
        self.q.nrows()
    }

    fn apply(&self, x: &Vector) -> Vector {
        self.in_basis(&self.spectrum, x)
    }

    fn components(&self) -> Option<usize> {
        Some(self.d.nrows())
    }

    fn apply_component(&self, i: usize, x: &Vector) -> Vector {
        self.in_basis(&self.d.row(i).transpose(), x)
    }

    fn apply_components(&self, indices: &[usize], x: &Vector) -> Vec<Vector> {
        let c = &self.qt * x;
        indices
            .iter()
            .map(|&i| &self.q * c.component_mul(&self.d.row(i).transpose()))
            .collect()
    }
}

pub struct QuadraticProblem {
    pub op: OperatorHandle,
    pub x_star: Vector,
    pub spectrum: Vector,
    /// Largest `beta_bar` valid together with `beta = 0`:
    /// `min_j lambda_j / mean_i d_ij^2`.
    pub average_cocoercivity: f64,
}

impl QuadraticProblem {
    /// Same operator declared as `(beta = 0, beta_bar = average_cocoercivity)`.
    pub fn averaged_profile(&self) -> CoCoercivityProfile {
        CoCoercivityProfile::new(0.0, self.average_cocoercivity)
    }
}

/// Random finite-sum quadratic with spectrum log-spaced in `[1/cond, 1]` and
/// root 0. Component spectra are the mean spectrum times exponential weights
/// normalised to mean one per coordinate.
pub fn quadratic_finitesum(p: usize, n: usize, cond: f64, seed: u64) -> QuadraticProblem {
    assert!(p >= 1 && n >= 1 && cond >= 1.0);
    let mut rng = rng::stream(seed, streams::PROBLEM);
    let g = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
    let q = g.qr().q();
    let spectrum = Vector::from_fn(p, |j, _| {
        if p == 1 {
            1.0
        } else {
            cond.powf(-(j as f64) / (p - 1) as f64)
        }
    });
    let mut weights = DMatrix::from_fn(n, p, |_, _| -> f64 { Exp1.sample(&mut rng) });
    for j in 0..p {
        let mean = weights.column(j).mean();
        weights.column_mut(j).scale_mut(1.0 / mean);
    }
    let d = DMatrix::from_fn(n, p, |i, j| weights[(i, j)] * spectrum[j]);

    // Joint constants per eigen-direction j: lambda_j >= beta lambda_j^2 + beta_bar m_j
    // with m_j = mean_i d_ij^2.
    let second: Vec<f64> = (0..p).map(|j| d.column(j).iter().map(|v| v * v).sum::<f64>() / n as f64).collect();
    let beta = 1.0 / spectrum.max();
    let joint = (0..p)
        .map(|j| (spectrum[j] - beta * spectrum[j] * spectrum[j]).max(0.0) / second[j])
        .fold(f64::INFINITY, f64::min);
    let average = (0..p).map(|j| spectrum[j] / second[j]).fold(f64::INFINITY, f64::min);

    let rule = QuadraticRule {
        qt: q.transpose(),
        q,
        spectrum: spectrum.clone(),
        d,
    };
    QuadraticProblem {
        op: OperatorHandle::new(rule, CoCoercivityProfile::new(beta, joint)),
        x_star: Vector::zeros(p),
        spectrum,
        average_cocoercivity: average,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_maps_to_zero() {
        let qp = quadratic_finitesum(5, 3, 10.0, 0);
        assert_eq!(qp.op.evaluate(&Vector::zeros(5)).unwrap().norm(), 0.0);
    }

    #[test]
    fn scalar_unit_case() {
        let qp = quadratic_finitesum(1, 1, 1.0, 4);
        let x = Vector::from_vec(vec![2.5]);
        assert!((qp.op.evaluate(&x).unwrap()[0] - 2.5).abs() < 1e-15);
        assert_eq!(qp.op.profile().beta, 1.0);
    }

    #[test]
    fn spectrum_range() {
        let qp = quadratic_finitesum(50, 20, 100.0, 1);
        assert!((qp.spectrum.max() - 1.0).abs() < 1e-15);
        assert!((qp.spectrum.min() - 0.01).abs() < 1e-15);
        // the top direction forces the joint beta_bar to zero
        assert_eq!(qp.op.profile().beta_bar, 0.0);
        assert!(qp.average_cocoercivity > 0.0);
    }
}
