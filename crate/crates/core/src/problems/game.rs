use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use super::simplex::simplex_project_into;
use crate::diagnostics::fmt_f64;
use crate::operator::{CoCoercivityProfile, OperatorHandle, OperatorRule};
use crate::rng::{self, streams};
use crate::{AfpError, Result, Vector};

/// Policeman-vs-burglar game with `n` noisy observations of the house
/// wealths. Component payoffs are `L^(i) = diag(w_hat_i) K` with
/// `K_jk = 1 - exp(-theta |j - k|)` over linear house indices.
#[derive(Clone, Debug, PartialEq)]
pub struct GameInstance {
    pub m: usize,
    pub n: usize,
    pub theta_decay: f64,
    pub noise_var: f64,
    /// True wealths, length `m^2`.
    pub w: Vector,
    /// Observed wealths, one row per observation.
    pub w_hat: DMatrix<f64>,
    pub kernel: DMatrix<f64>,
    pub lambda_bfs: f64,
    pub lipschitz_estimate: f64,
}

fn kernel(p: usize, theta: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |j, k| 1.0 - (-theta * (j as f64 - k as f64).abs()).exp())
}

const POWER_STEPS: usize = 50;

/// `|L|_2` from power iteration on `x -> [L^T w; -L v]` started at all ones.
fn spectral_estimate(l: &DMatrix<f64>) -> f64 {
    let p = l.nrows();
    let mut x = Vector::from_element(2 * p, 1.0);
    x /= x.norm();
    let mut est = 0.0;
    for _ in 0..POWER_STEPS {
        let y = block_apply(l, &x);
        est = y.norm();
        if est == 0.0 {
            return 0.0;
        }
        x = y / est;
    }
    est
}

fn block_apply(l: &DMatrix<f64>, x: &Vector) -> Vector {
    let p = l.nrows();
    let v = x.rows(0, p);
    let w = x.rows(p, p);
    let mut out = Vector::zeros(2 * p);
    out.rows_mut(0, p).copy_from(&(l.transpose() * w));
    out.rows_mut(p, p).copy_from(&(-(l * v)));
    out
}

impl GameInstance {
    /// Instance from explicit wealths; `lambda_bfs = 0.5 / L_hat`.
    pub fn from_weights(w: Vector, w_hat: DMatrix<f64>, kernel: DMatrix<f64>, theta_decay: f64, noise_var: f64) -> Self {
        let p = kernel.nrows();
        assert_eq!(kernel.ncols(), p);
        assert_eq!(w_hat.ncols(), p);
        assert_eq!(w.len(), p);
        let m = (p as f64).sqrt().round() as usize;
        let mut g = Self {
            m,
            n: w_hat.nrows(),
            theta_decay,
            noise_var,
            w,
            w_hat,
            kernel,
            lambda_bfs: 0.0,
            lipschitz_estimate: 0.0,
        };
        g.lipschitz_estimate = spectral_estimate(&g.mean_payoff());
        g.lambda_bfs = if g.lipschitz_estimate > 0.0 {
            0.5 / g.lipschitz_estimate
        } else {
            1.0
        };
        g
    }

    /// Strategy dimension `p1 = p2 = m^2`.
    pub fn p(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn mean_weights(&self) -> Vector {
        self.w_hat.row_mean().transpose()
    }

    pub fn payoff(&self, i: usize) -> DMatrix<f64> {
        let wi = self.w_hat.row(i).transpose();
        DMatrix::from_fn(self.p(), self.p(), |j, k| wi[j] * self.kernel[(j, k)])
    }

    pub fn mean_payoff(&self) -> DMatrix<f64> {
        let wm = self.mean_weights();
        DMatrix::from_fn(self.p(), self.p(), |j, k| wm[j] * self.kernel[(j, k)])
    }

    /// `[uniform; uniform]`.
    pub fn initial_point(&self) -> Vector {
        Vector::from_element(2 * self.p(), 1.0 / self.p() as f64)
    }

    /// Writes `meta`, `w` and one `what` row per observation.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().flexible(true).from_writer(out);
        wr.write_record([
            "meta".to_string(),
            self.m.to_string(),
            self.n.to_string(),
            fmt_f64(self.theta_decay),
            fmt_f64(self.noise_var),
        ])?;
        let row = |tag: &str, vals: Vec<f64>| {
            std::iter::once(tag.to_string())
                .chain(vals.into_iter().map(fmt_f64))
                .collect::<Vec<_>>()
        };
        wr.write_record(row("w", self.w.iter().copied().collect()))?;
        for i in 0..self.n {
            wr.write_record(row("what", self.w_hat.row(i).iter().copied().collect()))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .flexible(true)
            .has_headers(false)
            .from_reader(input);
        let bad = |msg: &str| AfpError::InvalidInput(format!("game csv: {msg}"));
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number {s:?}")));
        let mut meta = None;
        let mut w = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let vals = || rec.iter().skip(1).map(num).collect::<Result<Vec<f64>>>();
            match rec.get(0) {
                Some("meta") => {
                    if rec.len() != 5 {
                        return Err(bad("meta row needs 4 fields"));
                    }
                    let m: usize = rec[1].parse().map_err(|_| bad("bad m"))?;
                    let n: usize = rec[2].parse().map_err(|_| bad("bad n"))?;
                    meta = Some((m, n, num(&rec[3])?, num(&rec[4])?));
                }
                Some("w") => w = Some(vals()?),
                Some("what") => rows.push(vals()?),
                other => return Err(bad(&format!("unknown row tag {other:?}"))),
            }
        }
        let (m, n, theta, var) = meta.ok_or_else(|| bad("missing meta row"))?;
        let w = w.ok_or_else(|| bad("missing w row"))?;
        let p = m * m;
        if w.len() != p || rows.len() != n || rows.iter().any(|r| r.len() != p) {
            return Err(bad("row lengths do not match m and n"));
        }
        let w_hat = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        Ok(Self::from_weights(Vector::from_vec(w), w_hat, kernel(p, theta), theta, var))
    }
}

/// Random instance: `w_j = |N(0,1)|`, `w_hat_ij = |w_j + N(0, noise_var)|`.
pub fn generate_game(m: usize, n: usize, theta_decay: f64, noise_var: f64, seed: u64) -> GameInstance {
    assert!(m >= 1 && n >= 1 && noise_var >= 0.0);
    let p = m * m;
    let mut rng = rng::stream(seed, streams::PROBLEM);
    let w = Vector::from_fn(p, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z.abs()
    });
    let sd = noise_var.sqrt();
    let mut w_hat = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            let z: f64 = StandardNormal.sample(&mut rng);
            w_hat[(i, j)] = (w[j] + sd * z).abs();
        }
    }
    GameInstance::from_weights(w, w_hat, kernel(p, theta_decay), theta_decay, noise_var)
}

/// Scaling of the splitting operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BfsScaling {
    /// `G(Ju) + (u - Ju)/lambda`, declared `beta = lambda / 2`.
    Raw,
    /// `lambda` times the raw operator: `lambda G(Ju) + (u - Ju)`, declared
    /// `beta = 1/2`. Same roots, and relative residuals are unchanged.
    #[default]
    FixedPoint,
}

/// Backward-forward splitting operator of a game with product-simplex
/// resolvent, split over the observations.
pub struct BfsRule {
    w_hat: DMatrix<f64>,
    w_mean: Vector,
    kernel_t: DMatrix<f64>,
    kernel: DMatrix<f64>,
    lambda: f64,
    scale: f64,
    project: bool,
}

impl BfsRule {
    fn resolvent(&self, u: &Vector) -> Vector {
        if !self.project {
            return u.clone();
        }
        let p = self.kernel.nrows();
        let mut x = Vector::zeros(2 * p);
        simplex_project_into(&u.as_slice()[..p], &mut x.as_mut_slice()[..p]);
        simplex_project_into(&u.as_slice()[p..], &mut x.as_mut_slice()[p..]);
        x
    }

    /// Ingredients shared by every component at one point: `Ju`, `K v`.
    fn shared(&self, u: &Vector) -> (Vector, Vector) {
        let x = self.resolvent(u);
        let p = self.kernel.nrows();
        let kv = &self.kernel * x.rows(0, p);
        (x, kv)
    }

    fn component_at(&self, wi: &Vector, u: &Vector, x: &Vector, kv: &Vector) -> Vector {
        let p = self.kernel.nrows();
        let v_part = &self.kernel_t * x.rows(p, p).component_mul(wi);
        let w_part = -kv.component_mul(wi);
        let mut out = Vector::zeros(2 * p);
        out.rows_mut(0, p).copy_from(&v_part);
        out.rows_mut(p, p).copy_from(&w_part);
        if self.project {
            out += (u - x) / self.lambda;
        }
        out * self.scale
    }
}

impl OperatorRule for BfsRule {
    fn dim(&self) -> usize {
        2 * self.kernel.nrows()
    }

    fn apply(&self, u: &Vector) -> Vector {
        let (x, kv) = self.shared(u);
        self.component_at(&self.w_mean, u, &x, &kv)
    }

    fn components(&self) -> Option<usize> {
        Some(self.w_hat.nrows())
    }

    fn apply_component(&self, i: usize, u: &Vector) -> Vector {
        let (x, kv) = self.shared(u);
        self.component_at(&self.w_hat.row(i).transpose(), u, &x, &kv)
    }

    fn apply_components(&self, indices: &[usize], u: &Vector) -> Vec<Vector> {
        let (x, kv) = self.shared(u);
        indices
            .iter()
            .map(|&i| self.component_at(&self.w_hat.row(i).transpose(), u, &x, &kv))
            .collect()
    }
}

fn rule(game: &GameInstance, lambda: f64, scale: f64, project: bool) -> BfsRule {
    BfsRule {
        w_hat: game.w_hat.clone(),
        w_mean: game.mean_weights(),
        kernel_t: game.kernel.transpose(),
        kernel: game.kernel.clone(),
        lambda,
        scale,
        project,
    }
}

/// Splitting operator with the instance's `lambda_bfs`.
pub fn bfs_operator(game: &GameInstance, scaling: BfsScaling) -> OperatorHandle {
    let lambda = game.lambda_bfs;
    assert!(lambda > 0.0);
    let (scale, beta) = match scaling {
        BfsScaling::Raw => (1.0, lambda / 2.0),
        BfsScaling::FixedPoint => (lambda, 0.5),
    };
    OperatorHandle::new(rule(game, lambda, scale, true), CoCoercivityProfile::new(beta, 0.0))
}

/// The unconstrained skew map `x -> [L^T w; -L v]` split over observations.
/// Monotone but not co-coercive; the declared `beta` is whatever the caller
/// wants audited.
pub fn game_operator(game: &GameInstance, beta: f64) -> OperatorHandle {
    OperatorHandle::new(rule(game, 1.0, 1.0, false), CoCoercivityProfile::new(beta, 0.0))
}

const SIMPLEX_TOL: f64 = 1e-9;

fn check_simplex(x: &Vector, name: &str) -> Result<()> {
    let sum: f64 = x.iter().sum();
    if x.iter().any(|&v| !(v >= -SIMPLEX_TOL)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(AfpError::InvalidInput(format!("{name} is not on the simplex (sum {sum})")));
    }
    Ok(())
}

/// `max_j (L v)_j - min_k (L^T w)_k`.
pub fn duality_gap(l: &DMatrix<f64>, v: &Vector, w: &Vector) -> Result<f64> {
    if v.len() != l.ncols() || w.len() != l.nrows() {
        return Err(AfpError::DimensionMismatch {
            expected: l.ncols(),
            got: v.len(),
        });
    }
    check_simplex(v, "v")?;
    check_simplex(w, "w")?;
    let lv = l * v;
    let ltw = l.transpose() * w;
    Ok(lv.max() - ltw.min())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn entries_and_structure() {
        let g = generate_game(3, 4, 0.8, 0.05, 1);
        for i in 0..g.n {
            let l = g.payoff(i);
            for j in 0..g.p() {
                assert_eq!(l[(j, j)], 0.0);
            }
            assert!(l.iter().all(|&v| v >= 0.0));
        }
        let mut sum = DMatrix::zeros(g.p(), g.p());
        for i in 0..g.n {
            sum += g.payoff(i);
        }
        let mean = sum / g.n as f64;
        assert!((mean - g.mean_payoff()).norm() <= 1e-12 * g.mean_payoff().norm());
    }

    #[test]
    fn unit_wealth_neighbour_entry() {
        let k = kernel(4, 0.8);
        assert_relative_eq!(k[(0, 1)], 0.550671, epsilon = 1e-6);
        assert_relative_eq!(k[(2, 1)], 1.0 - (-0.8f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn noiseless_observations_coincide() {
        let g = generate_game(2, 3, 0.8, 0.0, 5);
        for i in 0..3 {
            assert_eq!(g.payoff(i), g.mean_payoff());
        }
    }

    #[test]
    fn single_house_game() {
        let g = generate_game(1, 2, 0.8, 0.05, 0);
        let op = bfs_operator(&g, BfsScaling::Raw);
        let u = Vector::from_vec(vec![3.0, -1.0]);
        let out = op.evaluate(&u).unwrap();
        let ju = Vector::from_vec(vec![1.0, 1.0]);
        assert!((out - (&u - &ju) / g.lambda_bfs).norm() < 1e-12);
        assert_eq!(op.evaluate(&ju).unwrap().norm(), 0.0);
    }

    #[test]
    fn gap_examples() {
        let z = DMatrix::zeros(2, 2);
        let u = Vector::from_vec(vec![0.5, 0.5]);
        assert_eq!(duality_gap(&z, &u, &u).unwrap(), 0.0);
        let mp = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(duality_gap(&mp, &u, &u).unwrap(), 0.0);
        let e = Vector::from_vec(vec![1.0, 0.0]);
        assert_eq!(duality_gap(&mp, &e, &e).unwrap(), 1.0);
        assert!(duality_gap(&mp, &Vector::from_vec(vec![0.7, 0.7]), &e).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let g = generate_game(2, 3, 0.8, 0.05, 9);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = GameInstance::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn power_iteration_matches_svd() {
        let g = generate_game(3, 5, 0.8, 0.05, 2);
        let sv = g.mean_payoff().singular_values().max();
        assert_relative_eq!(g.lipschitz_estimate, sv, max_relative = 1e-6);
    }
}
