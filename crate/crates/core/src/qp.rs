//! Euclidean projection onto a polyhedron `{u : G u >= h}`.
//!
//! Two-variable problems, the decentralized case, are solved by exhaustive
//! active-set enumeration. Larger ones use a dual active-set method
//! (Goldfarb–Idnani specialised to an identity Hessian). Infeasible
//! problems fall back to a quadratic slack penalty.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack penalty weight of the relaxed problem.
pub const RELAX_WEIGHT: f64 = 1e4;
/// Rows with a normal shorter than this are treated as constant.
pub const ZERO_ROW: f64 = 1e-12;
/// Feasibility tolerance on unit-normal rows.
pub const FEAS_TOL: f64 = 1e-9;
const DET_TOL: f64 = 1e-12;
const MULTIPLIER_TOL: f64 = 1e-10;

/// `min ||u - u_nom||²  s.t.  G u >= h`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub u_nom: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub u: Vec<f64>,
    /// Indices (into the original rows) of the constraints tight at `u`.
    pub active_set: Vec<usize>,
    /// Multipliers of `active_set`, in unit-normal scaling.
    pub multipliers: Vec<f64>,
    pub relaxed: bool,
    /// Per original row; zero unless `relaxed`.
    pub slack: Vec<f64>,
    pub kkt_residual: f64,
}

impl QpSolution {
    pub fn objective(&self, u_nom: &[f64]) -> f64 {
        self.u.iter().zip(u_nom).map(|(a, b)| (a - b).powi(2)).sum()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("malformed problem: {0}")]
    InvalidProblem(String),
    #[error("no KKT point found: {0}")]
    NumericalFailure(String),
}

impl QpProblem {
    pub fn new(u_nom: DVector<f64>, g: DMatrix<f64>, h: DVector<f64>) -> Self {
        Self { u_nom, g, h }
    }

    /// Unconstrained problem.
    pub fn unconstrained(u_nom: DVector<f64>) -> Self {
        let n = u_nom.len();
        Self::new(u_nom, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    /// Builds a problem from constraint rows `(normal, offset)` meaning `normal·u >= offset`.
    pub fn from_rows(u_nom: &[f64], rows: &[(Vec<f64>, f64)]) -> Self {
        let dim = u_nom.len();
        let g = DMatrix::from_fn(rows.len(), dim, |r, c| rows[r].0[c]);
        let h = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        Self::new(DVector::from_column_slice(u_nom), g, h)
    }

    pub fn dim(&self) -> usize {
        self.u_nom.len()
    }

    pub fn rows(&self) -> usize {
        self.h.len()
    }

    fn check(&self) -> Result<(), QpError> {
        if self.g.ncols() != self.dim() || self.g.nrows() != self.rows() {
            return Err(QpError::InvalidProblem(format!(
                "G is {}x{}, expected {}x{}",
                self.g.nrows(),
                self.g.ncols(),
                self.rows(),
                self.dim()
            )));
        }
        let finite = self.u_nom.iter().chain(self.g.iter()).chain(self.h.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(QpError::InvalidProblem("non-finite entry".into()));
        }
        Ok(())
    }

    /// Most negative `g_r·u - h_r` over rows, in unit-normal scaling.
    pub fn max_violation(&self, u: &[f64]) -> f64 {
        let u = DVector::from_column_slice(u);
        (0..self.rows())
            .map(|r| {
                let row = self.g.row(r);
                let norm = row.norm();
                let scale = if norm < ZERO_ROW { 1.0 } else { norm };
                ((self.h[r] - row.dot(&u.transpose())) / scale).max(0.0)
            })
            .fold(0.0, f64::max)
    }
}

/// A constraint row after normalisation.
#[derive(Debug, Clone)]
struct Row {
    index: usize,
    normal: DVector<f64>,
    offset: f64,
}

enum Prepared {
    Rows(Vec<Row>),
    /// A zero row demands a positive constant.
    Infeasible,
}

fn prepare(p: &QpProblem) -> Prepared {
    let mut rows = Vec::with_capacity(p.rows());
    for r in 0..p.rows() {
        let normal = p.g.row(r).transpose();
        let norm = normal.norm();
        if norm < ZERO_ROW {
            if p.h[r] > 0.0 {
                return Prepared::Infeasible;
            }
            continue;
        }
        rows.push(Row {
            index: r,
            normal: normal / norm,
            offset: p.h[r] / norm,
        });
    }
    Prepared::Rows(rows)
}

/// Projects `u_nom` onto the feasible set, relaxing when it is empty.
pub fn solve(p: &QpProblem) -> Result<QpSolution, QpError> {
    p.check()?;
    let rows = match prepare(p) {
        Prepared::Rows(rows) => rows,
        Prepared::Infeasible => return relax(p),
    };
    let found = if p.dim() == 2 {
        enumerate_2d(&p.u_nom, &rows)
    } else {
        dual_active_set(&p.u_nom, &rows)?
    };
    match found {
        Some((u, active)) => Ok(finish(p, &rows, u, active)),
        None => relax(p),
    }
}

fn feasible(rows: &[Row], u: &DVector<f64>) -> bool {
    rows.iter().all(|r| r.normal.dot(u) >= r.offset - FEAS_TOL)
}

/// Multipliers of the rows in `active` at `u`: least squares on `N λ = u - u_nom`.
fn multipliers(rows: &[Row], active: &[usize], u: &DVector<f64>, u_nom: &DVector<f64>) -> Option<DVector<f64>> {
    if active.is_empty() {
        return Some(DVector::zeros(0));
    }
    let n = DMatrix::from_columns(&active.iter().map(|&a| rows[a].normal.clone()).collect::<Vec<_>>());
    let gram = n.transpose() * &n;
    gram.cholesky().map(|ch| ch.solve(&(n.transpose() * (u - u_nom))))
}

fn enumerate_2d(u_nom: &DVector<f64>, rows: &[Row]) -> Option<(DVector<f64>, Vec<usize>)> {
    if feasible(rows, u_nom) {
        return Some((u_nom.clone(), Vec::new()));
    }
    let mut candidates: Vec<(DVector<f64>, Vec<usize>)> = Vec::new();
    for (a, r) in rows.iter().enumerate() {
        let u = u_nom + &r.normal * (r.offset - r.normal.dot(u_nom));
        candidates.push((u, vec![a]));
    }
    for ((a, ra), (b, rb)) in rows.iter().enumerate().tuple_combinations() {
        let (n1, n2) = (&ra.normal, &rb.normal);
        let det = n1[0] * n2[1] - n1[1] * n2[0];
        if det.abs() < DET_TOL {
            continue;
        }
        let x = (ra.offset * n2[1] - rb.offset * n1[1]) / det;
        let y = (n1[0] * rb.offset - n2[0] * ra.offset) / det;
        candidates.push((DVector::from_vec(vec![x, y]), vec![a, b]));
    }

    let mut best: Option<(f64, DVector<f64>, Vec<usize>)> = None;
    let mut best_any: Option<(f64, DVector<f64>, Vec<usize>)> = None;
    for (u, active) in candidates {
        if !feasible(rows, &u) {
            continue;
        }
        let dist = (&u - u_nom).norm_squared();
        let kkt_ok = multipliers(rows, &active, &u, u_nom)
            .is_some_and(|l| l.iter().all(|&v| v >= -MULTIPLIER_TOL * (1.0 + (&u - u_nom).norm())));
        if best_any.as_ref().is_none_or(|b| dist < b.0) {
            best_any = Some((dist, u.clone(), active.clone()));
        }
        if kkt_ok && best.as_ref().is_none_or(|b| dist < b.0) {
            best = Some((dist, u, active));
        }
    }
    best.or(best_any).map(|(_, u, a)| (u, a))
}

/// Dual active-set iteration from the unconstrained optimum `u_nom`.
///
/// Returns `Ok(None)` when the constraints are inconsistent.
fn dual_active_set(u_nom: &DVector<f64>, rows: &[Row]) -> Result<Option<(DVector<f64>, Vec<usize>)>, QpError> {
    let dim = u_nom.len();
    let mut x = u_nom.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let budget = 50 + 10 * (rows.len() + dim);
    let mut iterations = 0;

    loop {
        let Some((p, slack)) = rows
            .iter()
            .enumerate()
            .filter(|(a, _)| !active.contains(a))
            .map(|(a, r)| (a, r.normal.dot(&x) - r.offset))
            .min_by(|a, b| a.1.total_cmp(&b.1))
        else {
            break;
        };
        if slack >= -1e-12 {
            break;
        }
        let np = &rows[p].normal;
        let mut lambda_p = 0.0;

        loop {
            iterations += 1;
            if iterations > budget {
                return Err(QpError::NumericalFailure(format!(
                    "dual active set exceeded {budget} iterations"
                )));
            }
            let (z, r) = if active.is_empty() {
                (np.clone(), DVector::zeros(0))
            } else {
                let n = DMatrix::from_columns(&active.iter().map(|&a| rows[a].normal.clone()).collect::<Vec<_>>());
                let gram = n.transpose() * &n;
                let ch = gram
                    .cholesky()
                    .ok_or_else(|| QpError::NumericalFailure("active normals became dependent".into()))?;
                let r = ch.solve(&(n.transpose() * np));
                (np - &n * &r, r)
            };

            let mut t_partial = f64::INFINITY;
            let mut drop = None;
            for (idx, (&rj, &lj)) in r.iter().zip(&lambda).enumerate() {
                if rj > 1e-14 {
                    let ratio = lj / rj;
                    if ratio < t_partial {
                        t_partial = ratio;
                        drop = Some(idx);
                    }
                }
            }
            let zz = z.norm_squared();
            let t_full = if zz > 1e-14 {
                -(np.dot(&x) - rows[p].offset) / z.dot(np)
            } else {
                f64::INFINITY
            };
            let t = t_partial.min(t_full);
            if !t.is_finite() {
                return Ok(None);
            }

            if t_full.is_finite() {
                x += &z * t;
            }
            for (lj, rj) in lambda.iter_mut().zip(r.iter()) {
                *lj -= t * rj;
            }
            lambda_p += t;

            if t_full <= t_partial {
                active.push(p);
                lambda.push(lambda_p);
                break;
            }
            let l = drop.expect("partial step has a blocking constraint");
            active.remove(l);
            lambda.remove(l);
        }
    }
    Ok(Some((x, active)))
}

fn finish(p: &QpProblem, rows: &[Row], u: DVector<f64>, active: Vec<usize>) -> QpSolution {
    let lambda = multipliers(rows, &active, &u, &p.u_nom).unwrap_or_else(|| DVector::zeros(active.len()));
    let mut stationarity = &u - &p.u_nom;
    for (&a, &l) in active.iter().zip(lambda.iter()) {
        stationarity -= &rows[a].normal * l;
    }
    let dual = lambda.iter().map(|&l| (-l).max(0.0)).fold(0.0, f64::max);
    let primal = rows
        .iter()
        .map(|r| (r.offset - r.normal.dot(&u)).max(0.0))
        .fold(0.0, f64::max);
    let kkt_residual = stationarity.amax().max(dual).max(primal);
    QpSolution {
        u: u.iter().copied().collect(),
        active_set: active.iter().map(|&a| rows[a].index).collect(),
        multipliers: lambda.iter().copied().collect(),
        relaxed: false,
        slack: vec![0.0; p.rows()],
        kkt_residual,
    }
}

/// Solves `min ||u - u_nom||² + ρ Σ s²  s.t.  G u >= h - s, s >= 0` with `ρ = 1e4`.
///
/// Rows are normalised first, so the penalty applies to slack measured along
/// unit normals; the returned slack is in the original row scaling.
pub fn relax(p: &QpProblem) -> Result<QpSolution, QpError> {
    p.check()?;
    let dim = p.dim();
    // keep every row that can bind; zero rows with h > 0 enter unnormalised
    let kept: Vec<(usize, DVector<f64>, f64, f64)> = (0..p.rows())
        .filter_map(|r| {
            let normal = p.g.row(r).transpose();
            let norm = normal.norm();
            if norm < ZERO_ROW {
                (p.h[r] > 0.0).then(|| (r, normal, p.h[r], 1.0))
            } else {
                Some((r, normal / norm, p.h[r] / norm, norm))
            }
        })
        .collect();
    let m = kept.len();
    let lifted_dim = dim + m;
    let inv_sqrt_rho = 1.0 / RELAX_WEIGHT.sqrt();

    // variables (u, w) with w = sqrt(ρ) s
    let mut lifted_rows = Vec::with_capacity(2 * m);
    for (slot, (_, normal, offset, _)) in kept.iter().enumerate() {
        let mut n = DVector::zeros(lifted_dim);
        n.rows_mut(0, dim).copy_from(normal);
        n[dim + slot] = inv_sqrt_rho;
        let norm = n.norm();
        lifted_rows.push(Row {
            index: slot,
            normal: n / norm,
            offset: offset / norm,
        });
    }
    for slot in 0..m {
        let mut n = DVector::zeros(lifted_dim);
        n[dim + slot] = 1.0;
        lifted_rows.push(Row {
            index: m + slot,
            normal: n,
            offset: 0.0,
        });
    }
    let mut start = DVector::zeros(lifted_dim);
    start.rows_mut(0, dim).copy_from(&p.u_nom);

    let (z, active) = dual_active_set(&start, &lifted_rows)?
        .ok_or_else(|| QpError::NumericalFailure("relaxed problem reported infeasible".into()))?;

    let lifted = QpProblem::new(
        start.clone(),
        DMatrix::from_fn(lifted_rows.len(), lifted_dim, |r, c| lifted_rows[r].normal[c]),
        DVector::from_iterator(lifted_rows.len(), lifted_rows.iter().map(|r| r.offset)),
    );
    let lifted_solution = finish(&lifted, &lifted_rows, z.clone(), active);

    let u: Vec<f64> = z.rows(0, dim).iter().copied().collect();
    let mut slack = vec![0.0; p.rows()];
    for (slot, (r, _, _, norm)) in kept.iter().enumerate() {
        slack[*r] = (z[dim + slot] * inv_sqrt_rho).max(0.0) * norm;
    }
    let u_vec = DVector::from_column_slice(&u);
    let active_set = (0..p.rows())
        .filter(|&r| {
            let row = p.g.row(r);
            let norm = row.norm().max(ZERO_ROW);
            ((row.transpose().dot(&u_vec) - p.h[r] + slack[r]) / norm).abs() <= FEAS_TOL
        })
        .collect();
    log::warn!(
        "QP infeasible, relaxed with slack {:?}; the safety guarantee does not hold this step",
        slack
    );
    Ok(QpSolution {
        u,
        active_set,
        multipliers: lifted_solution.multipliers,
        relaxed: true,
        slack,
        kkt_residual: lifted_solution.kkt_residual,
    })
}

/// Solves with the dual active-set method regardless of dimension.
///
/// Exposed so the two-variable enumeration can be cross-checked against it.
pub fn solve_dual(p: &QpProblem) -> Result<QpSolution, QpError> {
    p.check()?;
    let rows = match prepare(p) {
        Prepared::Rows(rows) => rows,
        Prepared::Infeasible => return relax(p),
    };
    match dual_active_set(&p.u_nom, &rows)? {
        Some((u, active)) => Ok(finish(p, &rows, u, active)),
        None => relax(p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(u_nom: [f64; 2], rows: &[([f64; 2], f64)]) -> QpProblem {
        let rows: Vec<(Vec<f64>, f64)> = rows.iter().map(|(g, h)| (g.to_vec(), *h)).collect();
        QpProblem::from_rows(&u_nom, &rows)
    }

    /// Closest grid point of `[-2, 2]²` at spacing 1e-3 that satisfies every row.
    ///
    /// For each grid column the feasible `y` values form an interval, so the
    /// nearest feasible grid `y` is found by clamping instead of scanning.
    fn grid_oracle(p: &QpProblem) -> Option<f64> {
        let steps = 4000i64;
        let h = 4.0 / steps as f64;
        let (ux, uy) = (p.u_nom[0], p.u_nom[1]);
        let mut best: Option<f64> = None;
        for ix in 0..=steps {
            let x = -2.0 + ix as f64 * h;
            let (mut lo, mut hi) = (-2.0f64, 2.0f64);
            let mut empty = false;
            for r in 0..p.rows() {
                let (gx, gy, off) = (p.g[(r, 0)], p.g[(r, 1)], p.h[r]);
                let rest = off - gx * x;
                if gy.abs() < 1e-15 {
                    if rest > 0.0 {
                        empty = true;
                    }
                } else if gy > 0.0 {
                    lo = lo.max(rest / gy);
                } else {
                    hi = hi.min(rest / gy);
                }
            }
            if empty || lo > hi {
                continue;
            }
            let first = ((lo + 2.0) / h).ceil() as i64;
            let last = ((hi + 2.0) / h).floor() as i64;
            if first > last {
                continue;
            }
            let target = ((uy + 2.0) / h).round() as i64;
            for iy in [target.clamp(first, last), (target - 1).clamp(first, last), (target + 1).clamp(first, last)] {
                let y = -2.0 + iy as f64 * h;
                let ok = (0..p.rows()).all(|r| p.g[(r, 0)] * x + p.g[(r, 1)] * y >= p.h[r]);
                if ok {
                    let obj = (x - ux).powi(2) + (y - uy).powi(2);
                    best = Some(best.map_or(obj, |b: f64| b.min(obj)));
                }
            }
        }
        best
    }

    fn random_feasible(rng: &mut ChaCha8Rng, dim: usize, rows: usize) -> QpProblem {
        let anchor: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.8..0.8)).collect();
        let u_nom: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.8..0.8)).collect();
        let rows: Vec<(Vec<f64>, f64)> = (0..rows)
            .map(|_| {
                let g: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let at: f64 = g.iter().zip(&anchor).map(|(a, b)| a * b).sum();
                (g, at - rng.random_range(0.0..0.5))
            })
            .collect();
        QpProblem::from_rows(&u_nom, &rows)
    }

    #[test]
    fn interior_nominal_is_returned() {
        let p = problem([0.2, 0.3], &[([1.0, 0.0], -1.0)]);
        let s = solve(&p).unwrap();
        assert_eq!(s.u, vec![0.2, 0.3]);
        assert!(s.active_set.is_empty());
        assert!(!s.relaxed);
    }

    #[test]
    fn single_halfplane_projection() {
        let p = problem([0.0, 0.0], &[([1.0, 0.0], 0.5)]);
        let s = solve(&p).unwrap();
        assert_abs_diff_eq!(s.u[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.u[1], 0.0, epsilon = 1e-15);
        assert_eq!(s.active_set, vec![0]);
        let oracle = grid_oracle(&p).unwrap();
        assert!(s.objective(&[0.0, 0.0]) <= oracle + 2e-3);
    }

    #[test]
    fn corner_projection() {
        let p = problem([0.0, 0.0], &[([1.0, 0.0], 1.0), ([0.0, 1.0], 1.0)]);
        let s = solve(&p).unwrap();
        assert_abs_diff_eq!(s.u[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.u[1], 1.0, epsilon = 1e-15);
        assert_eq!(s.active_set, vec![0, 1]);
        assert!(s.multipliers.iter().all(|&l| l > 0.0));
        let oracle = grid_oracle(&p).unwrap();
        assert!((s.objective(&[0.0, 0.0]) - oracle).abs() <= 2e-3);
    }

    #[test]
    fn vacuous_and_contradictory_zero_rows() {
        let p = problem([0.4, -0.1], &[([0.0, 0.0], -1.0)]);
        let s = solve(&p).unwrap();
        assert_eq!(s.u, vec![0.4, -0.1]);
        assert!(!s.relaxed);

        let p = problem([0.4, -0.1], &[([0.0, 0.0], 1.0)]);
        let s = solve(&p).unwrap();
        assert!(s.relaxed);
        assert_abs_diff_eq!(s.u[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(s.slack[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_infeasibility_splits_slack() {
        let p = problem([0.0, 0.0], &[([1.0, 0.0], 1.0), ([-1.0, 0.0], 1.0)]);
        let s = solve(&p).unwrap();
        assert!(s.relaxed);
        assert_abs_diff_eq!(s.u[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.u[1], 0.0, epsilon = 1e-9);
        assert!(s.slack.iter().all(|&v| v > 0.0));
        assert_abs_diff_eq!(s.slack[0], s.slack[1], epsilon = 1e-12);
    }

    #[test]
    fn relaxed_balance_matches_grid_search() {
        // u_x >= 1 against u_x <= 0
        let p = problem([0.0, 0.0], &[([1.0, 0.0], 1.0), ([-1.0, 0.0], 0.0)]);
        let s = solve(&p).unwrap();
        assert!(s.relaxed);

        // grid search over u_x; for fixed u the best slacks are the violations
        let objective = |u: f64| u * u + RELAX_WEIGHT * ((1.0 - u).max(0.0).powi(2) + u.max(0.0).powi(2));
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=200_000 {
            let u = -0.5 + i as f64 * 1e-5;
            let f = objective(u);
            if f < best.0 {
                best = (f, u);
            }
        }
        assert!((s.u[0] - best.1).abs() <= 1e-5, "{} vs {}", s.u[0], best.1);
        assert!((objective(s.u[0]) - best.0).abs() <= 1e-6);
        assert_abs_diff_eq!(s.slack[0], 1.0 - s.u[0], epsilon = 1e-9);
        assert_abs_diff_eq!(s.slack[1], s.u[0], epsilon = 1e-9);
    }

    #[test]
    fn relax_on_feasible_problems_approaches_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let rows = rng.random_range(1..=6);
            let p = random_feasible(&mut rng, 2, rows);
            let exact = solve(&p).unwrap();
            let relaxed = relax(&p).unwrap();
            for (a, b) in exact.u.iter().zip(&relaxed.u) {
                assert!((a - b).abs() <= 1e-3, "{:?} vs {:?}", exact.u, relaxed.u);
            }
        }
    }

    #[test]
    fn random_problems_match_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..60 {
            let rows = rng.random_range(1..=6);
            let p = random_feasible(&mut rng, 2, rows);
            let s = solve(&p).unwrap();
            assert!(!s.relaxed);
            assert!(p.max_violation(&s.u) <= 1e-9);
            assert!(s.kkt_residual <= 1e-8);
            assert!(s.multipliers.iter().all(|&l| l >= -1e-10));
            let oracle = grid_oracle(&p).expect("feasible set meets the grid");
            let obj = s.objective(p.u_nom.as_slice());
            assert!(obj <= oracle + 2e-3);
            assert!(oracle <= obj + 1e-2, "grid oracle far above optimum: {oracle} vs {obj}");
        }
    }

    #[test]
    fn grid_oracle_sweep_matches_brute_force() {
        // exhaustive scan of a coarser grid, compared with the same sweep at that spacing
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = random_feasible(&mut rng, 2, 3);
            let s = solve(&p).unwrap();
            let mut best = f64::INFINITY;
            for ix in 0..=400 {
                for iy in 0..=400 {
                    let (x, y) = (-2.0 + ix as f64 * 0.01, -2.0 + iy as f64 * 0.01);
                    if (0..p.rows()).all(|r| p.g[(r, 0)] * x + p.g[(r, 1)] * y >= p.h[r]) {
                        best = best.min((x - p.u_nom[0]).powi(2) + (y - p.u_nom[1]).powi(2));
                    }
                }
            }
            let fine = grid_oracle(&p).unwrap();
            assert!(fine <= best + 1e-12);
            assert!(s.objective(p.u_nom.as_slice()) <= fine + 1e-12);
        }
    }

    #[test]
    fn enumeration_agrees_with_dual_active_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let rows = rng.random_range(1..=6);
            let p = random_feasible(&mut rng, 2, rows);
            let a = solve(&p).unwrap();
            let b = solve_dual(&p).unwrap();
            for (x, y) in a.u.iter().zip(&b.u) {
                assert!((x - y).abs() <= 1e-9, "{:?} vs {:?}", a.u, b.u);
            }
        }
    }

    #[test]
    fn higher_dimensional_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..300 {
            let dim = rng.random_range(3..=8);
            let rows = rng.random_range(1..=10);
            let p = random_feasible(&mut rng, dim, rows);
            let s = solve(&p).unwrap();
            assert!(!s.relaxed);
            assert!(p.max_violation(&s.u) <= 1e-9);
            assert!(s.kkt_residual <= 1e-8, "kkt {}", s.kkt_residual);
            assert!(s.multipliers.iter().all(|&l| l >= -1e-10));
        }
    }

    #[test]
    fn higher_dimensional_infeasible_relaxes() {
        let mut g = DMatrix::zeros(2, 4);
        g[(0, 2)] = 1.0;
        g[(1, 2)] = -1.0;
        let p = QpProblem::new(DVector::zeros(4), g, DVector::from_vec(vec![1.0, 1.0]));
        let s = solve(&p).unwrap();
        assert!(s.relaxed);
        assert!(s.u.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn rejects_malformed_problems() {
        let p = QpProblem::new(DVector::zeros(2), DMatrix::zeros(1, 3), DVector::zeros(1));
        assert!(matches!(solve(&p), Err(QpError::InvalidProblem(_))));
        let p = problem([f64::NAN, 0.0], &[]);
        assert!(matches!(solve(&p), Err(QpError::InvalidProblem(_))));
    }

    fn arb_problem() -> impl Strategy<Value = QpProblem> {
        (
            (-0.8..0.8f64, -0.8..0.8f64),
            (-0.8..0.8f64, -0.8..0.8f64),
            proptest::collection::vec(((-1.0..1.0f64, -1.0..1.0f64), 0.0..0.5f64), 1..=6),
        )
            .prop_map(|(anchor, u, rows)| {
                let rows: Vec<(Vec<f64>, f64)> = rows
                    .into_iter()
                    .map(|((gx, gy), s)| (vec![gx, gy], gx * anchor.0 + gy * anchor.1 - s))
                    .collect();
                QpProblem::from_rows(&[u.0, u.1], &rows)
            })
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(p in arb_problem()) {
            let s = solve(&p).unwrap();
            let again = solve(&QpProblem::new(DVector::from_column_slice(&s.u), p.g.clone(), p.h.clone())).unwrap();
            for (a, b) in s.u.iter().zip(&again.u) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn projection_is_nonexpansive(p in arb_problem(), other in (-2.0..2.0f64, -2.0..2.0f64)) {
            let a = solve(&p).unwrap();
            let q = QpProblem::new(DVector::from_vec(vec![other.0, other.1]), p.g.clone(), p.h.clone());
            let b = solve(&q).unwrap();
            let out = ((a.u[0] - b.u[0]).powi(2) + (a.u[1] - b.u[1]).powi(2)).sqrt();
            let inp = ((p.u_nom[0] - other.0).powi(2) + (p.u_nom[1] - other.1).powi(2)).sqrt();
            prop_assert!(out <= inp + 1e-9);
        }

        #[test]
        fn stationarity_certificate(p in arb_problem()) {
            let s = solve(&p).unwrap();
            prop_assert!(!s.relaxed);
            prop_assert!(s.kkt_residual <= 1e-8);
            prop_assert!(s.multipliers.iter().all(|&l| l >= -1e-10));
        }
    }
}
