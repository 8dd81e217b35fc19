//! Barrier functions for goal reaching and inter-evader avoidance.
//!
//! Both barriers are built in two layers. The position-level barrier
//! (`h1_pos`, `h2_pos`) is kept nonnegative by a virtual velocity law
//! (`r_h`, `r_a`). The full barrier subtracts a quadratic penalty on the
//! gap between the actual evader velocity and that virtual law. Its
//! rate condition is affine in the herder commands; the resulting
//! coefficients (`a`, `b` per evader and `c`, `d` per pair) are what the
//! controllers hand to the QP.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{evader_jacobian_herder, evader_jacobian_self};
use crate::model::{canonical_pairs, Assignment, ControlGains, ScenarioConfig, Vec2, WorldState};

/// Affine goal condition `a + b·u_k >= 0` for one evader and its herder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalBarrierTerms {
    pub evader: usize,
    pub herder: usize,
    pub a: f64,
    pub b: Vec2,
    pub h1_pos: f64,
    pub h1_full: f64,
}

/// Affine pair condition `c + d·(u_k - u_q) >= 0`.
///
/// Pairs built by the controllers are canonical (`i < j`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairBarrierTerms {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub q: usize,
    pub c: f64,
    pub d: Vec2,
    pub h2_pos: f64,
    pub h2_full: f64,
}

impl PairBarrierTerms {
    pub fn residual(&self, u_k: Vec2, u_q: Vec2) -> f64 {
        self.c + self.d.dot(u_k - u_q)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BarrierError {
    #[error("pair ({i}, {j}) is assigned to the same herder {k}")]
    SamePairHerder { i: usize, j: usize, k: usize },
    #[error("a pair needs two distinct evaders, got ({0}, {0})")]
    SameEvader(usize),
}

pub fn h1_pos(x: Vec2, cfg: &ScenarioConfig) -> f64 {
    cfg.goal_radius * cfg.goal_radius - (x - cfg.goal_center).norm_squared()
}

/// Virtual goal-reaching velocity `-gamma_h (x - x_goal)`.
pub fn r_h(x: Vec2, gains: &ControlGains, cfg: &ScenarioConfig) -> Vec2 {
    (x - cfg.goal_center) * -gains.gamma_h
}

pub fn h1_full(x: Vec2, v: Vec2, gains: &ControlGains, cfg: &ScenarioConfig) -> f64 {
    h1_pos(x, cfg) - (v - r_h(x, gains, cfg)).norm_squared() / (2.0 * gains.mu)
}

pub fn h2_pos(xi: Vec2, xj: Vec2, cfg: &ScenarioConfig) -> f64 {
    (xi - xj).norm_squared() - cfg.r_avoid * cfg.r_avoid
}

/// Virtual separating velocity `gamma_a x_ij`.
pub fn r_a(x_ij: Vec2, gains: &ControlGains) -> Vec2 {
    x_ij * gains.gamma_a
}

pub fn h2_full(x_ij: Vec2, v_ij: Vec2, gains: &ControlGains, cfg: &ScenarioConfig) -> f64 {
    x_ij.norm_squared() - cfg.r_avoid * cfg.r_avoid
        - (v_ij - r_a(x_ij, gains)).norm_squared() / (2.0 * gains.mu)
}

/// Goal condition coefficients for evader `i` driven by herder `k`.
///
/// `v_e` holds the current field value of every evader.
pub fn goal_terms(
    i: usize,
    k: usize,
    state: &WorldState,
    v_e: &[Vec2],
    gains: &ControlGains,
    cfg: &ScenarioConfig,
) -> GoalBarrierTerms {
    let x = state.evaders[i];
    let v = v_e[i];
    let err = v - r_h(x, gains, cfg);
    let pos = h1_pos(x, cfg);
    let full = pos - err.norm_squared() / (2.0 * gains.mu);
    let j_self = evader_jacobian_self(i, state, gains, cfg.singularity_eps);
    let j_herder = evader_jacobian_herder(i, k, state, gains, cfg);

    let drift = j_self.mul_vec(v) + v * gains.gamma_h;
    let a = -2.0 * (x - cfg.goal_center).dot(v) + gains.gamma_h * full - err.dot(drift) / gains.mu;
    let b = j_herder.left_mul(err) * (-1.0 / gains.mu);
    GoalBarrierTerms {
        evader: i,
        herder: k,
        a,
        b,
        h1_pos: pos,
        h1_full: full,
    }
}

/// Pair condition coefficients for evaders `i`, `j` with responsible herders `k`, `q`.
#[allow(clippy::too_many_arguments)]
pub fn pair_terms(
    i: usize,
    j: usize,
    k: usize,
    q: usize,
    state: &WorldState,
    v_e: &[Vec2],
    gains: &ControlGains,
    cfg: &ScenarioConfig,
) -> Result<PairBarrierTerms, BarrierError> {
    if i == j {
        return Err(BarrierError::SameEvader(i));
    }
    if k == q {
        return Err(BarrierError::SamePairHerder { i, j, k });
    }
    let eps = cfg.singularity_eps;
    let x = state.evaders[i] - state.evaders[j];
    let v = v_e[i] - v_e[j];
    let err = v - r_a(x, gains);
    let pos = x.norm_squared() - cfg.r_avoid * cfg.r_avoid;
    let full = pos - err.norm_squared() / (2.0 * gains.mu);

    let j_e = evader_jacobian_self(i, state, gains, eps) - evader_jacobian_self(j, state, gains, eps);
    let j_h = evader_jacobian_herder(i, k, state, gains, cfg) - evader_jacobian_herder(j, q, state, gains, cfg);

    let drift = j_e.mul_vec(v) - v * gains.gamma_a;
    let c = 2.0 * x.dot(v) + gains.gamma_a * full - err.dot(drift) / gains.mu;
    let d = j_h.left_mul(err) * (-1.0 / gains.mu);
    Ok(PairBarrierTerms {
        i,
        j,
        k,
        q,
        c,
        d,
        h2_pos: pos,
        h2_full: full,
    })
}

/// One herder's share of a pair condition: `offset + normal·u_herder >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConstraint {
    pub herder: usize,
    pub offset: f64,
    pub normal: Vec2,
}

impl SplitConstraint {
    pub fn value(&self, u: Vec2) -> f64 {
        self.offset + self.normal.dot(u)
    }
}

/// Splits `c + d·(u_k - u_q) >= 0` into `alpha c + d·u_k >= 0` for herder `k`
/// and `(1 - alpha) c - d·u_q >= 0` for herder `q`. Together they imply the
/// pair condition.
pub fn split_conditions(terms: &PairBarrierTerms, alpha_split: f64) -> [SplitConstraint; 2] {
    [
        SplitConstraint {
            herder: terms.k,
            offset: alpha_split * terms.c,
            normal: terms.d,
        },
        SplitConstraint {
            herder: terms.q,
            offset: (1.0 - alpha_split) * terms.c,
            normal: -terms.d,
        },
    ]
}

/// Left-hand sides of both full barrier rate conditions under applied commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Per evader, the goal condition evaluated with its assigned herder's command.
    pub goal: Vec<f64>,
    /// Per canonical pair `(i, j, value)`.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl ResidualReport {
    pub fn min(&self) -> Option<f64> {
        self.goal
            .iter()
            .copied()
            .chain(self.pairs.iter().map(|p| p.2))
            .reduce(f64::min)
    }
}

/// Evaluates the barrier rate conditions directly from the dynamics, without
/// going through the `a, b, c, d` coefficients.
pub fn cbf_residuals(
    state: &WorldState,
    v_e: &[Vec2],
    u_h: &[Vec2],
    assignment: &Assignment,
    gains: &ControlGains,
    cfg: &ScenarioConfig,
) -> ResidualReport {
    let eps = cfg.singularity_eps;
    let mu = gains.mu;
    // predicted rate of v_Ei through its own herder only
    let v_dot = |i: usize, k: usize| {
        evader_jacobian_self(i, state, gains, eps).mul_vec(v_e[i])
            + evader_jacobian_herder(i, k, state, gains, cfg).mul_vec(u_h[k])
    };

    let goal = (0..state.evaders.len())
        .map(|i| {
            let k = assignment.herder_of(i);
            let x = state.evaders[i];
            let v = v_e[i];
            let err = v - r_h(x, gains, cfg);
            let rate_err = v_dot(i, k) + v * gains.gamma_h;
            -2.0 * (x - cfg.goal_center).dot(v) - err.dot(rate_err) / mu
                + gains.gamma_h * h1_full(x, v, gains, cfg)
        })
        .collect();

    let pairs = canonical_pairs(state.evaders.len())
        .into_iter()
        .map(|(i, j)| {
            let (k, q) = (assignment.herder_of(i), assignment.herder_of(j));
            let x = state.evaders[i] - state.evaders[j];
            let v = v_e[i] - v_e[j];
            let err = v - r_a(x, gains);
            let j_e = evader_jacobian_self(i, state, gains, eps) - evader_jacobian_self(j, state, gains, eps);
            let j_h = evader_jacobian_herder(i, k, state, gains, cfg)
                - evader_jacobian_herder(j, q, state, gains, cfg);
            let rate = j_e.mul_vec(v) + j_h.mul_vec(u_h[k] - u_h[q]) - v * gains.gamma_a;
            let value = 2.0 * x.dot(v) - err.dot(rate) / mu + gains.gamma_a * h2_full(x, v, gains, cfg);
            (i, j, value)
        })
        .collect();

    ResidualReport { goal, pairs }
}
