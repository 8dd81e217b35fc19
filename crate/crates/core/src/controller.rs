//! Per-step synthesis of herder commands.
//!
//! Each herder drives its assigned evader toward the goal with a Sontag-type
//! nominal law, then projects that command onto the pairwise safety
//! constraints. The projected command may receive a small random kick when the
//! herder stalls, and is finally clamped to the speed limit.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{goal_terms, pair_terms, split_conditions, BarrierError, GoalBarrierTerms, PairBarrierTerms};
use crate::dynamics::{evader_fields, saturate};
use crate::model::{
    canonical_pairs, in_goal_region, nearest_assignment, Assignment, AssignmentError, ControlMode, ScenarioConfig,
    Vec2, WorldState,
};
use crate::qp::{self, QpError, QpProblem, QpSolution};

/// Below this input-coefficient norm the nominal law returns zero.
pub const SONTAG_B_MIN: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Whether per-herder problems are solved on the calling thread or fanned out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Serial,
    Parallel,
}

/// Nominal command from the goal condition `a + b·u >= 0`.
pub fn sontag_nominal(terms: &GoalBarrierTerms) -> Vec2 {
    let (a, b) = (terms.a, terms.b);
    let bb = b.norm_squared();
    if bb.sqrt() < SONTAG_B_MIN {
        if a < 0.0 {
            log::warn!(
                "goal condition violated for evader {} with no control authority (a = {a:.3e})",
                terms.evader
            );
        }
        return Vec2::ZERO;
    }
    let root = a.hypot(bb);
    // both branches equal (-a + root) / bb; the second avoids cancellation
    let coef = if a <= 0.0 { (root - a) / bb } else { bb / (a + root) };
    b * coef
}

/// Evaders other than `i` within the neighbour distance of evader `i`.
pub fn neighborhood(i: usize, state: &WorldState, cfg: &ScenarioConfig) -> Vec<usize> {
    let xi = state.evaders[i];
    (0..state.evaders.len())
        .filter(|&j| j != i && cfg.neighbor_dist.contains((xi - state.evaders[j]).norm()))
        .collect()
}

/// Stall bookkeeping carried across control steps.
#[derive(Debug, Clone, PartialEq)]
pub struct StallState {
    seed: u64,
    step: u64,
    stalled_steps: Vec<u64>,
}

impl StallState {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        Self {
            seed: cfg.seed,
            step: 0,
            stalled_steps: vec![0; cfg.n],
        }
    }

    /// Index of the next control step.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Consecutive stalled steps of herder `k`.
    pub fn stalled_steps(&self, k: usize) -> u64 {
        self.stalled_steps[k]
    }

    /// Generator for herder `k` at the current step, independent of evaluation order.
    pub fn rng_for(&self, k: usize) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.seed.to_le_bytes());
        seed[8..16].copy_from_slice(&self.step.to_le_bytes());
        seed[16..24].copy_from_slice(&(k as u64).to_le_bytes());
        ChaCha8Rng::from_seed(seed)
    }
}

/// Adds a random kick to `u` once herder `k` has been stalled for the dwell time.
///
/// Returns the command and whether it was perturbed. The stall timer advances
/// only while `||u||` is below the stall speed and the assigned evader is
/// outside the goal, and resets on any other step or after a kick.
pub fn perturb_if_stalled(
    u: Vec2,
    k: usize,
    evader_in_goal: bool,
    stall: &mut StallState,
    cfg: &ScenarioConfig,
) -> (Vec2, bool) {
    let p = &cfg.perturbation;
    if u.norm() >= p.stall_speed || evader_in_goal {
        stall.stalled_steps[k] = 0;
        return (u, false);
    }
    stall.stalled_steps[k] += 1;
    // the command is held for dt, so n stalled commands span n·dt seconds
    if (stall.stalled_steps[k] as f64) * cfg.dt < p.dwell - 1e-9 * cfg.dt {
        return (u, false);
    }
    stall.stalled_steps[k] = 0;
    let angle = stall.rng_for(k).random_range(0.0..TAU);
    let magnitude = p.magnitude(cfg.v_max);
    (u + Vec2::new(angle.cos(), angle.sin()) * magnitude, true)
}

/// What one herder did during a control step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HerderRecord {
    pub evader: usize,
    pub u_nom: Vec2,
    /// QP output, before perturbation and clamping.
    pub u_safe: Vec2,
    pub u: Vec2,
    /// Canonical pairs that contributed a constraint to this herder.
    pub constraints_used: Vec<(usize, usize)>,
    pub perturbed: bool,
    pub clamped: bool,
    pub relaxed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision {
    pub mode: ControlMode,
    pub u_h: Vec<Vec2>,
    pub per_herder: Vec<HerderRecord>,
    /// One per herder when decentralized, a single stacked solution when centralized.
    pub solutions: Vec<QpSolution>,
    pub assignment: Assignment,
    pub evader_velocities: Vec<Vec2>,
    pub goal_terms: Vec<GoalBarrierTerms>,
    /// Canonical pairs `i < j` inside the neighbourhood, with `k, q` their assigned herders.
    pub pair_terms: Vec<PairBarrierTerms>,
}

impl ControlDecision {
    pub fn min_c(&self) -> Option<f64> {
        self.pair_terms.iter().map(|t| t.c).reduce(f64::min)
    }

    pub fn relaxed(&self) -> bool {
        self.solutions.iter().any(|s| s.relaxed)
    }

    pub fn perturbed_count(&self) -> usize {
        self.per_herder.iter().filter(|r| r.perturbed).count()
    }

    pub fn clamped_count(&self) -> usize {
        self.per_herder.iter().filter(|r| r.clamped).count()
    }

    /// Pair residuals `c + d·(u_k - u_q)` at the QP outputs.
    pub fn pair_residuals(&self) -> Vec<f64> {
        self.pair_terms
            .iter()
            .map(|t| t.residual(self.per_herder[t.k].u_safe, self.per_herder[t.q].u_safe))
            .collect()
    }
}

/// Quantities shared by both synthesis modes.
struct Common {
    assignment: Assignment,
    v_e: Vec<Vec2>,
    goal: Vec<GoalBarrierTerms>,
    u_nom: Vec<Vec2>,
    pairs: Vec<PairBarrierTerms>,
}

fn common(state: &WorldState, cfg: &ScenarioConfig) -> Result<Common, ControlError> {
    let assignment = nearest_assignment(state)?;
    let gains = &cfg.gains;
    let v_e = evader_fields(state, gains, cfg.singularity_eps);
    let goal: Vec<GoalBarrierTerms> = (0..state.herders.len())
        .map(|k| goal_terms(assignment.evader_of(k), k, state, &v_e, gains, cfg))
        .collect();
    let u_nom = goal.iter().map(sontag_nominal).collect();
    let pairs = canonical_pairs(state.evaders.len())
        .into_iter()
        .filter(|&(i, j)| cfg.neighbor_dist.contains((state.evaders[i] - state.evaders[j]).norm()))
        .map(|(i, j)| pair_terms(i, j, assignment.herder_of(i), assignment.herder_of(j), state, &v_e, gains, cfg))
        .collect::<Result<_, _>>()?;
    Ok(Common {
        assignment,
        v_e,
        goal,
        u_nom,
        pairs,
    })
}

fn finish(
    mode: ControlMode,
    state: &WorldState,
    cfg: &ScenarioConfig,
    c: Common,
    solutions: Vec<QpSolution>,
    u_safe: Vec<Vec2>,
    constraints_used: Vec<Vec<(usize, usize)>>,
    relaxed: Vec<bool>,
    stall: &mut StallState,
) -> ControlDecision {
    let mut per_herder = Vec::with_capacity(u_safe.len());
    let mut u_h = Vec::with_capacity(u_safe.len());
    for (k, ((safe, used), relaxed)) in u_safe.into_iter().zip(constraints_used).zip(relaxed).enumerate() {
        let i = c.assignment.evader_of(k);
        let (kicked, perturbed) = perturb_if_stalled(safe, k, in_goal_region(state.evaders[i], cfg), stall, cfg);
        let u = saturate(kicked, cfg.v_max);
        let clamped = u != kicked;
        if clamped {
            log::debug!("t = {:.4}: herder {k} command clamped from {:.4} to {}", state.t, kicked.norm(), cfg.v_max);
        }
        u_h.push(u);
        per_herder.push(HerderRecord {
            evader: i,
            u_nom: c.u_nom[k],
            u_safe: safe,
            u,
            constraints_used: used,
            perturbed,
            clamped,
            relaxed,
        });
    }
    stall.step += 1;
    ControlDecision {
        mode,
        u_h,
        per_herder,
        solutions,
        assignment: c.assignment,
        evader_velocities: c.v_e,
        goal_terms: c.goal,
        pair_terms: c.pairs,
    }
}

fn to_vec2(u: &[f64]) -> Vec2 {
    Vec2::new(u[0], u[1])
}

/// Each herder solves its own two-variable projection.
pub fn decentralized_step(
    state: &WorldState,
    cfg: &ScenarioConfig,
    stall: &mut StallState,
    execution: Execution,
) -> Result<ControlDecision, ControlError> {
    let c = common(state, cfg)?;
    let alpha = cfg.gains.alpha_split;

    let solve_for = |k: usize| -> Result<(QpSolution, Vec<(usize, usize)>), ControlError> {
        let mut rows = Vec::new();
        let mut used = Vec::new();
        for t in c.pairs.iter().filter(|t| t.k == k || t.q == k) {
            let [for_k, for_q] = split_conditions(t, alpha);
            let s = if t.k == k { for_k } else { for_q };
            rows.push((vec![s.normal.x, s.normal.y], -s.offset));
            used.push((t.i, t.j));
        }
        let u_nom = c.u_nom[k];
        let solution = qp::solve(&QpProblem::from_rows(&[u_nom.x, u_nom.y], &rows))?;
        Ok((solution, used))
    };

    let herders: Vec<usize> = (0..state.herders.len()).collect();
    let results: Vec<_> = match execution {
        Execution::Serial => herders.iter().map(|&k| solve_for(k)).collect::<Result<_, _>>()?,
        Execution::Parallel => herders.par_iter().map(|&k| solve_for(k)).collect::<Result<_, _>>()?,
    };
    let (solutions, used): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let u_safe = solutions.iter().map(|s| to_vec2(&s.u)).collect();
    let relaxed = solutions.iter().map(|s| s.relaxed).collect();
    Ok(finish(ControlMode::Decentralized, state, cfg, c, solutions, u_safe, used, relaxed, stall))
}

/// One projection over all herders' commands, one row per neighbouring pair.
pub fn centralized_step(
    state: &WorldState,
    cfg: &ScenarioConfig,
    stall: &mut StallState,
) -> Result<ControlDecision, ControlError> {
    let c = common(state, cfg)?;
    let n = state.herders.len();
    let dim = 2 * n;
    let mut g = DMatrix::zeros(c.pairs.len(), dim);
    let mut h = DVector::zeros(c.pairs.len());
    let mut used = vec![Vec::new(); n];
    for (r, t) in c.pairs.iter().enumerate() {
        g[(r, 2 * t.k)] = t.d.x;
        g[(r, 2 * t.k + 1)] = t.d.y;
        g[(r, 2 * t.q)] = -t.d.x;
        g[(r, 2 * t.q + 1)] = -t.d.y;
        h[r] = -t.c;
        used[t.k].push((t.i, t.j));
        used[t.q].push((t.i, t.j));
    }
    let u_nom = DVector::from_iterator(dim, c.u_nom.iter().flat_map(|u| [u.x, u.y]));
    let solution = qp::solve(&QpProblem::new(u_nom, g, h))?;
    let u_safe = solution.u.chunks(2).map(to_vec2).collect();
    let relaxed = vec![solution.relaxed; n];
    Ok(finish(ControlMode::Centralized, state, cfg, c, vec![solution], u_safe, used, relaxed, stall))
}

/// Dispatches on the configured mode.
pub fn control_step(
    state: &WorldState,
    cfg: &ScenarioConfig,
    stall: &mut StallState,
    execution: Execution,
) -> Result<ControlDecision, ControlError> {
    match cfg.mode {
        ControlMode::Decentralized => decentralized_step(state, cfg, stall, execution),
        ControlMode::Centralized => centralized_step(state, cfg, stall),
    }
}
