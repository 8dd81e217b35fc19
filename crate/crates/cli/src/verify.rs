//! Numerical verification suites behind `herd verify`.
//!
//! Each check compares the implementation against an independent reference:
//! central finite differences for the field Jacobians, the closed-form margin
//! of the nominal law, a dense grid search for the projection, and short
//! closed-loop runs for the barrier invariance properties.

use std::f64::consts::TAU;
use std::fmt;

use herding_core::barrier::{h2_full, GoalBarrierTerms};
use herding_core::controller::sontag_nominal;
use herding_core::dynamics::{evader_field, evader_fields, evader_jacobian_herder, evader_jacobian_self, Jacobian2};
use herding_core::model::{canonical_pairs, ControlGains, ControlMode, JacobianMode, ScenarioConfig, Vec2, WorldState};
use herding_core::qp::{solve, QpProblem};
use herding_core::sim::Simulation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const JACOBIAN_TRIALS: usize = 100;
pub const SONTAG_TRIALS: usize = 1000;
pub const QP_TRIALS: usize = 500;
pub const INVARIANCE_TRIALS: usize = 20;

pub const JACOBIAN_TOL: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-6;
pub const SONTAG_TOL: f64 = 1e-9;
pub const QP_OBJECTIVE_TOL: f64 = 2e-3;
pub const QP_FEAS_TOL: f64 = 1e-9;
pub const QP_KKT_TOL: f64 = 1e-8;
pub const GRID_STEP: f64 = 1e-3;
pub const INVARIANCE_TOL: f64 = 1e-3;
pub const INVARIANCE_HORIZON: f64 = 5.0;
pub const INVARIANCE_JITTER: f64 = 1.0;
/// Candidate seeds tried before giving up on collecting enough admissible runs.
pub const INVARIANCE_SEED_CAP: u64 = 200;
pub const SPLIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub trials: usize,
    /// Worst value of the checked quantity, in the check's own units.
    pub worst: f64,
    pub detail: String,
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} ({} trials; {})",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.trials,
            self.detail
        )
    }
}

fn random_point(rng: &mut ChaCha8Rng, half: f64) -> Vec2 {
    Vec2::new(rng.random_range(-half..half), rng.random_range(-half..half))
}

/// Random layout with every pair of agents at least `min_dist` apart.
fn spread_layout(rng: &mut ChaCha8Rng, m: usize, n: usize, min_dist: f64) -> WorldState {
    loop {
        let evaders: Vec<Vec2> = (0..m).map(|_| random_point(rng, 3.0)).collect();
        let herders: Vec<Vec2> = (0..n).map(|_| random_point(rng, 3.0)).collect();
        let all: Vec<Vec2> = evaders.iter().chain(&herders).copied().collect();
        let ok = all
            .iter()
            .enumerate()
            .all(|(a, &p)| all[a + 1..].iter().all(|&q| (p - q).norm() >= min_dist));
        if ok {
            return WorldState::new(evaders, herders);
        }
    }
}

fn fd_column(f: impl Fn(Vec2) -> Vec2, at: Vec2, axis: usize) -> Vec2 {
    let e = if axis == 0 { Vec2::new(FD_STEP, 0.0) } else { Vec2::new(0.0, FD_STEP) };
    (f(at + e) - f(at - e)) * (0.5 / FD_STEP)
}

fn fd_jacobian(f: impl Fn(Vec2) -> Vec2, at: Vec2) -> Jacobian2 {
    let c0 = fd_column(&f, at, 0);
    let c1 = fd_column(&f, at, 1);
    Jacobian2::new(c0.x, c1.x, c0.y, c1.y)
}

fn relative_error(analytic: Jacobian2, reference: Jacobian2) -> f64 {
    (analytic - reference).frobenius_norm() / reference.frobenius_norm().max(1e-8)
}

/// Analytic field Jacobians against central finite differences.
///
/// The herder Jacobian is always checked in the exact mode. When `base` selects
/// the literal mode, its deviation from the finite-difference reference is
/// reported but does not fail the check.
pub fn check_jacobian(trials: usize, seed: u64, base: &ScenarioConfig) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exact_cfg = base.clone();
    exact_cfg.jacobian_mode = JacobianMode::ExactPerHerder;
    let mut literal_cfg = base.clone();
    literal_cfg.jacobian_mode = JacobianMode::PaperLiteral;

    let mut worst: f64 = 0.0;
    let mut literal_worst: f64 = 0.0;
    for _ in 0..trials {
        let m = rng.random_range(1..=3);
        let n = rng.random_range(1..=3);
        let state = spread_layout(&mut rng, m, n, 0.1);
        let gains = ControlGains {
            kappa_h: rng.random_range(1.0..=10.0),
            ..base.gains.clone()
        };
        let eps = base.singularity_eps;
        exact_cfg.gains = gains.clone();
        literal_cfg.gains = gains.clone();
        for i in 0..m {
            let moved_evader = |p: Vec2| {
                let mut s = state.clone();
                s.evaders[i] = p;
                evader_field(i, &s, &gains, eps)
            };
            let reference = fd_jacobian(moved_evader, state.evaders[i]);
            worst = worst.max(relative_error(evader_jacobian_self(i, &state, &gains, eps), reference));
            for k in 0..n {
                let moved_herder = |p: Vec2| {
                    let mut s = state.clone();
                    s.herders[k] = p;
                    evader_field(i, &s, &gains, eps)
                };
                let reference = fd_jacobian(moved_herder, state.herders[k]);
                let exact = evader_jacobian_herder(i, k, &state, &gains, &exact_cfg);
                worst = worst.max(relative_error(exact, reference));
                let literal = evader_jacobian_herder(i, k, &state, &gains, &literal_cfg);
                literal_worst = literal_worst.max(relative_error(literal, reference));
            }
        }
    }
    let mut detail = format!("worst relative error {worst:.3e}, limit {JACOBIAN_TOL:.0e}");
    if base.jacobian_mode == JacobianMode::PaperLiteral {
        detail.push_str(&format!(
            "; literal herder Jacobian deviates by up to {literal_worst:.3e} when several herders act (informational)"
        ));
    }
    CheckReport {
        name: "jacobian",
        passed: worst <= JACOBIAN_TOL,
        trials,
        worst,
        detail,
    }
}

/// Margin `a + b·u_nom` of the nominal law on random goal terms.
pub fn check_sontag(trials: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..trials {
        let a = rng.random_range(-1e3..1e3);
        let radius = 10f64.powf(rng.random_range(-6.0..3.0));
        let angle = rng.random_range(0.0..TAU);
        let b = Vec2::new(radius * angle.cos(), radius * angle.sin());
        let terms = GoalBarrierTerms {
            evader: 0,
            herder: 0,
            a,
            b,
            h1_pos: 0.0,
            h1_full: 0.0,
        };
        let u = sontag_nominal(&terms);
        worst = worst.min(a + b.dot(u));
    }
    if trials == 0 {
        worst = 0.0;
    }
    CheckReport {
        name: "sontag",
        passed: worst >= -SONTAG_TOL,
        trials,
        worst,
        detail: format!("smallest margin a + b·u {worst:.3e}, limit {:.0e}", -SONTAG_TOL),
    }
}

/// Smallest objective over grid points of `[-2, 2]²` at spacing [`GRID_STEP`] that satisfy every row.
///
/// For a fixed `x` the feasible `y` form an interval, so each grid column is
/// resolved by clamping the nominal `y` into that interval.
pub fn grid_projection(p: &QpProblem) -> Option<f64> {
    let steps = (4.0 / GRID_STEP).round() as i64;
    let (ux, uy) = (p.u_nom[0], p.u_nom[1]);
    let coord = |i: i64| -2.0 + i as f64 * GRID_STEP;
    let satisfied = |x: f64, y: f64| (0..p.rows()).all(|r| p.g[(r, 0)] * x + p.g[(r, 1)] * y >= p.h[r]);
    let mut best: Option<f64> = None;
    for ix in 0..=steps {
        let x = coord(ix);
        let (mut lo, mut hi) = (-2.0f64, 2.0f64);
        let mut empty = false;
        for r in 0..p.rows() {
            let (gx, gy) = (p.g[(r, 0)], p.g[(r, 1)]);
            let rest = p.h[r] - gx * x;
            if gy == 0.0 {
                empty |= rest > 0.0;
            } else if gy > 0.0 {
                lo = lo.max(rest / gy);
            } else {
                hi = hi.min(rest / gy);
            }
        }
        if empty || lo > hi {
            continue;
        }
        let first = ((lo + 2.0) / GRID_STEP).ceil() as i64 - 1;
        let last = ((hi + 2.0) / GRID_STEP).floor() as i64 + 1;
        let target = ((uy + 2.0) / GRID_STEP).round() as i64;
        // neighbours of the clamped target absorb rounding at the interval ends
        let centre = target.clamp(first, last);
        for iy in (centre - 2).max(0)..=(centre + 2).min(steps) {
            let y = coord(iy);
            if satisfied(x, y) {
                let obj = (x - ux).powi(2) + (y - uy).powi(2);
                best = Some(best.map_or(obj, |b| b.min(obj)));
            }
        }
    }
    best
}

/// Random two-variable projection with a nonempty feasible set.
pub fn random_projection(rng: &mut ChaCha8Rng) -> QpProblem {
    let anchor = random_point(rng, 0.8);
    let u_nom = random_point(rng, 0.8);
    let rows: Vec<(Vec<f64>, f64)> = (0..rng.random_range(1..=6))
        .map(|_| {
            let g = random_point(rng, 1.0);
            (vec![g.x, g.y], g.dot(anchor) - rng.random_range(0.05..0.5))
        })
        .collect();
    QpProblem::from_rows(&[u_nom.x, u_nom.y], &rows)
}

/// Projection solver against the dense grid search.
pub fn check_qp(trials: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut excess: f64 = f64::NEG_INFINITY;
    let mut gap: f64 = 0.0;
    let mut violation: f64 = 0.0;
    let mut kkt: f64 = 0.0;
    let mut failures = 0usize;
    for _ in 0..trials {
        let p = random_projection(&mut rng);
        let Ok(s) = solve(&p) else {
            failures += 1;
            continue;
        };
        if s.relaxed {
            failures += 1;
            continue;
        }
        let Some(oracle) = grid_projection(&p) else {
            failures += 1;
            continue;
        };
        let obj = s.objective(p.u_nom.as_slice());
        excess = excess.max(obj - oracle);
        gap = gap.max((obj - oracle).abs());
        violation = violation.max(p.max_violation(&s.u));
        kkt = kkt.max(s.kkt_residual);
    }
    if trials == 0 {
        excess = 0.0;
    }
    let passed = failures == 0 && excess <= QP_OBJECTIVE_TOL && violation <= QP_FEAS_TOL && kkt <= QP_KKT_TOL;
    CheckReport {
        name: "qp",
        passed,
        trials,
        worst: excess,
        detail: format!(
            "objective minus grid optimum at most {excess:.3e} (limit {QP_OBJECTIVE_TOL:.0e}, largest |gap| {gap:.3e}), \
             violation {violation:.1e}, KKT residual {kkt:.1e}, {failures} unsolved"
        ),
    }
}

/// One admissible short run.
#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceRun {
    pub seed: u64,
    pub min_h2_full: f64,
    /// Smallest `c + d·(u_k - u_q)` over pairs whose two herders solved without relaxation.
    pub min_pair_residual: Option<f64>,
    pub checked_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceStudy {
    pub runs: Vec<InvarianceRun>,
    /// Seeds skipped because a pair started with `h2_full < 0`.
    pub rejected_initial: usize,
    /// Seeds skipped because a projection had to be relaxed.
    pub rejected_relaxed: usize,
}

/// Base scenario with every coordinate shifted by `U(-jitter, jitter)`.
pub fn jittered(base: &ScenarioConfig, seed: u64, jitter: f64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = base.clone();
    for p in cfg.initial_evaders.iter_mut().chain(cfg.initial_herders.iter_mut()) {
        *p += random_point(&mut rng, jitter);
    }
    cfg.seed = seed;
    cfg
}

fn min_h2_full_at(state: &WorldState, cfg: &ScenarioConfig) -> Option<f64> {
    let v = evader_fields(state, &cfg.gains, cfg.singularity_eps);
    canonical_pairs(state.evaders.len())
        .into_iter()
        .map(|(i, j)| h2_full(state.evaders[i] - state.evaders[j], v[i] - v[j], &cfg.gains, cfg))
        .reduce(f64::min)
}

/// Short runs from jittered starts that satisfy the invariance preconditions.
///
/// Seeds `seed, seed + 1, ...` are tried in order until `trials` runs are
/// admissible or [`INVARIANCE_SEED_CAP`] candidates have been spent.
pub fn invariance_study(trials: usize, seed: u64, base: &ScenarioConfig, mode: ControlMode) -> InvarianceStudy {
    let mut study = InvarianceStudy {
        runs: Vec::new(),
        rejected_initial: 0,
        rejected_relaxed: 0,
    };
    for candidate in seed..seed.saturating_add(INVARIANCE_SEED_CAP) {
        if study.runs.len() >= trials {
            break;
        }
        let mut cfg = jittered(base, candidate, INVARIANCE_JITTER);
        cfg.t_max = INVARIANCE_HORIZON;
        cfg.mode = mode;
        let start = WorldState::initial(&cfg);
        if min_h2_full_at(&start, &cfg).is_some_and(|h| h < 0.0) {
            study.rejected_initial += 1;
            continue;
        }
        let Ok(mut sim) = Simulation::new(&cfg) else {
            study.rejected_initial += 1;
            continue;
        };
        let mut relaxed = false;
        let mut min_residual: Option<f64> = None;
        let mut checked = 0usize;
        let mut failed = false;
        loop {
            match sim.advance() {
                Ok(Some(decision)) => {
                    relaxed |= decision.relaxed();
                    for (t, residual) in decision.pair_terms.iter().zip(decision.pair_residuals()) {
                        if decision.per_herder[t.k].relaxed || decision.per_herder[t.q].relaxed {
                            continue;
                        }
                        checked += 1;
                        min_residual = Some(min_residual.map_or(residual, |m| m.min(residual)));
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    log::warn!("invariance run for seed {candidate} aborted: {e}");
                    failed = true;
                    break;
                }
            }
        }
        if relaxed || failed {
            study.rejected_relaxed += 1;
            continue;
        }
        let recorded = sim
            .records()
            .iter()
            .flat_map(|r| r.h2_full.iter().copied())
            .fold(f64::INFINITY, f64::min);
        let terminal = min_h2_full_at(sim.state(), &cfg).unwrap_or(f64::INFINITY);
        study.runs.push(InvarianceRun {
            seed: candidate,
            min_h2_full: recorded.min(terminal),
            min_pair_residual: min_residual,
            checked_pairs: checked,
        });
    }
    study
}

fn shortfall(study: &InvarianceStudy, trials: usize) -> String {
    format!(
        "{} admissible of {} requested; skipped {} with h2_full(0) < 0 and {} with relaxation",
        study.runs.len(),
        trials,
        study.rejected_initial,
        study.rejected_relaxed
    )
}

/// Forward invariance of the full avoidance barrier along admissible runs.
pub fn invariance_report(study: &InvarianceStudy, trials: usize) -> CheckReport {
    let violators: Vec<u64> = study
        .runs
        .iter()
        .filter(|r| r.min_h2_full < -INVARIANCE_TOL)
        .map(|r| r.seed)
        .collect();
    let worst = study.runs.iter().map(|r| r.min_h2_full).fold(f64::INFINITY, f64::min);
    let worst = if study.runs.is_empty() { 0.0 } else { worst };
    CheckReport {
        name: "invariance",
        passed: violators.is_empty() && study.runs.len() >= trials,
        trials: study.runs.len(),
        worst,
        detail: format!(
            "smallest h2_full {worst:.4e} (limit {:.0e}); {} runs below limit {:?}; {}",
            -INVARIANCE_TOL,
            violators.len(),
            violators,
            shortfall(study, trials)
        ),
    }
}

/// Pair condition implied by the two split conditions along admissible runs.
pub fn split_report(study: &InvarianceStudy, trials: usize) -> CheckReport {
    let worst = study
        .runs
        .iter()
        .filter_map(|r| r.min_pair_residual)
        .fold(f64::INFINITY, f64::min);
    let checked: usize = study.runs.iter().map(|r| r.checked_pairs).sum();
    let worst = if checked == 0 { 0.0 } else { worst };
    CheckReport {
        name: "split",
        passed: worst >= -SPLIT_TOL && study.runs.len() >= trials,
        trials: study.runs.len(),
        worst,
        detail: format!(
            "smallest pair residual {worst:.4e} over {checked} pair-steps (limit {:.0e}); {}",
            -SPLIT_TOL,
            shortfall(study, trials)
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Jacobian,
    Sontag,
    Qp,
    Invariance,
}

impl Check {
    pub const ALL: [Check; 4] = [Check::Jacobian, Check::Sontag, Check::Qp, Check::Invariance];

    pub fn default_trials(self) -> usize {
        match self {
            Check::Jacobian => JACOBIAN_TRIALS,
            Check::Sontag => SONTAG_TRIALS,
            Check::Qp => QP_TRIALS,
            Check::Invariance => INVARIANCE_TRIALS,
        }
    }
}

/// Parses `jacobian,sontag,qp,invariance,all` lists, keeping first-mention order.
pub fn parse_checks(list: &str) -> Result<Vec<Check>, String> {
    let mut out: Vec<Check> = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let picked: &[Check] = match name {
            "jacobian" => &[Check::Jacobian],
            "sontag" => &[Check::Sontag],
            "qp" => &[Check::Qp],
            "invariance" => &[Check::Invariance],
            "all" => &Check::ALL,
            other => return Err(format!("unknown check `{other}`")),
        };
        for c in picked {
            if !out.contains(c) {
                out.push(*c);
            }
        }
    }
    if out.is_empty() {
        return Err("no checks selected".into());
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub checks: Vec<Check>,
    pub trials: Option<usize>,
    pub seed: u64,
    pub base: ScenarioConfig,
}

/// Runs the selected checks; the invariance check also reports the split property.
pub fn cmd_verify(opts: &VerifyOptions) -> Vec<CheckReport> {
    if opts.trials == Some(0) {
        log::warn!("--trials 0 makes every check vacuous");
    }
    let mut reports = Vec::new();
    for &check in &opts.checks {
        let trials = opts.trials.unwrap_or(check.default_trials());
        match check {
            Check::Jacobian => reports.push(check_jacobian(trials, opts.seed, &opts.base)),
            Check::Sontag => reports.push(check_sontag(trials, opts.seed)),
            Check::Qp => reports.push(check_qp(trials, opts.seed)),
            Check::Invariance => {
                let study = invariance_study(trials, opts.seed, &opts.base, opts.base.mode);
                reports.push(invariance_report(&study, trials));
                if opts.base.mode == ControlMode::Decentralized {
                    reports.push(split_report(&study, trials));
                }
            }
        }
    }
    reports
}
