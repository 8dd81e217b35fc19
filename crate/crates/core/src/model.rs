//! Domain types, scenario configuration and the set-membership predicates
//! for the goal disk and the inter-evader avoidance sets.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Planar vector used for positions and velocities.
///
/// Serialized as a two-element array `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}

impl fmt::Display for Vec2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Positions of every agent at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub t: f64,
    pub evaders: Vec<Vec2>,
    pub herders: Vec<Vec2>,
}

impl WorldState {
    pub fn new(evaders: Vec<Vec2>, herders: Vec<Vec2>) -> Self {
        Self {
            t: 0.0,
            evaders,
            herders,
        }
    }

    pub fn initial(cfg: &ScenarioConfig) -> Self {
        Self::new(cfg.initial_evaders.clone(), cfg.initial_herders.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.evaders.iter().all(|p| p.is_finite())
            && self.herders.iter().all(|p| p.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlGains {
    /// Repulsion gain of the inverse-square evader field.
    #[serde(rename = "kappa_H")]
    pub kappa_h: f64,
    /// Rate of the goal-reaching barrier condition.
    pub gamma_h: f64,
    /// Rate of the inter-evader avoidance barrier condition.
    pub gamma_a: f64,
    /// Weight of the backstepping penalty on the velocity error.
    pub mu: f64,
    /// Share of the pairwise condition carried by the first herder of a pair.
    #[serde(default = "default_alpha_split")]
    pub alpha_split: f64,
    /// Accepted for compatibility with published parameter sets; no control law uses it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_h: Option<f64>,
    /// Accepted for compatibility with published parameter sets; no control law uses it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_a: Option<f64>,
}

fn default_alpha_split() -> f64 {
    0.5
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            kappa_h: 10.0,
            gamma_h: 0.5,
            gamma_a: 0.5,
            mu: 1.0,
            alpha_split: 0.5,
            k_h: Some(1.0),
            k_a: Some(1.0),
        }
    }
}

/// Radius of the neighborhood used to select pairwise avoidance constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NeighborDist {
    Within(f64),
    Unbounded(UnboundedTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnboundedTag {
    Unbounded,
}

impl NeighborDist {
    pub const UNBOUNDED: NeighborDist = NeighborDist::Unbounded(UnboundedTag::Unbounded);

    pub fn contains(&self, distance: f64) -> bool {
        match self {
            NeighborDist::Within(d) => distance <= *d,
            NeighborDist::Unbounded(_) => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    Centralized,
    Decentralized,
}

impl std::str::FromStr for ControlMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "centralized" => Ok(ControlMode::Centralized),
            "decentralized" => Ok(ControlMode::Decentralized),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// How the evader-field Jacobian with respect to a herder position is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Exact partial derivative: only the k-th summand of the field depends on herder k.
    ExactPerHerder,
    /// Negated self-Jacobian summed over all herders; exact only for a single herder.
    PaperLiteral,
}

impl std::str::FromStr for JacobianMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact_per_herder" => Ok(JacobianMode::ExactPerHerder),
            "paper_literal" => Ok(JacobianMode::PaperLiteral),
            other => Err(format!("unknown jacobian mode `{other}`")),
        }
    }
}

/// Stall detection and escape perturbation for herders caught in an equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    #[serde(default = "default_stall_speed")]
    pub stall_speed: f64,
    #[serde(default = "default_dwell")]
    pub dwell: f64,
    /// Defaults to `0.05 * v_max` when absent; filled in on load.
    #[serde(default)]
    pub magnitude: Option<f64>,
}

fn default_stall_speed() -> f64 {
    1e-3
}

fn default_dwell() -> f64 {
    1.0
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            stall_speed: default_stall_speed(),
            dwell: default_dwell(),
            magnitude: None,
        }
    }
}

impl Perturbation {
    pub fn magnitude(&self, v_max: f64) -> f64 {
        self.magnitude.unwrap_or(0.05 * v_max)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub m: usize,
    pub n: usize,
    pub gains: ControlGains,
    pub goal_center: Vec2,
    pub goal_radius: f64,
    pub r_avoid: f64,
    pub v_max: f64,
    #[serde(default = "default_neighbor_dist")]
    pub neighbor_dist: NeighborDist,
    pub dt: f64,
    pub t_max: f64,
    pub hold_time: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: ControlMode,
    #[serde(default = "default_jacobian_mode")]
    pub jacobian_mode: JacobianMode,
    pub initial_evaders: Vec<Vec2>,
    pub initial_herders: Vec<Vec2>,
    #[serde(default = "default_singularity_eps")]
    pub singularity_eps: f64,
    #[serde(default)]
    pub perturbation: Perturbation,
}

fn default_neighbor_dist() -> NeighborDist {
    NeighborDist::UNBOUNDED
}

fn default_mode() -> ControlMode {
    ControlMode::Decentralized
}

fn default_jacobian_mode() -> JacobianMode {
    JacobianMode::ExactPerHerder
}

fn default_singularity_eps() -> f64 {
    1e-3
}

/// Largest integration step accepted for the stiff inverse-square field.
pub const MAX_DT: f64 = 0.05;

impl ScenarioConfig {
    /// Three herders, three evaders, goal disk of radius 3.5 centred at (30, 10).
    /// The initial positions are a dispersed layout chosen for this crate.
    pub fn default_scenario() -> Self {
        Self {
            description: Some(
                "Three herders and three evaders; goal disk at (30, 10), radius 3.5. \
                 Initial positions are artifact-chosen."
                    .to_string(),
            ),
            m: 3,
            n: 3,
            gains: ControlGains::default(),
            goal_center: Vec2::new(30.0, 10.0),
            goal_radius: 3.5,
            r_avoid: 0.5,
            v_max: 3.0,
            neighbor_dist: NeighborDist::UNBOUNDED,
            dt: 0.01,
            t_max: 60.0,
            hold_time: 5.0,
            seed: 0,
            mode: ControlMode::Decentralized,
            jacobian_mode: JacobianMode::ExactPerHerder,
            initial_evaders: vec![Vec2::new(5.0, 5.0), Vec2::new(7.0, 3.0), Vec2::new(6.0, 7.0)],
            initial_herders: vec![Vec2::new(1.0, 9.0), Vec2::new(2.0, 2.0), Vec2::new(9.0, 1.0)],
            singularity_eps: 1e-3,
            perturbation: Perturbation {
                magnitude: Some(0.15),
                ..Perturbation::default()
            },
        }
    }

    /// Parses, fills defaults that depend on other fields, and validates.
    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let mut cfg: ScenarioConfig = serde_json::from_str(s)?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Fills fields whose defaults depend on other fields.
    pub fn resolve(&mut self) {
        if self.perturbation.magnitude.is_none() {
            self.perturbation.magnitude = Some(0.05 * self.v_max);
        }
    }

    /// Hard errors for inconsistent configs; returns soft warnings.
    pub fn validate(&self) -> Result<Vec<String>, ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        let g = &self.gains;
        for (name, v) in [
            ("gains.kappa_H", g.kappa_h),
            ("gains.gamma_h", g.gamma_h),
            ("gains.gamma_a", g.gamma_a),
            ("gains.mu", g.mu),
            ("goal_radius", self.goal_radius),
            ("r_avoid", self.r_avoid),
            ("v_max", self.v_max),
            ("dt", self.dt),
            ("singularity_eps", self.singularity_eps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if !(g.alpha_split > 0.0 && g.alpha_split < 1.0) {
            return bad(format!("gains.alpha_split must lie in (0, 1), got {}", g.alpha_split));
        }
        if !(self.t_max.is_finite() && self.t_max >= 0.0) {
            return bad(format!("t_max must be finite and >= 0, got {}", self.t_max));
        }
        if !(self.hold_time.is_finite() && self.hold_time >= 0.0) {
            return bad(format!("hold_time must be finite and >= 0, got {}", self.hold_time));
        }
        if self.dt > MAX_DT {
            return bad(format!("dt must be <= {MAX_DT}, got {}", self.dt));
        }
        if self.r_avoid >= 2.0 * self.goal_radius {
            return bad(format!(
                "r_avoid ({}) must be smaller than the goal diameter ({})",
                self.r_avoid,
                2.0 * self.goal_radius
            ));
        }
        if let NeighborDist::Within(d) = self.neighbor_dist {
            if !(d.is_finite() && d > 0.0) {
                return bad(format!("neighbor_dist must be > 0 or \"unbounded\", got {d}"));
            }
        }
        if self.m == 0 || self.n == 0 {
            return bad("m and n must be positive".to_string());
        }
        if self.initial_evaders.len() != self.m {
            return bad(format!(
                "initial_evaders has {} entries but m = {}",
                self.initial_evaders.len(),
                self.m
            ));
        }
        if self.initial_herders.len() != self.n {
            return bad(format!(
                "initial_herders has {} entries but n = {}",
                self.initial_herders.len(),
                self.n
            ));
        }
        if !self
            .initial_evaders
            .iter()
            .chain(&self.initial_herders)
            .all(|p| p.is_finite())
        {
            return bad("initial positions must be finite".to_string());
        }
        let p = &self.perturbation;
        if !(p.stall_speed >= 0.0 && p.dwell >= 0.0 && p.magnitude(self.v_max) >= 0.0) {
            return bad("perturbation fields must be >= 0".to_string());
        }

        let mut warnings = Vec::new();
        let disk_area = std::f64::consts::PI * (self.r_avoid / 2.0).powi(2);
        let goal_area = std::f64::consts::PI * self.goal_radius.powi(2);
        if goal_area < self.m as f64 * disk_area {
            warnings.push(format!(
                "goal disk (area {goal_area:.3}) may be too small for {} evaders of radius {}",
                self.m,
                self.r_avoid / 2.0
            ));
        }
        if self.m != self.n {
            warnings.push(format!(
                "m = {} differs from n = {}; the controllers require one herder per evader",
                self.m, self.n
            ));
        }
        Ok(warnings)
    }
}

/// Goal disk membership, boundary included.
pub fn in_goal_region(p: Vec2, cfg: &ScenarioConfig) -> bool {
    (p - cfg.goal_center).norm_squared() <= cfg.goal_radius * cfg.goal_radius
}

/// `||xi - xj||^2 - r_avoid^2`; non-negative exactly when the pair is separated.
pub fn pair_clearance(xi: Vec2, xj: Vec2, cfg: &ScenarioConfig) -> f64 {
    (xi - xj).norm_squared() - cfg.r_avoid * cfg.r_avoid
}

#[derive(Debug, Error, PartialEq)]
pub enum AssignmentError {
    #[error("assignment needs as many herders as evaders (m = {evaders}, n = {herders})")]
    CountMismatch { evaders: usize, herders: usize },
}

/// One-to-one pairing of herders with the evaders they drive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    /// `herder_to_evader[k]` is the evader driven by herder `k`.
    pub herder_to_evader: Vec<usize>,
}

impl Assignment {
    pub fn evader_of(&self, herder: usize) -> usize {
        self.herder_to_evader[herder]
    }

    /// Herder responsible for `evader`.
    pub fn herder_of(&self, evader: usize) -> usize {
        self.herder_to_evader
            .iter()
            .position(|&i| i == evader)
            .expect("assignment is a bijection")
    }

    pub fn is_bijection(&self, m: usize) -> bool {
        let mut seen = vec![false; m];
        self.herder_to_evader.len() == m
            && self.herder_to_evader.iter().all(|&i| {
                i < m && !std::mem::replace(&mut seen[i], true)
            })
    }

    pub fn total_distance(&self, state: &WorldState) -> f64 {
        self.herder_to_evader
            .iter()
            .enumerate()
            .map(|(k, &i)| (state.herders[k] - state.evaders[i]).norm())
            .sum()
    }
}

/// Largest team size solved by exhaustive permutation search.
pub const EXHAUSTIVE_ASSIGNMENT_LIMIT: usize = 8;

/// Minimum total distance matching for `n <= 8`, greedy nearest-unassigned beyond.
///
/// Permutations are visited in lexicographic order and only a strictly
/// smaller total replaces the incumbent, so ties go to the lowest evader indices.
pub fn nearest_assignment(state: &WorldState) -> Result<Assignment, AssignmentError> {
    let m = state.evaders.len();
    let n = state.herders.len();
    if m != n {
        return Err(AssignmentError::CountMismatch {
            evaders: m,
            herders: n,
        });
    }
    let dist = |k: usize, i: usize| (state.herders[k] - state.evaders[i]).norm();

    if n <= EXHAUSTIVE_ASSIGNMENT_LIMIT {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for perm in (0..n).permutations(n) {
            let cost: f64 = perm.iter().enumerate().map(|(k, &i)| dist(k, i)).sum();
            let better = match &best {
                None => true,
                Some((b, _)) => cost < *b - 1e-12 * (1.0 + b.abs()),
            };
            if better {
                best = Some((cost, perm));
            }
        }
        let (_, herder_to_evader) = best.unwrap_or((0.0, Vec::new()));
        return Ok(Assignment { herder_to_evader });
    }

    let mut taken = vec![false; m];
    let mut herder_to_evader = Vec::with_capacity(n);
    for k in 0..n {
        let mut pick: Option<(usize, f64)> = None;
        for i in (0..m).filter(|&i| !taken[i]) {
            let d = dist(k, i);
            if pick.is_none_or(|(_, best)| d < best) {
                pick = Some((i, d));
            }
        }
        let (i, _) = pick.expect("an unassigned evader remains");
        taken[i] = true;
        herder_to_evader.push(i);
    }
    Ok(Assignment { herder_to_evader })
}

/// Canonical evader pairs `(i, j)` with `i < j`.
pub fn canonical_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).tuple_combinations().collect()
}
