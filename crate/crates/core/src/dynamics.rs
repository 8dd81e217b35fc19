//! Inverse-square evader field, its Jacobians, velocity saturation and the
//! coupled fixed-step integrator.

use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

use crate::model::{ControlGains, JacobianMode, ScenarioConfig, Vec2, WorldState};

/// 2×2 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jacobian2 {
    pub m: [[f64; 2]; 2],
}

impl Jacobian2 {
    pub const ZERO: Jacobian2 = Jacobian2 { m: [[0.0; 2]; 2] };
    pub const IDENTITY: Jacobian2 = Jacobian2 {
        m: [[1.0, 0.0], [0.0, 1.0]],
    };

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { m: [[a, b], [c, d]] }
    }

    pub fn outer(u: Vec2, v: Vec2) -> Self {
        Self::new(u.x * v.x, u.x * v.y, u.y * v.x, u.y * v.y)
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y,
            self.m[1][0] * v.x + self.m[1][1] * v.y,
        )
    }

    /// Row vector times matrix, `vᵀ M`, returned as a column.
    pub fn left_mul(&self, v: Vec2) -> Vec2 {
        Vec2::new(
            v.x * self.m[0][0] + v.y * self.m[1][0],
            v.x * self.m[0][1] + v.y * self.m[1][1],
        )
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }

    pub fn col(&self, j: usize) -> Vec2 {
        Vec2::new(self.m[0][j], self.m[1][j])
    }
}

impl Add for Jacobian2 {
    type Output = Jacobian2;
    fn add(self, o: Jacobian2) -> Jacobian2 {
        Jacobian2::new(
            self.m[0][0] + o.m[0][0],
            self.m[0][1] + o.m[0][1],
            self.m[1][0] + o.m[1][0],
            self.m[1][1] + o.m[1][1],
        )
    }
}

impl Sub for Jacobian2 {
    type Output = Jacobian2;
    fn sub(self, o: Jacobian2) -> Jacobian2 {
        self + (-o)
    }
}

impl Neg for Jacobian2 {
    type Output = Jacobian2;
    fn neg(self) -> Jacobian2 {
        self * -1.0
    }
}

impl Mul<f64> for Jacobian2 {
    type Output = Jacobian2;
    fn mul(self, s: f64) -> Jacobian2 {
        Jacobian2::new(
            self.m[0][0] * s,
            self.m[0][1] * s,
            self.m[1][0] * s,
            self.m[1][1] * s,
        )
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("expected {expected} herder commands, got {got}")]
    ControlLength { expected: usize, got: usize },
}

/// Field contribution of one herder at offset `d = x_E - x_H`.
fn field_term(d: Vec2, eps: f64) -> Vec2 {
    let r = d.norm().max(eps);
    d * (1.0 / (r * r * r))
}

/// `I/r³ - 3 d dᵀ / r⁵` with `r` floored at `eps`.
fn jacobian_term(d: Vec2, eps: f64) -> Jacobian2 {
    let r = d.norm().max(eps);
    let r3 = r * r * r;
    let r5 = r3 * r * r;
    Jacobian2::IDENTITY * (1.0 / r3) - Jacobian2::outer(d, d) * (3.0 / r5)
}

/// Velocity of evader `i`: `kappa_H * Σ_k (x_Ei - x_Hk) / max(|x_Ei - x_Hk|, eps)³`.
pub fn evader_field(i: usize, state: &WorldState, gains: &ControlGains, eps: f64) -> Vec2 {
    field_at(state.evaders[i], &state.herders, gains.kappa_h, eps)
}

pub(crate) fn field_at(x: Vec2, herders: &[Vec2], kappa: f64, eps: f64) -> Vec2 {
    let mut v = Vec2::ZERO;
    for &h in herders {
        v += field_term(x - h, eps);
    }
    v * kappa
}

/// Field values of every evader.
pub fn evader_fields(state: &WorldState, gains: &ControlGains, eps: f64) -> Vec<Vec2> {
    (0..state.evaders.len())
        .map(|i| evader_field(i, state, gains, eps))
        .collect()
}

/// ∂f_Ei/∂x_Ei.
pub fn evader_jacobian_self(i: usize, state: &WorldState, gains: &ControlGains, eps: f64) -> Jacobian2 {
    let x = state.evaders[i];
    state
        .herders
        .iter()
        .fold(Jacobian2::ZERO, |acc, &h| acc + jacobian_term(x - h, eps))
        * gains.kappa_h
}

/// ∂f_Ei/∂x_Hk under the configured [`JacobianMode`].
pub fn evader_jacobian_herder(
    i: usize,
    k: usize,
    state: &WorldState,
    gains: &ControlGains,
    cfg: &ScenarioConfig,
) -> Jacobian2 {
    match cfg.jacobian_mode {
        JacobianMode::ExactPerHerder => {
            -(jacobian_term(state.evaders[i] - state.herders[k], cfg.singularity_eps) * gains.kappa_h)
        }
        JacobianMode::PaperLiteral => -evader_jacobian_self(i, state, gains, cfg.singularity_eps),
    }
}

/// Norm clamp preserving direction.
pub fn saturate(v: Vec2, v_max: f64) -> Vec2 {
    let n = v.norm();
    if n <= v_max {
        v
    } else {
        v * (v_max / n)
    }
}

/// Advances the coupled system by one `dt` with classical RK4.
///
/// Evader velocities are the saturated field, re-evaluated at every stage;
/// herders move with the constant commands `u_h`.
pub fn step(state: &WorldState, u_h: &[Vec2], cfg: &ScenarioConfig) -> Result<WorldState, DynamicsError> {
    if u_h.len() != state.herders.len() {
        return Err(DynamicsError::ControlLength {
            expected: state.herders.len(),
            got: u_h.len(),
        });
    }
    let dt = cfg.dt;
    let kappa = cfg.gains.kappa_h;
    let eps = cfg.singularity_eps;

    let rates = |evaders: &[Vec2], herders: &[Vec2]| -> Vec<Vec2> {
        evaders
            .iter()
            .map(|&x| saturate(field_at(x, herders, kappa, eps), cfg.v_max))
            .collect()
    };
    let shifted = |base: &[Vec2], rate: &[Vec2], h: f64| -> Vec<Vec2> {
        base.iter().zip(rate).map(|(&p, &v)| p + v * h).collect()
    };

    let e0 = &state.evaders;
    let h0 = &state.herders;

    let k1 = rates(e0, h0);
    let h_half = shifted(h0, u_h, dt / 2.0);
    let k2 = rates(&shifted(e0, &k1, dt / 2.0), &h_half);
    let k3 = rates(&shifted(e0, &k2, dt / 2.0), &h_half);
    let h_full = shifted(h0, u_h, dt);
    let k4 = rates(&shifted(e0, &k3, dt), &h_full);

    let evaders = (0..e0.len())
        .map(|i| e0[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0))
        .collect();
    let next = WorldState {
        t: state.t + dt,
        evaders,
        herders: h_full,
    };
    if !next.is_finite() {
        return Err(DynamicsError::NonFiniteState { t: next.t });
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn gains(kappa: f64) -> ControlGains {
        ControlGains {
            kappa_h: kappa,
            ..ControlGains::default()
        }
    }

    fn state(evaders: &[(f64, f64)], herders: &[(f64, f64)]) -> WorldState {
        WorldState::new(
            evaders.iter().map(|&(x, y)| Vec2::new(x, y)).collect(),
            herders.iter().map(|&(x, y)| Vec2::new(x, y)).collect(),
        )
    }

    fn central_diff_wrt_evader(i: usize, s: &WorldState, g: &ControlGains, h: f64) -> Jacobian2 {
        let mut cols = [Vec2::ZERO; 2];
        for (j, col) in cols.iter_mut().enumerate() {
            let mut plus = s.clone();
            let mut minus = s.clone();
            if j == 0 {
                plus.evaders[i].x += h;
                minus.evaders[i].x -= h;
            } else {
                plus.evaders[i].y += h;
                minus.evaders[i].y -= h;
            }
            *col = (evader_field(i, &plus, g, 1e-3) - evader_field(i, &minus, g, 1e-3)) * (0.5 / h);
        }
        Jacobian2::new(cols[0].x, cols[1].x, cols[0].y, cols[1].y)
    }

    #[test]
    fn field_examples() {
        let s = state(&[(1.0, 0.0)], &[(0.0, 0.0)]);
        assert_eq!(evader_field(0, &s, &gains(1.0), 1e-3), Vec2::new(1.0, 0.0));

        let s = state(&[(1.0, 0.0)], &[(0.0, 0.0), (2.0, 0.0)]);
        assert_eq!(evader_field(0, &s, &gains(10.0), 1e-3), Vec2::ZERO);

        let s = state(&[(2.0, 0.0)], &[(0.0, 0.0)]);
        assert_abs_diff_eq!(evader_field(0, &s, &gains(10.0), 1e-3).x, 2.5, epsilon = 1e-15);
    }

    #[test]
    fn field_is_finite_at_contact() {
        let s = state(&[(0.0, 0.0)], &[(0.0, 0.0)]);
        let v = evader_field(0, &s, &gains(10.0), 1e-3);
        assert!(v.is_finite());
        assert!(evader_jacobian_self(0, &s, &gains(10.0), 1e-3).is_finite());
    }

    #[test]
    fn self_jacobian_examples() {
        let g = gains(1.0);
        let s = state(&[(1.0, 0.0)], &[(0.0, 0.0)]);
        let j = evader_jacobian_self(0, &s, &g, 1e-3);
        assert_eq!(j, Jacobian2::new(-2.0, 0.0, 0.0, 1.0));
        let fd = central_diff_wrt_evader(0, &s, &g, 1e-6);
        assert!((j - fd).frobenius_norm() < 1e-8);

        let s = state(&[(0.0, 1.0)], &[(0.0, 0.0)]);
        assert_eq!(evader_jacobian_self(0, &s, &g, 1e-3), Jacobian2::new(1.0, 0.0, 0.0, -2.0));

        let s = state(&[(1.3, -0.4)], &[(0.2, 0.5)]);
        let r = (Vec2::new(1.3, -0.4) - Vec2::new(0.2, 0.5)).norm();
        let g = gains(7.0);
        assert_abs_diff_eq!(
            evader_jacobian_self(0, &s, &g, 1e-3).trace(),
            -7.0 / r.powi(3),
            epsilon = 1e-12
        );
    }

    #[test]
    fn herder_jacobian_modes() {
        let g = gains(1.0);
        let mut cfg = ScenarioConfig::default_scenario();
        cfg.gains = g.clone();

        let single = state(&[(1.0, 0.5)], &[(0.0, 0.0)]);
        cfg.jacobian_mode = JacobianMode::ExactPerHerder;
        let exact = evader_jacobian_herder(0, 0, &single, &g, &cfg);
        cfg.jacobian_mode = JacobianMode::PaperLiteral;
        let literal = evader_jacobian_herder(0, 0, &single, &g, &cfg);
        assert_eq!(exact, literal);
        assert_eq!(exact, -evader_jacobian_self(0, &single, &g, 1e-3));

        let pair = state(&[(1.0, 0.0)], &[(0.0, 0.0), (100.0, 0.0)]);
        cfg.jacobian_mode = JacobianMode::ExactPerHerder;
        let exact = evader_jacobian_herder(0, 0, &pair, &g, &cfg);
        assert!((exact - Jacobian2::new(2.0, 0.0, 0.0, -1.0)).frobenius_norm() < 1e-12);

        // finite differences with respect to herder 0
        let h = 1e-6;
        let mut cols = [Vec2::ZERO; 2];
        for (j, col) in cols.iter_mut().enumerate() {
            let (mut p, mut m) = (pair.clone(), pair.clone());
            if j == 0 {
                p.herders[0].x += h;
                m.herders[0].x -= h;
            } else {
                p.herders[0].y += h;
                m.herders[0].y -= h;
            }
            *col = (evader_field(0, &p, &g, 1e-3) - evader_field(0, &m, &g, 1e-3)) * (0.5 / h);
        }
        let fd = Jacobian2::new(cols[0].x, cols[1].x, cols[0].y, cols[1].y);
        assert!((exact - fd).frobenius_norm() < 1e-7);
        // [[2, 0], [0, -1]] to within the far herder's ~1e-6 share
        assert!((fd - Jacobian2::new(2.0, 0.0, 0.0, -1.0)).frobenius_norm() < 1e-5);

        cfg.jacobian_mode = JacobianMode::PaperLiteral;
        let literal = evader_jacobian_herder(0, 0, &pair, &g, &cfg);
        assert_eq!(literal, -evader_jacobian_self(0, &pair, &g, 1e-3));
        assert!((literal - exact).frobenius_norm() > 1e-7);
    }

    #[test]
    fn saturate_examples() {
        assert_eq!(saturate(Vec2::new(1.0, 0.0), 3.0), Vec2::new(1.0, 0.0));
        assert_eq!(saturate(Vec2::new(6.0, 0.0), 3.0), Vec2::new(3.0, 0.0));
        let v = saturate(Vec2::new(3.0, 4.0), 3.0);
        assert_abs_diff_eq!(v.x, 1.8, epsilon = 1e-15);
        assert_abs_diff_eq!(v.y, 2.4, epsilon = 1e-15);
    }

    #[test]
    fn step_far_herders_barely_move_evaders() {
        let mut cfg = ScenarioConfig::default_scenario();
        cfg.m = 1;
        cfg.n = 2;
        let s = state(&[(0.0, 0.0)], &[(1e3, 0.0), (0.0, -1e3)]);
        let next = step(&s, &[Vec2::ZERO; 2], &cfg).unwrap();
        let bound = cfg.dt * cfg.gains.kappa_h * 2.0 * 1e-6;
        assert!((next.evaders[0] - s.evaders[0]).norm() <= bound);
        assert_abs_diff_eq!(next.t, cfg.dt);
    }

    #[test]
    fn step_integrates_constant_herder_velocity_exactly() {
        let cfg = ScenarioConfig::default_scenario();
        let s = state(&[], &[(1.0, 2.0)]);
        let next = step(&s, &[Vec2::new(1.0, 0.0)], &cfg).unwrap();
        assert_eq!(next.herders[0], Vec2::new(1.0 + cfg.dt, 2.0));
    }

    #[test]
    fn step_matches_radial_reference() {
        // x' = 10 / x², x(0) = 2 has x(t)³ = 8 + 30 t; an adaptive DOP853
        // integration (rtol 1e-13) agrees to 1e-14.
        let reference = 2.024_693_852_005_46;
        let cfg = ScenarioConfig::default_scenario();
        let s = state(&[(2.0, 0.0)], &[(0.0, 0.0)]);
        let next = step(&s, &[Vec2::ZERO], &cfg).unwrap();
        assert_abs_diff_eq!(next.evaders[0].x, reference, epsilon = 1e-9);
        assert_eq!(next.evaders[0].y, 0.0);
    }

    #[test]
    fn step_rejects_wrong_control_length_and_non_finite() {
        let cfg = ScenarioConfig::default_scenario();
        let s = state(&[(2.0, 0.0)], &[(0.0, 0.0)]);
        assert!(matches!(step(&s, &[], &cfg), Err(DynamicsError::ControlLength { .. })));
        let err = step(&s, &[Vec2::new(f64::NAN, 0.0)], &cfg).unwrap_err();
        assert!(matches!(err, DynamicsError::NonFiniteState { .. }));
    }

    #[test]
    fn step_is_deterministic() {
        let cfg = ScenarioConfig::default_scenario();
        let s = WorldState::initial(&cfg);
        let u = vec![Vec2::new(0.3, -1.1), Vec2::new(2.0, 0.1), Vec2::new(-0.7, 0.7)];
        let a = step(&s, &u, &cfg).unwrap();
        let b = step(&s, &u, &cfg).unwrap();
        assert_eq!(a, b);
    }

    fn arb_point() -> impl Strategy<Value = Vec2> {
        (-5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y)| Vec2::new(x, y))
    }

    proptest! {
        #[test]
        fn self_jacobian_is_symmetric(e in arb_point(), hs in proptest::collection::vec(arb_point(), 1..4), k in 1.0..10.0f64) {
            let s = WorldState::new(vec![e], hs);
            let j = evader_jacobian_self(0, &s, &gains(k), 1e-3);
            prop_assert!((j.m[0][1] - j.m[1][0]).abs() <= 1e-12 * (1.0 + j.frobenius_norm()));
        }

        #[test]
        fn single_herder_field_points_away(e in arb_point(), h in arb_point(), k in 0.1..10.0f64) {
            prop_assume!((e - h).norm() > 1e-2);
            let s = WorldState::new(vec![e], vec![h]);
            let v = evader_field(0, &s, &gains(k), 1e-3);
            let d = e - h;
            let cross = v.x * d.y - v.y * d.x;
            prop_assert!(v.dot(d) > 0.0);
            prop_assert!(cross.abs() <= 1e-12 * v.norm() * d.norm());
        }

        #[test]
        fn saturate_never_grows_or_turns(x in -10.0..10.0f64, y in -10.0..10.0f64, vmax in 0.1..5.0f64) {
            let v = Vec2::new(x, y);
            let s = saturate(v, vmax);
            prop_assert!(s.norm() <= v.norm() + 1e-15);
            prop_assert!(s.norm() <= vmax * (1.0 + 1e-15));
            prop_assert!((s.x * v.y - s.y * v.x).abs() <= 1e-12 * (1.0 + v.norm_squared()));
            prop_assert!(s.dot(v) >= 0.0);
        }
    }
}
