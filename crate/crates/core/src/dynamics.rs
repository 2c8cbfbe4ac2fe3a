//! Surge/turn vessel model with quadratic drag and two PID loops
//! (thrust tracks the desired speed, rudder tracks the desired heading).

use crate::geom::{wrap_angle, Vec2};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing ship parameters: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("parameter `{0}` must be strictly positive")]
    NonPositive(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Symmetric bound on the accumulated integral of the error.
    pub integral_limit: f64,
}

/// Integrator and last error of one PID loop.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

/// One PID update. The derivative term is zero on the first call.
pub fn pid_step(state: PidState, gains: &PidGains, error: f64, dt: f64) -> (f64, PidState) {
    let integral =
        (state.integral + error * dt).clamp(-gains.integral_limit, gains.integral_limit);
    let derivative = state.prev_error.map_or(0.0, |prev| (error - prev) / dt);
    let out = gains.kp * error + gains.ki * integral + gains.kd * derivative;
    (
        out,
        PidState {
            integral,
            prev_error: Some(error),
        },
    )
}

/// Physical and controller constants. Loaded from a flat `key = value` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShipParams {
    pub length: f64,
    pub width: f64,
    /// Fluid density, kg/m³.
    pub rho: f64,
    pub drag_coefficient: f64,
    /// Reference area for drag, m².
    pub area: f64,
    pub thrust_force_max: f64,
    pub mass: f64,
    pub rudder_max: f64,
    /// Turn rate per rad of rudder per m/s of speed.
    pub turn_rate_gain: f64,
    pub v_max: f64,
    pub dt: f64,
    pub speed_kp: f64,
    pub speed_ki: f64,
    pub speed_kd: f64,
    pub speed_integral_limit: f64,
    pub heading_kp: f64,
    pub heading_ki: f64,
    pub heading_kd: f64,
    pub heading_integral_limit: f64,
}

impl Default for ShipParams {
    fn default() -> Self {
        Self {
            length: 15.0,
            width: 4.0,
            rho: 1000.0,
            drag_coefficient: 1.0,
            area: 8.0,
            thrust_force_max: 2.0e4,
            mass: 2.0e4,
            rudder_max: 0.6,
            turn_rate_gain: 0.05,
            v_max: 5.0,
            dt: 0.5,
            speed_kp: 0.5,
            speed_ki: 0.1,
            speed_kd: 0.0,
            speed_integral_limit: 10.0,
            heading_kp: 1.5,
            heading_ki: 0.0,
            heading_kd: 0.2,
            heading_integral_limit: 1.0,
        }
    }
}

impl ShipParams {
    pub fn from_toml_str(s: &str) -> Result<Self, ParamsError> {
        let p: ShipParams = toml::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, ParamsError> {
        let text = std::fs::read_to_string(path).map_err(|source| ParamsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat numeric struct always serializes")
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        let checks: [(&'static str, f64); 11] = [
            ("length", self.length),
            ("width", self.width),
            ("rho", self.rho),
            ("drag_coefficient", self.drag_coefficient),
            ("area", self.area),
            ("thrust_force_max", self.thrust_force_max),
            ("mass", self.mass),
            ("rudder_max", self.rudder_max),
            ("turn_rate_gain", self.turn_rate_gain),
            ("v_max", self.v_max),
            ("dt", self.dt),
        ];
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ParamsError::NonPositive(name));
            }
        }
        Ok(())
    }

    pub fn speed_gains(&self) -> PidGains {
        PidGains {
            kp: self.speed_kp,
            ki: self.speed_ki,
            kd: self.speed_kd,
            integral_limit: self.speed_integral_limit,
        }
    }

    pub fn heading_gains(&self) -> PidGains {
        PidGains {
            kp: self.heading_kp,
            ki: self.heading_ki,
            kd: self.heading_kd,
            integral_limit: self.heading_integral_limit,
        }
    }
}

/// Drag force ½·ρ·u²·c_d·A, newtons.
pub fn drag_force(params: &ShipParams, u: f64) -> f64 {
    0.5 * params.rho * u * u * params.drag_coefficient * params.area
}

/// Surge acceleration for a normalized thrust command at speed `u`.
pub fn surge_acceleration(params: &ShipParams, thrust: f64, u: f64) -> f64 {
    (thrust * params.thrust_force_max - drag_force(params, u)) / params.mass
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ShipState {
    pub position: Vec2,
    /// Radians in (−π, π], 0 = +x, counterclockwise positive.
    pub heading: f64,
    pub speed: f64,
    pub rudder_angle: f64,
    /// Normalized in [0, 1].
    pub thrust: f64,
}

impl ShipState {
    pub fn at_rest(position: Vec2, heading: f64) -> Self {
        Self {
            position,
            heading: wrap_angle(heading),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Controllers {
    pub speed: PidState,
    pub heading: PidState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    pub desired_speed: f64,
    pub desired_heading: f64,
}

/// Advances the vessel by one `params.dt`.
pub fn step_dynamics(
    state: &ShipState,
    ctrl: &Controllers,
    sp: &Setpoint,
    params: &ShipParams,
) -> (ShipState, Controllers) {
    let dt = params.dt;
    let desired_speed = sp.desired_speed.clamp(0.0, params.v_max);

    let (u_thrust, speed_pid) =
        pid_step(ctrl.speed, &params.speed_gains(), desired_speed - state.speed, dt);
    let thrust = u_thrust.clamp(0.0, 1.0);

    let heading_err = wrap_angle(sp.desired_heading - state.heading);
    let (u_rudder, heading_pid) = pid_step(ctrl.heading, &params.heading_gains(), heading_err, dt);
    let rudder = u_rudder.clamp(-params.rudder_max, params.rudder_max);

    let accel = surge_acceleration(params, thrust, state.speed);
    let speed = (state.speed + accel * dt).max(0.0);

    let heading = wrap_angle(state.heading + params.turn_rate_gain * rudder * speed * dt);
    let position = state.position + Vec2::from_angle(heading) * (speed * dt);

    (
        ShipState {
            position,
            heading,
            speed,
            rudder_angle: rudder,
            thrust,
        },
        Controllers {
            speed: speed_pid,
            heading: heading_pid,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn drag_examples() {
        let p = ShipParams {
            rho: 1000.0,
            drag_coefficient: 1.0,
            area: 2.0,
            ..Default::default()
        };
        assert_eq!(drag_force(&p, 0.0), 0.0);
        assert_eq!(drag_force(&p, 2.0), 4000.0);
        let u = 1.37;
        assert_eq!(drag_force(&p, 2.0 * u), 4.0 * drag_force(&p, u));
    }

    #[test]
    fn pid_examples() {
        let g = PidGains {
            kp: 0.5,
            ki: 0.0,
            kd: 0.0,
            integral_limit: 1.0,
        };
        assert_eq!(pid_step(PidState::default(), &g, 0.0, 0.5).0, 0.0);
        assert_eq!(pid_step(PidState::default(), &g, 1.0, 0.5).0, 0.5);

        // integral-only loop, clamp at 2: 1, 2, 2, 2
        let g = PidGains {
            kp: 0.0,
            ki: 1.0,
            kd: 0.0,
            integral_limit: 2.0,
        };
        let mut s = PidState::default();
        let mut outs = vec![];
        for _ in 0..4 {
            let (o, next) = pid_step(s, &g, 1.0, 1.0);
            outs.push(o);
            s = next;
        }
        assert_eq!(outs, vec![1.0, 2.0, 2.0, 2.0]);
        assert_eq!(s.integral, 2.0);
    }

    #[test]
    fn pid_derivative_uses_previous_error() {
        let g = PidGains {
            kp: 0.0,
            ki: 0.0,
            kd: 2.0,
            integral_limit: 1.0,
        };
        let (o1, s) = pid_step(PidState::default(), &g, 1.0, 0.5);
        let (o2, _) = pid_step(s, &g, 0.5, 0.5);
        assert_eq!(o1, 0.0);
        assert_eq!(o2, 2.0 * (0.5 - 1.0) / 0.5);
    }

    #[test]
    fn equilibrium_at_rest() {
        let p = ShipParams::default();
        let s = ShipState::at_rest(Vec2::new(3.0, 4.0), 0.7);
        let sp = Setpoint {
            desired_speed: 0.0,
            desired_heading: 0.7,
        };
        let (n, _) = step_dynamics(&s, &Controllers::default(), &sp, &p);
        assert_eq!(n.position, s.position);
        assert_eq!(n.heading, s.heading);
        assert_eq!(n.speed, 0.0);
    }

    #[test]
    fn speed_converges_within_two_minutes() {
        let p = ShipParams::default();
        let mut s = ShipState::at_rest(Vec2::ZERO, 0.0);
        let mut c = Controllers::default();
        let sp = Setpoint {
            desired_speed: 2.0,
            desired_heading: 0.0,
        };
        let steps = (120.0 / p.dt) as usize;
        for _ in 0..steps {
            (s, c) = step_dynamics(&s, &c, &sp, &p);
        }
        assert!((s.speed - 2.0).abs() < 0.05 * 2.0, "speed {}", s.speed);
    }

    #[test]
    fn rudder_saturates() {
        let p = ShipParams::default();
        let mut s = ShipState::at_rest(Vec2::ZERO, 0.0);
        s.speed = 2.0;
        let sp = Setpoint {
            desired_speed: 2.0,
            desired_heading: 3.0,
        };
        let (n, _) = step_dynamics(&s, &Controllers::default(), &sp, &p);
        assert_eq!(n.rudder_angle, p.rudder_max);
        let rate = wrap_angle(n.heading - s.heading) / p.dt;
        assert!((rate - p.turn_rate_gain * p.rudder_max * n.speed).abs() < 1e-12);
    }

    #[test]
    fn steady_state_speed_has_zero_acceleration() {
        let p = ShipParams::default();
        for thrust in [0.2, 0.5, 0.8, 1.0] {
            let u_star =
                (2.0 * thrust * p.thrust_force_max / (p.rho * p.drag_coefficient * p.area)).sqrt();
            assert!(surge_acceleration(&p, thrust, u_star).abs() < 1e-9);
        }
    }

    #[test]
    fn params_file_round_trip_and_validation() {
        let p = ShipParams::default();
        let back = ShipParams::from_toml_str(&p.to_toml_string()).unwrap();
        assert_eq!(back, p);
        let bad = p.to_toml_string().replace("mass = 20000.0", "mass = -1.0");
        assert!(ShipParams::from_toml_str(&bad).is_err());
        assert!(ShipParams::from_toml_str("length = 3.0").is_err());
    }

    fn arb_state() -> impl Strategy<Value = (ShipState, Setpoint)> {
        (
            -100.0f64..100.0,
            -100.0f64..100.0,
            -3.14f64..3.14,
            0.0f64..3.0,
            0.0f64..5.0,
            -3.14f64..3.14,
        )
            .prop_map(|(x, y, h, v, ds, dh)| {
                let mut s = ShipState::at_rest(Vec2::new(x, y), h);
                s.speed = v;
                (
                    s,
                    Setpoint {
                        desired_speed: ds,
                        desired_heading: dh,
                    },
                )
            })
    }

    proptest! {
        #[test]
        fn state_invariants_hold((s, sp) in arb_state()) {
            let p = ShipParams::default();
            let (n, c) = step_dynamics(&s, &Controllers::default(), &sp, &p);
            prop_assert!(n.speed >= 0.0);
            prop_assert!(n.heading > -std::f64::consts::PI && n.heading <= std::f64::consts::PI);
            prop_assert!(n.thrust >= 0.0 && n.thrust <= 1.0);
            prop_assert!(n.rudder_angle.abs() <= p.rudder_max);
            // bit-identical replay
            let (n2, c2) = step_dynamics(&s, &Controllers::default(), &sp, &p);
            prop_assert_eq!(n, n2);
            prop_assert_eq!(c, c2);
        }

        #[test]
        fn zero_thrust_never_accelerates((mut s, _) in arb_state()) {
            let p = ShipParams::default();
            let sp = Setpoint { desired_speed: 0.0, desired_heading: s.heading };
            for _ in 0..20 {
                let (n, _) = step_dynamics(&s, &Controllers::default(), &sp, &p);
                prop_assert_eq!(n.thrust, 0.0);
                prop_assert!(n.speed <= s.speed);
                s = n;
            }
        }

        #[test]
        fn heading_constant_without_rudder_or_speed((mut s, sp) in arb_state()) {
            let p = ShipParams::default();
            s.speed = 0.0;
            let slow = Setpoint { desired_speed: 0.0, ..sp };
            let (n, _) = step_dynamics(&s, &Controllers::default(), &slow, &p);
            prop_assert_eq!(n.heading, s.heading);

            let mut moving = s;
            moving.speed = 2.0;
            let straight = Setpoint { desired_speed: 2.0, desired_heading: moving.heading };
            let (n, _) = step_dynamics(&moving, &Controllers::default(), &straight, &p);
            prop_assert_eq!(n.rudder_angle, 0.0);
            prop_assert_eq!(n.heading, moving.heading);
        }
    }
}
