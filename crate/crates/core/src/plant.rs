//! Strict-feedback plants with their reference signals, plus two benchmark plants.
//!
//! A plant keeps two kinds of data apart. [`StageBounds`] (gain bounds and the
//! Lipschitz-rate function) is everything a controller may read. The drift,
//! input gain and disturbance of each stage are private to the plant and only
//! reachable through the simulator-facing methods.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type StageFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type LipschitzFn = Arc<dyn Fn(&[f64], &[f64], f64) -> f64 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("state has {found} components, plant order is {expected}")]
    StateLength { expected: usize, found: usize },
    #[error("non-finite plant input at t = {time}")]
    NonFinite { time: f64 },
    #[error("stage {stage}: gain bounds must satisfy 0 < lower <= upper, got [{lower}, {upper}]")]
    GainBounds {
        stage: usize,
        lower: f64,
        upper: f64,
    },
    #[error("a plant needs at least one stage")]
    Empty,
    #[error("plant parameter `{name}` must be finite and strictly positive, got {value}")]
    Parameter { name: &'static str, value: f64 },
}

/// Controller-visible knowledge about one stage.
#[derive(Clone)]
pub struct StageBounds {
    gain_lower: f64,
    gain_upper: f64,
    lipschitz: LipschitzFn,
}

impl StageBounds {
    pub fn new(gain_lower: f64, gain_upper: f64, lipschitz: LipschitzFn) -> Self {
        Self {
            gain_lower,
            gain_upper,
            lipschitz,
        }
    }

    /// Bounds with a constant Lipschitz rate.
    pub fn constant(gain_lower: f64, gain_upper: f64, rate: f64) -> Self {
        Self::new(gain_lower, gain_upper, Arc::new(move |_, _, _| rate))
    }

    pub fn gain_lower(&self) -> f64 {
        self.gain_lower
    }

    pub fn gain_upper(&self) -> f64 {
        self.gain_upper
    }

    /// `L_i(x, y, t)`.
    pub fn lipschitz_rate(&self, x: &[f64], y: &[f64], t: f64) -> f64 {
        (self.lipschitz)(x, y, t)
    }
}

impl fmt::Debug for StageBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StageBounds")
            .field("gain_lower", &self.gain_lower)
            .field("gain_upper", &self.gain_upper)
            .finish_non_exhaustive()
    }
}

#[derive(Clone)]
struct StageDynamics {
    drift: StageFn,
    gain: StageFn,
    disturbance: TimeFn,
}

/// `x_i' = f_i(x_1..x_i) + g_i(x_1..x_i) * x_{i+1} + w_i(t)`, with `u` in place
/// of `x_{n+1}` on the last stage.
#[derive(Clone)]
pub struct StrictFeedbackPlant {
    name: String,
    dynamics: Vec<StageDynamics>,
    bounds: Vec<StageBounds>,
}

impl fmt::Debug for StrictFeedbackPlant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StrictFeedbackPlant")
            .field("name", &self.name)
            .field("order", &self.order())
            .field("bounds", &self.bounds)
            .finish()
    }
}

#[derive(Default)]
pub struct PlantBuilder {
    name: String,
    dynamics: Vec<StageDynamics>,
    bounds: Vec<StageBounds>,
}

impl PlantBuilder {
    pub fn stage(
        mut self,
        drift: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gain: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        disturbance: impl Fn(f64) -> f64 + Send + Sync + 'static,
        bounds: StageBounds,
    ) -> Self {
        self.dynamics.push(StageDynamics {
            drift: Arc::new(drift),
            gain: Arc::new(gain),
            disturbance: Arc::new(disturbance),
        });
        self.bounds.push(bounds);
        self
    }

    pub fn build(self) -> Result<StrictFeedbackPlant, PlantError> {
        if self.dynamics.is_empty() {
            return Err(PlantError::Empty);
        }
        for (i, b) in self.bounds.iter().enumerate() {
            let ok = b.gain_lower.is_finite()
                && b.gain_upper.is_finite()
                && b.gain_lower > 0.0
                && b.gain_lower <= b.gain_upper;
            if !ok {
                return Err(PlantError::GainBounds {
                    stage: i + 1,
                    lower: b.gain_lower,
                    upper: b.gain_upper,
                });
            }
        }
        Ok(StrictFeedbackPlant {
            name: self.name,
            dynamics: self.dynamics,
            bounds: self.bounds,
        })
    }
}

impl StrictFeedbackPlant {
    pub fn builder(name: impl Into<String>) -> PlantBuilder {
        PlantBuilder {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn order(&self) -> usize {
        self.dynamics.len()
    }

    pub fn bounds(&self) -> &[StageBounds] {
        &self.bounds
    }

    /// `f_i(x_1..x_i)` for 1-based `stage`; `xbar` must hold at least `stage` entries.
    pub fn drift(&self, stage: usize, xbar: &[f64]) -> f64 {
        (self.dynamics[stage - 1].drift)(&xbar[..stage])
    }

    pub fn input_gain(&self, stage: usize, xbar: &[f64]) -> f64 {
        (self.dynamics[stage - 1].gain)(&xbar[..stage])
    }

    pub fn disturbance(&self, stage: usize, t: f64) -> f64 {
        (self.dynamics[stage - 1].disturbance)(t)
    }

    pub fn state_derivative(&self, x: &[f64], u: f64, t: f64) -> Result<Vec<f64>, PlantError> {
        let n = self.order();
        if x.len() != n {
            return Err(PlantError::StateLength {
                expected: n,
                found: x.len(),
            });
        }
        if !u.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(PlantError::NonFinite { time: t });
        }
        Ok((1..=n)
            .map(|i| {
                let next = if i < n { x[i] } else { u };
                self.drift(i, x) + self.input_gain(i, x) * next + self.disturbance(i, t)
            })
            .collect())
    }

    /// Whether every stage gain at `x` lies within its declared bounds.
    pub fn gains_within_bounds(&self, x: &[f64]) -> bool {
        (1..=self.order()).all(|i| {
            let g = self.input_gain(i, x);
            self.bounds[i - 1].gain_lower <= g && g <= self.bounds[i - 1].gain_upper
        })
    }
}

/// Reference trajectory `y_r(t)` with its derivative.
#[derive(Clone)]
pub struct ReferenceSignal {
    value: TimeFn,
    derivative: TimeFn,
}

impl fmt::Debug for ReferenceSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReferenceSignal").finish_non_exhaustive()
    }
}

impl ReferenceSignal {
    pub fn new(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            derivative: Arc::new(derivative),
        }
    }

    pub fn from_spec(spec: &SinusoidSpec) -> Self {
        let SinusoidSpec {
            offset,
            amplitude,
            frequency,
        } = *spec;
        Self::new(
            move |t| offset + amplitude * (frequency * t).sin(),
            move |t| amplitude * frequency * (frequency * t).cos(),
        )
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.value)(t)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        (self.derivative)(t)
    }
}

/// `offset + amplitude * sin(frequency * t)`, frequency in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidSpec {
    pub offset: f64,
    pub amplitude: f64,
    pub frequency: f64,
}

impl SinusoidSpec {
    /// `sin(10 t) + 2`.
    pub fn electromechanical() -> Self {
        Self {
            offset: 2.0,
            amplitude: 1.0,
            frequency: 10.0,
        }
    }

    /// `pi + 2 sin(10 t)`.
    pub fn single_link() -> Self {
        Self {
            offset: PI,
            amplitude: 2.0,
            frequency: 10.0,
        }
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), PlantError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(PlantError::Parameter { name, value })
    }
}

/// Physical constants of the DC-motor driven link (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElectromechanicalParams {
    /// Rotor inertia J [kg m^2].
    pub rotor_inertia: f64,
    /// Link mass m0 [kg].
    pub link_mass: f64,
    /// Load mass M0 [kg].
    pub load_mass: f64,
    /// Link length L0 [m].
    pub link_length: f64,
    /// Load radius R0 [m].
    pub load_radius: f64,
    /// Viscous friction at the joint B0 [N m s/rad].
    pub joint_friction: f64,
    /// Armature inductance L [H].
    pub inductance: f64,
    /// Armature resistance R [ohm].
    pub resistance: f64,
    /// Current-to-torque coefficient K_tau [N m/A].
    pub torque_constant: f64,
    /// Back-EMF coefficient K_B [N m/A].
    pub back_emf: f64,
    /// Gravity [m/s^2].
    pub gravity: f64,
    pub gain_lower: f64,
    pub gain_upper: f64,
    /// Multiplies all three disturbance channels.
    pub disturbance_scale: f64,
}

impl Default for ElectromechanicalParams {
    fn default() -> Self {
        Self {
            rotor_inertia: 1.625e-3,
            link_mass: 0.506,
            load_mass: 0.434,
            link_length: 0.305,
            load_radius: 0.023,
            joint_friction: 16.25e-3,
            inductance: 15.0,
            resistance: 5.0,
            torque_constant: 0.90,
            back_emf: 0.90,
            gravity: 9.81,
            gain_lower: 0.1,
            gain_upper: 10.0,
            disturbance_scale: 1.0,
        }
    }
}

impl ElectromechanicalParams {
    /// Lumped inertia `M`.
    pub fn lumped_inertia(&self) -> f64 {
        let kt = self.torque_constant;
        let l0_sq = self.link_length * self.link_length;
        self.rotor_inertia / kt
            + self.link_mass * l0_sq / (3.0 * kt)
            + self.load_mass * l0_sq / kt
            + 2.0 * self.load_mass * self.load_radius * self.load_radius / (5.0 * kt)
    }

    /// Lumped gravity coefficient `N`.
    pub fn lumped_gravity(&self) -> f64 {
        let kt = self.torque_constant;
        self.link_mass * self.link_length * self.gravity / (2.0 * kt)
            + self.load_mass * self.link_length * self.gravity / kt
    }

    /// Lumped friction `B`.
    pub fn lumped_friction(&self) -> f64 {
        self.joint_friction / self.torque_constant
    }

    fn validate(&self) -> Result<(), PlantError> {
        positive("rotor_inertia", self.rotor_inertia)?;
        positive("link_mass", self.link_mass)?;
        positive("load_mass", self.load_mass)?;
        positive("link_length", self.link_length)?;
        positive("load_radius", self.load_radius)?;
        positive("joint_friction", self.joint_friction)?;
        positive("inductance", self.inductance)?;
        positive("resistance", self.resistance)?;
        positive("torque_constant", self.torque_constant)?;
        positive("back_emf", self.back_emf)?;
        positive("gravity", self.gravity)?;
        if !(self.disturbance_scale.is_finite() && self.disturbance_scale >= 0.0) {
            return Err(PlantError::Parameter {
                name: "disturbance_scale",
                value: self.disturbance_scale,
            });
        }
        Ok(())
    }
}

/// Motor position and velocity plus the scaled armature current, with
/// `x3 = I/M` and `u = V/(M L)`.
pub fn electromechanical(p: &ElectromechanicalParams) -> Result<StrictFeedbackPlant, PlantError> {
    p.validate()?;
    let m = p.lumped_inertia();
    let n = p.lumped_gravity();
    let b = p.lumped_friction();
    let ml = m * p.inductance;
    let (kb, r) = (p.back_emf, p.resistance);
    let w = p.disturbance_scale;
    let (lo, hi) = (p.gain_lower, p.gain_upper);
    StrictFeedbackPlant::builder("electromechanical")
        .stage(
            |_| 0.0,
            |_| 1.0,
            move |t| w * 2.0 * (5.0 * t).sin(),
            StageBounds::constant(lo, hi, 1.0),
        )
        .stage(
            move |x| -(n / m) * x[0].sin() - (b / m) * x[1],
            |_| 1.0,
            move |t| w * 5.0 * (2.0 * t).cos(),
            StageBounds::constant(lo, hi, (n + b) / m),
        )
        .stage(
            move |x| -(kb / ml) * x[1] - (r / ml) * x[2],
            |_| 1.0,
            move |t| w * 10.0 * t.sin(),
            StageBounds::constant(lo, hi, (kb + r) / ml),
        )
        .build()
}

pub fn make_electromechanical() -> StrictFeedbackPlant {
    electromechanical(&ElectromechanicalParams::default()).expect("default parameters are valid")
}

/// Single rigid link driven at the joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingleLinkParams {
    /// Rotational inertia of link and motor I [kg m^2].
    pub inertia: f64,
    /// Damping B [kg m/s].
    pub damping: f64,
    /// Link mass M [kg].
    pub mass: f64,
    /// Joint-to-center-of-mass distance l [m].
    pub length: f64,
    pub gravity: f64,
    pub gain_lower: f64,
    pub gain_upper: f64,
    pub disturbance_scale: f64,
}

impl Default for SingleLinkParams {
    fn default() -> Self {
        Self {
            inertia: 1.0,
            damping: 2.0,
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            gain_lower: 0.5,
            gain_upper: 10.0,
            disturbance_scale: 1.0,
        }
    }
}

pub fn single_link(p: &SingleLinkParams) -> Result<StrictFeedbackPlant, PlantError> {
    positive("inertia", p.inertia)?;
    positive("damping", p.damping)?;
    positive("mass", p.mass)?;
    positive("length", p.length)?;
    positive("gravity", p.gravity)?;
    if !(p.disturbance_scale.is_finite() && p.disturbance_scale >= 0.0) {
        return Err(PlantError::Parameter {
            name: "disturbance_scale",
            value: p.disturbance_scale,
        });
    }
    let (i, b, mgl) = (p.inertia, p.damping, p.mass * p.gravity * p.length);
    let w = p.disturbance_scale;
    let (lo, hi) = (p.gain_lower, p.gain_upper);
    StrictFeedbackPlant::builder("single-link")
        .stage(
            |_| 0.0,
            |_| 1.0,
            |_| 0.0,
            StageBounds::constant(lo, hi, 1.0),
        )
        .stage(
            move |x| -(b * x[1] + mgl * x[0].sin()) / i,
            move |_| 1.0 / i,
            move |t| w * 10.0 * (5.0 * t).cos(),
            StageBounds::constant(lo, hi, (b + mgl) / i),
        )
        .build()
}

pub fn make_single_link() -> StrictFeedbackPlant {
    single_link(&SingleLinkParams::default()).expect("default parameters are valid")
}

/// Pure integrator chain: `f_i = 0`, `g_i = 1`, no disturbance.
pub fn integrator_chain(
    order: usize,
    gain_lower: f64,
    gain_upper: f64,
) -> Result<StrictFeedbackPlant, PlantError> {
    (0..order)
        .fold(StrictFeedbackPlant::builder("integrator-chain"), |b, _| {
            b.stage(
                |_| 0.0,
                |_| 1.0,
                |_| 0.0,
                StageBounds::constant(gain_lower, gain_upper, 1.0),
            )
        })
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn integrator_chain_derivative() {
        let p = integrator_chain(3, 0.5, 2.0).unwrap();
        assert_eq!(
            p.state_derivative(&[1.0, 2.0, 3.0], 4.0, 0.0).unwrap(),
            vec![2.0, 3.0, 4.0]
        );
    }

    #[test]
    fn electromechanical_at_rest() {
        let p = make_electromechanical();
        let dx = p.state_derivative(&[0.0, 0.0, 0.0], 0.0, 0.0).unwrap();
        assert_eq!(dx, vec![0.0, 5.0, 0.0]);
    }

    #[test]
    fn single_link_hanging_upside_down() {
        let p = make_single_link();
        let dx = p.state_derivative(&[PI, 0.0], 0.0, 0.0).unwrap();
        assert_eq!(dx[0], 0.0);
        assert_relative_eq!(dx[1], 10.0, epsilon = 1e-12);
    }

    #[test]
    fn lumped_coefficients_from_table_values() {
        // Hand evaluation of the lumped-parameter formulas:
        // M = 1.625e-3/0.9 + 0.506*0.305^2/2.7 + 0.434*0.305^2/0.9 + 2*0.434*0.023^2/4.5
        // N = 0.506*0.305*9.81/1.8 + 0.434*0.305*9.81/0.9,  B = 16.25e-3/0.9
        let p = ElectromechanicalParams::default();
        assert_relative_eq!(p.lumped_inertia(), 0.064199890074074, max_relative = 1e-12);
        assert_relative_eq!(p.lumped_gravity(), 2.2839315, max_relative = 1e-12);
        assert_relative_eq!(p.lumped_friction(), 0.018055555555556, max_relative = 1e-12);
        let plant = make_electromechanical();
        let b = plant.bounds();
        assert_eq!(b.len(), 3);
        assert!(b
            .iter()
            .all(|s| s.gain_lower() == 0.1 && s.gain_upper() == 10.0));
        assert_relative_eq!(
            b[1].lipschitz_rate(&[], &[], 0.0),
            35.856557587552,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            b[2].lipschitz_rate(&[], &[], 0.0),
            6.126697925487,
            max_relative = 1e-10
        );
    }

    #[test]
    fn single_link_metadata() {
        let p = make_single_link();
        assert_eq!(p.order(), 2);
        assert!(p
            .bounds()
            .iter()
            .all(|s| s.gain_lower() == 0.5 && s.gain_upper() == 10.0));
        assert_relative_eq!(
            p.bounds()[1].lipschitz_rate(&[], &[], 0.0),
            11.81,
            max_relative = 1e-14
        );
        assert_eq!(p.input_gain(2, &[0.3, 0.1]), 1.0);
    }

    #[test]
    fn disturbances() {
        let p = make_electromechanical();
        let t = 0.37;
        assert_eq!(p.disturbance(1, t), 2.0 * (5.0 * t).sin());
        assert_eq!(p.disturbance(2, t), 5.0 * (2.0 * t).cos());
        assert_eq!(p.disturbance(3, t), 10.0 * t.sin());
        let p = make_single_link();
        assert_eq!(p.disturbance(1, t), 0.0);
        assert_eq!(p.disturbance(2, t), 10.0 * (5.0 * t).cos());
    }

    #[test]
    fn references() {
        let r = ReferenceSignal::from_spec(&SinusoidSpec::electromechanical());
        assert_eq!(r.value(0.0), 2.0);
        assert_relative_eq!(r.derivative(0.3), 10.0 * 3.0f64.cos(), max_relative = 1e-14);
        let r = ReferenceSignal::from_spec(&SinusoidSpec::single_link());
        assert_eq!(r.value(0.0), PI);
        assert_relative_eq!(r.derivative(0.3), 20.0 * 3.0f64.cos(), max_relative = 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        let p = make_single_link();
        assert_eq!(
            p.state_derivative(&[0.0], 0.0, 0.0),
            Err(PlantError::StateLength {
                expected: 2,
                found: 1
            })
        );
        assert!(matches!(
            p.state_derivative(&[f64::NAN, 0.0], 0.0, 1.0),
            Err(PlantError::NonFinite { .. })
        ));
        assert!(matches!(
            p.state_derivative(&[0.0, 0.0], f64::INFINITY, 1.0),
            Err(PlantError::NonFinite { .. })
        ));
        assert!(matches!(
            integrator_chain(2, 0.0, 1.0),
            Err(PlantError::GainBounds { .. })
        ));
        assert!(matches!(
            integrator_chain(0, 0.1, 1.0),
            Err(PlantError::Empty)
        ));
        let bad = SingleLinkParams {
            inertia: -1.0,
            ..Default::default()
        };
        assert!(single_link(&bad).is_err());
    }

    #[test]
    fn strict_feedback_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for plant in [make_electromechanical(), make_single_link()] {
            let n = plant.order();
            for _ in 0..200 {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
                let u = rng.random_range(-10.0..10.0);
                let t = rng.random_range(0.0..3.0);
                let base = plant.state_derivative(&x, u, t).unwrap();
                for j in 0..n {
                    let mut y = x.clone();
                    y[j] += rng.random_range(0.5..5.0);
                    let moved = plant.state_derivative(&y, u, t).unwrap();
                    // Component i may only see x_1..x_{i+1}.
                    for i in 0..n {
                        if j > i + 1 {
                            assert_eq!(base[i], moved[i]);
                        }
                    }
                }
                // The input only reaches the last stage.
                let moved = plant.state_derivative(&x, u + 1.0, t).unwrap();
                assert_eq!(base[..n - 1], moved[..n - 1]);
            }
        }
    }

    #[test]
    fn lipschitz_audit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for plant in [make_electromechanical(), make_single_link()] {
            for stage in 1..=plant.order() {
                for _ in 0..10_000 {
                    let x: Vec<f64> = (0..stage).map(|_| rng.random_range(-50.0..50.0)).collect();
                    let y: Vec<f64> = (0..stage).map(|_| rng.random_range(-50.0..50.0)).collect();
                    let t = rng.random_range(0.0..3.0);
                    let dist = x
                        .iter()
                        .zip(&y)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let lhs = (plant.drift(stage, &x) - plant.drift(stage, &y)).abs();
                    let rate = plant.bounds()[stage - 1].lipschitz_rate(&x, &y, t);
                    assert!(lhs <= rate * dist * (1.0 + 1e-12) + 1e-12, "stage {stage}");
                }
            }
        }
    }

    #[test]
    fn gain_bound_audit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for plant in [make_electromechanical(), make_single_link()] {
            for _ in 0..1000 {
                let x: Vec<f64> = (0..plant.order())
                    .map(|_| rng.random_range(-100.0..100.0))
                    .collect();
                assert!(plant.gains_within_bounds(&x));
            }
        }
    }
}
