//! Prescribed-time performance envelope and the tangent error transformation.
//!
//! The envelope `eta(t)` starts at `pi/2` and reaches the terminal accuracy `c`
//! exactly at the settling time `T`, where it remains. The transformation maps a
//! tracking error `e` with `|atan(e)| < eta(t)` onto an unconstrained `z1`, so a
//! bounded `z1` certifies `|e(t)| < tan(eta(t))` for all time.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default lower bound applied to the `cos^2` auxiliary.
pub const DEFAULT_PHI_FLOOR: f64 = 1e-12;

/// Tolerance on the `eta(0) = pi/2` construction constraint.
const INITIAL_VALUE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerfError {
    #[error("performance parameter `{name}` must be finite and strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("terminal accuracy c = {0} must be strictly below pi/2")]
    TerminalTooLarge(f64),
    #[error("envelope must start at pi/2, but a*exp(-b) + c = {0}")]
    InitialValue(f64),
    #[error("phi floor must lie in (0, 1), got {0}")]
    PhiFloor(f64),
}

/// The tracking error left the performance funnel.
#[derive(Debug, Error, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[error("funnel breach at t = {time}: e = {error}, envelope = {eta}")]
pub struct FunnelBreach {
    pub time: f64,
    pub error: f64,
    pub eta: f64,
}

fn check_positive(name: &'static str, value: f64) -> Result<(), PerfError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(PerfError::NonPositive { name, value })
    }
}

/// `eta(t) = a*exp(-b*(T/(T-t))^h) + c` for `t < T`, `c` afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfFunction {
    a: f64,
    b: f64,
    c: f64,
    h: f64,
    settle: f64,
}

impl PerfFunction {
    pub fn new(a: f64, b: f64, c: f64, h: f64, settle: f64) -> Result<Self, PerfError> {
        check_positive("a", a)?;
        check_positive("b", b)?;
        check_positive("c", c)?;
        check_positive("h", h)?;
        check_positive("T", settle)?;
        if c >= FRAC_PI_2 {
            return Err(PerfError::TerminalTooLarge(c));
        }
        let initial = a * (-b).exp() + c;
        if (initial - FRAC_PI_2).abs() > INITIAL_VALUE_TOL {
            return Err(PerfError::InitialValue(initial));
        }
        Ok(Self { a, b, c, h, settle })
    }

    /// Builds the envelope from its shape parameters, deriving the amplitude
    /// `a = (pi/2 - c) * exp(b)` so that `eta(0) = pi/2`.
    pub fn from_terminal(b: f64, c: f64, h: f64, settle: f64) -> Result<Self, PerfError> {
        check_positive("b", b)?;
        check_positive("c", c)?;
        if c >= FRAC_PI_2 {
            return Err(PerfError::TerminalTooLarge(c));
        }
        let a = (FRAC_PI_2 - c) * b.exp();
        Self::new(a, b, c, h, settle)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Terminal accuracy: the envelope value for `t >= T`.
    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Prescribed settling time `T`.
    pub fn settle_time(&self) -> f64 {
        self.settle
    }

    /// Steady-state error bound `tan(c)`.
    pub fn steady_bound(&self) -> f64 {
        self.c.tan()
    }

    // Within 1e-12*T of the pole the exponential has long underflowed.
    fn settled(&self, t: f64) -> bool {
        t >= self.settle || self.settle - t < 1e-12 * self.settle
    }

    pub fn eta(&self, t: f64) -> f64 {
        if self.settled(t) {
            return self.c;
        }
        let ratio = self.settle / (self.settle - t);
        self.a * (-self.b * ratio.powf(self.h)).exp() + self.c
    }

    pub fn eta_dot(&self, t: f64) -> f64 {
        if self.settled(t) {
            return 0.0;
        }
        let remaining = self.settle - t;
        let ratio_h = (self.settle / remaining).powf(self.h);
        let decay = (-self.b * ratio_h).exp();
        if decay == 0.0 {
            return 0.0;
        }
        // a*b*h*T^h/(T-t)^(h+1) rewritten as a*b*h*(T/(T-t))^h/(T-t).
        -self.a * self.b * self.h * ratio_h / remaining * decay
    }
}

/// Which barrier maps the error onto `z1`.
///
/// The asymmetric kinds combine the tangent barrier on one side of zero with
/// the hyperbolic-arctangent barrier on the other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    #[default]
    SymmetricTan,
    /// `atanh` barrier for `e >= 0`, tangent barrier for `e < 0`.
    AsymmetricTanUpper,
    /// Tangent barrier for `e >= 0`, `atanh` barrier for `e < 0`.
    AsymmetricTanLower,
}

impl TransformKind {
    fn hyperbolic_branch(self, nonnegative: bool) -> bool {
        match self {
            TransformKind::SymmetricTan => false,
            TransformKind::AsymmetricTanUpper => nonnegative,
            TransformKind::AsymmetricTanLower => !nonnegative,
        }
    }
}

/// Transformed error together with the factors the controller needs.
///
/// `gain` is `dz1/de` (the product `psi*varphi` on the tangent branch) and
/// `eta_coupling` is `(dz1/deta) / (dz1/de)`, so that
/// `dz1/dt = gain * (de/dt + eta_coupling * deta/dt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformState {
    pub z1: f64,
    pub psi: f64,
    pub varphi: f64,
    pub gain: f64,
    pub eta_coupling: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorTransform {
    perf: PerfFunction,
    kind: TransformKind,
    phi_floor: f64,
}

impl ErrorTransform {
    pub fn new(perf: PerfFunction, kind: TransformKind) -> Self {
        Self {
            perf,
            kind,
            phi_floor: DEFAULT_PHI_FLOOR,
        }
    }

    pub fn with_phi_floor(mut self, floor: f64) -> Result<Self, PerfError> {
        if !(floor > 0.0 && floor < 1.0) {
            return Err(PerfError::PhiFloor(floor));
        }
        self.phi_floor = floor;
        Ok(self)
    }

    pub fn perf(&self) -> &PerfFunction {
        &self.perf
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn phi_floor(&self) -> f64 {
        self.phi_floor
    }

    /// True when `e` lies strictly inside the funnel at time `t`.
    pub fn in_funnel(&self, e: f64, t: f64) -> bool {
        let eta = self.perf.eta(t);
        if self.kind.hyperbolic_branch(e >= 0.0) {
            (2.0 / PI * e.tanh() / eta).abs() < 1.0
        } else {
            e.atan().abs() < eta
        }
    }

    pub fn transform(&self, e: f64, t: f64) -> Result<f64, FunnelBreach> {
        let eta = self.perf.eta(t);
        let breach = FunnelBreach {
            time: t,
            error: e,
            eta,
        };
        if !e.is_finite() {
            return Err(breach);
        }
        if self.kind.hyperbolic_branch(e >= 0.0) {
            let w = 2.0 / PI * e.tanh() / eta;
            if w.abs() >= 1.0 {
                return Err(breach);
            }
            Ok(w.atanh())
        } else {
            let angle = e.atan();
            if angle.abs() >= eta {
                return Err(breach);
            }
            Ok((FRAC_PI_2 * angle / eta).tan())
        }
    }

    /// Recovers `e` from `z1`. Total for the symmetric kind; the hyperbolic
    /// branch of the asymmetric kinds only covers a bounded range of `z1`.
    pub fn inverse_transform(&self, z1: f64, t: f64) -> Result<f64, FunnelBreach> {
        let eta = self.perf.eta(t);
        if self.kind.hyperbolic_branch(z1 >= 0.0) {
            let v = FRAC_PI_2 * eta * z1.tanh();
            if v.abs() >= 1.0 || z1.is_nan() {
                return Err(FunnelBreach {
                    time: t,
                    error: f64::NAN,
                    eta,
                });
            }
            Ok(v.atanh())
        } else {
            Ok((2.0 / PI * eta * z1.atan()).tan())
        }
    }

    /// `psi = pi*(1 + z1^2) / (2*eta(t))`.
    pub fn psi(&self, z1: f64, t: f64) -> f64 {
        PI * (1.0 + z1 * z1) / (2.0 * self.perf.eta(t))
    }

    /// `varphi = cos^2((2/pi)*eta(t)*atan(z1))`, floored at `phi_floor`.
    pub fn varphi(&self, z1: f64, t: f64) -> f64 {
        let c = (2.0 / PI * self.perf.eta(t) * z1.atan()).cos();
        (c * c).max(self.phi_floor)
    }

    /// Transforms `e` and evaluates the auxiliaries in one pass.
    pub fn evaluate(&self, e: f64, t: f64) -> Result<TransformState, FunnelBreach> {
        let z1 = self.transform(e, t)?;
        if self.kind.hyperbolic_branch(e >= 0.0) {
            let eta = self.perf.eta(t);
            let w = 2.0 / PI * e.tanh() / eta;
            let slack = 1.0 - w * w;
            let sech = 1.0 / e.cosh();
            let gain = (2.0 / PI * sech * sech / (eta * slack)).max(self.phi_floor);
            let dz_deta = -w / (eta * slack);
            Ok(TransformState {
                z1,
                psi: gain,
                varphi: 1.0,
                gain,
                eta_coupling: dz_deta / gain,
            })
        } else {
            let psi = self.psi(z1, t);
            let varphi = self.varphi(z1, t);
            Ok(TransformState {
                z1,
                psi,
                varphi,
                gain: psi * varphi,
                eta_coupling: -2.0 / (PI * varphi) * z1.atan(),
            })
        }
    }
}
