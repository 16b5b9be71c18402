//! Dynamic-surface control chain.
//!
//! Stage 1 works on the transformed error `z1`; each later stage works on
//! `z_i = x_i - s_i`, where `s_i` is the output of a first-order filter
//! `lambda_i * s_i' + s_i = alpha_{i-1}` driven by the previous virtual control.
//! The last stage produces the plant input `u`.
//!
//! Two modes share every code path except the `beta_i` signal: the adaptive
//! mode feeds the fuzzy estimate `phi^T theta_hat_i` (with its own update law),
//! the approximator-free mode replaces it by the stage drive times `phi^T phi`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuzzy::{dot, AdaptiveWeights, FuzzyError, GaussianGrid};
use crate::perf::{ErrorTransform, FunnelBreach};
use crate::plant::{ReferenceSignal, StageBounds};

/// Smallest `|zeta|` allowed when sign smoothing is active.
const SMOOTHED_ZETA_MIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error(transparent)]
    Breach(#[from] FunnelBreach),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
    #[error("expected {expected} {what}, got {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("stage {stage}: gain `{name}` is invalid ({reason})")]
    Gain {
        stage: usize,
        name: &'static str,
        reason: &'static str,
    },
    #[error("sign smoothing must be finite and >= 0, got {0}")]
    Smoothing(f64),
    #[error("adaptive weights are only integrated in adaptive mode")]
    NotAdaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    /// Fuzzy estimates `theta_hat_i` with online update laws.
    #[default]
    Adaptive,
    /// No approximator state; `beta_i` uses the regressor energy instead.
    ApproximatorFree,
}

/// Guard inside the square root of the `xi` saturated term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XiGuard {
    /// `sqrt(zeta^2 gamma^2 + tau^2)`.
    #[default]
    Gamma,
    /// `sqrt(zeta^2 xi^2 + tau^2)`, the symmetric reading.
    Xi,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerOptions {
    pub mode: ControlMode,
    pub xi_guard: XiGuard,
    /// Replaces `sign(z)` by `tanh(z / eps)` when positive.
    pub sign_smoothing: f64,
}

/// Per-stage design constants. `rho`, `tau`, `varrho` and `lambda` only exist
/// from the second stage on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageGains {
    pub delta: f64,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub varpi: f64,
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub varrho: Option<f64>,
    /// Filter time constant [s].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl StageGains {
    pub fn first(delta: f64, sigma: f64, varpi: f64, mu: f64) -> Self {
        Self {
            delta,
            sigma,
            rho: None,
            tau: None,
            varpi,
            mu,
            varrho: None,
            lambda: None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn later(
        delta: f64,
        sigma: f64,
        rho: f64,
        tau: f64,
        varpi: f64,
        mu: f64,
        varrho: f64,
        lambda: f64,
    ) -> Self {
        Self {
            delta,
            sigma,
            rho: Some(rho),
            tau: Some(tau),
            varpi,
            mu,
            varrho: Some(varrho),
            lambda: Some(lambda),
        }
    }

    /// Checks the gains for 1-based `stage`.
    pub fn validate(&self, stage: usize) -> Result<(), ControllerError> {
        let pos = |name, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ControllerError::Gain {
                    stage,
                    name,
                    reason: "must be finite and > 0",
                })
            }
        };
        pos("delta", self.delta)?;
        pos("sigma", self.sigma)?;
        pos("varpi", self.varpi)?;
        pos("mu", self.mu)?;
        if stage >= 2 {
            let need = |name, v: Option<f64>| {
                v.ok_or(ControllerError::Gain {
                    stage,
                    name,
                    reason: "required from stage 2 on",
                })
            };
            pos("rho", need("rho", self.rho)?)?;
            pos("tau", need("tau", self.tau)?)?;
            pos("lambda", need("lambda", self.lambda)?)?;
            let varrho = need("varrho", self.varrho)?;
            if !(varrho.is_finite() && varrho > 1.0) {
                return Err(ControllerError::Gain {
                    stage,
                    name: "varrho",
                    reason: "must exceed 1",
                });
            }
        }
        Ok(())
    }

    fn rho_or_nan(&self) -> f64 {
        self.rho.unwrap_or(f64::NAN)
    }
    fn tau_or_nan(&self) -> f64 {
        self.tau.unwrap_or(f64::NAN)
    }
    fn varrho_or_nan(&self) -> f64 {
        self.varrho.unwrap_or(f64::NAN)
    }
    fn lambda_or_nan(&self) -> f64 {
        self.lambda.unwrap_or(f64::NAN)
    }
}

/// `1/(1+z^2) + varrho*sign(z)` with `sign(0) = 0`; never zero for `varrho > 1`.
pub fn zeta(z: f64, varrho: f64) -> f64 {
    let sign = if z > 0.0 {
        1.0
    } else if z < 0.0 {
        -1.0
    } else {
        0.0
    };
    1.0 / (1.0 + z * z) + varrho * sign
}

/// [`zeta`] with `sign` replaced by `tanh(z/eps)` when `eps > 0`. The smooth
/// version crosses zero for small negative `z`, so its magnitude is floored.
pub fn zeta_smoothed(z: f64, varrho: f64, eps: f64) -> f64 {
    if eps <= 0.0 {
        return zeta(z, varrho);
    }
    let v = 1.0 / (1.0 + z * z) + varrho * (z / eps).tanh();
    if v.abs() < SMOOTHED_ZETA_MIN {
        SMOOTHED_ZETA_MIN.copysign(if v == 0.0 { 1.0 } else { v })
    } else {
        v
    }
}

/// `s^2 / sqrt(s^2 + guard^2)`, which stays within `guard` of `|s|`.
pub fn saturated_term(s: f64, guard: f64) -> f64 {
    let mag = s.abs();
    if mag == 0.0 {
        return 0.0;
    }
    mag * (mag / mag.hypot(guard))
}

/// `lead * signal^2 / sqrt((lead * scale)^2 + guard^2)`: the damping terms of
/// the virtual controls before division by the lower gain bound. `scale` is
/// normally `signal` itself.
pub fn damped_term(lead: f64, signal: f64, scale: f64, guard: f64) -> f64 {
    let num = lead * signal;
    if num == 0.0 {
        return 0.0;
    }
    signal * (num / (lead * scale).hypot(guard))
}

/// `L(xbar, ybar, t) * ||xbar - ybar||`.
pub fn chi(bounds: &StageBounds, xbar: &[f64], ybar: &[f64], t: f64) -> f64 {
    let dist = xbar
        .iter()
        .zip(ybar)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    if dist == 0.0 {
        return 0.0;
    }
    bounds.lipschitz_rate(xbar, ybar, t) * dist
}

/// Cross-stage coupling `g_upper * |lead_prev * signal| / zeta`. With `signal = z_i`
/// this is `gamma_i`, with `signal = r_i` it is `xi_i`. The previous-stage lead
/// is `z1*varphi*psi` below stage 3 and `zeta_{i-1}` above.
pub fn coupling(gain_upper_prev: f64, lead_prev: f64, signal: f64, zeta_i: f64) -> f64 {
    gain_upper_prev * (lead_prev * signal).abs() / zeta_i
}

/// `beta_1` from the estimate `phi^T theta_hat` (or, approximator-free,
/// `z1*varphi*psi*phi^T phi`).
pub fn beta_first(fuzzy_term: f64, reference_rate: f64, eta_coupling: f64, eta_rate: f64) -> f64 {
    fuzzy_term - reference_rate + eta_coupling * eta_rate
}

/// `beta_i = fuzzy_term - (alpha_{i-1} - s_i) / lambda_i`.
pub fn beta_stage(fuzzy_term: f64, alpha_prev: f64, filter: f64, lambda: f64) -> f64 {
    fuzzy_term - filter_derivative(lambda, filter, alpha_prev)
}

/// First virtual control from `lead = z1*varphi*psi` and `transform_gain = varphi*psi`.
pub fn first_virtual_control(
    gains: &StageGains,
    gain_lower: f64,
    z1: f64,
    transform_gain: f64,
    beta: f64,
    chi: f64,
) -> f64 {
    let lead = z1 * transform_gain;
    -(damped_term(lead, beta, beta, gains.delta)
        + damped_term(lead, chi, chi, gains.sigma)
        + lead
        + gains.varpi * z1 / (2.0 * transform_gain))
        / gain_lower
}

/// Virtual control `alpha_i` (or the plant input at the last stage) for stages >= 2.
#[allow(clippy::too_many_arguments)]
pub fn stage_control(
    gains: &StageGains,
    gain_lower: f64,
    xi_guard: XiGuard,
    zeta_i: f64,
    z: f64,
    beta: f64,
    chi: f64,
    gamma: f64,
    xi: f64,
) -> f64 {
    let xi_scale = match xi_guard {
        XiGuard::Gamma => gamma,
        XiGuard::Xi => xi,
    };
    let varrho = gains.varrho_or_nan();
    -(damped_term(zeta_i, beta, beta, gains.delta)
        + damped_term(zeta_i, chi, chi, gains.sigma)
        + damped_term(zeta_i, gamma, gamma, gains.rho_or_nan())
        + damped_term(zeta_i, xi, xi_scale, gains.tau_or_nan())
        + gains.varpi * (z.atan() + varrho * z.abs()) / zeta_i
        + zeta_i)
        / gain_lower
}

/// `theta_hat' = -varpi*theta_hat + mu*drive*phi`.
pub fn adaptive_law_derivative(
    varpi: f64,
    mu: f64,
    theta: &[f64],
    basis: &[f64],
    drive: f64,
) -> Vec<f64> {
    theta
        .iter()
        .zip(basis)
        .map(|(w, p)| -varpi * w + mu * drive * p)
        .collect()
}

/// `s' = (alpha_prev - s) / lambda`.
pub fn filter_derivative(lambda: f64, filter: f64, alpha_prev: f64) -> f64 {
    (alpha_prev - filter) / lambda
}

/// Integrated controller states: filters `s_2..s_n` and, in adaptive mode,
/// one weight vector per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub weights: Vec<AdaptiveWeights>,
    pub filters: Vec<f64>,
}

impl ControllerState {
    pub fn is_finite(&self) -> bool {
        self.filters.iter().all(|v| v.is_finite())
            && self.weights.iter().all(AdaptiveWeights::is_finite)
    }
}

/// Every intermediate of one chain evaluation.
///
/// Vectors indexed by stage start at stage 1 (`z`, `beta`, `chi`, `drive`) or
/// at stage 2 (`filters`, `r`, `zeta`, `gamma`, `xi`). `alpha` holds
/// `alpha_1..alpha_{n-1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSignals {
    pub t: f64,
    pub reference: f64,
    pub reference_rate: f64,
    pub error: f64,
    pub eta: f64,
    pub eta_rate: f64,
    pub psi: f64,
    pub varphi: f64,
    pub transform_gain: f64,
    pub basis: Vec<f64>,
    pub basis_energy: f64,
    pub filters: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub zeta: Vec<f64>,
    pub beta: Vec<f64>,
    pub chi: Vec<f64>,
    pub gamma: Vec<f64>,
    pub xi: Vec<f64>,
    /// Factor multiplying `phi` in each stage's update law.
    pub drive: Vec<f64>,
    pub alpha: Vec<f64>,
    pub u: f64,
}

impl StageSignals {
    /// Virtual control feeding filter `s_{i}` for `i = 2..n` (0-based index `i - 2`).
    fn filter_target(&self, index: usize) -> f64 {
        self.alpha[index]
    }
}

#[derive(Debug, Clone)]
pub struct Controller {
    bounds: Vec<StageBounds>,
    gains: Vec<StageGains>,
    grid: GaussianGrid,
    transform: ErrorTransform,
    reference: ReferenceSignal,
    options: ControllerOptions,
}

impl Controller {
    /// `bounds` is the controller-visible part of the plant.
    pub fn new(
        bounds: &[StageBounds],
        gains: Vec<StageGains>,
        grid: GaussianGrid,
        transform: ErrorTransform,
        reference: ReferenceSignal,
        options: ControllerOptions,
    ) -> Result<Self, ControllerError> {
        if gains.len() != bounds.len() {
            return Err(ControllerError::Dimension {
                what: "stage gain sets",
                expected: bounds.len(),
                found: gains.len(),
            });
        }
        for (i, g) in gains.iter().enumerate() {
            g.validate(i + 1)?;
        }
        if !(options.sign_smoothing.is_finite() && options.sign_smoothing >= 0.0) {
            return Err(ControllerError::Smoothing(options.sign_smoothing));
        }
        if grid.input_dim() != 1 {
            return Err(ControllerError::Dimension {
                what: "fuzzy input dimensions",
                expected: 1,
                found: grid.input_dim(),
            });
        }
        Ok(Self {
            bounds: bounds.to_vec(),
            gains,
            grid,
            transform,
            reference,
            options,
        })
    }

    pub fn order(&self) -> usize {
        self.bounds.len()
    }

    pub fn options(&self) -> &ControllerOptions {
        &self.options
    }

    pub fn gains(&self) -> &[StageGains] {
        &self.gains
    }

    pub fn transform(&self) -> &ErrorTransform {
        &self.transform
    }

    pub fn reference(&self) -> &ReferenceSignal {
        &self.reference
    }

    pub fn grid(&self) -> &GaussianGrid {
        &self.grid
    }

    pub fn filter_time_constants(&self) -> Vec<f64> {
        self.gains[1..]
            .iter()
            .map(StageGains::lambda_or_nan)
            .collect()
    }

    fn adaptive(&self) -> bool {
        self.options.mode == ControlMode::Adaptive
    }

    /// Zero weights and filters initialized on the virtual controls at `t = 0`.
    pub fn initial_state(&self, x: &[f64]) -> Result<ControllerState, ControllerError> {
        let weights = if self.adaptive() {
            vec![AdaptiveWeights::zeros(self.grid.rules()); self.order()]
        } else {
            Vec::new()
        };
        let signals = self.evaluate_impl(&weights, None, x, 0.0)?;
        Ok(ControllerState {
            weights,
            filters: signals.filters,
        })
    }

    pub fn evaluate(
        &self,
        state: &ControllerState,
        x: &[f64],
        t: f64,
    ) -> Result<StageSignals, ControllerError> {
        self.evaluate_impl(&state.weights, Some(&state.filters), x, t)
    }

    fn evaluate_impl(
        &self,
        weights: &[AdaptiveWeights],
        filters: Option<&[f64]>,
        x: &[f64],
        t: f64,
    ) -> Result<StageSignals, ControllerError> {
        let n = self.order();
        let check = |what, expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(ControllerError::Dimension {
                    what,
                    expected,
                    found,
                })
            }
        };
        check("state components", n, x.len())?;
        if let Some(f) = filters {
            check("filter states", n - 1, f.len())?;
        }
        check(
            "weight vectors",
            if self.adaptive() { n } else { 0 },
            weights.len(),
        )?;
        for w in weights {
            check("weights per stage", self.grid.rules(), w.len())?;
        }

        let perf = self.transform.perf();
        let reference = self.reference.value(t);
        let reference_rate = self.reference.derivative(t);
        let error = x[0] - reference;
        let ts = self.transform.evaluate(error, t)?;
        let eta = perf.eta(t);
        let eta_rate = perf.eta_dot(t);
        let basis = self.grid.basis(&[reference])?;
        let basis_energy = dot(&basis, &basis);
        let ybar = vec![reference; n];

        let fuzzy_term = |stage: usize, drive: f64| {
            if self.adaptive() {
                weights[stage].dot(&basis)
            } else {
                drive * basis_energy
            }
        };

        let mut sig = StageSignals {
            t,
            reference,
            reference_rate,
            error,
            eta,
            eta_rate,
            psi: ts.psi,
            varphi: ts.varphi,
            transform_gain: ts.gain,
            basis_energy,
            filters: Vec::with_capacity(n - 1),
            z: Vec::with_capacity(n),
            r: Vec::with_capacity(n - 1),
            zeta: Vec::with_capacity(n - 1),
            beta: Vec::with_capacity(n),
            chi: Vec::with_capacity(n),
            gamma: Vec::with_capacity(n - 1),
            xi: Vec::with_capacity(n - 1),
            drive: Vec::with_capacity(n),
            alpha: Vec::with_capacity(n - 1),
            u: f64::NAN,
            basis: Vec::new(),
        };

        let lead1 = ts.z1 * ts.gain;
        let beta1 = beta_first(
            fuzzy_term(0, lead1),
            reference_rate,
            ts.eta_coupling,
            eta_rate,
        );
        let chi1 = chi(&self.bounds[0], &x[..1], &ybar[..1], t);
        let mut control = first_virtual_control(
            &self.gains[0],
            self.bounds[0].gain_lower(),
            ts.z1,
            ts.gain,
            beta1,
            chi1,
        );
        sig.z.push(ts.z1);
        sig.beta.push(beta1);
        sig.chi.push(chi1);
        sig.drive.push(lead1);
        let mut lead = lead1;

        for i in 1..n {
            let g = &self.gains[i];
            let alpha_prev = control;
            sig.alpha.push(alpha_prev);
            let s = filters.map_or(alpha_prev, |f| f[i - 1]);
            let z = x[i] - s;
            let r = s - alpha_prev;
            let zeta_i = zeta_smoothed(z, g.varrho_or_nan(), self.options.sign_smoothing);
            let beta = beta_stage(fuzzy_term(i, zeta_i), alpha_prev, s, g.lambda_or_nan());
            let chi_i = chi(&self.bounds[i], &x[..=i], &ybar[..=i], t);
            let upper_prev = self.bounds[i - 1].gain_upper();
            let gamma = coupling(upper_prev, lead, z, zeta_i);
            let xi = coupling(upper_prev, lead, r, zeta_i);
            control = stage_control(
                g,
                self.bounds[i].gain_lower(),
                self.options.xi_guard,
                zeta_i,
                z,
                beta,
                chi_i,
                gamma,
                xi,
            );
            sig.filters.push(s);
            sig.z.push(z);
            sig.r.push(r);
            sig.zeta.push(zeta_i);
            sig.beta.push(beta);
            sig.chi.push(chi_i);
            sig.gamma.push(gamma);
            sig.xi.push(xi);
            sig.drive.push(zeta_i);
            lead = zeta_i;
        }
        sig.u = control;
        sig.basis = basis;
        Ok(sig)
    }

    /// Right-hand sides of the weight update laws.
    pub fn weight_derivatives(
        &self,
        signals: &StageSignals,
        state: &ControllerState,
    ) -> Result<Vec<Vec<f64>>, ControllerError> {
        if !self.adaptive() {
            return Err(ControllerError::NotAdaptive);
        }
        Ok(self
            .gains
            .iter()
            .zip(&state.weights)
            .zip(&signals.drive)
            .map(|((g, w), &drive)| {
                adaptive_law_derivative(g.varpi, g.mu, w.as_slice(), &signals.basis, drive)
            })
            .collect())
    }

    /// `s_i'` for `i = 2..n`.
    pub fn filter_derivatives(&self, signals: &StageSignals) -> Vec<f64> {
        signals
            .filters
            .iter()
            .enumerate()
            .map(|(k, &s)| {
                filter_derivative(
                    self.gains[k + 1].lambda_or_nan(),
                    s,
                    signals.filter_target(k),
                )
            })
            .collect()
    }

    /// Only the error-dependent summands of the stability energy:
    /// `z1^2/2 + sum_i (atan z_i + varrho_i |z_i|)`. The weight-error terms are
    /// not observable, so this is a partial value for monitoring.
    pub fn partial_energy(&self, signals: &StageSignals) -> f64 {
        let z1 = signals.z[0];
        0.5 * z1 * z1
            + signals.z[1..]
                .iter()
                .zip(&self.gains[1..])
                .map(|(z, g)| z.atan() + g.varrho_or_nan() * z.abs())
                .sum::<f64>()
    }
}
