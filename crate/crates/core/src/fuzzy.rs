//! Gaussian fuzzy logic systems: product inference, singleton fuzzifier and
//! center-average defuzzification, giving a normalized basis `phi(x)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FuzzyError {
    #[error("a fuzzy grid needs at least one rule")]
    Empty,
    #[error("rule {rule}: {what} must be finite and strictly positive, got {value}")]
    NonPositive {
        rule: usize,
        what: &'static str,
        value: f64,
    },
    #[error("rule {rule} has a {found}-dimensional center, expected {expected}")]
    CenterDimension {
        rule: usize,
        expected: usize,
        found: usize,
    },
    #[error("grid has {widths} widths and {amplitudes} amplitudes for {rules} rules")]
    RuleCount {
        rules: usize,
        widths: usize,
        amplitudes: usize,
    },
    #[error("input has dimension {found}, grid expects {expected}")]
    InputDimension { expected: usize, found: usize },
    #[error("weight vector has length {found}, grid has {expected} rules")]
    WeightLength { expected: usize, found: usize },
}

/// Rule base with Gaussian memberships
/// `mu_j(x_i) = a_j * exp(-((x_i - c_ji) / sigma_j)^2 / 2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianGrid {
    centers: Vec<Vec<f64>>,
    widths: Vec<f64>,
    amplitudes: Vec<f64>,
}

impl GaussianGrid {
    pub fn new(
        centers: Vec<Vec<f64>>,
        widths: Vec<f64>,
        amplitudes: Vec<f64>,
    ) -> Result<Self, FuzzyError> {
        let rules = centers.len();
        if rules == 0 {
            return Err(FuzzyError::Empty);
        }
        if widths.len() != rules || amplitudes.len() != rules {
            return Err(FuzzyError::RuleCount {
                rules,
                widths: widths.len(),
                amplitudes: amplitudes.len(),
            });
        }
        let dim = centers[0].len();
        for (rule, c) in centers.iter().enumerate() {
            if c.len() != dim || dim == 0 {
                return Err(FuzzyError::CenterDimension {
                    rule,
                    expected: dim.max(1),
                    found: c.len(),
                });
            }
        }
        for (rule, (&w, &a)) in widths.iter().zip(&amplitudes).enumerate() {
            if !(w.is_finite() && w > 0.0) {
                return Err(FuzzyError::NonPositive {
                    rule,
                    what: "width",
                    value: w,
                });
            }
            if !(a.is_finite() && a > 0.0) {
                return Err(FuzzyError::NonPositive {
                    rule,
                    what: "amplitude",
                    value: a,
                });
            }
        }
        Ok(Self {
            centers,
            widths,
            amplitudes,
        })
    }

    /// Scalar-input grid with one rule per center, all sharing a width and amplitude.
    pub fn uniform(centers: &[f64], width: f64, amplitude: f64) -> Result<Self, FuzzyError> {
        Self::new(
            centers.iter().map(|&c| vec![c]).collect(),
            vec![width; centers.len()],
            vec![amplitude; centers.len()],
        )
    }

    /// Eleven rules centered at -20, -16, ..., 20 with
    /// `mu(y) = 10 * exp(-(y - v)^2 / 10)`, i.e. width `sqrt(5)`.
    pub fn reference_grid() -> Self {
        let centers: Vec<f64> = (-5..=5).map(|k| 4.0 * k as f64).collect();
        Self::uniform(&centers, 5f64.sqrt(), 10.0).expect("static grid is valid")
    }

    pub fn rules(&self) -> usize {
        self.centers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    fn check_input(&self, input: &[f64]) -> Result<(), FuzzyError> {
        if input.len() != self.input_dim() {
            return Err(FuzzyError::InputDimension {
                expected: self.input_dim(),
                found: input.len(),
            });
        }
        Ok(())
    }

    /// Normalized firing strengths.
    ///
    /// Activations are combined in the log domain, so inputs far outside the
    /// grid degrade to the dominant rule instead of a 0/0 division.
    pub fn basis(&self, input: &[f64]) -> Result<Vec<f64>, FuzzyError> {
        self.check_input(input)?;
        let dim = input.len() as f64;
        let mut log_act: Vec<f64> = self
            .centers
            .iter()
            .zip(&self.widths)
            .zip(&self.amplitudes)
            .map(|((center, &width), &amp)| {
                let sq: f64 = center
                    .iter()
                    .zip(input)
                    .map(|(c, x)| {
                        let d = (x - c) / width;
                        d * d
                    })
                    .sum();
                dim * amp.ln() - 0.5 * sq
            })
            .collect();
        let peak = log_act.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            // Non-finite input: fall back to the rule with the nearest center.
            let nearest = self.nearest_rule(input);
            return Ok((0..self.rules())
                .map(|j| if j == nearest { 1.0 } else { 0.0 })
                .collect());
        }
        let mut total = 0.0;
        for v in log_act.iter_mut() {
            *v = (*v - peak).exp();
            total += *v;
        }
        log_act.iter_mut().for_each(|v| *v /= total);
        Ok(log_act)
    }

    fn nearest_rule(&self, input: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (j, c) in self.centers.iter().enumerate() {
            let d: f64 = c.iter().zip(input).map(|(c, x)| (x - c).abs()).sum();
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    }

    /// `phi(x)^T theta_hat`.
    pub fn approximate(&self, weights: &AdaptiveWeights, input: &[f64]) -> Result<f64, FuzzyError> {
        weights.check_len(self.rules())?;
        let phi = self.basis(input)?;
        Ok(weights.dot(&phi))
    }

    /// `phi(x)^T phi(x)`, which lies in `[1/m, 1]`.
    pub fn regressor_energy(&self, input: &[f64]) -> Result<f64, FuzzyError> {
        let phi = self.basis(input)?;
        Ok(dot(&phi, &phi))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Online estimate `theta_hat` of a rule base's output weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveWeights(pub Vec<f64>);

impl AdaptiveWeights {
    pub fn zeros(rules: usize) -> Self {
        Self(vec![0.0; rules])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, phi: &[f64]) -> f64 {
        dot(&self.0, phi)
    }

    pub fn norm(&self) -> f64 {
        self.dot(&self.0).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn check_len(&self, rules: usize) -> Result<(), FuzzyError> {
        if self.len() != rules {
            return Err(FuzzyError::WeightLength {
                expected: rules,
                found: self.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn nearest_gaussian_dominates() {
        let g = GaussianGrid::uniform(&[-100.0, 0.0, 100.0], 1.0, 1.0).unwrap();
        let phi = g.basis(&[0.0]).unwrap();
        assert!(phi[1] > 1.0 - 1e-12);
        let phi = g.basis(&[1e6]).unwrap();
        assert_eq!(phi, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn reference_grid_shape() {
        let g = GaussianGrid::reference_grid();
        assert_eq!(g.rules(), 11);
        let centers: Vec<f64> = g.centers().iter().map(|c| c[0]).collect();
        assert_eq!(
            centers,
            vec![-20.0, -16.0, -12.0, -8.0, -4.0, 0.0, 4.0, 8.0, 12.0, 16.0, 20.0]
        );
        // mu(y) = 10 exp(-(y - v)^2 / 10) normalized by hand.
        let y = 2.7;
        let raw: Vec<f64> = centers
            .iter()
            .map(|v| 10.0 * f64::exp(-(y - v) * (y - v) / 10.0))
            .collect();
        let total: f64 = raw.iter().sum();
        for (p, r) in g.basis(&[y]).unwrap().iter().zip(&raw) {
            assert_relative_eq!(*p, r / total, max_relative = 1e-12);
        }
    }

    #[test]
    fn uniform_basis_energy() {
        let g = GaussianGrid::uniform(&[-1.0, 1.0], 0.7, 2.0).unwrap();
        assert_relative_eq!(
            g.regressor_energy(&[0.0]).unwrap(),
            0.5,
            max_relative = 1e-14
        );
        // Four rules on the corners of a square, probed at its center.
        let g = GaussianGrid::new(
            vec![
                vec![-1.0, -1.0],
                vec![-1.0, 1.0],
                vec![1.0, -1.0],
                vec![1.0, 1.0],
            ],
            vec![0.5; 4],
            vec![3.0; 4],
        )
        .unwrap();
        assert_relative_eq!(
            g.regressor_energy(&[0.0, 0.0]).unwrap(),
            0.25,
            max_relative = 1e-14
        );
        let g = GaussianGrid::uniform(&[0.0, 50.0], 1.0, 1.0).unwrap();
        assert_relative_eq!(
            g.regressor_energy(&[0.0]).unwrap(),
            1.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn approximate_edge_cases() {
        let g = GaussianGrid::reference_grid();
        assert_eq!(
            g.approximate(&AdaptiveWeights::zeros(11), &[3.0]).unwrap(),
            0.0
        );
        let w = AdaptiveWeights(vec![-2.5; 11]);
        for y in [-30.0, -3.3, 0.0, 1.9, 25.0] {
            assert_relative_eq!(g.approximate(&w, &[y]).unwrap(), -2.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn validation_errors() {
        assert_eq!(GaussianGrid::uniform(&[], 1.0, 1.0), Err(FuzzyError::Empty));
        assert!(matches!(
            GaussianGrid::uniform(&[0.0], -1.0, 1.0),
            Err(FuzzyError::NonPositive { what: "width", .. })
        ));
        assert!(matches!(
            GaussianGrid::uniform(&[0.0], 1.0, 0.0),
            Err(FuzzyError::NonPositive {
                what: "amplitude",
                ..
            })
        ));
        assert!(matches!(
            GaussianGrid::new(vec![vec![0.0], vec![0.0, 1.0]], vec![1.0; 2], vec![1.0; 2]),
            Err(FuzzyError::CenterDimension { rule: 1, .. })
        ));
        let g = GaussianGrid::reference_grid();
        assert_eq!(
            g.basis(&[1.0, 2.0]),
            Err(FuzzyError::InputDimension {
                expected: 1,
                found: 2
            })
        );
        assert_eq!(
            g.approximate(&AdaptiveWeights::zeros(3), &[1.0]),
            Err(FuzzyError::WeightLength {
                expected: 11,
                found: 3
            })
        );
    }

    #[test]
    fn non_finite_input_falls_back_to_nearest_rule() {
        let g = GaussianGrid::reference_grid();
        let phi = g.basis(&[f64::INFINITY]).unwrap();
        assert_eq!(phi.iter().sum::<f64>(), 1.0);
    }

    proptest! {
        #[test]
        fn basis_is_a_probability_vector(y in -1e4f64..1e4) {
            let g = GaussianGrid::reference_grid();
            let phi = g.basis(&[y]).unwrap();
            prop_assert!(phi.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((phi.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let energy = g.regressor_energy(&[y]).unwrap();
            prop_assert!((1.0 / 11.0 - 1e-15..=1.0 + 1e-15).contains(&energy));
        }

        #[test]
        fn approximate_is_linear(
            y in -25.0f64..25.0,
            w1 in prop::collection::vec(-100.0f64..100.0, 11),
            w2 in prop::collection::vec(-100.0f64..100.0, 11),
        ) {
            let g = GaussianGrid::reference_grid();
            let sum = AdaptiveWeights(w1.iter().zip(&w2).map(|(a, b)| a + b).collect());
            let lhs = g.approximate(&sum, &[y]).unwrap();
            let rhs = g.approximate(&AdaptiveWeights(w1), &[y]).unwrap()
                + g.approximate(&AdaptiveWeights(w2), &[y]).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
