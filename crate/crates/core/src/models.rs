//! Observation models, their conditional densities and log-likelihood-ratio
//! increments.
//!
//! Three Markov models are supported:
//!
//! - `IidGaussian`: `X ~ N(0, σ)` under H0 and `N(μ, σ)` under H1; the
//!   sufficient statistic is trivial.
//! - `TwoStateChain`: an observable chain `X = (Y, Θ)` with `Θ ∈ {1, 2}`.
//!   Under H0 the state is drawn i.i.d. from `p0` and `Y ~ N(0, σ)`; under H1
//!   the state follows the transition matrix `p1` and `Y ~ N(Θ/2, σ)`.
//! - `Ar1`: `X_n = a_i X_{n-1} + ε_n` with `ε ~ N(0, σ)`; the statistic is the
//!   previous observation.
//!
//! Increments are always evaluated in closed form in the log domain.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::normal;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("statistic {statistic:?} is not valid for the {model} model")]
    InvalidStatistic { model: &'static str, statistic: Statistic },
    #[error("observation {observation:?} is not valid for the {model} model")]
    InvalidObservation {
        model: &'static str,
        observation: Observation,
    },
    #[error("observation has zero probability under both hypotheses")]
    ImpossibleObservation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

impl Hypothesis {
    pub fn index(self) -> usize {
        match self {
            Hypothesis::H0 => 0,
            Hypothesis::H1 => 1,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Hypothesis::H0 => Hypothesis::H1,
            Hypothesis::H1 => Hypothesis::H0,
        }
    }
}

impl std::fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Hypothesis::H0 => "H0",
            Hypothesis::H1 => "H1",
        })
    }
}

/// Sufficient statistic `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Statistic {
    /// Trivial statistic of i.i.d. observations.
    Unit,
    /// Current state of the two-state chain, 1 or 2.
    State(u8),
    /// Previous observation of the AR(1) process.
    Real(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    Scalar(f64),
    Chain { y: f64, state: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    IidGaussian,
    TwoStateChain,
    Ar1,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::IidGaussian => "iid",
            ModelKind::TwoStateChain => "chain",
            ModelKind::Ar1 => "ar1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    IidGaussian {
        mu: f64,
        sigma: f64,
    },
    TwoStateChain {
        sigma: f64,
        /// State probabilities under H0, indexed by state − 1.
        p0: [f64; 2],
        /// Row-stochastic transition matrix under H1: `p1[from-1][to-1]`.
        p1: [[f64; 2]; 2],
    },
    Ar1 {
        a0: f64,
        a1: f64,
        sigma: f64,
        /// Initial observation `x₀`.
        theta0: f64,
    },
}

const STOCHASTIC_TOL: f64 = 1e-12;

fn check_state(model: &'static str, theta: Statistic) -> Result<usize, ModelError> {
    match theta {
        Statistic::State(s @ (1 | 2)) => Ok(s as usize - 1),
        other => Err(ModelError::InvalidStatistic {
            model,
            statistic: other,
        }),
    }
}

impl ModelSpec {
    /// The mean-shift experiment with `μ = σ = 1`.
    pub fn iid_default() -> Self {
        ModelSpec::IidGaussian { mu: 1.0, sigma: 1.0 }
    }

    /// The two-state chain with `p0 = (½, ½)` and symmetric persistence 0.8.
    pub fn chain_default() -> Self {
        ModelSpec::TwoStateChain {
            sigma: 1.0,
            p0: [0.5, 0.5],
            p1: [[0.8, 0.2], [0.2, 0.8]],
        }
    }

    /// Gaussian noise against a unit-root AR(1) process, started at zero.
    pub fn ar1_default() -> Self {
        ModelSpec::Ar1 {
            a0: 0.0,
            a1: 1.0,
            sigma: 1.0,
            theta0: 0.0,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::IidGaussian { .. } => ModelKind::IidGaussian,
            ModelSpec::TwoStateChain { .. } => ModelKind::TwoStateChain,
            ModelSpec::Ar1 { .. } => ModelKind::Ar1,
        }
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            ModelSpec::IidGaussian { sigma, .. }
            | ModelSpec::TwoStateChain { sigma, .. }
            | ModelSpec::Ar1 { sigma, .. } => sigma,
        }
    }

    /// Initial statistic `θ₀`.
    pub fn theta0(&self) -> Statistic {
        match *self {
            ModelSpec::IidGaussian { .. } => Statistic::Unit,
            ModelSpec::TwoStateChain { .. } => Statistic::State(1),
            ModelSpec::Ar1 { theta0, .. } => Statistic::Real(theta0),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidParameter(m));
        let sigma = self.sigma();
        if !(sigma.is_finite() && sigma > 0.0) {
            return bad(format!("sigma must be finite and > 0, got {sigma}"));
        }
        match *self {
            ModelSpec::IidGaussian { mu, .. } => {
                if !mu.is_finite() || mu == 0.0 {
                    return bad(format!("mu must be finite and nonzero, got {mu}"));
                }
            }
            ModelSpec::TwoStateChain { p0, p1, .. } => {
                if p0.iter().any(|p| !(p.is_finite() && *p >= 0.0))
                    || (p0[0] + p0[1] - 1.0).abs() > STOCHASTIC_TOL
                {
                    return bad(format!("p0 must be a probability vector, got {p0:?}"));
                }
                for (i, row) in p1.iter().enumerate() {
                    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0))
                        || (row[0] + row[1] - 1.0).abs() > STOCHASTIC_TOL
                    {
                        return bad(format!("p1 row {} must be stochastic, got {row:?}", i + 1));
                    }
                }
            }
            ModelSpec::Ar1 { a0, a1, theta0, .. } => {
                if !(a0.is_finite() && a1.is_finite() && theta0.is_finite()) {
                    return bad("AR(1) coefficients and theta0 must be finite".into());
                }
                if a0 == a1 {
                    return bad(format!("a0 and a1 must differ, both are {a0}"));
                }
            }
        }
        Ok(())
    }

    fn check_statistic(&self, theta: Statistic) -> Result<(), ModelError> {
        let ok = matches!(
            (self, theta),
            (ModelSpec::IidGaussian { .. }, Statistic::Unit)
                | (ModelSpec::TwoStateChain { .. }, Statistic::State(1 | 2))
                | (ModelSpec::Ar1 { .. }, Statistic::Real(_))
        );
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidStatistic {
                model: self.kind().name(),
                statistic: theta,
            })
        }
    }

    fn scalar(&self, x: Observation) -> Result<f64, ModelError> {
        match x {
            Observation::Scalar(v) => Ok(v),
            _ => Err(ModelError::InvalidObservation {
                model: self.kind().name(),
                observation: x,
            }),
        }
    }

    fn chain_obs(&self, x: Observation) -> Result<(f64, usize), ModelError> {
        match x {
            Observation::Chain { y, state: s @ (1 | 2) } => Ok((y, s as usize - 1)),
            _ => Err(ModelError::InvalidObservation {
                model: self.kind().name(),
                observation: x,
            }),
        }
    }

    /// Conditional density `f_{i,θ}(x)`. For the chain this is the product of
    /// the state probability and the Gaussian density of `y`.
    pub fn conditional_density(
        &self,
        hyp: Hypothesis,
        x: Observation,
        theta: Statistic,
    ) -> Result<f64, ModelError> {
        self.check_statistic(theta)?;
        Ok(match *self {
            ModelSpec::IidGaussian { mu, sigma } => {
                let mean = if hyp == Hypothesis::H0 { 0.0 } else { mu };
                normal::pdf(self.scalar(x)?, mean, sigma)
            }
            ModelSpec::TwoStateChain { sigma, p0, p1 } => {
                let prev = check_state("chain", theta)?;
                let (y, next) = self.chain_obs(x)?;
                match hyp {
                    Hypothesis::H0 => p0[next] * normal::pdf(y, 0.0, sigma),
                    Hypothesis::H1 => {
                        let mean = (next + 1) as f64 / 2.0;
                        p1[prev][next] * normal::pdf(y, mean, sigma)
                    }
                }
            }
            ModelSpec::Ar1 { a0, a1, sigma, .. } => {
                let Statistic::Real(prev) = theta else { unreachable!() };
                let a = if hyp == Hypothesis::H0 { a0 } else { a1 };
                normal::pdf(self.scalar(x)?, a * prev, sigma)
            }
        })
    }

    /// `Δs = log f_{1,θ}(x) − log f_{0,θ}(x)`, evaluated in closed form.
    pub fn llr_increment(&self, x: Observation, theta: Statistic) -> Result<f64, ModelError> {
        self.check_statistic(theta)?;
        Ok(match *self {
            ModelSpec::IidGaussian { mu, sigma } => {
                let x = self.scalar(x)?;
                let s2 = sigma * sigma;
                x * mu / s2 - mu * mu / (2.0 * s2)
            }
            ModelSpec::TwoStateChain { sigma, p0, p1 } => {
                let prev = check_state("chain", theta)?;
                let (y, next) = self.chain_obs(x)?;
                let (q0, q1) = (p0[next], p1[prev][next]);
                if q0 == 0.0 && q1 == 0.0 {
                    return Err(ModelError::ImpossibleObservation);
                }
                let m = (next + 1) as f64 / 2.0;
                let s2 = sigma * sigma;
                q1.ln() - q0.ln() + y * m / s2 - m * m / (2.0 * s2)
            }
            ModelSpec::Ar1 { a0, a1, sigma, .. } => {
                let Statistic::Real(prev) = theta else { unreachable!() };
                let x = self.scalar(x)?;
                ar1_increment(a0, a1, sigma, prev, x)
            }
        })
    }

    /// `θ' = ξ(x, θ)`.
    pub fn update_statistic(&self, theta: Statistic, x: Observation) -> Result<Statistic, ModelError> {
        self.check_statistic(theta)?;
        Ok(match self {
            ModelSpec::IidGaussian { .. } => {
                self.scalar(x)?;
                Statistic::Unit
            }
            ModelSpec::TwoStateChain { .. } => {
                let (_, next) = self.chain_obs(x)?;
                Statistic::State(next as u8 + 1)
            }
            ModelSpec::Ar1 { .. } => Statistic::Real(self.scalar(x)?),
        })
    }

    /// Draws one observation from `f_{hyp,θ}`.
    pub fn sample_observation<R: Rng + ?Sized>(
        &self,
        hyp: Hypothesis,
        theta: Statistic,
        rng: &mut R,
    ) -> Result<Observation, ModelError> {
        self.check_statistic(theta)?;
        Ok(match *self {
            ModelSpec::IidGaussian { mu, sigma } => {
                let mean = if hyp == Hypothesis::H0 { 0.0 } else { mu };
                let e: f64 = rng.sample(StandardNormal);
                Observation::Scalar(mean + sigma * e)
            }
            ModelSpec::TwoStateChain { sigma, p0, p1 } => {
                let prev = check_state("chain", theta)?;
                let p_first = match hyp {
                    Hypothesis::H0 => p0[0],
                    Hypothesis::H1 => p1[prev][0],
                };
                let u: f64 = rng.random();
                let state: u8 = if u < p_first { 1 } else { 2 };
                let mean = match hyp {
                    Hypothesis::H0 => 0.0,
                    Hypothesis::H1 => state as f64 / 2.0,
                };
                let e: f64 = rng.sample(StandardNormal);
                Observation::Chain {
                    y: mean + sigma * e,
                    state,
                }
            }
            ModelSpec::Ar1 { a0, a1, sigma, .. } => {
                let Statistic::Real(prev) = theta else { unreachable!() };
                let a = if hyp == Hypothesis::H0 { a0 } else { a1 };
                let e: f64 = rng.sample(StandardNormal);
                Observation::Scalar(a * prev + sigma * e)
            }
        })
    }
}

/// AR(1) log-likelihood-ratio increment of observing `x` after `prev`.
#[inline]
pub(crate) fn ar1_increment(a0: f64, a1: f64, sigma: f64, prev: f64, x: f64) -> f64 {
    let s2 = sigma * sigma;
    (a1 - a0) * prev * x / s2 - (a1 * a1 - a0 * a0) * prev * prev / (2.0 * s2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const STD_NORMAL_AT_ZERO: f64 = 0.398_942_280_401_432_7;

    #[test]
    fn density_examples() {
        let iid = ModelSpec::iid_default();
        let d = iid
            .conditional_density(Hypothesis::H0, Observation::Scalar(0.0), Statistic::Unit)
            .unwrap();
        assert!((d - STD_NORMAL_AT_ZERO).abs() < 1e-7);
        for x in [0.3, 1.7] {
            let f = |v| {
                iid.conditional_density(Hypothesis::H0, Observation::Scalar(v), Statistic::Unit)
                    .unwrap()
            };
            assert_eq!(f(x), f(-x));
        }
        let ar = ModelSpec::ar1_default();
        let d = ar
            .conditional_density(Hypothesis::H1, Observation::Scalar(2.0), Statistic::Real(2.0))
            .unwrap();
        assert!((d - STD_NORMAL_AT_ZERO).abs() < 1e-7);
    }

    #[test]
    fn increment_examples() {
        let iid = ModelSpec::iid_default();
        let inc = |x| iid.llr_increment(Observation::Scalar(x), Statistic::Unit).unwrap();
        assert!((inc(0.0) + 0.5).abs() < 1e-15);
        assert_eq!(inc(0.5), 0.0);
        let ar = ModelSpec::ar1_default();
        for x in [-3.0, 0.0, 0.4, 12.0] {
            assert_eq!(ar.llr_increment(Observation::Scalar(x), Statistic::Real(0.0)).unwrap(), 0.0);
        }
    }

    #[test]
    fn statistic_updates() {
        let ar = ModelSpec::ar1_default();
        assert_eq!(
            ar.update_statistic(Statistic::Real(0.7), Observation::Scalar(-1.2)).unwrap(),
            Statistic::Real(-1.2)
        );
        let iid = ModelSpec::iid_default();
        assert_eq!(
            iid.update_statistic(Statistic::Unit, Observation::Scalar(3.3)).unwrap(),
            Statistic::Unit
        );
        let chain = ModelSpec::chain_default();
        assert_eq!(
            chain
                .update_statistic(Statistic::State(1), Observation::Chain { y: 0.3, state: 2 })
                .unwrap(),
            Statistic::State(2)
        );
    }

    #[test]
    fn domain_errors() {
        let iid = ModelSpec::iid_default();
        assert!(iid.llr_increment(Observation::Scalar(0.0), Statistic::Real(1.0)).is_err());
        let chain = ModelSpec::chain_default();
        assert!(chain
            .conditional_density(Hypothesis::H0, Observation::Scalar(0.0), Statistic::State(1))
            .is_err());
        assert!(chain
            .llr_increment(Observation::Chain { y: 0.0, state: 3 }, Statistic::State(1))
            .is_err());
        assert!(chain
            .llr_increment(Observation::Chain { y: 0.0, state: 1 }, Statistic::State(0))
            .is_err());
    }

    #[test]
    fn validation() {
        assert!(ModelSpec::IidGaussian { mu: 0.0, sigma: 1.0 }.validate().is_err());
        assert!(ModelSpec::IidGaussian { mu: 1.0, sigma: 0.0 }.validate().is_err());
        assert!(ModelSpec::Ar1 { a0: 0.5, a1: 0.5, sigma: 1.0, theta0: 0.0 }.validate().is_err());
        let bad_chain = ModelSpec::TwoStateChain {
            sigma: 1.0,
            p0: [0.5, 0.5],
            p1: [[0.8, 0.3], [0.2, 0.8]],
        };
        assert!(bad_chain.validate().is_err());
        for m in [ModelSpec::iid_default(), ModelSpec::chain_default(), ModelSpec::ar1_default()] {
            m.validate().unwrap();
        }
    }

    #[test]
    fn sampling_is_seeded() {
        for m in [ModelSpec::iid_default(), ModelSpec::chain_default(), ModelSpec::ar1_default()] {
            let theta = m.theta0();
            let a = m
                .sample_observation(Hypothesis::H1, theta, &mut ChaCha8Rng::seed_from_u64(9))
                .unwrap();
            let b = m
                .sample_observation(Hypothesis::H1, theta, &mut ChaCha8Rng::seed_from_u64(9))
                .unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn iid_h1_sample_mean() {
        // sd of the mean of 1e5 unit-variance draws is 0.00316, so ±0.01 is ~3.2σ.
        let m = ModelSpec::iid_default();
        let mut rng = ChaCha8Rng::seed_from_u64(20_240_101);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let Observation::Scalar(x) = m
                .sample_observation(Hypothesis::H1, Statistic::Unit, &mut rng)
                .unwrap()
            else {
                unreachable!()
            };
            sum += x;
        }
        assert!((sum / n as f64 - 1.0).abs() < 0.01);
    }

    #[test]
    fn chain_h1_persistence() {
        // Binomial sd at p=0.8, n=1e5 is 0.00126; ±0.004 is ~3.2σ.
        let m = ModelSpec::chain_default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 100_000;
        let stays = (0..n)
            .filter(|_| {
                matches!(
                    m.sample_observation(Hypothesis::H1, Statistic::State(1), &mut rng).unwrap(),
                    Observation::Chain { state: 1, .. }
                )
            })
            .count();
        assert!((stays as f64 / n as f64 - 0.8).abs() < 0.004);
    }

    #[test]
    fn sample_moments_within_four_sigma() {
        // AR(1) under H1 from θ = 1.5: mean a1·θ = 1.5, variance σ² = 1.
        let m = ModelSpec::Ar1 { a0: 0.2, a1: 1.0, sigma: 1.0, theta0: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000usize;
        let xs: Vec<f64> = (0..n)
            .map(|_| match m.sample_observation(Hypothesis::H1, Statistic::Real(1.5), &mut rng) {
                Ok(Observation::Scalar(x)) => x,
                _ => unreachable!(),
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 1.5).abs() < 4.0 / (n as f64).sqrt());
        // Var of the sample variance of Gaussians is 2σ⁴/(n−1).
        assert!((var - 1.0).abs() < 4.0 * (2.0 / (n - 1) as f64).sqrt());
    }

    fn chain_obs() -> impl Strategy<Value = (f64, u8, u8)> {
        (-8.0..8.0f64, 1u8..=2, 1u8..=2)
    }

    proptest! {
        #[test]
        fn increment_matches_log_density_ratio_iid(x in -20.0..20.0f64, mu in 0.1..3.0f64, sigma in 0.3..3.0f64) {
            let m = ModelSpec::IidGaussian { mu, sigma };
            let obs = Observation::Scalar(x);
            let f0 = m.conditional_density(Hypothesis::H0, obs, Statistic::Unit).unwrap();
            let f1 = m.conditional_density(Hypothesis::H1, obs, Statistic::Unit).unwrap();
            prop_assume!(f0 > 1e-300 && f1 > 1e-300);
            let inc = m.llr_increment(obs, Statistic::Unit).unwrap();
            prop_assert!((inc - (f1.ln() - f0.ln())).abs() < 1e-10 * (1.0 + inc.abs()));
        }

        #[test]
        fn increment_matches_log_density_ratio_chain((y, s, prev) in chain_obs()) {
            let m = ModelSpec::chain_default();
            let obs = Observation::Chain { y, state: s };
            let th = Statistic::State(prev);
            let f0 = m.conditional_density(Hypothesis::H0, obs, th).unwrap();
            let f1 = m.conditional_density(Hypothesis::H1, obs, th).unwrap();
            prop_assume!(f0 > 1e-300 && f1 > 1e-300);
            let inc = m.llr_increment(obs, th).unwrap();
            prop_assert!((inc - (f1.ln() - f0.ln())).abs() < 1e-10 * (1.0 + inc.abs()));
            // Factorization into state probability and Gaussian.
            let gauss = normal::pdf(y, s as f64 / 2.0, 1.0);
            let p = if s == prev { 0.8 } else { 0.2 };
            prop_assert!((f1 - p * gauss).abs() <= 1e-15 * f1.max(1e-300));
        }

        #[test]
        fn increment_matches_log_density_ratio_ar1(x in -10.0..10.0f64, prev in -6.0..6.0f64, a0 in -0.9..0.9f64, a1 in -1.2..1.2f64) {
            prop_assume!((a0 - a1).abs() > 1e-3);
            let m = ModelSpec::Ar1 { a0, a1, sigma: 1.0, theta0: 0.0 };
            let obs = Observation::Scalar(x);
            let th = Statistic::Real(prev);
            let f0 = m.conditional_density(Hypothesis::H0, obs, th).unwrap();
            let f1 = m.conditional_density(Hypothesis::H1, obs, th).unwrap();
            prop_assume!(f0 > 1e-300 && f1 > 1e-300);
            let inc = m.llr_increment(obs, th).unwrap();
            prop_assert!((inc - (f1.ln() - f0.ln())).abs() < 1e-10 * (1.0 + inc.abs()));
        }
    }
}
