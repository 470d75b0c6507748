//! Step-size and momentum schedules.

use super::AlgoError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant { eta: f64 },
    /// `eta0 * factor^(k / period)` (integer division).
    SteppedDecay { eta0: f64, factor: f64, period: usize },
    /// Fixed `lambda` with `eta = c * lambda^2`.
    TheoryCoupled { c: f64, lambda: f64 },
    /// `lambda = min(1, c_lambda * (n / T)^(1/4))`, `eta = c_eta * sqrt(n / T)`.
    HorizonOptimal {
        n: usize,
        horizon: usize,
        c_eta: f64,
        c_lambda: f64,
    },
}

fn positive(name: &str, v: f64) -> Result<(), AlgoError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(AlgoError::InvalidParameter(format!("{name} = {v} must be positive and finite")))
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<(), AlgoError> {
        match *self {
            Self::Constant { eta } => positive("eta", eta),
            Self::SteppedDecay { eta0, factor, period } => {
                positive("eta", eta0)?;
                if !(factor > 0.0 && factor < 1.0) {
                    return Err(AlgoError::InvalidParameter(format!(
                        "decay factor {factor} must lie in (0, 1)"
                    )));
                }
                if period == 0 {
                    return Err(AlgoError::InvalidParameter("decay period must be >= 1".into()));
                }
                Ok(())
            }
            Self::TheoryCoupled { c, lambda } => {
                positive("coupling constant", c)?;
                check_lambda(lambda)
            }
            Self::HorizonOptimal {
                n,
                horizon,
                c_eta,
                c_lambda,
            } => {
                if n == 0 || horizon == 0 {
                    return Err(AlgoError::InvalidParameter(
                        "horizon-optimal schedule needs n >= 1 and T >= 1".into(),
                    ));
                }
                positive("c_eta", c_eta)?;
                positive("c_lambda", c_lambda)
            }
        }
    }

    pub fn eta(&self, k: usize) -> f64 {
        match *self {
            Self::Constant { eta } => eta,
            Self::SteppedDecay { eta0, factor, period } => eta0 * factor.powi((k / period) as i32),
            Self::TheoryCoupled { c, lambda } => c * lambda * lambda,
            Self::HorizonOptimal {
                n, horizon, c_eta, ..
            } => c_eta * (n as f64 / horizon as f64).sqrt(),
        }
    }

    /// Momentum coefficient imposed by the schedule, if it fixes one.
    pub fn lambda(&self) -> Option<f64> {
        match *self {
            Self::TheoryCoupled { lambda, .. } => Some(lambda),
            Self::HorizonOptimal {
                n,
                horizon,
                c_lambda,
                ..
            } => Some((c_lambda * (n as f64 / horizon as f64).powf(0.25)).min(1.0)),
            _ => None,
        }
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<(), AlgoError> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(AlgoError::InvalidParameter(format!(
            "momentum coefficient {lambda} must lie in (0, 1]"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub schedule: StepSchedule,
    /// Used unless the schedule fixes its own lambda.
    pub lambda: f64,
    pub batch: usize,
    pub horizon: usize,
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), AlgoError> {
        self.schedule.validate()?;
        check_lambda(self.lambda_at(0))?;
        if self.batch == 0 {
            return Err(AlgoError::InvalidParameter("batch must be >= 1".into()));
        }
        Ok(())
    }

    pub fn lambda_at(&self, _k: usize) -> f64 {
        self.schedule.lambda().unwrap_or(self.lambda)
    }

    /// `(eta_k, lambda_k)` in effect for the step from `k` to `k + 1`.
    pub fn params_at(&self, k: usize) -> (f64, f64) {
        (self.schedule.eta(k), self.lambda_at(k))
    }
}

/// Largest step size covered by the descent analysis: `1 / (2 L c_pi)`.
pub fn eta_upper_bound(smoothness: f64, c_pi: f64) -> f64 {
    1.0 / (2.0 * smoothness * c_pi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stepped_decay_matches_reference_schedule() {
        let s = StepSchedule::SteppedDecay {
            eta0: 0.1,
            factor: 0.1,
            period: 300,
        };
        assert_eq!(s.eta(0), 0.1);
        assert_eq!(s.eta(299), 0.1);
        assert!((s.eta(300) - 0.01).abs() < 1e-17);
        assert!((s.eta(899) - 0.001).abs() < 1e-17);
        assert!((s.eta(900) - 0.0001).abs() < 1e-18);
    }

    #[test]
    fn coupled_schedules() {
        let s = StepSchedule::TheoryCoupled { c: 10.0, lambda: 0.1 };
        assert!((s.eta(5) - 0.1).abs() < 1e-15);
        assert_eq!(s.lambda(), Some(0.1));

        let s = StepSchedule::HorizonOptimal {
            n: 20,
            horizon: 20 * 16,
            c_eta: 1.0,
            c_lambda: 1.0,
        };
        assert!((s.lambda().unwrap() - 0.5).abs() < 1e-15);
        assert!((s.eta(0) - 0.25).abs() < 1e-15);
        // eta tracks lambda^2 under the horizon-optimal coupling
        assert!((s.eta(0) - s.lambda().unwrap().powi(2)).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(StepSchedule::Constant { eta: 0.0 }.validate().is_err());
        assert!(StepSchedule::SteppedDecay { eta0: 0.1, factor: 1.0, period: 3 }.validate().is_err());
        assert!(StepSchedule::SteppedDecay { eta0: 0.1, factor: 0.5, period: 0 }.validate().is_err());
        assert!(StepSchedule::TheoryCoupled { c: 1.0, lambda: 1.5 }.validate().is_err());
        let hp = HyperParams {
            schedule: StepSchedule::Constant { eta: 0.1 },
            lambda: 0.0,
            batch: 1,
            horizon: 10,
        };
        assert!(hp.validate().is_err());
        let hp = HyperParams { lambda: 1.0, ..hp };
        assert!(hp.validate().is_ok());
        assert!(HyperParams { batch: 0, ..hp }.validate().is_err());
    }

    #[test]
    fn eta_bound() {
        assert_eq!(eta_upper_bound(2.0, 1.0), 0.25);
    }
}
