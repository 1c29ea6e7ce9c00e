//! Flows of single fields and ordered flow compositions.
//!
//! Plans list their legs in application order: the first leg acts first on
//! the starting point. Each leg is integrated with classical RK4 and a
//! step-halving comparison that doubles the step count until the two runs
//! agree to the tolerance.

use std::fmt;

use crate::error::{Error, Result};
use crate::fields::{eval_commutator, VectorFieldFamily, Word};
use crate::linalg::norm_inf;

/// What a leg flows along.
#[derive(Debug, Clone, PartialEq)]
pub enum Direction {
    /// Horizontal field `X_j` (0-based).
    Field(usize),
    /// The commutator field `X_w`.
    Commutator(Word),
    /// The control combination `Σ_j b_j X_j`.
    Control(Vec<f64>),
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Field(j) => write!(f, "X{}", j + 1),
            Direction::Commutator(w) => write!(f, "X{w}"),
            Direction::Control(b) => write!(f, "control{b:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    pub direction: Direction,
    pub duration: f64,
}

impl Leg {
    pub fn field(j: usize, duration: f64) -> Leg {
        Leg { direction: Direction::Field(j), duration }
    }

    pub fn inverse(&self) -> Leg {
        Leg { direction: self.direction.clone(), duration: -self.duration }
    }
}

pub const DEFAULT_TOL: f64 = 1e-10;

/// Largest step-count used before giving up on a leg.
const MAX_STEPS: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowPlan {
    pub legs: Vec<Leg>,
    /// Per-leg error tolerance (sup norm).
    pub tol: f64,
    /// Largest RK4 step; `None` means `|duration| / 16` per leg.
    pub max_step: Option<f64>,
    pub record_samples: bool,
}

impl Default for FlowPlan {
    fn default() -> Self {
        FlowPlan { legs: Vec::new(), tol: DEFAULT_TOL, max_step: None, record_samples: false }
    }
}

impl FlowPlan {
    pub fn new(legs: Vec<Leg>) -> FlowPlan {
        FlowPlan { legs, ..FlowPlan::default() }
    }

    pub fn with_tol(mut self, tol: f64) -> FlowPlan {
        self.tol = tol;
        self
    }

    pub fn with_samples(mut self) -> FlowPlan {
        self.record_samples = true;
        self
    }

    pub fn len(&self) -> usize {
        self.legs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.legs.is_empty()
    }

    /// The plan undoing this one: legs reversed with negated durations.
    pub fn inverse(&self) -> FlowPlan {
        FlowPlan { legs: self.legs.iter().rev().map(Leg::inverse).collect(), ..self.clone() }
    }

    /// `self` followed by `other`.
    pub fn then(mut self, other: &FlowPlan) -> FlowPlan {
        self.legs.extend(other.legs.iter().cloned());
        self
    }

    /// Errors when a horizontal-field leg is longer than the family's
    /// existence horizon `t₀`. Longer legs may still succeed; every stage
    /// point is checked against the outer box regardless.
    pub fn check_horizon(&self, family: &VectorFieldFamily) -> Result<()> {
        let t0 = family.horizon();
        for leg in &self.legs {
            if matches!(leg.direction, Direction::Field(_)) && leg.duration.abs() > t0 * (1.0 + 1e-12) {
                return Err(Error::HorizonExceeded { duration: leg.duration, t0 });
            }
        }
        Ok(())
    }

    /// Sum of `|duration|` over legs.
    pub fn total_time(&self) -> f64 {
        self.legs.iter().map(|l| l.duration.abs()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub endpoint: Vec<f64>,
    pub samples: Option<Vec<(f64, Vec<f64>)>>,
    pub est_error: f64,
}

fn velocity(family: &VectorFieldFamily, dir: &Direction, y: &[f64], out: &mut [f64]) -> Result<()> {
    match dir {
        Direction::Field(j) => family.eval_field(*j, y, out),
        Direction::Control(b) => family.eval_control(b, y, out),
        Direction::Commutator(w) => out.copy_from_slice(&eval_commutator(family, w, y)?),
    }
    Ok(())
}

struct Run {
    end: Vec<f64>,
    samples: Vec<(f64, Vec<f64>)>,
}

fn escape(t: f64, y: &[f64]) -> Error {
    Error::DomainEscape { exit_time: t, point: y.to_vec() }
}

fn rk4(
    family: &VectorFieldFamily,
    dir: &Direction,
    x: &[f64],
    t: f64,
    steps: usize,
    record: bool,
) -> Result<Run> {
    let n = x.len();
    let h = t / steps as f64;
    let outer = family.omega_outer();
    let mut y = x.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut samples = Vec::new();
    if record {
        samples.push((0.0, y.clone()));
    }
    for i in 0..steps {
        let t_i = i as f64 * h;
        let stage = |tmp: &[f64], frac: f64| -> Result<()> {
            if outer.contains(tmp) {
                Ok(())
            } else {
                Err(escape(t_i + frac * h, tmp))
            }
        };
        velocity(family, dir, &y, &mut k1)?;
        for k in 0..n {
            tmp[k] = y[k] + 0.5 * h * k1[k];
        }
        stage(&tmp, 0.5)?;
        velocity(family, dir, &tmp, &mut k2)?;
        for k in 0..n {
            tmp[k] = y[k] + 0.5 * h * k2[k];
        }
        stage(&tmp, 0.5)?;
        velocity(family, dir, &tmp, &mut k3)?;
        for k in 0..n {
            tmp[k] = y[k] + h * k3[k];
        }
        stage(&tmp, 1.0)?;
        velocity(family, dir, &tmp, &mut k4)?;
        for k in 0..n {
            y[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
        if y.iter().any(|v| !v.is_finite()) || !outer.contains(&y) {
            return Err(escape(t_i + h, &y));
        }
        if record {
            samples.push((t_i + h, y.clone()));
        }
    }
    Ok(Run { end: y, samples })
}

/// Endpoint of `steps` fixed RK4 steps, no error control. Used where the
/// caller controls accuracy itself (grid oracles, convergence tests).
pub fn rk4_fixed(family: &VectorFieldFamily, dir: &Direction, x: &[f64], t: f64, steps: usize) -> Result<Vec<f64>> {
    family.check_outer(x)?;
    if t == 0.0 {
        return Ok(x.to_vec());
    }
    Ok(rk4(family, dir, x, t, steps.max(1), false)?.end)
}

/// `exp(t X)(x)` along `dir`.
///
/// Existence is not assumed: every stage point is checked against the outer
/// box. The error estimate is the difference between `N` and `2N` steps
/// divided by 15.
pub fn integrate_flow(
    family: &VectorFieldFamily,
    dir: &Direction,
    x: &[f64],
    t: f64,
    tol: f64,
    max_step: Option<f64>,
    record: bool,
) -> Result<Trajectory> {
    family.check_outer(x)?;
    if t == 0.0 {
        return Ok(Trajectory {
            endpoint: x.to_vec(),
            samples: record.then(|| vec![(0.0, x.to_vec())]),
            est_error: 0.0,
        });
    }
    let max_step = max_step.unwrap_or(t.abs() / 16.0);
    let mut steps = ((t.abs() / max_step).ceil() as usize).max(1);
    let mut coarse = rk4(family, dir, x, t, steps, false)?;
    loop {
        let fine = rk4(family, dir, x, t, 2 * steps, record)?;
        let diff = norm_inf(&crate::linalg::sub(&fine.end, &coarse.end)) / 15.0;
        if diff <= tol {
            return Ok(Trajectory {
                endpoint: fine.end,
                samples: record.then_some(fine.samples),
                est_error: diff,
            });
        }
        if 2 * steps >= MAX_STEPS {
            return Err(Error::Stiffness { disagreement: diff, tol });
        }
        steps *= 2;
        coarse = fine;
    }
}

/// Executes the legs in order, accumulating the error estimates.
pub fn run_plan(family: &VectorFieldFamily, plan: &FlowPlan, x: &[f64]) -> Result<Trajectory> {
    family.check_outer(x)?;
    let mut y = x.to_vec();
    let mut est_error = 0.0;
    let mut samples = plan.record_samples.then(|| vec![(0.0, x.to_vec())]);
    let mut clock = 0.0;
    for leg in &plan.legs {
        let tr = integrate_flow(family, &leg.direction, &y, leg.duration, plan.tol, plan.max_step, plan.record_samples)
            .map_err(|e| match e {
                Error::DomainEscape { exit_time, point } => {
                    Error::DomainEscape { exit_time: clock + exit_time.abs(), point }
                }
                other => other,
            })?;
        if let (Some(all), Some(leg_samples)) = (samples.as_mut(), tr.samples) {
            all.extend(leg_samples.into_iter().skip(1).map(|(s, p)| (clock + s.abs(), p)));
        }
        clock += leg.duration.abs();
        est_error += tr.est_error;
        y = tr.endpoint;
    }
    Ok(Trajectory { endpoint: y, samples, est_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::builtin_family;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(u, v)| (u - v).abs() <= tol)
    }

    #[test]
    fn single_field_examples() {
        let g = builtin_family("grushin").unwrap();
        let tr = integrate_flow(&g, &Direction::Field(0), &[0.0, 0.0], 0.3, 1e-10, None, false).unwrap();
        assert!(close(&tr.endpoint, &[0.3, 0.0], 1e-12));
        let tr = integrate_flow(&g, &Direction::Field(1), &[1.0, 0.0], 0.5, 1e-10, None, false).unwrap();
        assert!(close(&tr.endpoint, &[1.0, 0.5], 1e-12));
        let h = builtin_family("heisenberg").unwrap();
        let tr = integrate_flow(&h, &Direction::Field(0), &[0.0, 1.0, 0.0], 0.2, 1e-10, None, false).unwrap();
        assert!(close(&tr.endpoint, &[0.2, 1.0, -0.1], 1e-12));
    }

    #[test]
    fn heisenberg_square_is_a_vertical_step() {
        let h = builtin_family("heisenberg").unwrap();
        let t = 0.1;
        let plan = FlowPlan::new(vec![Leg::field(0, t), Leg::field(1, t), Leg::field(0, -t), Leg::field(1, -t)]);
        let tr = run_plan(&h, &plan, &[0.0; 3]).unwrap();
        assert!(close(&tr.endpoint, &[0.0, 0.0, 0.01], 1e-12), "{:?}", tr.endpoint);
        assert_eq!(run_plan(&h, &FlowPlan::default(), &[0.3, 0.1, 0.2]).unwrap().endpoint, vec![0.3, 0.1, 0.2]);
    }

    #[test]
    fn plan_then_inverse_returns() {
        let g = builtin_family("grushin").unwrap();
        let plan = FlowPlan::new(vec![Leg::field(0, 0.2), Leg::field(1, -0.15), Leg::field(0, 0.1)]);
        let both = plan.clone().then(&plan.inverse());
        let tr = run_plan(&g, &both, &[0.1, 0.2]).unwrap();
        assert!(close(&tr.endpoint, &[0.1, 0.2], 1e-9));
    }

    #[test]
    fn escape_is_reported_with_exit_time() {
        let g = builtin_family("grushin").unwrap();
        let err = integrate_flow(&g, &Direction::Control(vec![10.0, 0.0]), &[0.0, 0.0], 1.0, 1e-10, None, false);
        match err {
            Err(Error::DomainEscape { exit_time, .. }) => assert!(exit_time > 0.15 && exit_time <= 0.2 + 1.0 / 16.0, "{exit_time}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn samples_are_recorded_in_time_order() {
        let g = builtin_family("grushin").unwrap();
        let plan = FlowPlan::new(vec![Leg::field(0, 0.1), Leg::field(1, -0.1)]).with_samples();
        let tr = run_plan(&g, &plan, &[0.0, 0.0]).unwrap();
        let s = tr.samples.unwrap();
        assert!(s.windows(2).all(|w| w[1].0 > w[0].0));
        assert!((s.last().unwrap().0 - 0.2).abs() < 1e-12);
    }
}
