//! Approximate commutator flows, approximate exponentials, almost-exponential
//! and scaling maps, and numerical checks of their derivative structure.

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{CommutatorTable, VectorFieldFamily, Word};
use crate::flow::{run_plan, FlowPlan, Leg};
use crate::linalg::{det_columns, dist2, from_columns, norm2, norm_inf, power_law_fit, solve, sub};
use crate::maximality::lambda_det;
use crate::report::VerificationReport;
use crate::sampling::{signed_unit, stream};

/// An `n`-tuple of table entries `Y_{i_1} … Y_{i_n}` with weights
/// `d_j = ℓ_{i_j}`. Indices are 0-based; [`TupleSelection::one_based`]
/// gives the conventional numbering.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct TupleSelection {
    indices: Vec<usize>,
    weights: Vec<usize>,
}

impl TupleSelection {
    pub fn new(table: &CommutatorTable, indices: Vec<usize>) -> Result<TupleSelection> {
        let n = table.family().dim();
        if indices.len() != n {
            return Err(Error::InvalidArgument(format!("tuple has {} entries, dimension is {n}", indices.len())));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= table.len()) {
            return Err(Error::InvalidArgument(format!("index {} exceeds table size {}", bad + 1, table.len())));
        }
        let weights = indices.iter().map(|&i| table.weight(i)).collect();
        Ok(TupleSelection { indices, weights })
    }

    pub fn from_one_based(table: &CommutatorTable, indices: &[usize]) -> Result<TupleSelection> {
        if indices.contains(&0) {
            return Err(Error::InvalidArgument("tuple indices are numbered from 1".into()));
        }
        TupleSelection::new(table, indices.iter().map(|i| i - 1).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i + 1).collect()
    }

    pub fn weights(&self) -> &[usize] {
        &self.weights
    }

    /// `ℓ(I) = Σ d_j`.
    pub fn total_weight(&self) -> usize {
        self.weights.iter().sum()
    }

    /// `‖h‖_I = max_j |h_j|^{1/d_j}`.
    pub fn norm(&self, h: &[f64]) -> f64 {
        h.iter()
            .zip(&self.weights)
            .map(|(v, &d)| v.abs().powf(1.0 / d as f64))
            .fold(0.0, f64::max)
    }

    /// `δ_r t`, i.e. `h_j = t_j r^{d_j}`.
    pub fn dilate(&self, t: &[f64], r: f64) -> Vec<f64> {
        t.iter().zip(&self.weights).map(|(v, &d)| v * r.powi(d as i32)).collect()
    }
}

impl fmt::Display for TupleSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.one_based().iter().map(|i| i.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// The anisotropic box `Q_I(r) = {h : ‖h‖_I < r}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnisotropicBox {
    pub selection: TupleSelection,
    pub radius: f64,
}

impl AnisotropicBox {
    pub fn new(selection: TupleSelection, radius: f64) -> AnisotropicBox {
        AnisotropicBox { selection, radius }
    }

    pub fn contains(&self, h: &[f64]) -> bool {
        self.selection.norm(h) < self.radius
    }

    /// A point of the box: `h_j = u_j r^{d_j}` with `u_j ∈ (−1, 1)`, so
    /// `‖h‖_I < r`. Draws near the faces are included.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let t: Vec<f64> = (0..self.selection.weights.len())
            .map(|_| signed_unit(rng, 0.1) * (1.0 - 1e-9))
            .collect();
        self.selection.dilate(&t, self.radius)
    }
}

/// Legs of `C_τ(X_{j_1}, …, X_{j_ℓ})` in application order:
/// `C_τ(j) = e^{τX_j}` and
/// `C_τ(j_1, w) = e^{τX_{j_1}}, C_τ(w), e^{−τX_{j_1}}, C_τ(w)^{−1}`.
pub fn approx_commutator_plan(word: &Word, tau: f64) -> FlowPlan {
    FlowPlan::new(commutator_legs(word.letters(), tau))
}

fn commutator_legs(letters: &[usize], tau: f64) -> Vec<Leg> {
    let j = letters[0] - 1;
    if letters.len() == 1 {
        return vec![Leg::field(j, tau)];
    }
    let inner = commutator_legs(&letters[1..], tau);
    let mut legs = Vec::with_capacity(2 * inner.len() + 2);
    legs.push(Leg::field(j, tau));
    legs.extend(inner.iter().cloned());
    legs.push(Leg::field(j, -tau));
    legs.extend(inner.iter().rev().map(Leg::inverse));
    legs
}

/// The plan of `exp_*(t X_w)`: `C_{t^{1/ℓ}}` for `t > 0`, the inverse of
/// `C_{|t|^{1/ℓ}}` for `t < 0`, empty for `t = 0`.
///
/// The horizon `t₀` is not enforced here; see [`FlowPlan::check_horizon`].
pub fn exp_plan(family: &VectorFieldFamily, word: &Word, t: f64) -> Result<FlowPlan> {
    if word.len() > family.step() {
        return Err(Error::UnsupportedDepth { length: word.len(), step: family.step() });
    }
    if t == 0.0 {
        return Ok(FlowPlan::default());
    }
    let tau = t.abs().powf(1.0 / word.len() as f64);
    let plan = approx_commutator_plan(word, tau);
    Ok(if t > 0.0 { plan } else { plan.inverse() })
}

/// `exp_*(t X_w)(x)`.
pub fn approx_exp(family: &VectorFieldFamily, word: &Word, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    Ok(run_plan(family, &exp_plan(family, word, t)?, x)?.endpoint)
}

/// The plan of `E_{I,x}(h) = exp_*(h_1 Y_{i_1}) ⋯ exp_*(h_n Y_{i_n})(x)`:
/// the `n`-th factor runs first.
pub fn almost_exponential_plan(table: &CommutatorTable, sel: &TupleSelection, h: &[f64]) -> Result<FlowPlan> {
    let family = table.family();
    let mut plan = FlowPlan::default();
    for (j, &i) in sel.indices().iter().enumerate().rev() {
        plan = plan.then(&exp_plan(family, table.word(i), h[j])?);
    }
    Ok(plan)
}

/// `E_{I,x}(h)`.
pub fn almost_exponential(table: &CommutatorTable, sel: &TupleSelection, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    Ok(run_plan(table.family(), &almost_exponential_plan(table, sel, h)?, x)?.endpoint)
}

/// `S_{I,x,r}(t) = E_{I,x}(δ_r t)`.
pub fn scaling_map(table: &CommutatorTable, sel: &TupleSelection, x: &[f64], r: f64, t: &[f64]) -> Result<Vec<f64>> {
    almost_exponential(table, sel, x, &sel.dilate(t, r))
}

/// Tolerance used for the flows inside finite-difference Jacobians.
const JAC_FLOW_TOL: f64 = 1e-13;

/// Largest accepted ratio of flow error to finite-difference step.
const JAC_NOISE_LIMIT: f64 = 1e-4;

pub const DEFAULT_FD_STEP: f64 = 1e-6;

fn e_with_error(table: &CommutatorTable, sel: &TupleSelection, x: &[f64], h: &[f64]) -> Result<(Vec<f64>, f64)> {
    let plan = almost_exponential_plan(table, sel, h)?.with_tol(JAC_FLOW_TOL);
    let tr = run_plan(table.family(), &plan, x)?;
    Ok((tr.endpoint, tr.est_error))
}

/// Central-difference `∂E_{I,x}/∂h` at `h`, columns indexed like `h`.
pub fn jacobian_e(
    table: &CommutatorTable,
    sel: &TupleSelection,
    x: &[f64],
    h: &[f64],
    fd_step: f64,
) -> Result<DMatrix<f64>> {
    let n = h.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let step = fd_step * h[j].abs().max(1.0);
        let mut hp = h.to_vec();
        let mut hm = h.to_vec();
        hp[j] += step;
        hm[j] -= step;
        let (ep, errp) = e_with_error(table, sel, x, &hp)?;
        let (em, errm) = e_with_error(table, sel, x, &hm)?;
        let scale = norm_inf(&ep).max(1.0);
        let noise = (errp + errm + 4.0 * f64::EPSILON * scale) / (2.0 * step);
        if noise > JAC_NOISE_LIMIT {
            return Err(Error::IllConditionedJacobian { step, noise });
        }
        cols.push(ep.iter().zip(&em).map(|(a, b)| (a - b) / (2.0 * step)).collect::<Vec<f64>>());
    }
    Ok(from_columns(&cols))
}

/// Residuals of `d/dt exp_*(tX_w)x − X_w(exp_*(tX_w)x)` along a time grid
/// with a fitted power law `C t^α`.
#[derive(Debug, Clone, Serialize)]
pub struct ExpansionReport {
    pub word: String,
    pub t_grid: Vec<f64>,
    pub residual: Vec<f64>,
    pub noise_floor: Vec<f64>,
    /// `None` when every residual sits within 100× its noise floor.
    pub fitted_exponent: Option<f64>,
    pub fitted_constant: Option<f64>,
    pub exact_within_noise: bool,
}

/// `t_grid` geometric over `[t_lo, t_hi]` with `count` points.
pub fn geometric_grid(t_lo: f64, t_hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![t_lo];
    }
    let (a, b) = (t_lo.ln(), t_hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// Measures how far `t ↦ exp_*(tX_w)x` is from an integral curve of `X_w`.
/// Time derivatives are central differences with relative step `1e-3`.
pub fn derivative_expansion_check(
    table: &CommutatorTable,
    word: &Word,
    x: &[f64],
    t_grid: &[f64],
) -> Result<ExpansionReport> {
    let family = table.family();
    let rows: Vec<(f64, f64)> = t_grid
        .par_iter()
        .map(|&t| -> Result<(f64, f64)> {
            if t <= 0.0 {
                return Err(Error::InvalidArgument(format!("time grid must be positive, got {t}")));
            }
            let dt = 1e-3 * t;
            let run = |s: f64| -> Result<(Vec<f64>, f64)> {
                let plan = exp_plan(family, word, s)?.with_tol(JAC_FLOW_TOL);
                let tr = run_plan(family, &plan, x)?;
                Ok((tr.endpoint, tr.est_error))
            };
            let (yp, ep) = run(t + dt)?;
            let (ym, em) = run(t - dt)?;
            let (y, e0) = run(t)?;
            let deriv: Vec<f64> = yp.iter().zip(&ym).map(|(a, b)| (a - b) / (2.0 * dt)).collect();
            let fw = crate::fields::eval_commutator(family, word, &y)?;
            let residual = norm2(&sub(&deriv, &fw));
            let scale = norm_inf(&y).max(1.0);
            let noise = (ep + em + e0 + 4.0 * f64::EPSILON * scale) / (2.0 * dt);
            Ok((residual, noise))
        })
        .collect::<Result<_>>()?;
    let residual: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let noise_floor: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let exact = residual.iter().zip(&noise_floor).all(|(r, nf)| *r <= 100.0 * nf);
    let (fitted_exponent, fitted_constant) = if exact || t_grid.len() < 2 || residual.iter().any(|r| *r <= 0.0) {
        (None, None)
    } else {
        let (alpha, c) = power_law_fit(t_grid, &residual);
        (Some(alpha), Some(c))
    };
    Ok(ExpansionReport {
        word: word.to_string(),
        t_grid: t_grid.to_vec(),
        residual,
        noise_floor,
        fitted_exponent,
        fitted_constant,
        exact_within_noise: exact,
    })
}

/// Options shared by the sampled Jacobian checks.
#[derive(Debug, Clone)]
pub struct StructureOptions {
    /// Sampling box is `Q_I(ε η r)`.
    pub epsilon: f64,
    pub eta: f64,
    pub samples: usize,
    pub seed: u64,
    /// Accepted range `[1/C₃, C₃]` for `det dE / λ_I(x)`.
    pub c3: f64,
    pub fd_step: f64,
}

impl Default for StructureOptions {
    fn default() -> Self {
        StructureOptions { epsilon: 0.5, eta: 0.5, samples: 200, seed: 0, c3: 2.0, fd_step: DEFAULT_FD_STEP }
    }
}

const DEGENERATE: f64 = 1e-12;

/// `B(h) = U(E(h))⁻¹ dE(h) − Id`, with `U` the matrix of columns
/// `Y_{i_k}(E(h))`. Entry `(k, j)` is `b_j^k`.
pub fn structure_matrix(
    table: &CommutatorTable,
    sel: &TupleSelection,
    x: &[f64],
    h: &[f64],
    fd_step: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let de = jacobian_e(table, sel, x, h, fd_step)?;
    let y = almost_exponential(table, sel, x, h)?;
    let cols = table.eval_many(sel.indices(), &y)?;
    let lam = det_columns(&cols);
    if lam.abs() < DEGENERATE {
        return Err(Error::DegenerateBasis { lambda: lam, point: y });
    }
    let u = from_columns(&cols);
    let inv = u.try_inverse().ok_or(Error::DegenerateBasis { lambda: lam, point: y })?;
    let n = h.len();
    let b = inv * &de - DMatrix::<f64>::identity(n, n);
    Ok((b, de))
}

/// Samples `h ∈ Q_I(εηr)` and reports the normalized size of `B(h)`,
/// `max |b_j^k| / ((‖h‖_I / r) r^{d_k − d_j})`, and the range of
/// `det dE(h) / λ_I(x)`, which must stay inside `[1/C₃, C₃]`.
pub fn jacobian_structure_check(
    table: &CommutatorTable,
    sel: &TupleSelection,
    x: &[f64],
    r: f64,
    opts: &StructureOptions,
) -> Result<VerificationReport> {
    let lam_x = lambda_det(table, sel.indices(), x)?;
    if lam_x.abs() < DEGENERATE {
        return Err(Error::DegenerateBasis { lambda: lam_x, point: x.to_vec() });
    }
    let radius = opts.epsilon * opts.eta * r;
    let qbox = AnisotropicBox::new(sel.clone(), radius);
    let d = sel.weights();
    let rows: Vec<Result<(f64, f64)>> = (0..opts.samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(opts.seed, k as u64);
            let h = if k == 0 { vec![0.0; d.len()] } else { qbox.sample(&mut rng) };
            let (b, de) = structure_matrix(table, sel, x, &h, opts.fd_step)?;
            let hn = sel.norm(&h);
            let mut worst = 0.0f64;
            if hn > 0.0 {
                for kk in 0..d.len() {
                    for j in 0..d.len() {
                        let scale = hn / r * r.powi(d[kk] as i32 - d[j] as i32);
                        worst = worst.max(b[(kk, j)].abs() / scale);
                    }
                }
            } else {
                worst = b.abs().max();
            }
            Ok((worst, de.determinant() / lam_x))
        })
        .collect();
    let mut report = VerificationReport::new(format!("jacobian structure I={sel}"));
    let mut b_fit = 0.0f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut violations = 0usize;
    let mut errors = 0usize;
    for (k, row) in rows.into_iter().enumerate() {
        match row {
            Ok((w, ratio)) => {
                if k > 0 {
                    b_fit = b_fit.max(w);
                } else {
                    report.metric("b_at_zero", w);
                }
                lo = lo.min(ratio);
                hi = hi.max(ratio);
                if !(ratio >= 1.0 / opts.c3 && ratio <= opts.c3) {
                    violations += 1;
                }
            }
            Err(e) => {
                errors += 1;
                if errors <= 3 {
                    report.note(format!("sample {k}: {e}"));
                }
            }
        }
    }
    report.metric("box_radius", radius);
    report.metric("samples", opts.samples as f64);
    report.metric("b_fitted_c_over_eta", b_fit);
    report.metric("det_ratio_min", lo);
    report.metric("det_ratio_max", hi);
    report.metric("det_ratio_violations", violations as f64);
    report.metric("sample_errors", errors as f64);
    report.require(violations == 0, format!("{violations} samples with det ratio outside [1/{0}, {0}]", opts.c3));
    report.require(errors == 0, format!("{errors} samples failed to evaluate"));
    Ok(report)
}

/// Pull-back of `r^{ℓ_i} Y_i` under the scaling map: the solution `ĉ` of
/// `dS(t) ĉ = r^{ℓ_i} Y_i(S(t))`.
pub fn pullback_field(
    table: &CommutatorTable,
    sel: &TupleSelection,
    x: &[f64],
    r: f64,
    i: usize,
    t: &[f64],
    fd_step: f64,
) -> Result<Vec<f64>> {
    let h = sel.dilate(t, r);
    let de = jacobian_e(table, sel, x, &h, fd_step)?;
    let n = t.len();
    let scale = DMatrix::from_fn(n, n, |a, b| if a == b { r.powi(sel.weights()[a] as i32) } else { 0.0 });
    let ds = de * scale;
    let s = almost_exponential(table, sel, x, &h)?;
    let y = table.eval(i, &s)?;
    let rhs: Vec<f64> = y.iter().map(|v| v * r.powi(table.weight(i) as i32)).collect();
    let det = ds.determinant();
    let col_scale: f64 = (0..n).map(|c| norm2(ds.column(c).as_slice())).product();
    if det.abs() <= 1e-12 * col_scale.max(f64::MIN_POSITIVE) {
        return Err(Error::SingularScaling { t: t.to_vec() });
    }
    solve(&ds, &rhs).ok_or(Error::SingularScaling { t: t.to_vec() })
}

/// The pulled-back selected fields are `∂_{t_j} + Σ_k a_j^k ∂_{t_k}`;
/// reports `max |a_j^k(t)| / ‖t‖_I` over the samples.
pub fn pullback_check(
    table: &CommutatorTable,
    sel: &TupleSelection,
    x: &[f64],
    r: f64,
    t_samples: &[Vec<f64>],
    c_max: f64,
) -> Result<VerificationReport> {
    let rows: Vec<Result<f64>> = t_samples
        .par_iter()
        .map(|t| {
            let tn = sel.norm(t);
            let mut worst = 0.0f64;
            for (j, &i) in sel.indices().iter().enumerate() {
                let c = pullback_field(table, sel, x, r, i, t, DEFAULT_FD_STEP)?;
                for (k, v) in c.iter().enumerate() {
                    let a = if k == j { v - 1.0 } else { *v };
                    worst = worst.max(if tn > 0.0 { a.abs() / tn } else { a.abs() });
                }
            }
            Ok(worst)
        })
        .collect();
    let mut report = VerificationReport::new(format!("pullback I={sel} r={r}"));
    let mut fit = 0.0f64;
    for (t, row) in t_samples.iter().zip(rows) {
        match row {
            Ok(w) => fit = fit.max(w),
            Err(e) => report.fail(format!("t = {t:?}: {e}")),
        }
    }
    report.metric("samples", t_samples.len() as f64);
    report.metric("a_fitted_c_over_eta", fit);
    report.require(fit <= c_max, format!("fitted constant {fit} exceeds {c_max}"));
    Ok(report)
}

pub const NEWTON_MAX_ITER: usize = 50;
pub const NEWTON_TOL: f64 = 1e-9;

/// Solves `E_{I,x}(h) = target` by Newton's method from `guess`, halving
/// the step while the residual would grow.
pub fn invert_e(
    table: &CommutatorTable,
    sel: &TupleSelection,
    x: &[f64],
    target: &[f64],
    guess: &[f64],
) -> Result<Vec<f64>> {
    let mut h = guess.to_vec();
    let mut res = match almost_exponential(table, sel, x, &h) {
        Ok(y) => dist2(&y, target),
        Err(_) => f64::INFINITY,
    };
    for _ in 0..NEWTON_MAX_ITER {
        if res <= NEWTON_TOL {
            return Ok(h);
        }
        let y = almost_exponential(table, sel, x, &h)?;
        let jac = jacobian_e(table, sel, x, &h, DEFAULT_FD_STEP)?;
        let step = solve(&jac, &sub(target, &y))
            .ok_or(Error::NonConvergence { last: h.clone(), residual: res })?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = h.iter().zip(&step).map(|(a, b)| a + lambda * b).collect();
            if let Ok(yt) = almost_exponential(table, sel, x, &trial) {
                let rt = dist2(&yt, target);
                if rt < res {
                    h = trial;
                    res = rt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res <= NEWTON_TOL {
        Ok(h)
    } else {
        Err(Error::NonConvergence { last: h, residual: res })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fields::{build_table, builtin_family};
    use crate::flow::Direction;

    fn table(name: &str) -> CommutatorTable {
        build_table(Arc::new(builtin_family(name).unwrap()))
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(u, v)| (u - v).abs() <= tol)
    }

    #[test]
    fn commutator_plan_shapes() {
        let p = approx_commutator_plan(&Word::parse("1,2").unwrap(), 0.3);
        assert_eq!(
            p.legs,
            vec![Leg::field(0, 0.3), Leg::field(1, 0.3), Leg::field(0, -0.3), Leg::field(1, -0.3)]
        );
        assert_eq!(approx_commutator_plan(&Word::single(1), 0.3).len(), 1);
        let p3 = approx_commutator_plan(&Word::parse("1,1,2").unwrap(), 0.3);
        assert_eq!(p3.len(), 10);
        assert_eq!(p3.legs[0], Leg::field(0, 0.3));
        assert_eq!(p3.legs[5], Leg::field(0, -0.3));
        assert!(p3.legs.iter().all(|l| matches!(l.direction, Direction::Field(_))));
    }

    #[test]
    fn heisenberg_exp_is_exact() {
        let t = table("heisenberg");
        let w = Word::parse("1,2").unwrap();
        let fam = t.family();
        assert!(close(&approx_exp(fam, &w, 0.01, &[0.0; 3]).unwrap(), &[0.0, 0.0, 0.01], 1e-14));
        assert!(close(&approx_exp(fam, &w, -0.01, &[0.0; 3]).unwrap(), &[0.0, 0.0, -0.01], 1e-14));
        assert_eq!(approx_exp(fam, &w, 0.0, &[0.1, 0.2, 0.3]).unwrap(), vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn almost_exponential_examples() {
        let g = table("grushin");
        let sel = TupleSelection::from_one_based(&g, &[1, 3]).unwrap();
        let y = almost_exponential(&g, &sel, &[0.0, 0.0], &[0.2, 0.03]).unwrap();
        assert!(close(&y, &[0.2, 0.03], 1e-13), "{y:?}");
        let s = scaling_map(&g, &sel, &[0.0, 0.0], 0.1, &[1.0, 1.0]).unwrap();
        assert!(close(&s, &[0.1, 0.01], 1e-14));
        assert_eq!(scaling_map(&g, &sel, &[0.0, 0.0], 0.1, &[0.7, -0.3]).unwrap(), {
            almost_exponential(&g, &sel, &[0.0, 0.0], &sel.dilate(&[0.7, -0.3], 0.1)).unwrap()
        });
        let w = table("wright");
        let sel = TupleSelection::from_one_based(&w, &[1, 3]).unwrap();
        let h2: f64 = 0.004;
        let y = almost_exponential(&w, &sel, &[0.0, 0.0], &[0.0, h2]).unwrap();
        assert!(close(&y, &[0.0, h2 + h2.powf(1.5)], 1e-14));
    }

    #[test]
    fn jacobian_columns() {
        let g = table("grushin");
        let sel = TupleSelection::from_one_based(&g, &[1, 3]).unwrap();
        let j = jacobian_e(&g, &sel, &[0.0, 0.0], &[0.0, 0.0], DEFAULT_FD_STEP).unwrap();
        assert!((j - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-6);
        let w = table("wright");
        let sel = TupleSelection::from_one_based(&w, &[1, 3]).unwrap();
        let j = jacobian_e(&w, &sel, &[0.0, 0.0], &[0.0, 0.04], DEFAULT_FD_STEP).unwrap();
        assert!((j[(1, 1)] - 1.3).abs() < 1e-6, "{j}");
    }

    #[test]
    fn newton_inverts() {
        let g = table("grushin");
        let sel = TupleSelection::from_one_based(&g, &[1, 3]).unwrap();
        let h = invert_e(&g, &sel, &[0.0, 0.0], &[0.2, 0.03], &[0.0, 0.0]).unwrap();
        assert!(close(&h, &[0.2, 0.03], 1e-9));
        let h = invert_e(&g, &sel, &[0.1, 0.1], &[0.1, 0.1], &[0.0, 0.0]).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
    }

    #[test]
    fn plan_horizon_is_checked_on_request() {
        let g = table("grushin");
        let plan = exp_plan(g.family(), &Word::parse("1,2").unwrap(), 0.5).unwrap();
        assert!(matches!(plan.check_horizon(g.family()), Err(Error::HorizonExceeded { .. })));
        let plan = exp_plan(g.family(), &Word::parse("1,2").unwrap(), 0.01).unwrap();
        assert!(plan.check_horizon(g.family()).is_ok());
    }
}
