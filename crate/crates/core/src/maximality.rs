//! Commutator determinants `λ_I`, the volume scale `Λ(x, r)`, maximal tuple
//! selection, stability along subunit paths, basis resolution, and the
//! injectivity-radius stratification.

use std::collections::BTreeSet;

use itertools::Itertools;
use rayon::prelude::*;
use serde::Serialize;

use crate::approxexp::TupleSelection;
use crate::error::{Error, Result};
use crate::fields::{CommutatorTable, VectorFieldFamily};
use crate::flow::{run_plan, Direction, FlowPlan, Leg};
use crate::linalg::det_columns;
use crate::report::VerificationReport;
use crate::sampling::{signed_unit, stream};

/// `λ_I(x) = det(Y_{i_1}(x), …, Y_{i_n}(x))` for 0-based indices.
pub fn lambda_det(table: &CommutatorTable, indices: &[usize], x: &[f64]) -> Result<f64> {
    Ok(det_columns(&table.eval_many(indices, x)?))
}

/// Strictly increasing `n`-tuples of table indices, lexicographic.
pub fn increasing_tuples(q: usize, n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..q).combinations(n)
}

/// Relative gap below which two candidate values count as tied.
const TIE_TOL: f64 = 1e-12;

/// One tuple and its determinant at a point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TupleValue {
    pub indices: Vec<usize>,
    pub weight: usize,
    pub lambda: f64,
}

/// `λ_K(x)` for every increasing tuple `K`, evaluating the table once.
pub fn all_lambdas(table: &CommutatorTable, x: &[f64]) -> Result<Vec<TupleValue>> {
    let cols = table.eval_all(x)?;
    let n = table.family().dim();
    Ok(increasing_tuples(table.len(), n)
        .map(|k| {
            let sel: Vec<Vec<f64>> = k.iter().map(|&i| cols[i].clone()).collect();
            let weight = k.iter().map(|&i| table.weight(i)).sum();
            TupleValue { lambda: det_columns(&sel), indices: k, weight }
        })
        .collect())
}

fn better(v: f64, w: usize, best_v: f64, best_w: usize) -> bool {
    if v > best_v * (1.0 + TIE_TOL) {
        return true;
    }
    (v - best_v).abs() <= TIE_TOL * best_v.max(v) && w < best_w
}

/// Best and runner-up of `|λ_K| r^{ℓ(K)}`; ties go to the smaller weight,
/// then to the lexicographically smaller tuple.
fn ranked(values: &[TupleValue], r: f64) -> (Option<(usize, f64)>, Option<(usize, f64)>) {
    let mut best: Option<(usize, f64)> = None;
    let mut second: Option<(usize, f64)> = None;
    for (k, tv) in values.iter().enumerate() {
        let v = tv.lambda.abs() * r.powi(tv.weight as i32);
        if v == 0.0 {
            continue;
        }
        match best {
            None => best = Some((k, v)),
            Some((bk, bv)) if better(v, tv.weight, bv, values[bk].weight) => {
                second = best;
                best = Some((k, v));
            }
            _ => {
                let replace = match second {
                    None => true,
                    Some((sk, sv)) => better(v, tv.weight, sv, values[sk].weight),
                };
                if replace {
                    second = Some((k, v));
                }
            }
        }
    }
    (best, second)
}

/// `Λ(x, r)` and its maximizing tuple, or `(0, None)` where every
/// determinant vanishes.
pub fn lambda_max(table: &CommutatorTable, x: &[f64], r: f64) -> Result<(f64, Option<Vec<usize>>)> {
    let values = all_lambdas(table, x)?;
    Ok(match ranked(&values, r).0 {
        Some((k, v)) => (v, Some(values[k].indices.clone())),
        None => (0.0, None),
    })
}

/// `Λ(x, r)` with its maximizing tuple; a vanishing maximum is a Hörmander
/// violation at `x`.
pub fn big_lambda(table: &CommutatorTable, x: &[f64], r: f64) -> Result<(f64, TupleSelection)> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    match lambda_max(table, x, r)? {
        (v, Some(k)) => Ok((v, TupleSelection::new(table, k)?)),
        _ => Err(Error::HormanderViolation { point: x.to_vec() }),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MaximalityReport {
    pub selection: TupleSelection,
    pub lambda_i: f64,
    pub big_lambda: f64,
    /// `|λ_I| r^{ℓ(I)} / Λ(x, r)`; 1 for the argmax.
    pub eta_achieved: f64,
    /// Next-best tuple and its ratio to `Λ`.
    pub runner_up: Option<(TupleSelection, f64)>,
}

/// The argmax tuple at `(x, r)`, which is `η`-maximal for every `η < 1`.
pub fn select_maximal(table: &CommutatorTable, x: &[f64], r: f64, eta: f64) -> Result<MaximalityReport> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("eta must lie in (0, 1), got {eta}")));
    }
    let values = all_lambdas(table, x)?;
    let (best, second) = ranked(&values, r);
    let (bk, bv) = best.ok_or(Error::HormanderViolation { point: x.to_vec() })?;
    let runner_up = match second {
        Some((sk, sv)) => Some((TupleSelection::new(table, values[sk].indices.clone())?, sv / bv)),
        None => None,
    };
    Ok(MaximalityReport {
        selection: TupleSelection::new(table, values[bk].indices.clone())?,
        lambda_i: values[bk].lambda,
        big_lambda: bv,
        eta_achieved: values[bk].lambda.abs() * r.powi(values[bk].weight as i32) / bv,
        runner_up,
    })
}

/// Number of constant-control pieces in sampled subunit paths.
const PATH_PIECES: usize = 4;

/// Endpoints of random unit-time paths `γ' = Σ b_j X_j(γ)` with piecewise
/// constant `|b_j| ≤ budget`. Escaping samples are dropped; the count of
/// drops is returned alongside.
pub fn subunit_endpoints(
    family: &VectorFieldFamily,
    x: &[f64],
    budget: f64,
    count: usize,
    seed: u64,
) -> (Vec<Vec<f64>>, usize) {
    let m = family.num_fields();
    let results: Vec<Option<Vec<f64>>> = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, k as u64);
            let legs = (0..PATH_PIECES)
                .map(|_| Leg {
                    direction: Direction::Control((0..m).map(|_| budget * signed_unit(&mut rng, 0.25)).collect()),
                    duration: 1.0 / PATH_PIECES as f64,
                })
                .collect();
            run_plan(family, &FlowPlan::new(legs), x).ok().map(|t| t.endpoint)
        })
        .collect();
    let dropped = results.iter().filter(|r| r.is_none()).count();
    (results.into_iter().flatten().collect(), dropped)
}

/// Outcome of the two stability inequalities at one control budget.
#[derive(Debug, Clone, Serialize)]
pub struct StabilitySample {
    pub budget: f64,
    pub endpoints: usize,
    pub dropped: usize,
    /// `max |λ_I(y) − λ_I(x)| / |λ_I(x)|`.
    pub max_relative_change: f64,
    /// Endpoints with `|λ_I(y) − λ_I(x)| > ½|λ_I(x)|`.
    pub violations: usize,
    /// Smallest `C` with `|λ_I(y)| r^{ℓ(I)} ≥ C⁻¹ η Λ(y, r)` at all endpoints.
    pub fitted_c: f64,
}

/// Checks both stability inequalities at endpoints of subunit paths with
/// control budget `budget`.
pub fn stability_at_budget(
    table: &CommutatorTable,
    sel: &TupleSelection,
    x: &[f64],
    r: f64,
    eta: f64,
    budget: f64,
    samples: usize,
    seed: u64,
) -> Result<StabilitySample> {
    let lam_x = lambda_det(table, sel.indices(), x)?;
    if lam_x == 0.0 {
        return Err(Error::DegenerateBasis { lambda: 0.0, point: x.to_vec() });
    }
    let (ends, dropped) = subunit_endpoints(table.family(), x, budget, samples, seed);
    let lw = r.powi(sel.total_weight() as i32);
    let rows: Vec<(f64, f64)> = ends
        .par_iter()
        .map(|y| -> Result<(f64, f64)> {
            let lam_y = lambda_det(table, sel.indices(), y)?;
            let (big, _) = lambda_max(table, y, r)?;
            let c = if lam_y == 0.0 { f64::INFINITY } else { eta * big / (lam_y.abs() * lw) };
            Ok(((lam_y - lam_x).abs() / lam_x.abs(), c))
        })
        .collect::<Result<_>>()?;
    Ok(StabilitySample {
        budget,
        endpoints: ends.len(),
        dropped,
        max_relative_change: rows.iter().map(|r| r.0).fold(0.0, f64::max),
        violations: rows.iter().filter(|r| r.0 > 0.5).count(),
        fitted_c: rows.iter().map(|r| r.1).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone)]
pub struct StabilityOptions {
    pub samples: usize,
    pub seed: u64,
    /// `ε` values tried, largest first.
    pub eps_ladder: Vec<f64>,
    /// Largest accepted fitted constant in the comparability inequality.
    pub c_max: f64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions {
            samples: 200,
            seed: 0,
            eps_ladder: (0..12).map(|k| 0.5f64.powi(k)).collect(),
            c_max: 4.0,
        }
    }
}

/// Finds the largest `ε*` on the ladder for which subunit paths with budget
/// `ε η r` keep `|λ_I(y) − λ_I(x)| ≤ ½|λ_I(x)|` and
/// `|λ_I(y)| r^{ℓ(I)} ≥ C⁻¹ η Λ(y, r)` with `C ≤ c_max`.
pub fn stability_check(
    table: &CommutatorTable,
    sel: &TupleSelection,
    x: &[f64],
    r: f64,
    eta: f64,
    opts: &StabilityOptions,
) -> Result<(VerificationReport, Option<f64>)> {
    let mut report = VerificationReport::new(format!("stability I={sel} r={r} eta={eta}"));
    let mut eps_star = None;
    for &eps in &opts.eps_ladder {
        let s = stability_at_budget(table, sel, x, r, eta, eps * eta * r, opts.samples, opts.seed)?;
        if s.violations == 0 && s.fitted_c <= opts.c_max && s.endpoints > 0 {
            report.metric("eps_star", eps);
            report.metric("max_relative_change", s.max_relative_change);
            report.metric("fitted_c", s.fitted_c);
            report.metric("dropped", s.dropped as f64);
            eps_star = Some(eps);
            break;
        }
    }
    report.require(eps_star.is_some(), "no epsilon on the ladder satisfies both inequalities");
    Ok((report, eps_star))
}

/// `Y_j(y) = Σ_k a^k Y_{i_k}(y)` solved by Cramer's rule.
#[derive(Debug, Clone, Serialize)]
pub struct Resolution {
    pub coeffs: Vec<f64>,
    /// `|a^k| / r^{ℓ_{i_k} − ℓ_j}`.
    pub normalized: Vec<f64>,
    pub lambda: f64,
}

pub fn resolve_in_basis(
    table: &CommutatorTable,
    sel: &TupleSelection,
    y: &[f64],
    j: usize,
    r: f64,
) -> Result<Resolution> {
    let cols = table.eval_many(sel.indices(), y)?;
    let lam = det_columns(&cols);
    if lam.abs() < 1e-12 {
        return Err(Error::DegenerateBasis { lambda: lam, point: y.to_vec() });
    }
    let target = table.eval(j, y)?;
    let lj = table.weight(j) as i32;
    let mut coeffs = Vec::with_capacity(cols.len());
    let mut normalized = Vec::with_capacity(cols.len());
    for k in 0..cols.len() {
        let mut c = cols.clone();
        c[k] = target.clone();
        let a = det_columns(&c) / lam;
        coeffs.push(a);
        normalized.push(a.abs() / r.powi(sel.weights()[k] as i32 - lj));
    }
    Ok(Resolution { coeffs, normalized, lambda: lam })
}

/// Per-point record of the stratification.
#[derive(Debug, Clone, Serialize)]
pub struct StratumPoint {
    pub x: Vec<f64>,
    /// First layer (1-based) with `μ_j(x) > μ_tol`.
    pub layer: usize,
    pub tuple: Vec<usize>,
    pub lambda: f64,
    /// `r_x = |λ_{I_x}(x)| / c`.
    pub r_x: f64,
    /// Layer of the stratum that covers the point in the peeling loop.
    pub stratum: usize,
    /// Radius assigned by that stratum.
    pub rho0: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Stratification {
    /// Distinct tuple weights `D_1 < … < D_p`.
    pub weights: Vec<usize>,
    pub mu_tol: f64,
    pub stratify_c: f64,
    pub points: Vec<StratumPoint>,
    /// `(layer k, r_(k), number of points in K_k)` for each nonempty stratum,
    /// in peeling order.
    pub strata: Vec<(usize, f64, usize)>,
    pub r0: f64,
}

impl Stratification {
    pub fn stratum_radius(&self, layer: usize) -> Option<f64> {
        self.strata.iter().find(|s| s.0 == layer).map(|s| s.1)
    }
}

pub const DEFAULT_STRATIFY_C: f64 = 10.0;

/// Layer values `μ_j(x) = Σ_{ℓ(K) = D_j} |λ_K(x)|`, the chosen tuple of the
/// first nonvanishing layer, and the peeling loop: the deepest nonempty
/// stratum goes first, each stratum removes the metric neighborhoods of its
/// points of radius `r_(k)`, and `r̃₀` is the least `r_(k)`.
///
/// Metric balls are replaced by the enclosing sets
/// `{y : max_k |y_k − x_k| / S_k < r}` with `S_k` the coordinate speeds.
pub fn stratify(table: &CommutatorTable, grid: &[Vec<f64>], stratify_c: f64) -> Result<Stratification> {
    let family = table.family();
    let all: Vec<Vec<TupleValue>> = grid.par_iter().map(|x| all_lambdas(table, x)).collect::<Result<_>>()?;
    let weights: Vec<usize> = all
        .first()
        .map(|v| v.iter().map(|t| t.weight).collect::<BTreeSet<_>>().into_iter().collect())
        .unwrap_or_default();
    let mu: Vec<Vec<f64>> = all
        .iter()
        .map(|vals| {
            weights
                .iter()
                .map(|&d| vals.iter().filter(|t| t.weight == d).map(|t| t.lambda.abs()).sum())
                .collect()
        })
        .collect();
    let scale = mu.iter().flatten().fold(0.0f64, |a, b| a.max(*b));
    let mu_tol = 1e-9 * scale;
    let mut points = Vec::with_capacity(grid.len());
    for (x, (vals, mus)) in grid.iter().zip(all.iter().zip(&mu)) {
        let layer = mus
            .iter()
            .position(|m| *m > mu_tol)
            .ok_or(Error::HormanderViolation { point: x.clone() })?;
        let d = weights[layer];
        let best = vals
            .iter()
            .filter(|t| t.weight == d)
            .fold(None::<&TupleValue>, |b, t| match b {
                Some(bb) if bb.lambda.abs() >= t.lambda.abs() => Some(bb),
                _ => Some(t),
            })
            .expect("layer is nonempty");
        points.push(StratumPoint {
            x: x.clone(),
            layer: layer + 1,
            tuple: best.indices.iter().map(|i| i + 1).collect(),
            lambda: best.lambda,
            r_x: best.lambda.abs() / stratify_c,
            stratum: 0,
            rho0: 0.0,
        });
    }
    let mut strata = Vec::new();
    let mut covered = vec![false; points.len()];
    for k in (1..=weights.len()).rev() {
        // Σ_k minus the neighborhoods removed so far
        let members: Vec<usize> = (0..points.len()).filter(|&i| !covered[i] && points[i].layer >= k).collect();
        if members.is_empty() {
            continue;
        }
        let r_k = members.iter().map(|&i| points[i].r_x).fold(f64::INFINITY, f64::min);
        strata.push((k, r_k, members.len()));
        let newly: Vec<usize> = (0..points.len())
            .into_par_iter()
            .filter(|&i| {
                !covered[i]
                    && members
                        .iter()
                        .any(|&c| family.distance_lower_bound(&points[c].x, &points[i].x) < r_k)
            })
            .collect();
        for i in newly.into_iter().chain(members) {
            if !covered[i] {
                covered[i] = true;
                points[i].stratum = k;
                points[i].rho0 = r_k;
            }
        }
    }
    let r0 = strata.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    Ok(Stratification { weights, mu_tol, stratify_c, points, strata, r0 })
}
