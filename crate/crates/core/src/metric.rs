//! Control-distance estimates, weighted-distance sampling, a lattice
//! reachability oracle for ball volumes, and sampled ball-box checks.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::approxexp::{almost_exponential, almost_exponential_plan, invert_e, AnisotropicBox, TupleSelection};
use crate::error::{Error, Result};
use crate::fields::{CommutatorTable, VectorFieldFamily};
use crate::flow::{rk4_fixed, run_plan, Direction, FlowPlan, Leg};
use crate::linalg::{dist2, norm2, norm_inf, sub};
use crate::maximality::{lambda_max, select_maximal};
use crate::report::VerificationReport;
use crate::sampling::{signed_unit, stream};

/// A unit-time path with piecewise-constant controls: pieces of the given
/// durations (summing to 1) along `Σ_j b_j X_j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub pieces: Vec<(f64, Vec<f64>)>,
}

impl Witness {
    pub fn empty() -> Witness {
        Witness { pieces: Vec::new() }
    }

    /// `max_{p,j} |b_j^p|`, the subunit radius of the path.
    pub fn cost(&self) -> f64 {
        self.pieces.iter().flat_map(|(_, b)| b.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn plan(&self) -> FlowPlan {
        FlowPlan::new(
            self.pieces
                .iter()
                .map(|(d, b)| Leg { direction: Direction::Control(b.clone()), duration: *d })
                .collect(),
        )
    }

    pub fn endpoint(&self, family: &VectorFieldFamily, x: &[f64]) -> Result<Vec<f64>> {
        Ok(run_plan(family, &self.plan(), x)?.endpoint)
    }

    /// A plan of single-field legs `(X_j, τ)` as a unit-time path of cost
    /// `Σ |τ|`.
    pub fn from_field_plan(plan: &FlowPlan, m: usize) -> Witness {
        let total: f64 = plan.total_time();
        if total == 0.0 {
            return Witness::empty();
        }
        let pieces = plan
            .legs
            .iter()
            .filter(|l| l.duration != 0.0)
            .map(|l| {
                let mut b = vec![0.0; m];
                match &l.direction {
                    Direction::Field(j) => b[*j] = total * l.duration.signum(),
                    Direction::Control(c) => {
                        for (bj, cj) in b.iter_mut().zip(c) {
                            *bj = cj * total * l.duration.signum();
                        }
                    }
                    Direction::Commutator(_) => panic!("commutator legs have no control form"),
                }
                (l.duration.abs() / total, b)
            })
            .collect();
        Witness { pieces }
    }

    /// `self` then `other`, reparametrized to unit time with cost equal to
    /// the sum of the two costs.
    pub fn concat(&self, other: &Witness) -> Witness {
        let (ca, cb) = (self.cost(), other.cost());
        let total = ca + cb;
        if total == 0.0 {
            return Witness::empty();
        }
        let mut pieces = Vec::with_capacity(self.pieces.len() + other.pieces.len());
        for (w, c) in [(self, ca), (other, cb)] {
            if c == 0.0 {
                continue;
            }
            for (d, b) in &w.pieces {
                pieces.push((d * c / total, b.iter().map(|v| v * total / c).collect()));
            }
        }
        Witness { pieces }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DistanceEstimate {
    pub upper: f64,
    pub lower: f64,
    pub witness: Witness,
    /// `|endpoint(witness) − y|` after re-integration.
    pub endpoint_residual: f64,
}

#[derive(Debug, Clone)]
pub struct DistanceOptions {
    /// Optimizer iterations per piece count.
    pub budget_iterations: usize,
    pub initial_pieces: usize,
    pub max_pieces: usize,
    /// Required endpoint match of the witness.
    pub endpoint_tol: f64,
    /// Admissible path supplied by the caller; kept when it is cheaper.
    pub warm_start: Option<Witness>,
    pub seed: u64,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        DistanceOptions {
            budget_iterations: 60,
            initial_pieces: 8,
            max_pieces: 64,
            endpoint_tol: 1e-6,
            warm_start: None,
            seed: 0,
        }
    }
}

/// Equal-duration control path with its endpoint sensitivity, integrated by
/// fixed-step RK4 on the state and the variational equation together.
struct Shooter<'a> {
    family: &'a VectorFieldFamily,
    x: &'a [f64],
    pieces: usize,
    substeps: usize,
}

impl Shooter<'_> {
    fn m(&self) -> usize {
        self.family.num_fields()
    }

    /// `f_j(y)` and `∇f_j(y)` for all `j`.
    fn fields(&self, y: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<DMatrix<f64>>)> {
        let n = y.len();
        let jets = self.family.base_jets(y, 1)?;
        let vals = jets.iter().map(|f| f.iter().map(|c| c.value()).collect()).collect();
        let grads = jets
            .iter()
            .map(|f| {
                let mut d = DMatrix::zeros(n, n);
                for (i, c) in f.iter().enumerate() {
                    for (k, g) in c.gradient().into_iter().enumerate() {
                        d[(i, k)] = g;
                    }
                }
                d
            })
            .collect();
        Ok((vals, grads))
    }

    /// Right-hand side of `(y, S)` on piece `p` with controls `b`.
    fn rhs(&self, p: usize, b: &[f64], y: &[f64], s: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if !self.family.omega_outer().contains(y) {
            return Err(Error::DomainEscape { exit_time: f64::NAN, point: y.to_vec() });
        }
        let n = y.len();
        let m = self.m();
        let (vals, grads) = self.fields(y)?;
        let mut dy = vec![0.0; n];
        let mut df = DMatrix::zeros(n, n);
        for j in 0..m {
            if b[j] == 0.0 {
                continue;
            }
            for i in 0..n {
                dy[i] += b[j] * vals[j][i];
            }
            df += &grads[j] * b[j];
        }
        let mut ds = &df * s;
        for j in 0..m {
            for i in 0..n {
                ds[(i, p * m + j)] += vals[j][i];
            }
        }
        Ok((dy, ds))
    }

    fn shoot(&self, u: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let n = self.x.len();
        let m = self.m();
        let mut y = self.x.to_vec();
        let mut s = DMatrix::zeros(n, self.pieces * m);
        let h = 1.0 / (self.pieces * self.substeps) as f64;
        for p in 0..self.pieces {
            let b = &u[p * m..(p + 1) * m];
            for _ in 0..self.substeps {
                let (k1, s1) = self.rhs(p, b, &y, &s)?;
                let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
                let (k2, s2) = self.rhs(p, b, &y2, &(&s + &s1 * (0.5 * h)))?;
                let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
                let (k3, s3) = self.rhs(p, b, &y3, &(&s + &s2 * (0.5 * h)))?;
                let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
                let (k4, s4) = self.rhs(p, b, &y4, &(&s + &s3 * h))?;
                for i in 0..n {
                    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                s += (s1 + s2 * 2.0 + s3 * 2.0 + s4) * (h / 6.0);
            }
        }
        if !self.family.omega_outer().contains(&y) {
            return Err(Error::DomainEscape { exit_time: 1.0, point: y });
        }
        Ok((y, s))
    }

    fn witness(&self, u: &[f64]) -> Witness {
        let m = self.m();
        Witness {
            pieces: (0..self.pieces)
                .map(|p| (1.0 / self.pieces as f64, u[p * m..(p + 1) * m].to_vec()))
                .collect(),
        }
    }
}

/// Minimum-norm correction `Jᵀ (J Jᵀ + μ I)⁻¹ r`.
fn min_norm_step(j: &DMatrix<f64>, r: &[f64], mu: f64) -> Option<Vec<f64>> {
    let n = j.nrows();
    let a = j * j.transpose() + DMatrix::<f64>::identity(n, n) * mu;
    let z = a.lu().solve(&DVector::from_column_slice(r))?;
    let step = j.transpose() * z;
    step.iter().all(|v| v.is_finite()).then(|| step.as_slice().to_vec())
}

/// Damped Gauss-Newton towards `shooter(u) = y`; returns the improved
/// controls and the final residual.
fn restore(shooter: &Shooter, y: &[f64], u0: &[f64], iters: usize, tol: f64) -> Option<(Vec<f64>, f64)> {
    let mut u = u0.to_vec();
    let (mut end, mut jac) = shooter.shoot(&u).ok()?;
    let mut res = dist2(&end, y);
    let mut mu = 1e-8 * (1.0 + (&jac * jac.transpose()).trace());
    for _ in 0..iters {
        if res <= tol {
            break;
        }
        let rhs = sub(y, &end);
        let mut improved = false;
        for _ in 0..8 {
            let Some(step) = min_norm_step(&jac, &rhs, mu) else {
                mu *= 10.0;
                continue;
            };
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, b)| a + b).collect();
            if let Ok((e2, j2)) = shooter.shoot(&trial) {
                let r2 = dist2(&e2, y);
                if r2 < res {
                    u = trial;
                    end = e2;
                    jac = j2;
                    res = r2;
                    mu = (mu * 0.3).max(1e-14);
                    improved = true;
                    break;
                }
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Some((u, res))
}

fn sup(u: &[f64]) -> f64 {
    norm_inf(u)
}

/// Lowers `max |u|` while keeping the endpoint fixed: projected descent on
/// `Σ |u_i|^p` for increasing `p`, each step followed by feasibility
/// restoration.
fn reduce(shooter: &Shooter, y: &[f64], mut u: Vec<f64>, iters: usize, tol: f64) -> Vec<f64> {
    let mut best = sup(&u);
    for p in [4.0f64, 8.0, 16.0, 32.0] {
        let mut beta = 0.2;
        for _ in 0..iters {
            if beta < 1e-4 || best == 0.0 {
                break;
            }
            let Ok((_, jac)) = shooter.shoot(&u) else { break };
            let g: Vec<f64> = u.iter().map(|v| (v / best).abs().powf(p - 1.0) * v.signum()).collect();
            let jg = &jac * DVector::from_column_slice(&g);
            let Some(corr) = min_norm_step(&jac, jg.as_slice(), 1e-12 * (1.0 + jac.norm_squared())) else {
                break;
            };
            let d: Vec<f64> = g.iter().zip(&corr).map(|(a, b)| a - b).collect();
            let dn = sup(&d);
            if dn == 0.0 {
                break;
            }
            let trial: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a - beta * best * b / dn).collect();
            match restore(shooter, y, &trial, 6, tol) {
                Some((cand, res)) if res <= tol && sup(&cand) < best * (1.0 - 1e-6) => {
                    best = sup(&cand);
                    u = cand;
                    beta = (beta * 1.5).min(0.5);
                }
                _ => beta *= 0.5,
            }
        }
    }
    u
}

/// Splits every piece in two, leaving the path unchanged.
fn refine(u: &[f64], m: usize) -> Vec<f64> {
    u.chunks(m).flat_map(|c| c.iter().chain(c.iter()).copied().collect::<Vec<_>>()).collect()
}

fn initial_guesses(family: &VectorFieldFamily, x: &[f64], y: &[f64], pieces: usize, seed: u64) -> Vec<Vec<f64>> {
    let m = family.num_fields();
    let amp = 0.3 * norm2(&sub(y, x)).powf(1.0 / family.step() as f64);
    let mut out = vec![vec![0.0; pieces * m]];
    if m >= 2 {
        for turns in [1.0, 2.0] {
            for sign in [1.0, -1.0] {
                let mut u = vec![0.0; pieces * m];
                for p in 0..pieces {
                    let t = 2.0 * std::f64::consts::PI * turns * (p as f64 + 0.5) / pieces as f64;
                    u[p * m] = amp * t.cos();
                    u[p * m + 1] = sign * amp * t.sin();
                }
                out.push(u);
            }
        }
    }
    let mut rng = stream(seed, 0);
    for _ in 0..2 {
        out.push((0..pieces * m).map(|_| amp * rng.random_range(-1.0..1.0)).collect());
    }
    out
}

/// Upper bound on the control distance from an explicit admissible path,
/// and the coordinate-speed lower bound.
pub fn cc_upper(family: &VectorFieldFamily, x: &[f64], y: &[f64], opts: &DistanceOptions) -> Result<DistanceEstimate> {
    family.check_outer(x)?;
    family.check_outer(y)?;
    let lower = family.distance_lower_bound(x, y);
    if x == y {
        return Ok(DistanceEstimate { upper: 0.0, lower: 0.0, witness: Witness::empty(), endpoint_residual: 0.0 });
    }
    let m = family.num_fields();
    let solve_tol = (opts.endpoint_tol * 1e-3).max(1e-13);
    let mut best: Option<(f64, Witness, f64)> = None;
    let mut consider = |w: Witness| {
        if let Ok(end) = w.endpoint(family, x) {
            let res = dist2(&end, y);
            let c = w.cost();
            if res <= opts.endpoint_tol && best.as_ref().is_none_or(|b| c < b.0) {
                best = Some((c, w, res));
            }
        }
    };
    if let Some(w) = &opts.warm_start {
        consider(w.clone());
    }
    let mut pieces = opts.initial_pieces.max(1);
    let mut shooter = Shooter { family, x, pieces, substeps: 4 };
    let mut current: Option<Vec<f64>> = None;
    for (k, u0) in initial_guesses(family, x, y, pieces, opts.seed).into_iter().enumerate() {
        let Some((u, res)) = restore(&shooter, y, &u0, opts.budget_iterations, solve_tol) else { continue };
        if res > solve_tol {
            continue;
        }
        let u = reduce(&shooter, y, u, opts.budget_iterations / 4 + 1, solve_tol);
        if current.as_ref().is_none_or(|c| sup(&u) < sup(c)) {
            current = Some(u);
        }
        if k >= 2 && current.is_some() {
            break;
        }
    }
    if let Some(mut u) = current {
        consider(shooter.witness(&u));
        while pieces * 2 <= opts.max_pieces {
            pieces *= 2;
            shooter = Shooter { family, x, pieces, substeps: if pieces >= 32 { 2 } else { 4 } };
            let before = sup(&u);
            let refined = reduce(&shooter, y, refine(&u, m), opts.budget_iterations / 4 + 1, solve_tol);
            let after = sup(&refined);
            u = refined;
            consider(shooter.witness(&u));
            if after > before * 0.99 {
                break;
            }
        }
    }
    match best {
        Some((upper, witness, endpoint_residual)) => Ok(DistanceEstimate { upper, lower, witness, endpoint_residual }),
        None => Err(Error::UnreachableWithinBudget { residual: f64::NAN }),
    }
}

/// Pieces per weighted-distance sample path.
const RHO_PIECES: usize = 4;

/// Endpoints of random unit-time paths each of whose pieces flows along one
/// table field `Y_i` with coefficient `|c| ≤ r^{ℓ_i}`; all lie in
/// `B_ρ(x, r)`. Returns the endpoints and the number of escaped samples.
pub fn rho_sample(table: &CommutatorTable, x: &[f64], r: f64, count: usize, seed: u64) -> (Vec<Vec<f64>>, usize) {
    let family = table.family();
    let results: Vec<Option<Vec<f64>>> = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, k as u64);
            let legs: Vec<Leg> = (0..RHO_PIECES)
                .map(|_| {
                    let i = rng.random_range(0..table.len());
                    let c = signed_unit(&mut rng, 0.25) * r.powi(table.weight(i) as i32);
                    let direction = match table.weight(i) {
                        1 => Direction::Field(table.word(i).letters()[0] - 1),
                        _ => Direction::Commutator(table.word(i).clone()),
                    };
                    Leg { direction, duration: c / RHO_PIECES as f64 }
                })
                .collect();
            run_plan(family, &FlowPlan::new(legs), x).ok().map(|t| t.endpoint)
        })
        .collect();
    let dropped = results.iter().filter(|r| r.is_none()).count();
    (results.into_iter().flatten().collect(), dropped)
}

/// Lattice for the reachability oracle: axis `k` has spacing
/// `h^{w_k} / 2^{w_k − 1}` and moves flow one field for time `dt`.
///
/// Measures are cell counts times the cell volume. Some lattices are reached
/// only on a sublattice (Grushin moves change `x2` by an even number of
/// cells), which scales every measure by the same constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub base: f64,
    pub axis_weights: Vec<usize>,
    pub dt: f64,
    /// RK4 steps per move.
    pub substeps: usize,
}

impl GridSpec {
    pub fn cells(&self) -> Vec<f64> {
        self.axis_weights.iter().map(|&w| self.base.powi(w as i32) / 2f64.powi(w as i32 - 1)).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cells().iter().product()
    }

    /// Spacing `h = r / k` with axis weights read off a maximal tuple at
    /// `(x, r)` whose columns are coordinate directions (unit weights
    /// otherwise).
    pub fn for_point(table: &CommutatorTable, x: &[f64], r: f64, k: usize) -> Result<GridSpec> {
        let h = r / k as f64;
        Ok(GridSpec { base: h, axis_weights: axis_weights(table, x, r)?, dt: h, substeps: 4 })
    }
}

/// Weight of each coordinate axis from a maximal tuple at `(x, r)`.
pub fn axis_weights(table: &CommutatorTable, x: &[f64], r: f64) -> Result<Vec<usize>> {
    let n = x.len();
    let sel = select_maximal(table, x, r, 0.5)?.selection;
    let cols = table.eval_many(sel.indices(), x)?;
    let mut weights = vec![0usize; n];
    for (col, &d) in cols.iter().zip(sel.weights()) {
        let nz: Vec<usize> = (0..n).filter(|&k| col[k].abs() > 1e-12 * norm_inf(col)).collect();
        if nz.len() != 1 || weights[nz[0]] != 0 {
            return Ok(vec![1; n]);
        }
        weights[nz[0]] = d;
    }
    Ok(weights)
}

#[derive(Debug, Clone, Serialize)]
pub struct BallEstimate {
    pub center: Vec<f64>,
    pub radius: f64,
    pub grid: GridSpec,
    pub reached_cells: usize,
    pub measure: f64,
    /// The search touched the outer box; the measure is then a lower bound.
    pub frontier: bool,
    /// Lattice offsets of the reached cells, sorted.
    pub cells: Vec<Vec<i64>>,
}

/// Breadth-first search over lattice cells from the cell of `x`: every move
/// flows `±X_j` for time `dt` from a cell center and snaps to the nearest
/// lattice point; cells at cost `≤ r` are reached.
pub fn reachable_grid(family: &VectorFieldFamily, x: &[f64], r: f64, grid: &GridSpec) -> Result<BallEstimate> {
    family.check_outer(x)?;
    let cells = grid.cells();
    let n = x.len();
    let max_depth = ((r / grid.dt) * (1.0 + 1e-12)).floor() as usize;
    let mut depth: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    let origin = vec![0i64; n];
    depth.insert(origin.clone(), 0);
    queue.push_back(origin);
    let mut frontier = false;
    let outer = family.omega_outer();
    while let Some(idx) = queue.pop_front() {
        let d = depth[&idx];
        if d >= max_depth {
            continue;
        }
        let center: Vec<f64> = (0..n).map(|k| x[k] + idx[k] as f64 * cells[k]).collect();
        for j in 0..family.num_fields() {
            for sign in [1.0, -1.0] {
                let y = match rk4_fixed(family, &Direction::Field(j), &center, sign * grid.dt, grid.substeps) {
                    Ok(y) => y,
                    Err(_) => {
                        frontier = true;
                        continue;
                    }
                };
                let next: Vec<i64> = (0..n).map(|k| ((y[k] - x[k]) / cells[k]).round() as i64).collect();
                if depth.contains_key(&next) {
                    continue;
                }
                let c: Vec<f64> = (0..n).map(|k| x[k] + next[k] as f64 * cells[k]).collect();
                if !outer.contains(&c) {
                    frontier = true;
                    continue;
                }
                depth.insert(next.clone(), d + 1);
                queue.push_back(next);
            }
        }
    }
    let mut reached: Vec<Vec<i64>> = depth.into_keys().collect();
    reached.sort();
    Ok(BallEstimate {
        center: x.to_vec(),
        radius: r,
        grid: grid.clone(),
        reached_cells: reached.len(),
        measure: reached.len() as f64 * grid.cell_volume(),
        frontier,
        cells: reached,
    })
}

#[derive(Debug, Clone)]
pub struct BallboxOptions {
    pub samples: usize,
    pub seed: u64,
    /// `c_fit` values tried, largest first.
    pub c_ladder: Vec<f64>,
    /// Required fraction of successful inversions.
    pub success_rate: f64,
    pub forward_samples: usize,
    pub injectivity_pairs: usize,
    pub distance: DistanceOptions,
}

impl Default for BallboxOptions {
    fn default() -> Self {
        BallboxOptions {
            samples: 200,
            seed: 0,
            c_ladder: (0..16).map(|k| 0.8f64.powi(k)).collect(),
            success_rate: 0.99,
            forward_samples: 16,
            injectivity_pairs: 2000,
            distance: DistanceOptions { budget_iterations: 20, max_pieces: 16, ..DistanceOptions::default() },
        }
    }
}

/// Fraction of `ρ`-ball targets of radius `δ` that `E_{I,x}` reaches from
/// inside `Q_I(εr)`.
pub fn surjectivity_rate(
    table: &CommutatorTable,
    sel: &TupleSelection,
    x: &[f64],
    delta: f64,
    box_radius: f64,
    samples: usize,
    seed: u64,
) -> (f64, usize, f64) {
    let (targets, _) = rho_sample(table, x, delta, samples, seed);
    let zero = vec![0.0; x.len()];
    let norms: Vec<Option<f64>> = targets
        .par_iter()
        .map(|y| invert_e(table, sel, x, y, &zero).ok().map(|h| sel.norm(&h)))
        .collect();
    let ok = norms.iter().filter(|v| v.is_some_and(|nv| nv <= box_radius)).count();
    let failures = norms.iter().filter(|v| v.is_none()).count();
    let worst = norms.iter().flatten().fold(0.0f64, |a, b| a.max(*b));
    (ok as f64 / targets.len().max(1) as f64, failures, worst)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SurjectivityFit {
    pub c_fit: f64,
    pub rate: f64,
    pub failures: usize,
    pub max_preimage_norm: f64,
}

/// First `c` on the ladder for which `ρ`-ball targets of radius
/// `c ε^s r` invert inside `Q_I(εr)` at the required rate.
pub fn fit_surjectivity(
    table: &CommutatorTable,
    sel: &TupleSelection,
    x: &[f64],
    r: f64,
    eps: f64,
    opts: &BallboxOptions,
) -> Option<SurjectivityFit> {
    let s = table.family().step() as i32;
    opts.c_ladder.iter().find_map(|&c| {
        let delta = c * eps.powi(s) * r;
        let (rate, failures, worst) = surjectivity_rate(table, sel, x, delta, eps * r, opts.samples, opts.seed);
        (rate >= opts.success_rate).then_some(SurjectivityFit { c_fit: c, rate, failures, max_preimage_norm: worst })
    })
}

/// Smallest `|E(h) − E(h′)| / |h − h′|` over random pairs of `Q_I(radius)`
/// with log-uniform separations.
pub fn injectivity_constant(
    table: &CommutatorTable,
    sel: &TupleSelection,
    x: &[f64],
    radius: f64,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    let qbox = AnisotropicBox::new(sel.clone(), radius);
    let ratios: Vec<f64> = (0..pairs)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let mut rng = stream(seed ^ 0x9e37_79b9_7f4a_7c15, k as u64);
            let h = qbox.sample(&mut rng);
            let h2 = loop {
                let mag = 10f64.powf(rng.random_range(-6.0..0.0));
                let cand: Vec<f64> = h
                    .iter()
                    .zip(sel.weights())
                    .map(|(v, &d)| v + mag * rng.random_range(-1.0..1.0) * radius.powi(d as i32))
                    .collect();
                if qbox.contains(&cand) && cand != h {
                    break cand;
                }
            };
            let a = almost_exponential(table, sel, x, &h)?;
            let b = almost_exponential(table, sel, x, &h2)?;
            Ok(dist2(&a, &b) / dist2(&h, &h2))
        })
        .collect::<Result<_>>()?;
    Ok(ratios.into_iter().fold(f64::INFINITY, f64::min))
}

/// Sampled ball-box check at `(I, x, r)`:
/// surjectivity of `E` onto `ρ`-balls of radius `c_fit ε^s r` from
/// `Q_I(εr)`, the forward bound `d(x, E(h)) ≤ C_fwd ‖h‖_I`, and the
/// separation constant `c_inj` of `E` on `Q_I(εr)`.
pub fn ballbox_verify(
    table: &CommutatorTable,
    sel: &TupleSelection,
    x: &[f64],
    r: f64,
    eps: f64,
    opts: &BallboxOptions,
) -> Result<VerificationReport> {
    let family = table.family();
    let box_radius = eps * r;
    let mut report = VerificationReport::new(format!("ballbox I={sel} r={r} eps={eps}"));

    let c_fit = fit_surjectivity(table, sel, x, r, eps, opts);
    if let Some(f) = &c_fit {
        report.metric("c_fit", f.c_fit);
        report.metric("surjectivity_rate", f.rate);
        report.metric("inversion_failures", f.failures as f64);
        report.metric("max_preimage_norm", f.max_preimage_norm);
    }
    report.require(c_fit.is_some(), "no c_fit on the ladder reaches the required inversion rate");

    let qbox = AnisotropicBox::new(sel.clone(), box_radius);
    let forward: Vec<Result<f64>> = (0..opts.forward_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(opts.seed ^ 0x5bd1_e995, k as u64);
            let h = qbox.sample(&mut rng);
            let y = almost_exponential(table, sel, x, &h)?;
            let warm = Witness::from_field_plan(&almost_exponential_plan(table, sel, &h)?, family.num_fields());
            let d = cc_upper(family, x, &y, &DistanceOptions { warm_start: Some(warm), ..opts.distance.clone() })?;
            Ok(d.upper / sel.norm(&h))
        })
        .collect();
    let mut c_fwd = 0.0f64;
    for f in forward {
        match f {
            Ok(v) => c_fwd = c_fwd.max(v),
            Err(e) => report.fail(format!("forward sample: {e}")),
        }
    }
    report.metric("c_fwd", c_fwd);
    report.require(c_fwd.is_finite(), "forward constant is not finite");

    let c_inj = injectivity_constant(table, sel, x, box_radius, opts.injectivity_pairs, opts.seed)?;
    report.metric("c_inj", c_inj);
    report.require(c_inj > 0.0, "E is not injective on the sampled pairs");
    Ok(report)
}

/// Ball measures from the lattice oracle for every `r` and `2r` in
/// `r_list`, with the doubling ratios and the ratios to `Λ(x, r)`.
///
/// The lattice spacing scales with the radius (`h = r / k`) and the axis
/// weights are fixed from the smallest radius.
pub fn doubling_estimate(
    table: &CommutatorTable,
    x: &[f64],
    r_list: &[f64],
    k: usize,
) -> Result<VerificationReport> {
    let family = table.family();
    let r_min = r_list.iter().cloned().fold(f64::INFINITY, f64::min);
    let weights = axis_weights(table, x, r_min)?;
    let mut report = VerificationReport::new(format!("doubling at {x:?}"));
    let mut radii: Vec<f64> = r_list.iter().flat_map(|&r| [r, 2.0 * r]).collect();
    radii.sort_by(|a, b| a.partial_cmp(b).expect("finite radii"));
    radii.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    let balls: Vec<BallEstimate> = radii
        .par_iter()
        .map(|&r| {
            let grid = GridSpec { base: r / k as f64, axis_weights: weights.clone(), dt: r / k as f64, substeps: 4 };
            reachable_grid(family, x, r, &grid)
        })
        .collect::<Result<_>>()?;
    let measure = |r: f64| balls.iter().find(|b| (b.radius - r).abs() <= 1e-12 * r).filter(|b| !b.frontier);
    let mut doubling = Vec::new();
    let mut lam_ratio = Vec::new();
    let mut table_out = crate::report::Table::new(&["r", "measure", "measure_2r", "doubling", "lambda", "measure_over_lambda"]);
    for &r in r_list {
        let (Some(b1), Some(b2)) = (measure(r), measure(2.0 * r)) else {
            report.note(format!("radius {r}: frontier reached, excluded"));
            continue;
        };
        let (lam, _) = lambda_max(table, x, r)?;
        let ratio = b2.measure / b1.measure;
        doubling.push(ratio);
        lam_ratio.push(b1.measure / lam);
        table_out.push(vec![
            crate::report::fmt_num(r),
            crate::report::fmt_num(b1.measure),
            crate::report::fmt_num(b2.measure),
            crate::report::fmt_num(ratio),
            crate::report::fmt_num(lam),
            crate::report::fmt_num(b1.measure / lam),
        ]);
    }
    let spread = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(0.0f64, f64::max);
        hi / lo - 1.0
    };
    report.require(doubling.len() >= 2, "fewer than two usable radii");
    if !doubling.is_empty() {
        let mean = doubling.iter().sum::<f64>() / doubling.len() as f64;
        report.metric("doubling_mean", mean);
        report.metric("doubling_spread", spread(&doubling));
        report.metric("homogeneous_dimension", mean.log2());
        report.metric("lambda_ratio_spread", spread(&lam_ratio));
        report.require(spread(&doubling) < 0.25, "doubling ratios vary by 25% or more");
        report.require(spread(&lam_ratio) <= 0.30, "measure / Lambda is not flat within 30%");
    }
    report.table = Some(table_out);
    Ok(report)
}
