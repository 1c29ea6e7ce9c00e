//! Convolution of field coefficients with a scaled bump kernel, brackets of
//! the mollified fields, and numerical checks of their convergence and
//! uniform bounds.

use std::fmt;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::legendre::GaussLegendre;
use itertools::Itertools;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{
    build_table, commutator_jets, eval_commutator, horizontal_derivative, FieldSource, Kink, VectorFieldFamily, Word,
};
use crate::jet::{basis, coordinate_jets, Jet};
use crate::linalg::{dist2, power_law_fit};
use crate::report::{fmt_num, Table, VerificationReport};

pub const DEFAULT_QUAD_ORDER: usize = 32;

/// Nodes with `1 − |y|²` below this carry a kernel weight under `e^{-100}`.
const SUPPORT_CUTOFF: f64 = 0.01;

/// Unnormalized bump `exp(−1/(1−|y|²))` and its derivatives at `y`, as a jet.
fn kernel_jet(y: &[f64], order: usize) -> Option<Jet> {
    let r2: f64 = y.iter().map(|v| v * v).sum();
    if 1.0 - r2 < SUPPORT_CUTOFF {
        return None;
    }
    let vars = coordinate_jets(y, order);
    let mut u = Jet::constant(vars[0].basis().clone(), 1.0);
    for v in &vars {
        u = &u - &(v * v);
    }
    Some((-u.recip()).exp())
}

/// Gauss-Legendre nodes and weights on `[a, b]`.
fn panel(rule: &GaussLegendre, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    rule.as_node_weight_pairs().iter().map(|&(x, w)| (mid + half * x, half * w)).collect()
}

#[derive(Clone)]
struct Node {
    y: Vec<f64>,
    w: f64,
    kernel: Jet,
}

/// Tensor grid on the unit ball's bounding cube; axes listed in `splits`
/// get two panels meeting at the given kernel coordinate.
fn tensor_nodes(rule: &GaussLegendre, n: usize, splits: &[Option<f64>], order: usize) -> Vec<Node> {
    let axes: Vec<Vec<(f64, f64)>> = (0..n)
        .map(|k| match splits.get(k).copied().flatten() {
            Some(c) => {
                let mut p = panel(rule, -1.0, c);
                p.extend(panel(rule, c, 1.0));
                p
            }
            None => panel(rule, -1.0, 1.0),
        })
        .collect();
    axes.iter()
        .multi_cartesian_product()
        .filter_map(|pts| {
            let y: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let w: f64 = pts.iter().map(|p| p.1).product();
            kernel_jet(&y, order).map(|kernel| Node { y, w, kernel })
        })
        .collect()
}

fn factorial_of(alpha: &[u8]) -> f64 {
    alpha.iter().map(|&a| (1..=a as usize).product::<usize>() as f64).product()
}

/// Splits `α` into `β` (derivatives on the coefficient, `|β| ≤ cap`) and
/// `γ` (derivatives on the kernel).
fn split(alpha: &[u8], cap: usize) -> (Vec<u8>, Vec<u8>) {
    let mut left = cap;
    let mut beta = vec![0u8; alpha.len()];
    for (b, &a) in beta.iter_mut().zip(alpha) {
        let take = (a as usize).min(left);
        *b = take as u8;
        left -= take;
    }
    let gamma = alpha.iter().zip(&beta).map(|(a, b)| a - b).collect();
    (beta, gamma)
}

/// `f^{(σ)}(x) = ∫ f(x − σy) φ(y) dy` for one coefficient map.
///
/// Derivatives of order `|α|` put up to `coeff_order` of them on `f`
/// (one-sided jets at kinks) and the remainder on the kernel, scaled by
/// `σ^{-|γ|}`. Kernel mass is normalized on the node set in use.
pub struct MollifiedField {
    source: Arc<dyn FieldSource>,
    sigma: f64,
    kinks: Vec<Kink>,
    coeff_order: usize,
    rule: GaussLegendre,
    nodes: Vec<Node>,
    kernel_order: usize,
}

impl fmt::Debug for MollifiedField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MollifiedField")
            .field("sigma", &self.sigma)
            .field("nodes", &self.nodes.len())
            .field("coeff_order", &self.coeff_order)
            .finish()
    }
}

impl MollifiedField {
    pub fn new(
        source: Arc<dyn FieldSource>,
        n: usize,
        sigma: f64,
        kinks: Vec<Kink>,
        coeff_order: usize,
        quad_order: usize,
        kernel_order: usize,
    ) -> Result<MollifiedField> {
        let q = NonZeroUsize::new(quad_order)
            .ok_or_else(|| Error::InvalidArgument("quadrature order must be positive".into()))?;
        let rule = GaussLegendre::new(q);
        let nodes = tensor_nodes(&rule, n, &[], kernel_order);
        Ok(MollifiedField { source, sigma, kinks, coeff_order, rule, nodes, kernel_order })
    }

    /// Kernel coordinates where a kink crosses the support around `x`.
    fn splits(&self, x: &[f64]) -> Vec<Option<f64>> {
        let mut out = vec![None; x.len()];
        for k in &self.kinks {
            let c = (x[k.axis] - k.at) / self.sigma;
            if c.abs() < 1.0 - 1e-12 {
                out[k.axis] = Some(c);
            }
        }
        out
    }

    fn with_nodes<T>(&self, x: &[f64], order: usize, f: impl FnOnce(&[Node]) -> T) -> T {
        let splits = self.splits(x);
        if splits.iter().all(Option::is_none) && order <= self.kernel_order {
            f(&self.nodes)
        } else {
            f(&tensor_nodes(&self.rule, x.len(), &splits, order.max(self.kernel_order)))
        }
    }

    fn point(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        x.iter().zip(y).map(|(a, b)| a - self.sigma * b).collect()
    }

    /// Kernel mass under the default node set, before normalization.
    pub fn kernel_mass(&self) -> f64 {
        self.nodes.iter().map(|nd| nd.w * nd.kernel.value()).sum()
    }
}

impl FieldSource for MollifiedField {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.with_nodes(x, 0, |nodes| {
            out.iter_mut().for_each(|o| *o = 0.0);
            let mut buf = vec![0.0; out.len()];
            let mut mass = 0.0;
            for nd in nodes {
                let wk = nd.w * nd.kernel.value();
                self.source.eval(&self.point(x, &nd.y), &mut buf);
                for (o, v) in out.iter_mut().zip(&buf) {
                    *o += wk * v;
                }
                mass += wk;
            }
            out.iter_mut().for_each(|o| *o /= mass);
        });
    }

    fn jets(&self, x: &[f64], order: usize) -> Result<Vec<Jet>> {
        let n = x.len();
        let b = basis(n, order);
        let f_order = order.min(self.coeff_order);
        let plan: Vec<(Vec<u8>, Vec<u8>, f64)> = b
            .exponents()
            .iter()
            .map(|alpha| {
                let (beta, gamma) = split(alpha, f_order);
                let g: i32 = gamma.iter().map(|&v| v as i32).sum();
                (beta, gamma, self.sigma.powi(-g) / factorial_of(alpha))
            })
            .collect();
        self.with_nodes(x, order, |nodes| {
            let mut acc = vec![vec![0.0; plan.len()]; n];
            let mut mass = 0.0;
            for nd in nodes {
                let fj = self.source.jets(&self.point(x, &nd.y), f_order)?;
                mass += nd.w * nd.kernel.value();
                for (a, (beta, gamma, _)) in plan.iter().enumerate() {
                    let kg = nd.w * nd.kernel.derivative(gamma);
                    if kg == 0.0 {
                        continue;
                    }
                    for (i, fi) in fj.iter().enumerate() {
                        acc[i][a] += kg * fi.derivative(beta);
                    }
                }
            }
            Ok(acc
                .into_iter()
                .map(|row| {
                    let coeffs = row.iter().zip(&plan).map(|(v, p)| v * p.2 / mass).collect();
                    Jet::from_coeffs(b.clone(), coeffs)
                })
                .collect())
        })
    }
}

/// `f_w` of a family as a coefficient map of its own.
#[derive(Debug)]
struct CommutatorSource {
    family: Arc<VectorFieldFamily>,
    word: Word,
}

impl FieldSource for CommutatorSource {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let v = eval_commutator(&self.family, &self.word, x).expect("commutator source evaluated outside its domain");
        out.copy_from_slice(&v);
    }

    fn jets(&self, x: &[f64], order: usize) -> Result<Vec<Jet>> {
        commutator_jets(&self.family, &self.word, x, order)
    }
}

/// A family with every coefficient replaced by its mollification.
#[derive(Debug, Clone)]
pub struct MollifiedFamily {
    base: Arc<VectorFieldFamily>,
    sigma: f64,
    quad_order: usize,
    family: Arc<VectorFieldFamily>,
    kernel_mass: f64,
}

impl MollifiedFamily {
    pub fn base(&self) -> &Arc<VectorFieldFamily> {
        &self.base
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order
    }

    /// The mollified fields `X_j^σ`, defined on the outer box shrunk by `σ`.
    pub fn family(&self) -> &Arc<VectorFieldFamily> {
        &self.family
    }

    /// Mass of the unnormalized kernel under the tensor rule (coefficients
    /// divide by it).
    pub fn kernel_mass(&self) -> f64 {
        self.kernel_mass
    }
}

/// Largest admissible `σ`: half the margin between the two boxes.
pub fn sigma_max(family: &VectorFieldFamily) -> f64 {
    0.5 * family.omega_inner().margin_inside(family.omega_outer())
}

fn check_sigma(family: &VectorFieldFamily, sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let s0 = sigma_max(family);
    if sigma > s0 {
        return Err(Error::Domain {
            point: vec![sigma],
            domain: format!("kernel support exceeds the outer box (sigma must be <= {s0})"),
        });
    }
    Ok(())
}

pub fn mollify_family(family: &VectorFieldFamily, sigma: f64, quad_order: usize) -> Result<MollifiedFamily> {
    check_sigma(family, sigma)?;
    let n = family.dim();
    let coeff_order = family.step().saturating_sub(1);
    let fields = (0..family.num_fields())
        .map(|j| {
            MollifiedField::new(
                family.source(j).clone(),
                n,
                sigma,
                family.kinks().to_vec(),
                coeff_order,
                quad_order,
                family.step(),
            )
            .map(|f| Arc::new(f) as Arc<dyn FieldSource>)
        })
        .collect::<Result<Vec<_>>>()?;
    let kernel_mass = MollifiedField::new(family.source(0).clone(), n, sigma, vec![], 0, quad_order, 0)?.kernel_mass();
    let mollified = family.with_sources(
        format!("{}^sigma={sigma}", family.name()),
        fields,
        family.omega_outer().shrink(sigma),
    );
    Ok(MollifiedFamily {
        base: Arc::new(family.clone()),
        sigma,
        quad_order,
        family: Arc::new(mollified),
        kernel_mass,
    })
}

/// `f_w^σ(x)`: the bracket of the mollified fields.
pub fn mollified_commutator(mfamily: &MollifiedFamily, word: &Word, x: &[f64]) -> Result<Vec<f64>> {
    eval_commutator(&mfamily.family, word, x)
}

/// `(f_w)^{(σ)}`: the mollification of the bracket, as a coefficient map.
pub fn mollified_bracket_field(
    family: &VectorFieldFamily,
    word: &Word,
    sigma: f64,
    quad_order: usize,
) -> Result<MollifiedField> {
    check_sigma(family, sigma)?;
    let src = CommutatorSource { family: Arc::new(family.clone()), word: word.clone() };
    MollifiedField::new(Arc::new(src), family.dim(), sigma, family.kinks().to_vec(), 0, quad_order, 0)
}

/// `(f_w)^{(σ)}(x)`.
pub fn mollified_bracket(family: &VectorFieldFamily, word: &Word, sigma: f64, quad_order: usize, x: &[f64]) -> Result<Vec<f64>> {
    let field = mollified_bracket_field(family, word, sigma, quad_order)?;
    family.check_outer(x)?;
    let mut out = vec![0.0; family.dim()];
    field.eval(x, &mut out);
    Ok(out)
}

/// Differences below this (relative to the coefficient size) count as
/// quadrature noise.
const EXACT_NOISE: f64 = 1e-9;

/// `(σ, sup_grid |f_w^σ − f_w|, sup_grid |f_w^σ − (f_w)^{(σ)}|)` per `σ`.
pub fn convergence_sups(
    family: &VectorFieldFamily,
    word: &Word,
    sigma_list: &[f64],
    grid: &[Vec<f64>],
    quad_order: usize,
) -> Result<Vec<(f64, f64, f64)>> {
    let exact: Vec<Vec<f64>> = grid.iter().map(|x| eval_commutator(family, word, x)).collect::<Result<_>>()?;
    sigma_list
        .iter()
        .map(|&sigma| {
            let mf = mollify_family(family, sigma, quad_order)?;
            let bracket = mollified_bracket_field(family, word, sigma, quad_order)?;
            let diffs: Vec<(f64, f64)> = grid
                .par_iter()
                .zip(&exact)
                .map(|(x, fw)| -> Result<(f64, f64)> {
                    let fs = mollified_commutator(&mf, word, x)?;
                    let mut mb = vec![0.0; x.len()];
                    bracket.eval(x, &mut mb);
                    Ok((dist2(&fs, fw), dist2(&fs, &mb)))
                })
                .collect::<Result<_>>()?;
            let sup = diffs.iter().fold(0.0f64, |m, d| m.max(d.0));
            let sup_b = diffs.iter().fold(0.0f64, |m, d| m.max(d.1));
            Ok((sigma, sup, sup_b))
        })
        .collect()
}

/// Reports `sup_grid |f_w^σ − f_w|` for each `σ`, the fitted log-log slope,
/// and `sup_grid |f_w^σ − (f_w)^{(σ)}|` with its ratio to `σ`.
///
/// Passes when the differences are at the noise level, when only one `σ`
/// is given, or when the fitted slope is at least 0.9.
pub fn convergence_check(
    family: &VectorFieldFamily,
    word: &Word,
    sigma_list: &[f64],
    grid: &[Vec<f64>],
    quad_order: usize,
) -> Result<VerificationReport> {
    if sigma_list.is_empty() {
        return Err(Error::InvalidArgument("sigma list is empty".into()));
    }
    let mut report = VerificationReport::new(format!("mollify convergence {} w={word}", family.name()));
    report.metric("quad_order", quad_order as f64);
    let scale = grid
        .iter()
        .map(|x| eval_commutator(family, word, x))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let rows = convergence_sups(family, word, sigma_list, grid, quad_order)?;
    let mut table = Table::new(&["sigma", "sup_diff", "sup_bracket_vs_mollified"]);
    let mut bracket_c = 0.0f64;
    let mut sups = Vec::with_capacity(rows.len());
    for &(sigma, sup, sup_b) in &rows {
        bracket_c = bracket_c.max(sup_b / sigma);
        table.push(vec![fmt_num(sigma), fmt_num(sup), fmt_num(sup_b)]);
        sups.push(sup);
    }
    report.metric("bracket_vs_mollified_c", bracket_c);
    let noise = EXACT_NOISE * (1.0 + scale);
    if sups.iter().all(|&v| v <= noise) {
        report.note("exact within noise; slope check skipped");
    } else if sigma_list.len() < 2 {
        report.metric("sup_diff", sups[0]);
        report.note("single sigma; no slope fitted");
    } else {
        let (slope, c) = power_law_fit(sigma_list, &sups);
        report.metric("slope", slope);
        report.metric("constant", c);
        report.require(slope >= 0.9, format!("convergence slope {slope:.3} is below 0.9"));
    }
    report.table = Some(table);
    Ok(report)
}

/// Reports `max_grid |X_k^σ f_w^σ|` over the top-length table words for
/// each `σ`. Passes unless the value at the smallest `σ` exceeds the value
/// one decade above it by 10% or more.
pub fn uniform_bound_check(
    family: &VectorFieldFamily,
    sigma_list: &[f64],
    grid: &[Vec<f64>],
    quad_order: usize,
) -> Result<VerificationReport> {
    let mut report = VerificationReport::new(format!("mollify uniform bound {}", family.name()));
    let table = build_table(Arc::new(family.clone()));
    let s = family.step();
    let words: Vec<Word> =
        (0..table.len()).filter(|&i| table.weight(i) == s).map(|i| table.word(i).clone()).collect();
    let mut maxima = Vec::with_capacity(sigma_list.len());
    let mut out = Table::new(&["sigma", "max_horizontal_derivative"]);
    for &sigma in sigma_list {
        let mf = mollify_family(family, sigma, quad_order)?;
        let vals: Vec<f64> = grid
            .par_iter()
            .map(|x| -> Result<f64> {
                let mut best = 0.0f64;
                for w in &words {
                    for k in 1..=family.num_fields() {
                        let v = horizontal_derivative(&mf.family, k, w, x)?;
                        best = best.max(v.iter().fold(0.0f64, |m, c| m.max(c.abs())));
                    }
                }
                Ok(best)
            })
            .collect::<Result<_>>()?;
        let m = vals.into_iter().fold(0.0f64, f64::max);
        out.push(vec![fmt_num(sigma), fmt_num(m)]);
        maxima.push((sigma, m));
    }
    let bound = maxima.iter().fold(0.0f64, |a, p| a.max(p.1));
    report.metric("bound", bound);
    let mut sorted = maxima.clone();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite sigma"));
    if let Some(&(s_min, m_min)) = sorted.first() {
        let reference = sorted
            .iter()
            .filter(|p| p.0 >= 10.0 * s_min * (1.0 - 1e-9))
            .min_by(|a, b| a.0.partial_cmp(&b.0).expect("finite sigma"))
            .or(sorted.last())
            .copied();
        if let Some((_, m_ref)) = reference {
            let noise = EXACT_NOISE * (1.0 + bound);
            let growth = if m_min <= noise {
                0.0
            } else if m_ref > noise {
                m_min / m_ref - 1.0
            } else {
                f64::INFINITY
            };
            report.metric("last_decade_growth", growth);
            report.require(growth < 0.1, format!("bound grows by {:.1}% over the last decade", 100.0 * growth));
        }
    }
    report.table = Some(out);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::builtin_family;

    fn word(s: &str) -> Word {
        Word::parse(s).unwrap()
    }

    #[test]
    fn kernel_mass_is_stable_in_the_order() {
        let g = builtin_family("grushin").unwrap();
        let a = mollify_family(&g, 0.1, 32).unwrap().kernel_mass();
        let b = mollify_family(&g, 0.1, 64).unwrap().kernel_mass();
        assert!((a - b).abs() <= 1e-5 * b, "{a} {b}");
        let mf = mollify_family(&g, 0.1, 32).unwrap();
        let mut out = [0.0; 2];
        mf.family().eval_field(0, &[0.2, 0.1], &mut out);
        assert!((out[0] - 1.0).abs() < 1e-14 && out[1] == 0.0);
    }

    #[test]
    fn affine_fields_are_unchanged() {
        let g = builtin_family("grushin").unwrap();
        let mf = mollify_family(&g, 0.2, 16).unwrap();
        let mut out = [0.0; 2];
        mf.family().eval_field(1, &[0.3, -0.4], &mut out);
        assert!((out[0]).abs() < 1e-14 && (out[1] - 0.3).abs() < 1e-14, "{out:?}");
        let c = mollified_commutator(&mf, &word("(1,2)"), &[0.3, -0.4]).unwrap();
        assert!((c[1] - 1.0).abs() < 1e-12, "{c:?}");
    }

    #[test]
    fn kink_is_invisible_away_from_support() {
        let f = builtin_family("nonsmooth_step2").unwrap();
        let mf = mollify_family(&f, 0.01, 32).unwrap();
        let c = mollified_commutator(&mf, &word("(1,2)"), &[0.3, 0.1]).unwrap();
        assert!((c[1] - 1.6).abs() < 1e-12, "{c:?}");
    }

    #[test]
    fn sigma_beyond_margin_is_rejected() {
        let f = builtin_family("nonsmooth_step2").unwrap();
        assert!(matches!(mollify_family(&f, 0.6, 8), Err(Error::Domain { .. })));
        assert!(mollify_family(&f, 0.5, 8).is_ok());
    }
}
