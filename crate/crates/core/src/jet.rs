//! Truncated multivariate Taylor polynomials ("jets").
//!
//! A [`Jet`] of order `p` in `n` variables stores the normalized Taylor
//! coefficients `D^α f(x₀) / α!` for every multi-index with `|α| ≤ p`.
//! Arithmetic on jets is forward-mode automatic differentiation to arbitrary
//! order, which is what bracket recursion needs: the coefficients of a
//! length-ℓ commutator depend on derivatives of order ℓ−1 of the fields.
//!
//! Monomials are stored in graded order, and the ordering inside a degree does
//! not depend on the truncation order, so the basis of order `p−1` is a prefix
//! of the basis of order `p`. Mixed-order arithmetic therefore truncates for
//! free by using the shorter basis.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

/// Monomial table for `nvars` variables up to total degree `order`.
pub struct Basis {
    nvars: usize,
    order: usize,
    exps: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    /// `(i, j, k)`: monomial i times monomial j is monomial k.
    mul: Vec<(u32, u32, u32)>,
    /// Per variable: `(src, dst, factor)` so that `∂_v x^src = factor · x^dst`.
    deriv: Vec<Vec<(u32, u32, f64)>>,
    lower: Option<Arc<Basis>>,
}

impl fmt::Debug for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Basis")
            .field("nvars", &self.nvars)
            .field("order", &self.order)
            .field("len", &self.exps.len())
            .finish()
    }
}

fn monomials_of_degree(nvars: usize, degree: usize) -> Vec<Vec<u8>> {
    if nvars == 0 {
        return if degree == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in (0..=degree).rev() {
        for mut rest in monomials_of_degree(nvars - 1, degree - first) {
            let mut e = vec![first as u8];
            e.append(&mut rest);
            out.push(e);
        }
    }
    out
}

impl Basis {
    fn build(nvars: usize, order: usize, lower: Option<Arc<Basis>>) -> Basis {
        let mut exps = Vec::new();
        for d in 0..=order {
            exps.extend(monomials_of_degree(nvars, d));
        }
        let index: HashMap<Vec<u8>, usize> =
            exps.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        let degree = |e: &[u8]| e.iter().map(|&v| v as usize).sum::<usize>();
        let mut mul = Vec::new();
        for (i, a) in exps.iter().enumerate() {
            let da = degree(a);
            for (j, b) in exps.iter().enumerate() {
                if da + degree(b) > order {
                    continue;
                }
                let prod: Vec<u8> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                mul.push((i as u32, j as u32, index[&prod] as u32));
            }
        }
        let mut deriv = vec![Vec::new(); nvars];
        for (v, table) in deriv.iter_mut().enumerate() {
            for (i, e) in exps.iter().enumerate() {
                if e[v] == 0 {
                    continue;
                }
                let mut d = e.clone();
                d[v] -= 1;
                // Lower-degree monomials sit in the prefix shared with the lower basis.
                table.push((i as u32, index[&d] as u32, e[v] as f64));
            }
        }
        Basis { nvars, order, exps, index, mul, deriv, lower }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u8>] {
        &self.exps
    }

    pub fn index_of(&self, exps: &[u8]) -> Option<usize> {
        self.index.get(exps).copied()
    }
}

/// Shared, cached basis for `(nvars, order)`.
pub fn basis(nvars: usize, order: usize) -> Arc<Basis> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Basis>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(b) = cache.lock().expect("jet basis cache poisoned").get(&(nvars, order)) {
        return b.clone();
    }
    let lower = if order > 0 { Some(basis(nvars, order - 1)) } else { None };
    let built = Arc::new(Basis::build(nvars, order, lower));
    cache
        .lock()
        .expect("jet basis cache poisoned")
        .entry((nvars, order))
        .or_insert(built)
        .clone()
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// Truncated Taylor polynomial in displacement variables around a base point.
#[derive(Clone)]
pub struct Jet {
    basis: Arc<Basis>,
    coeffs: Vec<f64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Jet(n={}, p={}, {:?})", self.basis.nvars, self.basis.order, self.coeffs)
    }
}

impl Jet {
    pub fn constant(basis: Arc<Basis>, value: f64) -> Jet {
        let mut coeffs = vec![0.0; basis.len()];
        coeffs[0] = value;
        Jet { basis, coeffs }
    }

    /// The coordinate function `x_var` expanded at a point where it equals `value`.
    pub fn variable(basis: Arc<Basis>, var: usize, value: f64) -> Jet {
        let mut jet = Jet::constant(basis, value);
        if jet.basis.order > 0 {
            let mut e = vec![0u8; jet.basis.nvars];
            e[var] = 1;
            let k = jet.basis.index[&e];
            jet.coeffs[k] = 1.0;
        }
        jet
    }

    pub fn from_coeffs(basis: Arc<Basis>, coeffs: Vec<f64>) -> Jet {
        assert_eq!(basis.len(), coeffs.len(), "coefficient count does not match basis");
        Jet { basis, coeffs }
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn order(&self) -> usize {
        self.basis.order
    }

    pub fn nvars(&self) -> usize {
        self.basis.nvars
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Normalized Taylor coefficient of `x^α`.
    pub fn coeff(&self, alpha: &[u8]) -> f64 {
        self.basis.index_of(alpha).map_or(0.0, |k| self.coeffs[k])
    }

    /// Partial derivative `D^α f(x₀)`.
    pub fn derivative(&self, alpha: &[u8]) -> f64 {
        let scale: f64 = alpha.iter().map(|&a| factorial(a as usize)).product();
        self.coeff(alpha) * scale
    }

    /// Gradient at the base point; requires order ≥ 1.
    pub fn gradient(&self) -> Vec<f64> {
        (0..self.basis.nvars)
            .map(|v| {
                let mut e = vec![0u8; self.basis.nvars];
                e[v] = 1;
                self.coeff(&e)
            })
            .collect()
    }

    /// Truncates to a lower order (no-op if already at or below it).
    pub fn truncate(&self, order: usize) -> Jet {
        if order >= self.basis.order {
            return self.clone();
        }
        let b = basis(self.basis.nvars, order);
        let coeffs = self.coeffs[..b.len()].to_vec();
        Jet { basis: b, coeffs }
    }

    /// `∂_var` of the polynomial; the result has order one less.
    ///
    /// Panics on an order-0 jet: the derivative information is not there.
    pub fn partial(&self, var: usize) -> Jet {
        let lower = self
            .basis
            .lower
            .clone()
            .expect("partial derivative of an order-0 jet");
        let mut coeffs = vec![0.0; lower.len()];
        for &(src, dst, factor) in &self.basis.deriv[var] {
            coeffs[dst as usize] += factor * self.coeffs[src as usize];
        }
        Jet { basis: lower, coeffs }
    }

    fn min_basis(&self, other: &Jet) -> Arc<Basis> {
        debug_assert_eq!(self.basis.nvars, other.basis.nvars);
        if self.basis.order <= other.basis.order {
            self.basis.clone()
        } else {
            other.basis.clone()
        }
    }

    pub fn scale(&self, k: f64) -> Jet {
        Jet {
            basis: self.basis.clone(),
            coeffs: self.coeffs.iter().map(|c| c * k).collect(),
        }
    }

    pub fn add_scalar(&self, k: f64) -> Jet {
        let mut out = self.clone();
        out.coeffs[0] += k;
        out
    }

    /// `f(self)` for a univariate `f` with `derivs[k] = f^{(k)}(self.value())`.
    pub fn compose(&self, derivs: &[f64]) -> Jet {
        let p = self.basis.order;
        debug_assert!(derivs.len() > p);
        let mut delta = self.clone();
        delta.coeffs[0] = 0.0;
        // Horner in the nilpotent displacement.
        let mut acc = Jet::constant(self.basis.clone(), derivs[p] / factorial(p));
        for k in (0..p).rev() {
            acc = &acc * &delta;
            acc.coeffs[0] += derivs[k] / factorial(k);
        }
        acc
    }

    pub fn powi(&self, e: i32) -> Jet {
        if e >= 0 {
            let mut out = Jet::constant(self.basis.clone(), 1.0);
            let mut base = self.clone();
            let mut k = e as u32;
            while k > 0 {
                if k & 1 == 1 {
                    out = &out * &base;
                }
                base = &base * &base;
                k >>= 1;
            }
            out
        } else {
            self.recip().powi(-e)
        }
    }

    /// Real power; the base value must be positive unless `e` is a
    /// nonnegative integer.
    pub fn powf(&self, e: f64) -> Jet {
        if e.fract() == 0.0 && e.abs() < i32::MAX as f64 {
            return self.powi(e as i32);
        }
        let v = self.value();
        let p = self.basis.order;
        let mut derivs = Vec::with_capacity(p + 1);
        let mut falling = 1.0;
        for k in 0..=p {
            derivs.push(falling * v.powf(e - k as f64));
            falling *= e - k as f64;
        }
        self.compose(&derivs)
    }

    pub fn recip(&self) -> Jet {
        let v = self.value();
        let p = self.basis.order;
        let mut derivs = Vec::with_capacity(p + 1);
        let mut c = 1.0;
        for k in 0..=p {
            derivs.push(c / v.powi(k as i32 + 1));
            c *= -((k + 1) as f64);
        }
        self.compose(&derivs)
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    pub fn exp(&self) -> Jet {
        let ev = self.value().exp();
        self.compose(&vec![ev; self.basis.order + 1])
    }

    pub fn ln(&self) -> Jet {
        let v = self.value();
        let p = self.basis.order;
        let mut derivs = vec![v.ln()];
        for k in 1..=p {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            derivs.push(sign * factorial(k - 1) / v.powi(k as i32));
        }
        self.compose(&derivs)
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [s, c, -s, -c];
        self.compose(&(0..=self.basis.order).map(|k| cycle[k % 4]).collect::<Vec<_>>())
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [c, -s, -c, s];
        self.compose(&(0..=self.basis.order).map(|k| cycle[k % 4]).collect::<Vec<_>>())
    }

    /// `|·|` with the right-sided convention at zero: the jet of the branch
    /// valid on `[0, ε)`. Derivatives across a kink are one-sided.
    pub fn abs(&self) -> Jet {
        if self.value() < 0.0 {
            -self
        } else {
            self.clone()
        }
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        let basis = self.min_basis(rhs);
        let coeffs = (0..basis.len()).map(|k| self.coeffs[k] + rhs.coeffs[k]).collect();
        Jet { basis, coeffs }
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        let basis = self.min_basis(rhs);
        let coeffs = (0..basis.len()).map(|k| self.coeffs[k] - rhs.coeffs[k]).collect();
        Jet { basis, coeffs }
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        let basis = self.min_basis(rhs);
        let mut coeffs = vec![0.0; basis.len()];
        for &(i, j, k) in &basis.mul {
            coeffs[k as usize] += self.coeffs[i as usize] * rhs.coeffs[j as usize];
        }
        Jet { basis, coeffs }
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        &self + &rhs
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        &self - &rhs
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        &self * &rhs
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

/// Jets of the coordinate functions at `x`, one per variable.
pub fn coordinate_jets(x: &[f64], order: usize) -> Vec<Jet> {
    let b = basis(x.len(), order);
    x.iter()
        .enumerate()
        .map(|(i, &v)| Jet::variable(b.clone(), i, v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_basis_is_a_prefix() {
        let hi = basis(3, 4);
        let lo = basis(3, 2);
        assert_eq!(&hi.exponents()[..lo.len()], lo.exponents());
        assert_eq!(hi.len(), 35);
    }

    #[test]
    fn product_and_partials_of_polynomial() {
        // f = x²y + 3y at (2, -1): ∂x f = 2xy = -4, ∂y f = x² + 3 = 7, ∂xx f = 2y = -2
        let v = coordinate_jets(&[2.0, -1.0], 3);
        let f = &(&(&v[0] * &v[0]) * &v[1]) + &v[1].scale(3.0);
        assert_eq!(f.value(), -7.0);
        assert_eq!(f.derivative(&[1, 0]), -4.0);
        assert_eq!(f.derivative(&[0, 1]), 7.0);
        assert_eq!(f.derivative(&[2, 0]), -2.0);
        assert_eq!(f.derivative(&[2, 1]), 2.0);
        assert_eq!(f.derivative(&[0, 2]), 0.0);
        let fx = f.partial(0);
        assert_eq!(fx.order(), 2);
        assert_eq!(fx.value(), -4.0);
        assert_eq!(fx.derivative(&[0, 1]), 4.0);
    }

    #[test]
    fn transcendental_derivatives_match_closed_forms() {
        let x = coordinate_jets(&[0.7], 4);
        let e = x[0].exp();
        for k in 0..=4u8 {
            assert!((e.derivative(&[k]) - 0.7f64.exp()).abs() < 1e-12);
        }
        let s = x[0].sin();
        assert!((s.derivative(&[3]) + 0.7f64.cos()).abs() < 1e-12);
        let l = x[0].ln();
        assert!((l.derivative(&[2]) + 1.0 / 0.49).abs() < 1e-12);
        let r = x[0].powf(1.5);
        assert!((r.derivative(&[2]) - 0.75 / 0.7f64.sqrt()).abs() < 1e-12);
        let q = x[0].recip();
        assert!((q.derivative(&[3]) + 6.0 / 0.7f64.powi(4)).abs() < 1e-9);
    }

    #[test]
    fn abs_is_right_sided_at_zero() {
        let x = coordinate_jets(&[0.0], 2);
        let f = &x[0] * &x[0].abs();
        assert_eq!(f.derivative(&[1]), 0.0);
        assert_eq!(f.derivative(&[2]), 2.0);
        let y = coordinate_jets(&[-0.5], 2);
        let g = &y[0] * &y[0].abs();
        assert_eq!(g.derivative(&[1]), 1.0);
        assert_eq!(g.derivative(&[2]), -2.0);
    }

    #[test]
    fn mixed_order_arithmetic_truncates() {
        let a = coordinate_jets(&[1.0, 2.0], 3);
        let b = coordinate_jets(&[1.0, 2.0], 1);
        let p = &a[0] * &b[1];
        assert_eq!(p.order(), 1);
        assert_eq!(p.value(), 2.0);
        assert_eq!(p.gradient(), vec![2.0, 1.0]);
    }
}
