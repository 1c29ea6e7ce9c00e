//! Finite-difference derivatives: the fallback for coefficient maps given only
//! as values, and an independent oracle for the jet-based brackets.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::jet::{basis, Jet};

use super::{FieldSource, Kink, VectorFieldFamily, Word};

type Coeffs = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Step used for first derivatives: `max(1e-6, 1e-6 |x_k|)`.
fn first_step(v: f64) -> f64 {
    (1e-6 * v.abs()).max(1e-6)
}

fn straddles(kinks: &[Kink], axis: usize, v: f64, h: f64) -> bool {
    kinks.iter().any(|k| k.axis == axis && (k.at - v).abs() < 2.0 * h)
}

/// `∂_axis g(x)`: central differences, or a second-order forward stencil when
/// a kink hyperplane lies inside the central stencil.
fn partial<F: Fn(&[f64]) -> Vec<f64> + ?Sized>(g: &F, x: &[f64], axis: usize, h: f64, kinks: &[Kink]) -> Vec<f64> {
    let mut p = x.to_vec();
    if straddles(kinks, axis, x[axis], h) {
        let f0 = g(x);
        p[axis] = x[axis] + h;
        let f1 = g(&p);
        p[axis] = x[axis] + 2.0 * h;
        let f2 = g(&p);
        return (0..f0.len()).map(|i| (-3.0 * f0[i] + 4.0 * f1[i] - f2[i]) / (2.0 * h)).collect();
    }
    p[axis] = x[axis] + h;
    let fp = g(&p);
    p[axis] = x[axis] - h;
    let fm = g(&p);
    fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
}

/// Columns `∂_k g(x)` of the Jacobian of `g`, with the standard step.
pub fn fd_jacobian<F: Fn(&[f64]) -> Vec<f64> + ?Sized>(g: &F, x: &[f64], kinks: &[Kink]) -> Vec<Vec<f64>> {
    (0..x.len()).map(|k| partial(g, x, k, first_step(x[k]), kinks)).collect()
}

/// Coefficient map known only through its values.
pub struct ClosureField {
    f: Arc<Coeffs>,
    kinks: Vec<Kink>,
}

impl fmt::Debug for ClosureField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosureField").field("kinks", &self.kinks).finish()
    }
}

impl ClosureField {
    pub fn new(f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> ClosureField {
        ClosureField { f: Arc::new(f), kinks: Vec::new() }
    }

    pub fn with_kinks(mut self, kinks: Vec<Kink>) -> ClosureField {
        self.kinks = kinks;
        self
    }
}

impl FieldSource for ClosureField {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&(self.f)(x));
    }

    /// Jets up to order 2 from difference quotients; second derivatives use a
    /// larger step `1e-4` to keep cancellation noise near `1e-8`.
    fn jets(&self, x: &[f64], order: usize) -> Result<Vec<Jet>> {
        if order > 2 {
            return Err(Error::InvalidArgument(format!(
                "finite-difference fields provide jets up to order 2, {order} requested"
            )));
        }
        let n = x.len();
        let b = basis(n, order);
        let f0 = (self.f)(x);
        let mut coeffs = vec![vec![0.0; b.len()]; f0.len()];
        for (c, v) in coeffs.iter_mut().zip(&f0) {
            c[0] = *v;
        }
        if order >= 1 {
            for (k, col) in fd_jacobian(&*self.f, x, &self.kinks).into_iter().enumerate() {
                let mut e = vec![0u8; n];
                e[k] = 1;
                let idx = b.index_of(&e).expect("first-order monomial");
                for (c, v) in coeffs.iter_mut().zip(col) {
                    c[idx] = v;
                }
            }
        }
        if order >= 2 {
            let h = 1e-4;
            for k in 0..n {
                let dk = |y: &[f64]| partial(&*self.f, y, k, first_step(y[k]), &self.kinks);
                for l in k..n {
                    let second = partial(&dk, x, l, h, &self.kinks);
                    let mut e = vec![0u8; n];
                    e[k] += 1;
                    e[l] += 1;
                    let idx = b.index_of(&e).expect("second-order monomial");
                    // Taylor coefficient of x_k² is ∂_kk / 2; mixed terms appear once.
                    let scale = if k == l { 0.5 } else { 1.0 };
                    for (c, v) in coeffs.iter_mut().zip(second) {
                        c[idx] = scale * v;
                    }
                }
            }
        }
        Ok(coeffs.into_iter().map(|c| Jet::from_coeffs(b.clone(), c)).collect())
    }
}

/// Bracket coefficients computed only from values of the fields, by nested
/// finite differences. Independent of the jet machinery; accurate to roughly
/// `1e-6` for words of length 2 and `1e-4` for length 3.
pub fn fd_commutator(family: &VectorFieldFamily, word: &Word, x: &[f64]) -> Vec<f64> {
    let letters = word.letters();
    let field = |j: usize, y: &[f64]| {
        let mut out = vec![0.0; family.dim()];
        family.eval_field(j - 1, y, &mut out);
        out
    };
    if letters.len() == 1 {
        return field(letters[0], x);
    }
    let inner = Word::new(letters[1..].to_vec()).expect("nonempty tail");
    let k = letters[0];
    let depth = inner.len();
    let h = [1e-5, 1e-3, 1e-2, 3e-2][depth.min(4) - 1];
    let kinks = family.kinks();
    let fw = |y: &[f64]| fd_commutator(family, &inner, y);
    let fk = |y: &[f64]| field(k, y);
    let fw_x = fw(x);
    let fk_x = fk(x);
    let n = family.dim();
    let mut out = vec![0.0; n];
    for a in 0..n {
        let dfw = partial(&fw, x, a, h, kinks);
        let dfk = partial(&fk, x, a, 1e-6, kinks);
        for i in 0..n {
            out[i] += dfw[i] * fk_x[a] - dfk[i] * fw_x[a];
        }
    }
    out
}
