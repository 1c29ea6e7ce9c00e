//! Vector field families, their commutators, and built-in examples.

mod builtins;
mod commutator;
pub mod config;
mod constants;
mod fd;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::jet::{coordinate_jets, Jet};

pub use builtins::{builtin_family, builtin_family_with, BUILTIN_NAMES};
pub use commutator::{
    build_table, build_table_full, commutator_jets, eval_commutator, horizontal_derivative,
    CommutatorTable, TableEntry, Word,
};
pub use constants::{estimate_constants, RegularityConstants};
pub use fd::{fd_commutator, fd_jacobian, ClosureField};

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<BoxDomain> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidFamily("box bounds must have equal nonzero length".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidFamily(format!("empty box {lo:?}..{hi:?}")));
        }
        Ok(BoxDomain { lo, hi })
    }

    pub fn cube(dim: usize, half_width: f64) -> BoxDomain {
        BoxDomain { lo: vec![-half_width; dim], hi: vec![half_width; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        const SLACK: f64 = 1e-12;
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *v >= a - SLACK && *v <= b + SLACK)
    }

    /// Smallest gap between this box and an enclosing one.
    pub fn margin_inside(&self, outer: &BoxDomain) -> f64 {
        (0..self.dim())
            .map(|k| (self.lo[k] - outer.lo[k]).min(outer.hi[k] - self.hi[k]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn shrink(&self, by: f64) -> BoxDomain {
        BoxDomain {
            lo: self.lo.iter().map(|v| v + by).collect(),
            hi: self.hi.iter().map(|v| v - by).collect(),
        }
    }

    /// Tensor grid with `per_axis` points per axis, endpoints included.
    pub fn grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let per_axis = per_axis.max(1);
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|k| {
                if per_axis == 1 {
                    return vec![0.5 * (self.lo[k] + self.hi[k])];
                }
                (0..per_axis)
                    .map(|i| {
                        let t = i as f64 / (per_axis - 1) as f64;
                        // symmetric in t so centered boxes hit 0 exactly for odd counts
                        0.5 * (self.lo[k] + self.hi[k]) + (t - 0.5) * (self.hi[k] - self.lo[k])
                    })
                    .collect()
            })
            .collect();
        let mut out = vec![Vec::with_capacity(self.dim())];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        out
    }
}

impl fmt::Display for BoxDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> =
            self.lo.iter().zip(&self.hi).map(|(a, b)| format!("[{a}, {b}]")).collect();
        write!(f, "{}", parts.join(" x "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    Smooth,
    /// Coefficients with Lipschitz kinks (the `A_s` class); derivative
    /// oracles become one-sided on the kink set.
    #[serde(rename = "a_s")]
    As,
}

/// Hyperplane `x_axis = at` across which a coefficient has a kink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kink {
    pub axis: usize,
    pub at: f64,
}

/// One coefficient map `f_j : ℝⁿ → ℝⁿ`.
pub trait FieldSource: Send + Sync + fmt::Debug {
    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// Taylor jets of every component at `x`, truncated at `order`.
    fn jets(&self, x: &[f64], order: usize) -> Result<Vec<Jet>>;
}

/// Coefficients given by expressions; jets come from automatic differentiation.
#[derive(Debug, Clone)]
pub struct ExprField {
    comps: Vec<Expr>,
}

impl ExprField {
    pub fn new(comps: Vec<Expr>) -> ExprField {
        ExprField { comps }
    }

    pub fn parse(srcs: &[&str]) -> Result<ExprField> {
        let n = srcs.len();
        Ok(ExprField { comps: srcs.iter().map(|s| Expr::parse(s, n)).collect::<Result<_>>()? })
    }

    pub fn components(&self) -> &[Expr] {
        &self.comps
    }
}

impl FieldSource for ExprField {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.comps) {
            *o = e.eval(x);
        }
    }

    fn jets(&self, x: &[f64], order: usize) -> Result<Vec<Jet>> {
        let vars = coordinate_jets(x, order);
        Ok(self.comps.iter().map(|e| e.eval_jet(&vars)).collect())
    }
}

/// A family `X_1 … X_m` of vector fields on ℝⁿ together with its domains.
#[derive(Clone)]
pub struct VectorFieldFamily {
    name: String,
    dim: usize,
    step: usize,
    fields: Vec<Arc<dyn FieldSource>>,
    omega_inner: BoxDomain,
    omega_outer: BoxDomain,
    smoothness: Smoothness,
    kinks: Vec<Kink>,
    sup_norms: Vec<f64>,
    coord_speed: Vec<f64>,
}

impl fmt::Debug for VectorFieldFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldFamily")
            .field("name", &self.name)
            .field("n", &self.dim)
            .field("m", &self.fields.len())
            .field("s", &self.step)
            .field("omega_inner", &self.omega_inner)
            .field("omega_outer", &self.omega_outer)
            .finish()
    }
}

/// Sample points used to bound `|f_j|` on the outer box.
fn bound_samples(outer: &BoxDomain) -> Vec<Vec<f64>> {
    let per_axis = match outer.dim() {
        1 | 2 => 33,
        3 => 13,
        _ => 7,
    };
    outer.grid(per_axis)
}

impl VectorFieldFamily {
    pub fn new(
        name: impl Into<String>,
        step: usize,
        fields: Vec<Arc<dyn FieldSource>>,
        omega_inner: BoxDomain,
        omega_outer: BoxDomain,
        smoothness: Smoothness,
    ) -> Result<VectorFieldFamily> {
        let dim = omega_outer.dim();
        if fields.is_empty() {
            return Err(Error::InvalidFamily("at least one field is required".into()));
        }
        if step < 2 {
            return Err(Error::InvalidFamily(format!("step must be >= 2, got {step}")));
        }
        if omega_inner.dim() != dim {
            return Err(Error::InvalidFamily("inner and outer boxes differ in dimension".into()));
        }
        if omega_inner.margin_inside(&omega_outer) <= 0.0 {
            return Err(Error::InvalidFamily(format!(
                "inner box {omega_inner} is not strictly inside outer box {omega_outer}"
            )));
        }
        let mut sup_norms = vec![0.0f64; fields.len()];
        let mut coord_speed = vec![0.0f64; dim];
        let mut per_field_coord = vec![vec![0.0f64; dim]; fields.len()];
        let mut buf = vec![0.0; dim];
        for p in bound_samples(&omega_outer) {
            for (j, f) in fields.iter().enumerate() {
                f.eval(&p, &mut buf);
                if buf.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidFamily(format!(
                        "field {} is not finite at {p:?}",
                        j + 1
                    )));
                }
                sup_norms[j] = sup_norms[j].max(crate::linalg::norm2(&buf));
                for k in 0..dim {
                    per_field_coord[j][k] = per_field_coord[j][k].max(buf[k].abs());
                }
            }
        }
        for row in &per_field_coord {
            for k in 0..dim {
                coord_speed[k] += row[k];
            }
        }
        Ok(VectorFieldFamily {
            name: name.into(),
            dim,
            step,
            fields,
            omega_inner,
            omega_outer,
            smoothness,
            kinks: Vec::new(),
            sup_norms,
            coord_speed,
        })
    }

    pub fn with_kinks(mut self, kinks: Vec<Kink>) -> VectorFieldFamily {
        self.kinks = kinks;
        self
    }

    /// Same family with the field sources replaced, keeping the sampled
    /// bounds of the original (used by mollification, which cannot increase
    /// a sup norm).
    pub(crate) fn with_sources(
        &self,
        name: String,
        fields: Vec<Arc<dyn FieldSource>>,
        omega_outer: BoxDomain,
    ) -> VectorFieldFamily {
        VectorFieldFamily {
            name,
            fields,
            omega_outer,
            smoothness: Smoothness::Smooth,
            kinks: Vec::new(),
            ..self.clone()
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn omega_inner(&self) -> &BoxDomain {
        &self.omega_inner
    }

    pub fn omega_outer(&self) -> &BoxDomain {
        &self.omega_outer
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn kinks(&self) -> &[Kink] {
        &self.kinks
    }

    pub fn source(&self, j: usize) -> &Arc<dyn FieldSource> {
        &self.fields[j]
    }

    /// Sampled `sup_Ω |f_j|` per field.
    pub fn sup_norms(&self) -> &[f64] {
        &self.sup_norms
    }

    /// `S_k = Σ_j sup_Ω |f_j^k|`: the largest rate at which a subunit path
    /// can move coordinate k.
    pub fn coordinate_speeds(&self) -> &[f64] {
        &self.coord_speed
    }

    /// Flow-existence horizon `t₀ = min(1, margin(Ω′, Ω) / (2 sup |f_j|))`.
    pub fn horizon(&self) -> f64 {
        let sup = self.sup_norms.iter().fold(0.0f64, |m, v| m.max(*v));
        let margin = self.omega_inner.margin_inside(&self.omega_outer);
        if sup == 0.0 {
            1.0
        } else {
            (margin / (2.0 * sup)).min(1.0)
        }
    }

    /// Lower bound on the control distance from coordinate speeds:
    /// `d(x, y) ≥ max_k |y_k − x_k| / S_k`.
    pub fn distance_lower_bound(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut best = 0.0f64;
        for k in 0..self.dim {
            let gap = (y[k] - x[k]).abs();
            if gap == 0.0 {
                continue;
            }
            if self.coord_speed[k] == 0.0 {
                return f64::INFINITY;
            }
            best = best.max(gap / self.coord_speed[k]);
        }
        best
    }

    pub fn check_outer(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "point has dimension {}, family has {}",
                x.len(),
                self.dim
            )));
        }
        if !self.omega_outer.contains(x) {
            return Err(Error::Domain { point: x.to_vec(), domain: self.omega_outer.to_string() });
        }
        Ok(())
    }

    /// `f_j(x)` for the horizontal field `j` (0-based).
    pub fn eval_field(&self, j: usize, x: &[f64], out: &mut [f64]) {
        self.fields[j].eval(x, out);
    }

    /// `Σ_j b_j f_j(x)`.
    pub fn eval_control(&self, b: &[f64], x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut buf = vec![0.0; self.dim];
        for (j, &bj) in b.iter().enumerate() {
            if bj == 0.0 {
                continue;
            }
            self.fields[j].eval(x, &mut buf);
            for (o, v) in out.iter_mut().zip(&buf) {
                *o += bj * v;
            }
        }
    }

    /// Jets of all horizontal fields at `x`.
    pub fn base_jets(&self, x: &[f64], order: usize) -> Result<Vec<Vec<Jet>>> {
        self.fields.iter().map(|f| f.jets(x, order)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_hits_center_for_odd_counts() {
        let b = BoxDomain::cube(2, 1.0);
        let g = b.grid(5);
        assert_eq!(g.len(), 25);
        assert!(g.iter().any(|p| p[0] == 0.0 && p[1] == 0.0));
        assert!(g.iter().any(|p| p[0] == -1.0 && p[1] == 1.0));
    }

    #[test]
    fn family_rejects_bad_domains() {
        let f: Arc<dyn FieldSource> = Arc::new(ExprField::parse(&["1", "0"]).unwrap());
        let inner = BoxDomain::cube(2, 1.0);
        let err = VectorFieldFamily::new(
            "bad",
            2,
            vec![f.clone()],
            inner.clone(),
            BoxDomain::cube(2, 1.0),
            Smoothness::Smooth,
        );
        assert!(matches!(err, Err(Error::InvalidFamily(_))));
        let err = VectorFieldFamily::new("bad", 1, vec![f], inner, BoxDomain::cube(2, 2.0), Smoothness::Smooth);
        assert!(err.is_err());
    }

    #[test]
    fn nonfinite_coefficients_are_rejected() {
        let f: Arc<dyn FieldSource> = Arc::new(ExprField::parse(&["1/x1", "0"]).unwrap());
        let err = VectorFieldFamily::new(
            "singular",
            2,
            vec![f],
            BoxDomain::cube(2, 1.0),
            BoxDomain::cube(2, 2.0),
            Smoothness::Smooth,
        );
        assert!(matches!(err, Err(Error::InvalidFamily(_))));
    }
}
