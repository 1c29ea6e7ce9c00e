use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::maximality::lambda_max;

use super::{build_table, VectorFieldFamily};

/// Grid estimates of the regularity constant `L` and the Hörmander lower
/// bound `ν = inf_Ω Λ(x, 1)`.
///
/// Both are sampled on a tensor grid of the outer box. `L` involves essential
/// suprema, so a grid value can only ever undershoot; it is an estimate.
#[derive(Debug, Clone, Serialize)]
pub struct RegularityConstants {
    pub l: f64,
    /// The three sup terms whose sum is `L`: derivatives of order `≤ s−2`,
    /// derivatives of order `s−1`, and `X_k X_j f_w` for `|w| = s−1`.
    pub l_terms: [f64; 3],
    pub nu: f64,
    pub nu_point: Vec<f64>,
    pub grid_resolution: usize,
    pub hormander_violation: bool,
}

impl RegularityConstants {
    pub fn require_hormander(&self) -> Result<()> {
        if self.hormander_violation {
            Err(Error::HormanderViolation { point: self.nu_point.clone() })
        } else {
            Ok(())
        }
    }
}

const NU_FLOOR: f64 = 1e-12;

fn derivative_norms(jets: &[Jet], degree: usize) -> f64 {
    let basis = jets[0].basis().clone();
    let mut best = 0.0f64;
    for e in basis.exponents() {
        if e.iter().map(|&v| v as usize).sum::<usize>() != degree {
            continue;
        }
        let norm = jets.iter().map(|j| j.derivative(e).powi(2)).sum::<f64>().sqrt();
        best = best.max(norm);
    }
    best
}

fn apply_value(a: &[Jet], b: &[Jet]) -> Vec<Jet> {
    b.iter()
        .map(|bk| {
            a.iter()
                .enumerate()
                .map(|(i, ai)| ai * &bk.partial(i))
                .reduce(|s, t| &s + &t)
                .expect("nonempty field")
        })
        .collect()
}

struct PointTerms {
    low: f64,
    top: f64,
    second: f64,
    lambda1: f64,
}

fn point_terms(family: &VectorFieldFamily, table: &super::CommutatorTable, x: &[f64]) -> Result<PointTerms> {
    let s = family.step();
    let base = family.base_jets(x, s)?;
    let mut low = 0.0f64;
    let mut top = 0.0f64;
    for fj in &base {
        for d in 0..=s - 2 {
            low = low.max(derivative_norms(fj, d));
        }
        top = top.max(derivative_norms(fj, s - 1));
    }
    let mut second = 0.0f64;
    for entry in table.entries().iter().filter(|e| e.length() == s - 1) {
        let fw = super::commutator::commutator_jets(family, &entry.word, x, 2)?;
        for fj in &base {
            let xj_fw = apply_value(fj, &fw);
            for fk in &base {
                let v = apply_value(fk, &xj_fw);
                let norm = v.iter().map(|j| j.value().powi(2)).sum::<f64>().sqrt();
                second = second.max(norm);
            }
        }
    }
    let (lambda1, _) = lambda_max(table, x, 1.0)?;
    Ok(PointTerms { low, top, second, lambda1 })
}

/// Samples `L` and `ν` on a `grid_resolution^n` grid of the outer box.
///
/// A family whose sampled `ν` is below `1e-12` is flagged as violating the
/// Hörmander condition; the flag is a warning here and an error through
/// [`RegularityConstants::require_hormander`].
pub fn estimate_constants(family: &Arc<VectorFieldFamily>, grid_resolution: usize) -> Result<RegularityConstants> {
    let table = build_table(family.clone());
    let grid = family.omega_outer().grid(grid_resolution);
    let terms: Vec<PointTerms> = grid
        .par_iter()
        .map(|x| point_terms(family, &table, x))
        .collect::<Result<_>>()?;
    let mut l_terms = [0.0f64; 3];
    let mut nu = f64::INFINITY;
    let mut nu_point = grid[0].clone();
    for (t, x) in terms.iter().zip(&grid) {
        l_terms[0] = l_terms[0].max(t.low);
        l_terms[1] = l_terms[1].max(t.top);
        l_terms[2] = l_terms[2].max(t.second);
        if t.lambda1 < nu {
            nu = t.lambda1;
            nu_point = x.clone();
        }
    }
    let hormander_violation = nu <= NU_FLOOR;
    if hormander_violation {
        log::warn!(
            "family '{}' may fail the Hormander condition: Lambda(x,1) = {nu:e} at {nu_point:?}",
            family.name()
        );
    }
    Ok(RegularityConstants {
        l: l_terms.iter().sum(),
        l_terms,
        nu,
        nu_point,
        grid_resolution,
        hormander_violation,
    })
}
