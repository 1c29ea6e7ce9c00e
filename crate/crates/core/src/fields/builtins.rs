use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;

use super::{BoxDomain, ExprField, FieldSource, Kink, Smoothness, VectorFieldFamily};

pub const BUILTIN_NAMES: &[&str] = &[
    "heisenberg",
    "grushin",
    "martinet",
    "wright",
    "nonsmooth_step2",
    "euclidean",
    "non_hormander",
];

fn expr_fields(n: usize, comps: &[&[&str]], params: &HashMap<String, f64>) -> Result<Vec<Arc<dyn FieldSource>>> {
    comps
        .iter()
        .map(|c| {
            let exprs = c.iter().map(|s| Expr::parse_with(s, n, params)).collect::<Result<Vec<_>>>()?;
            Ok(Arc::new(ExprField::new(exprs)) as Arc<dyn FieldSource>)
        })
        .collect()
}

/// Built-in family by name with default parameters.
pub fn builtin_family(name: &str) -> Result<VectorFieldFamily> {
    builtin_family_with(name, &HashMap::new())
}

/// Built-in family by name. Parameters: `c` for `nonsmooth_step2`
/// (default 1), `n` for `euclidean` (default 2).
pub fn builtin_family_with(name: &str, params: &HashMap<String, f64>) -> Result<VectorFieldFamily> {
    let cube = BoxDomain::cube;
    match name {
        "heisenberg" => VectorFieldFamily::new(
            name,
            2,
            expr_fields(3, &[&["1", "0", "-x2/2"], &["0", "1", "x1/2"]], params)?,
            cube(3, 1.0),
            cube(3, 2.0),
            Smoothness::Smooth,
        ),
        "grushin" => VectorFieldFamily::new(
            name,
            2,
            expr_fields(2, &[&["1", "0"], &["0", "x1"]], params)?,
            cube(2, 1.0),
            cube(2, 2.0),
            Smoothness::Smooth,
        ),
        // Levi-type fields X_j = ∂_j + a_j ∂_3 with a_1 = 0, a_2 = x1².
        "martinet" => VectorFieldFamily::new(
            name,
            3,
            expr_fields(3, &[&["1", "0", "0"], &["0", "1", "x1^2"]], params)?,
            cube(3, 1.0),
            cube(3, 2.0),
            Smoothness::Smooth,
        ),
        // X_2 = a(x1) ∂_2 with a(s) = s + s².
        "wright" => VectorFieldFamily::new(
            name,
            2,
            expr_fields(2, &[&["1", "0"], &["0", "x1 + x1^2"]], params)?,
            cube(2, 0.5),
            cube(2, 1.5),
            Smoothness::Smooth,
        ),
        "nonsmooth_step2" => {
            let mut p = params.clone();
            p.entry("c".to_string()).or_insert(1.0);
            Ok(VectorFieldFamily::new(
                name,
                2,
                expr_fields(2, &[&["1", "0"], &["0", "x1 + c*x1*abs(x1)"]], &p)?,
                cube(2, 1.0),
                cube(2, 2.0),
                Smoothness::As,
            )?
            .with_kinks(vec![Kink { axis: 0, at: 0.0 }]))
        }
        "euclidean" => {
            let n = params.get("n").copied().unwrap_or(2.0);
            if n.fract() != 0.0 || !(1.0..=4.0).contains(&n) {
                return Err(Error::InvalidArgument(format!("euclidean dimension must be 1..=4, got {n}")));
            }
            let n = n as usize;
            let fields = (0..n)
                .map(|j| {
                    let comps = (0..n).map(|k| Expr::Const(if j == k { 1.0 } else { 0.0 })).collect();
                    Arc::new(ExprField::new(comps)) as Arc<dyn FieldSource>
                })
                .collect();
            VectorFieldFamily::new(name, 2, fields, cube(n, 1.0), cube(n, 2.0), Smoothness::Smooth)
        }
        "non_hormander" => VectorFieldFamily::new(
            name,
            2,
            expr_fields(2, &[&["1", "0"], &["1", "0"]], params)?,
            cube(2, 1.0),
            cube(2, 2.0),
            Smoothness::Smooth,
        ),
        _ => Err(Error::UnknownFamily { name: name.to_string(), available: BUILTIN_NAMES.join(", ") }),
    }
}
