//! Family definition files.
//!
//! A family file is TOML:
//!
//! ```toml
//! name = "grushin"
//! step = 2
//! smoothness = "smooth"          # or "a_s"
//! fields = [["1", "0"], ["0", "x1"]]
//!
//! [omega_inner]
//! lo = [-1.0, -1.0]
//! hi = [1.0, 1.0]
//!
//! [omega_outer]
//! lo = [-2.0, -2.0]
//! hi = [2.0, 2.0]
//!
//! # optional
//! params = { c = 1.0 }
//! kinks = [{ axis = 1, at = 0.0 }]             # axis numbered from 1
//! jacobians = [[["0", "0"], ["0", "0"]],        # jacobians[j][i][k] = ∂f_j^i/∂x_k
//!              [["0", "0"], ["1", "0"]]]
//! ```
//!
//! Coefficients use the grammar of [`crate::expr`]. Derivatives are always
//! taken by automatic differentiation of the expressions; analytic Jacobians,
//! when given, are checked against it at load time.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;

use super::{builtin_family, BoxDomain, ExprField, FieldSource, Kink, Smoothness, VectorFieldFamily, BUILTIN_NAMES};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyFile {
    pub name: String,
    pub step: usize,
    #[serde(default = "default_smoothness")]
    pub smoothness: Smoothness,
    pub fields: Vec<Vec<String>>,
    pub omega_inner: BoxDomain,
    pub omega_outer: BoxDomain,
    #[serde(default)]
    pub params: HashMap<String, f64>,
    #[serde(default)]
    pub kinks: Vec<Kink>,
    #[serde(default)]
    pub jacobians: Option<Vec<Vec<Vec<String>>>>,
}

fn default_smoothness() -> Smoothness {
    Smoothness::Smooth
}

/// Relative agreement required between a declared Jacobian and the
/// automatic-differentiation one.
const JACOBIAN_REL_TOL: f64 = 1e-6;

impl FamilyFile {
    pub fn from_toml(src: &str) -> Result<FamilyFile> {
        toml::from_str(src).map_err(|e| Error::InvalidFamily(e.to_string()))
    }

    pub fn build(&self) -> Result<VectorFieldFamily> {
        let n = self.omega_outer.dim();
        let inner = BoxDomain::new(self.omega_inner.lo.clone(), self.omega_inner.hi.clone())?;
        let outer = BoxDomain::new(self.omega_outer.lo.clone(), self.omega_outer.hi.clone())?;
        let mut fields: Vec<Arc<dyn FieldSource>> = Vec::new();
        let mut parsed: Vec<ExprField> = Vec::new();
        for (j, comps) in self.fields.iter().enumerate() {
            if comps.len() != n {
                return Err(Error::InvalidFamily(format!(
                    "field {} has {} components, dimension is {n}",
                    j + 1,
                    comps.len()
                )));
            }
            let exprs = comps
                .iter()
                .map(|s| Expr::parse_with(s, n, &self.params))
                .collect::<Result<Vec<_>>>()?;
            let f = ExprField::new(exprs);
            parsed.push(f.clone());
            fields.push(Arc::new(f));
        }
        let mut kinks = Vec::with_capacity(self.kinks.len());
        for k in &self.kinks {
            if k.axis == 0 || k.axis > n {
                return Err(Error::InvalidFamily(format!("kink axis {} out of range 1..={n}", k.axis)));
            }
            kinks.push(Kink { axis: k.axis - 1, at: k.at });
        }
        if let Some(jacs) = &self.jacobians {
            check_jacobians(jacs, &parsed, &inner, &self.params)?;
        }
        Ok(VectorFieldFamily::new(self.name.clone(), self.step, fields, inner, outer, self.smoothness)?
            .with_kinks(kinks))
    }
}

fn check_jacobians(
    jacs: &[Vec<Vec<String>>],
    fields: &[ExprField],
    inner: &BoxDomain,
    params: &HashMap<String, f64>,
) -> Result<()> {
    let n = inner.dim();
    if jacs.len() != fields.len() {
        return Err(Error::InvalidFamily("one Jacobian per field is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x1ac0b);
    for (j, (jac, field)) in jacs.iter().zip(fields).enumerate() {
        if jac.len() != n || jac.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidFamily(format!("Jacobian of field {} must be {n}x{n}", j + 1)));
        }
        let entries: Vec<Vec<Expr>> = jac
            .iter()
            .map(|row| row.iter().map(|s| Expr::parse_with(s, n, params)).collect())
            .collect::<Result<_>>()?;
        for _ in 0..100 {
            let x: Vec<f64> = (0..n).map(|k| rng.random_range(inner.lo[k]..inner.hi[k])).collect();
            let jets = field.jets(&x, 1)?;
            for i in 0..n {
                let grad = jets[i].gradient();
                for k in 0..n {
                    let declared = entries[i][k].eval(&x);
                    let scale = grad[k].abs().max(1.0);
                    if (declared - grad[k]).abs() > JACOBIAN_REL_TOL * scale {
                        return Err(Error::InvalidFamily(format!(
                            "declared Jacobian entry ({},{}) of field {} disagrees at {x:?}: {declared} vs {}",
                            i + 1,
                            k + 1,
                            j + 1,
                            grad[k]
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn load_family_file(path: &Path) -> Result<VectorFieldFamily> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidFamily(format!("cannot read {}: {e}", path.display())))?;
    FamilyFile::from_toml(&src)?.build()
}

/// A builtin name, or otherwise a path to a family file.
pub fn load_family(name_or_path: &str) -> Result<VectorFieldFamily> {
    if BUILTIN_NAMES.contains(&name_or_path) {
        return builtin_family(name_or_path);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        return load_family_file(path);
    }
    builtin_family(name_or_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRUSHIN: &str = r#"
name = "grushin-file"
step = 2
fields = [["1", "0"], ["0", "x1"]]
omega_inner = { lo = [-1.0, -1.0], hi = [1.0, 1.0] }
omega_outer = { lo = [-2.0, -2.0], hi = [2.0, 2.0] }
jacobians = [[["0", "0"], ["0", "0"]], [["0", "0"], ["1", "0"]]]
"#;

    #[test]
    fn parses_and_validates_jacobians() {
        let fam = FamilyFile::from_toml(GRUSHIN).unwrap().build().unwrap();
        assert_eq!(fam.dim(), 2);
        assert_eq!(fam.num_fields(), 2);
        let bad = GRUSHIN.replace(r#"["1", "0"]]]"#, r#"["2", "0"]]]"#);
        let err = FamilyFile::from_toml(&bad).unwrap().build();
        assert!(matches!(err, Err(Error::InvalidFamily(_))), "{err:?}");
    }

    #[test]
    fn params_and_kinks() {
        let src = r#"
name = "kinked"
step = 2
smoothness = "a_s"
fields = [["1", "0"], ["0", "x1 + c*x1*abs(x1)"]]
omega_inner = { lo = [-1.0, -1.0], hi = [1.0, 1.0] }
omega_outer = { lo = [-2.0, -2.0], hi = [2.0, 2.0] }
params = { c = 3.0 }
kinks = [{ axis = 1, at = 0.0 }]
"#;
        let fam = FamilyFile::from_toml(src).unwrap().build().unwrap();
        assert_eq!(fam.smoothness(), Smoothness::As);
        assert_eq!(fam.kinks(), &[Kink { axis: 0, at: 0.0 }]);
        let mut out = [0.0; 2];
        fam.eval_field(1, &[-0.5, 0.0], &mut out);
        assert_eq!(out[1], -0.5 - 0.75);
    }

    #[test]
    fn rejects_unknown_keys_and_wrong_shapes() {
        assert!(FamilyFile::from_toml("name = 1").is_err());
        let wrong = GRUSHIN.replace(r#"["0", "x1"]]"#, r#"["0"]]"#);
        assert!(FamilyFile::from_toml(&wrong).unwrap().build().is_err());
        assert!(matches!(load_family("no_such_family"), Err(Error::UnknownFamily { .. })));
    }
}
