use std::sync::Arc;

use ballbox_core::acceptance::{run_all, AcceptanceOptions};
use ballbox_core::approxexp::geometric_grid;
use ballbox_core::fields::config::load_family;
use ballbox_core::maximality::{all_lambdas, StabilityOptions};
use ballbox_core::metric::{BallboxOptions, DistanceOptions, GridSpec};
use ballbox_core::report::{fmt_num, Table};
use ballbox_core::sampling::{signed_unit, stream};
use ballbox_core::{
    ballbox_verify, build_table, cc_upper, convergence_check, derivative_expansion_check, doubling_estimate,
    estimate_constants, jacobian_structure_check, pullback_check, reachable_grid, select_maximal, stability_check,
    stratify, uniform_bound_check, CommutatorTable, Error, StructureOptions, VerificationReport, VectorFieldFamily,
    Word,
};

use crate::Common;

/// Bad flags, configs or points; exit status 2.
pub struct UsageError(pub String);

impl From<Error> for UsageError {
    fn from(e: Error) -> Self {
        UsageError(e.to_string())
    }
}

type Out = Result<Vec<VerificationReport>, UsageError>;

/// Errors caused by the input are usage errors; the rest fail the check.
fn settle(check: &str, r: ballbox_core::Result<VerificationReport>) -> Result<VerificationReport, UsageError> {
    match r {
        Ok(rep) => Ok(rep),
        Err(e @ (Error::UnknownFamily { .. }
        | Error::InvalidFamily(_)
        | Error::Expression(_)
        | Error::InvalidArgument(_)
        | Error::Domain { .. }
        | Error::UnsupportedDepth { .. })) => Err(UsageError(e.to_string())),
        Err(e) => {
            let mut rep = VerificationReport::new(check);
            rep.fail(e.to_string());
            Ok(rep)
        }
    }
}

fn parse_list(name: &str, src: &str) -> Result<Vec<f64>, UsageError> {
    src.trim()
        .trim_matches(|c| c == '(' || c == ')' || c == '[' || c == ']')
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| UsageError(format!("--{name}: cannot parse '{s}'"))))
        .collect()
}

fn family(c: &Common) -> Result<VectorFieldFamily, UsageError> {
    let name = c.family.as_deref().ok_or_else(|| UsageError("--family is required".into()))?;
    Ok(load_family(name)?)
}

fn point(f: &VectorFieldFamily, src: Option<&str>, flag: &str) -> Result<Vec<f64>, UsageError> {
    let x = match src {
        Some(s) => parse_list(flag, s)?,
        None => vec![0.0; f.dim()],
    };
    if x.len() != f.dim() {
        return Err(UsageError(format!("--{flag} has {} coordinates, family {} has dimension {}", x.len(), f.name(), f.dim())));
    }
    Ok(x)
}

fn seed(c: &Common) -> u64 {
    c.seed.unwrap_or(0)
}

fn row(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| fmt_num(*v)).collect()
}

fn coords(x: &[f64]) -> String {
    x.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(" ")
}

pub fn run(name: &str, c: &Common) -> Out {
    match name {
        "all" => Ok(run_all(&AcceptanceOptions { seed: c.seed.unwrap_or(AcceptanceOptions::default().seed) })),
        "table" => table(c),
        "select" => select(c),
        "expcheck" => expcheck(c),
        "jaccheck" => jaccheck(c),
        "ballbox" => ballbox(c),
        "distance" => distance(c),
        "doubling" => doubling(c),
        "stratify" => strat(c),
        "mollify" => mollify(c),
        other => Err(UsageError(format!("unknown command {other}"))),
    }
}

fn table(c: &Common) -> Out {
    let f = Arc::new(family(c)?);
    let t = build_table(f.clone());
    let mut entries = VerificationReport::new(format!("commutator table {}", f.name()));
    let mut rows = Table::new(&["index", "word", "length"]);
    for (i, e) in t.entries().iter().enumerate() {
        rows.push(vec![(i + 1).to_string(), e.word.to_string(), e.length().to_string()]);
    }
    entries.metric("entries", t.len() as f64);
    entries.table = Some(rows);

    let grid = f.omega_inner().grid(c.grid.unwrap_or(3));
    let mut lam = VerificationReport::new(format!("tuple determinants {}", f.name()));
    let first = all_lambdas(&t, &grid[0])?;
    let mut cols: Vec<String> = vec!["point".into()];
    cols.extend(first.iter().map(|v| format!("lambda_{}", tuple_label(&v.indices))));
    let mut lt = Table::new(&cols.iter().map(String::as_str).collect::<Vec<_>>());
    for x in &grid {
        let vals = all_lambdas(&t, x)?;
        let mut r = vec![coords(x)];
        r.extend(vals.iter().map(|v| fmt_num(v.lambda)));
        lt.push(r);
    }
    lam.metric("points", grid.len() as f64);
    lam.table = Some(lt);

    let mut reg = VerificationReport::new(format!("regularity constants {}", f.name()));
    let k = estimate_constants(&f, 9)?;
    reg.metric("L", k.l);
    reg.metric("nu", k.nu);
    reg.require(!k.hormander_violation, format!("Hormander condition fails near {}", coords(&k.nu_point)));
    Ok(vec![entries, lam, reg])
}

fn tuple_label(indices: &[usize]) -> String {
    let one: Vec<String> = indices.iter().map(|i| (i + 1).to_string()).collect();
    format!("({})", one.join(","))
}

fn table_and_point(c: &Common) -> Result<(CommutatorTable, Vec<f64>), UsageError> {
    let f = family(c)?;
    let x = point(&f, c.point.as_deref(), "point")?;
    Ok((build_table(Arc::new(f)), x))
}

fn select(c: &Common) -> Out {
    let (t, x) = table_and_point(c)?;
    let m = match select_maximal(&t, &x, c.radius, c.eta) {
        Ok(m) => m,
        Err(e) => return Ok(vec![settle("select", Err(e))?]),
    };
    let mut rep = VerificationReport::new(format!("select r={} eta={}", c.radius, c.eta));
    rep.note(format!("maximal tuple {}", m.selection));
    rep.metric("lambda_i", m.lambda_i);
    rep.metric("big_lambda", m.big_lambda);
    rep.metric("eta_achieved", m.eta_achieved);
    if let Some((s, ratio)) = &m.runner_up {
        rep.note(format!("runner-up {s}"));
        rep.metric("runner_up_ratio", *ratio);
    }
    let mut tab = Table::new(&["tuple", "weight", "lambda", "scaled", "ratio"]);
    let mut vals = all_lambdas(&t, &x)?;
    vals.retain(|v| v.lambda != 0.0);
    let scaled = |v: &ballbox_core::maximality::TupleValue| v.lambda.abs() * c.radius.powi(v.weight as i32);
    vals.sort_by(|a, b| scaled(b).total_cmp(&scaled(a)).then(a.indices.cmp(&b.indices)));
    for v in &vals {
        tab.push(vec![
            tuple_label(&v.indices),
            v.weight.to_string(),
            fmt_num(v.lambda),
            fmt_num(scaled(v)),
            fmt_num(scaled(v) / m.big_lambda),
        ]);
    }
    rep.table = Some(tab);
    let opts = StabilityOptions { samples: c.samples, seed: seed(c), ..Default::default() };
    let stab = settle("stability", stability_check(&t, &m.selection, &x, c.radius, c.eta, &opts).map(|r| r.0))?;
    Ok(vec![rep, stab])
}

fn expcheck(c: &Common) -> Out {
    let (t, x) = table_and_point(c)?;
    let word = Word::parse(&c.word)?;
    let times = parse_list("times", &c.times)?;
    let [lo, hi, n] = times[..] else {
        return Err(UsageError("--times expects lo,hi,count".into()));
    };
    if !(lo > 0.0 && hi > lo && n >= 2.0) {
        return Err(UsageError("--times needs 0 < lo < hi and count >= 2".into()));
    }
    let grid = geometric_grid(lo, hi, n as usize);
    let check = format!("expcheck word={word}");
    let e = match derivative_expansion_check(&t, &word, &x, &grid) {
        Ok(e) => e,
        Err(err) => return Ok(vec![settle(&check, Err(err))?]),
    };
    let mut rep = VerificationReport::new(check);
    let floor = 1.0 / word.len() as f64 - 0.02;
    if e.exact_within_noise {
        rep.note("exact within integration noise");
    } else if let (Some(a), Some(k)) = (e.fitted_exponent, e.fitted_constant) {
        rep.metric("fitted_exponent", a);
        rep.metric("fitted_constant", k);
        rep.require(a >= floor, format!("fitted exponent {a} below 1/|w| = {}", 1.0 / word.len() as f64));
    } else {
        rep.fail("no power law could be fitted");
    }
    let mut tab = Table::new(&["t", "residual", "noise_floor"]);
    for ((t, r), nf) in e.t_grid.iter().zip(&e.residual).zip(&e.noise_floor) {
        tab.push(row(&[*t, *r, *nf]));
    }
    rep.table = Some(tab);
    Ok(vec![rep])
}

fn jaccheck(c: &Common) -> Out {
    let (t, x) = table_and_point(c)?;
    let sel = match select_maximal(&t, &x, c.radius, c.eta) {
        Ok(m) => m.selection,
        Err(e) => return Ok(vec![settle("jaccheck", Err(e))?]),
    };
    let opts = StructureOptions { epsilon: c.epsilon, eta: c.eta, samples: c.samples, seed: seed(c), ..Default::default() };
    let structure = settle("jacobian structure", jacobian_structure_check(&t, &sel, &x, c.radius, &opts))?;
    let n = x.len();
    let samples: Vec<Vec<f64>> = (0..c.samples as u64)
        .map(|k| {
            let mut rng = stream(seed(c) ^ 0x9e37_79b9, k);
            (0..n).map(|_| signed_unit(&mut rng, c.epsilon)).collect()
        })
        .collect();
    let pull = settle("pullback", pullback_check(&t, &sel, &x, c.radius, &samples, c.c_max))?;
    Ok(vec![structure, pull])
}

fn ballbox(c: &Common) -> Out {
    let (t, x) = table_and_point(c)?;
    let sel = match select_maximal(&t, &x, c.radius, c.eta) {
        Ok(m) => m.selection,
        Err(e) => return Ok(vec![settle("ballbox", Err(e))?]),
    };
    let opts = BallboxOptions { samples: c.samples, seed: seed(c), ..Default::default() };
    let mut rep = settle("ballbox", ballbox_verify(&t, &sel, &x, c.radius, c.epsilon, &opts))?;
    let get = |k: &str| rep.get(k).unwrap_or(f64::NAN);
    let mut tab = Table::new(&["tuple", "r", "epsilon", "c_fit", "C_fwd", "c_inj"]);
    tab.push(vec![
        sel.to_string(),
        fmt_num(c.radius),
        fmt_num(c.epsilon),
        fmt_num(get("c_fit")),
        fmt_num(get("c_fwd")),
        fmt_num(get("c_inj")),
    ]);
    rep.table = Some(tab);
    Ok(vec![rep])
}

fn distance(c: &Common) -> Out {
    let f = family(c)?;
    let x = point(&f, c.point.as_deref(), "point")?;
    let target = c.target.as_deref().ok_or_else(|| UsageError("--target is required".into()))?;
    let y = point(&f, Some(target), "target")?;
    let opts = DistanceOptions { seed: seed(c), ..Default::default() };
    let check = format!("distance {} -> {}", coords(&x), coords(&y));
    let d = match cc_upper(&f, &x, &y, &opts) {
        Ok(d) => d,
        Err(e) => return Ok(vec![settle(&check, Err(e))?]),
    };
    let mut rep = VerificationReport::new(check);
    rep.metric("upper", d.upper);
    rep.metric("lower", d.lower);
    rep.metric("endpoint_residual", d.endpoint_residual);
    rep.metric("pieces", d.witness.pieces.len() as f64);
    rep.require(d.endpoint_residual <= opts.endpoint_tol, "witness misses the target");
    let mut cols = vec!["duration".to_string()];
    cols.extend((1..=f.num_fields()).map(|j| format!("b{j}")));
    let mut tab = Table::new(&cols.iter().map(String::as_str).collect::<Vec<_>>());
    for (dt, b) in &d.witness.pieces {
        let mut r = vec![fmt_num(*dt)];
        r.extend(b.iter().map(|v| fmt_num(*v)));
        tab.push(r);
    }
    rep.table = Some(tab);
    Ok(vec![rep])
}

fn doubling(c: &Common) -> Out {
    let (t, x) = table_and_point(c)?;
    let radii = parse_list("radii", &c.radii)?;
    if radii.len() < 3 || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(UsageError("--radii needs at least three positive radii".into()));
    }
    let k = c.grid.unwrap_or(16);
    let dbl = settle("doubling", doubling_estimate(&t, &x, &radii, k))?;
    let mut ball = VerificationReport::new(format!("reachable grid r={}", c.radius));
    match GridSpec::for_point(&t, &x, c.radius, k).and_then(|g| reachable_grid(t.family(), &x, c.radius, &g)) {
        Ok(b) => {
            ball.metric("reached_cells", b.reached_cells as f64);
            ball.metric("measure", b.measure);
            ball.metric("frontier", if b.frontier { 1.0 } else { 0.0 });
            ball.note(format!("axis weights {:?}", b.grid.axis_weights));
        }
        Err(e) => ball = settle(&ball.check, Err(e))?,
    }
    Ok(vec![dbl, ball])
}

fn strat(c: &Common) -> Out {
    let f = family(c)?;
    let per_axis = c.grid.unwrap_or(if f.dim() <= 2 { 33 } else { 9 });
    let grid = f.omega_inner().grid(per_axis);
    let t = build_table(Arc::new(f));
    let s = match stratify(&t, &grid, c.stratify_c) {
        Ok(s) => s,
        Err(e) => return Ok(vec![settle("stratify", Err(e))?]),
    };
    let mut rep = VerificationReport::new(format!("stratify c={}", c.stratify_c));
    rep.metric("r0", s.r0);
    for (layer, r, count) in &s.strata {
        rep.note(format!("layer {layer}: r = {}, {count} points", fmt_num(*r)));
    }
    rep.require(s.r0 > 0.0, "r0 is not positive");
    let mut tab = Table::new(&["point", "layer", "tuple", "lambda", "r_x", "stratum", "rho0"]);
    for p in &s.points {
        tab.push(vec![
            coords(&p.x),
            p.layer.to_string(),
            tuple_label(&p.tuple),
            fmt_num(p.lambda),
            fmt_num(p.r_x),
            p.stratum.to_string(),
            fmt_num(p.rho0),
        ]);
    }
    rep.table = Some(tab);
    Ok(vec![rep])
}

fn mollify(c: &Common) -> Out {
    let f = family(c)?;
    let word = Word::parse(&c.word)?;
    let sigmas = parse_list("sigmas", &c.sigmas)?;
    let grid = f.omega_inner().grid(c.grid.unwrap_or(21));
    let conv = settle("mollify convergence", convergence_check(&f, &word, &sigmas, &grid, c.quad_order))?;
    let bound = settle("mollify uniform bound", uniform_bound_check(&f, &sigmas, &grid, c.quad_order))?;
    Ok(vec![conv, bound])
}
