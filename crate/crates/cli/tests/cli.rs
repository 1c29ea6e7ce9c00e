use std::process::{Command, Output};

fn ballbox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ballbox")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn heisenberg_table_has_three_rows_and_unit_determinant() {
    let o = ballbox(&["table", "--family", "heisenberg", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let blocks: Vec<&str> = text.split("\n\n").collect();
    assert_eq!(blocks[0].lines().count(), 4, "{}", blocks[0]);
    let mut lam = blocks[1].lines();
    assert_eq!(lam.next(), Some("point,\"lambda_(1,2,3)\""));
    assert!(lam.all(|l| l.ends_with(",1e0")));
}

#[test]
fn wright_expansion_matches_the_closed_form() {
    let o = ballbox(&["expcheck", "--family", "wright", "--word", "1,2", "--point", "0,0", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut rows = text.lines();
    assert_eq!(rows.next(), Some("t,residual,noise_floor"));
    for row in rows {
        let v: Vec<f64> = row.split(',').map(|s| s.parse().unwrap()).collect();
        assert!((v[1] / (1.5 * v[0].sqrt()) - 1.0).abs() < 1e-6, "{row}");
    }
    let report = stdout(&ballbox(&["expcheck", "--family", "wright", "--word", "1,2"]));
    assert!(report.contains("fitted_exponent = 4.99999"), "{report}");
}

#[test]
fn grushin_ballbox_reports_all_three_constants() {
    let o = ballbox(&["ballbox", "--family", "grushin", "--point", "0,0", "--radius", "0.1", "--epsilon", "0.5", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("c_fit") && text.contains("C_fwd") && text.contains("c_inj"));
}

#[test]
fn output_is_deterministic() {
    let args = ["ballbox", "--family", "heisenberg", "--samples", "60", "--seed", "3", "--format", "csv"];
    let a = ballbox(&args);
    let b = ballbox(&args);
    assert_eq!(a.stdout, b.stdout);
    let single = Command::new(env!("CARGO_BIN_EXE_ballbox")).args(args).env("BALLBOX_THREADS", "1").output().unwrap();
    assert_eq!(a.stdout, single.stdout);
}

#[test]
fn out_flag_writes_the_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("strata.csv");
    let o = ballbox(&["stratify", "--family", "grushin", "--grid", "9", "--format", "csv", "--out", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let direct = ballbox(&["stratify", "--family", "grushin", "--grid", "9", "--format", "csv"]);
    assert_eq!(std::fs::read(&path).unwrap(), direct.stdout);
    assert!(String::from_utf8(direct.stdout).unwrap().starts_with("point,layer,tuple,lambda,r_x,stratum,rho0\n"));
}

#[test]
fn failures_exit_one_with_a_failure_list() {
    let o = ballbox(&["select", "--family", "non_hormander"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.lines().any(|l| l.starts_with("FAIL\t") && l.contains("Hormander")), "{err}");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(ballbox(&["nonsense"]).status.code(), Some(2));
    assert_eq!(ballbox(&["select", "--family", "no_such_family"]).status.code(), Some(2));
    assert_eq!(ballbox(&["select"]).status.code(), Some(2));
    assert_eq!(ballbox(&["select", "--family", "grushin", "--point", "0,0,0"]).status.code(), Some(2));
    assert_eq!(ballbox(&["select", "--family", "grushin", "--point", "5,0"]).status.code(), Some(2));
    assert_eq!(ballbox(&["distance", "--family", "grushin"]).status.code(), Some(2));
}

const FAMILY: &str = r#"
name = "grushin-cubic"
step = 3
fields = [["1", "0"], ["0", "x1^2"]]
omega_inner = { lo = [-1.0, -1.0], hi = [1.0, 1.0] }
omega_outer = { lo = [-2.0, -2.0], hi = [2.0, 2.0] }
"#;

#[test]
fn family_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("family.toml");
    std::fs::write(&path, FAMILY).unwrap();
    let o = ballbox(&["select", "--family", path.to_str().unwrap(), "--point=0,0.3", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    // At x1 = 0 only X1 and the length-3 bracket [X1,[X1,X2]] = 2 ∂2 span.
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("\"(1,4)\",4,2e0,"), "{}", stdout(&o));
    std::fs::write(&path, FAMILY.replace("step = 3", "step = \"three\"")).unwrap();
    assert_eq!(ballbox(&["select", "--family", path.to_str().unwrap()]).status.code(), Some(2));
}
