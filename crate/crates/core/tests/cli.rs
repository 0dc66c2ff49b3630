use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use autodim::cli::run_command;
use autodim::synthetic::{generate, write_csv, SyntheticSpec};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["autodim"];
    argv.extend_from_slice(args);
    let code = run_command(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

/// Small synthetic data plus a fast config in a temp dir.
fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data.csv");
    let ds = generate(&SyntheticSpec {
        rows: 3000,
        ..SyntheticSpec::default()
    })
    .unwrap();
    write_csv(&ds, fs::File::create(&data).unwrap()).unwrap();
    let config = dir.join("run.toml");
    fs::write(
        &config,
        format!(
            "data = {:?}\nbatch_size = 128\ncandidate_dims = [2, 8]\nhidden = [16]\ndropout = 0.0\nlr_w = 0.003\nlr_alpha = 0.03\nsearch_epochs = 4\nretrain_epochs = 4\nras_trials = 2\n",
            data.display().to_string()
        ),
    )
    .unwrap();
    (data, config)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report_value(path: &Path, key: &str) -> String {
    let text = fs::read_to_string(path).unwrap();
    let table: toml::Table = text.parse().unwrap();
    table[key].to_string()
}

#[test]
fn search_retrain_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, config) = fixture(tmp.path());
    let before = fs::read(&data).unwrap();
    let out = tmp.path().join("search");
    let r = run(&["search", "-c", s(&config), "-o", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    for f in ["arch.toml", "search_log.csv", "search_plot.csv", "config.toml", "checkpoint/manifest.toml", "checkpoint/params.bin"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(r.stdout.starts_with("derived dims "));

    let re = tmp.path().join("retrain");
    let arch = out.join("arch.toml");
    let r = run(&["retrain", "-c", s(&config), "-o", s(&re), "--arch", s(&arch)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report = re.join("report.txt");
    let params: u64 = report_value(&report, "params").parse().unwrap();
    let fde: u64 = report_value(&report, "fde_params").parse().unwrap();
    assert!(params < fde, "{params} vs {fde}");
    assert!(fs::read_to_string(&report).unwrap().contains("[config]"));

    // the resolved config alone reproduces the run
    let again = tmp.path().join("again");
    let r = run(&["retrain", "-c", s(&re.join("config.toml")), "-o", s(&again)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(report_value(&report, "logloss"), report_value(&again.join("report.txt"), "logloss"));
    assert_eq!(report_value(&report, "auc"), report_value(&again.join("report.txt"), "auc"));

    let r = run(&["eval", "-c", s(&config), "--checkpoint", s(&re.join("checkpoint"))]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let logloss: f64 = report_value(&report, "logloss").parse().unwrap();
    assert!(r.stdout.contains(&format!("logloss={logloss:.4}")), "{}", r.stdout);

    assert_eq!(fs::read(&data).unwrap(), before, "input data must not change");
}

#[test]
fn baselines_probe_and_stability() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, config) = fixture(tmp.path());
    let fde = tmp.path().join("fde");
    let r = run(&["baseline", "-c", s(&config), "-o", s(&fde), "--method", "fde"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    // cardinalities include the out-of-vocabulary slot
    let schema_cards: u64 = 101 + 5 + 11;
    let rows = fs::read_to_string(fde.join("baseline.csv")).unwrap();
    let row: Vec<&str> = rows.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[6], (schema_cards * 8).to_string());

    let ras = tmp.path().join("ras");
    let r = run(&["baseline", "-c", s(&config), "-o", s(&ras), "--method", "ras"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let text = fs::read_to_string(ras.join("baseline.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert_eq!(text.matches(",true").count(), 1);

    let probe = tmp.path().join("probe");
    let r = run(&["probe", "-c", s(&config), "-o", s(&probe), "--all"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let text = fs::read_to_string(probe.join("probe.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("field,auc,logloss,derived_dim\nitem,"));

    let st = tmp.path().join("stab");
    let r = run(&["stability", "-c", s(&config), "-o", s(&st), "--seeds", "1,2"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let text = fs::read_to_string(st.join("stability.csv")).unwrap();
    assert!(text.starts_with("seed,1,2\n"));
    assert_eq!(fs::read_to_string(st.join("stability_dims.csv")).unwrap().lines().count(), 3);
}

#[test]
fn errors_are_classified() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, config) = fixture(tmp.path());
    let out = tmp.path().join("o");

    let r = run(&["search", "-c", s(&config), "-o", s(&out), "--set", "bogus=1"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.starts_with("error class=config code=2 "), "{}", r.stderr);

    let r = run(&["search", "-d", "/definitely/missing.csv", "-o", s(&out)]);
    assert_eq!(r.code, 3);
    assert!(r.stderr.starts_with("error class=missing-file "), "{}", r.stderr);

    let r = run(&["retrain", "-c", s(&config), "-o", s(&out)]);
    assert!(r.stderr.starts_with("error class=config "), "{}", r.stderr);

    // architecture derived for different data
    let other = tmp.path().join("other.csv");
    fs::write(&other, "label,a:categorical\n1,x\n0,y\n1,x\n0,y\n1,x\n0,y\n1,x\n0,y\n1,x\n0,y\n").unwrap();
    let arch = tmp.path().join("arch.toml");
    fs::write(
        &arch,
        "param_count = 4\n[[field]]\nname = \"a\"\nindex = 0\ndim = 2\ncardinality = 2\ncandidates = [2]\n",
    )
    .unwrap();
    let r = run(&["retrain", "-c", s(&config), "-o", s(&out), "--arch", s(&arch)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.starts_with("error class=config "), "{}", r.stderr);

    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "label,a:categorical\n2,x\n").unwrap();
    let r = run(&["search", "-d", s(&bad), "-o", s(&out)]);
    assert_eq!(r.code, 4);
    assert!(r.stderr.starts_with("error class=label "), "{}", r.stderr);

    let r = run(&["probe", "-c", s(&config), "-o", s(&out), "--field", "nope"]);
    assert!(r.stderr.starts_with("error class=schema "), "{}", r.stderr);

    let r = run(&["nonsense"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.starts_with("error class=usage "), "{}", r.stderr);
}

#[test]
fn binary_reports_one_error_line() {
    let out = Command::new(env!("CARGO_BIN_EXE_autodim"))
        .args(["eval", "--checkpoint", "/no/such/checkpoint", "-d", "/no/such.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error class=missing-file code=3 msg="));
    let help = Command::new(env!("CARGO_BIN_EXE_autodim")).arg("--help").output().unwrap();
    assert!(help.status.success());
    assert!(String::from_utf8(help.stdout).unwrap().contains("stability"));
}
