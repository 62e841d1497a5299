use std::path::{Path, PathBuf};

use block_fusion::fusion::Gradients;
use block_fusion::{FusionSpec, SchemeKind};
use block_fusion_cli::{run, run_with, Hooks, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn invoke_with(args: &[&str], hooks: Hooks) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("block-fusion").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err, hooks);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn invoke(args: &[&str]) -> Outcome {
    invoke_with(args, Hooks::default())
}

const SMALL: &str = r#"
[fusion]
scheme = "block"
input_dims = [5, 4]
output_dim = 2
core = [2, 2, 2]
blocks = 2

[task]
kind = "regression"
teacher_seed = 1
n_train = 60
n_val = 20
n_test = 20
data_seed = 2

[train]
learning_rate = 0.01
batch_size = 20
max_epochs = 8
patience = 3
seed = 4
"#;

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn verify_block_passes_with_every_suite() {
    let o = invoke(&["verify", "--scheme", "block", "--instances", "5"]);
    assert_eq!(o.code, EXIT_OK, "{}{}", o.stdout, o.stderr);
    assert!(o.stdout.contains("7 suites"), "{}", o.stdout);
    assert_eq!(o.stdout.matches("PASS").count(), 7);
}

fn flip_block_backward(spec: &FusionSpec, g: &mut Gradients) {
    if spec.kind() == SchemeKind::Block {
        g.params.scale(-1.0);
        g.dx1.iter_mut().for_each(|v| *v = -*v);
    }
}

#[test]
fn sign_error_in_block_backward_fails_the_gradient_suite() {
    let hooks = Hooks {
        gradient_fault: Some(flip_block_backward),
    };
    let o = invoke_with(&["verify", "--scheme", "block", "--instances", "5"], hooks);
    assert_eq!(o.code, EXIT_FAILURE);
    assert!(o.stdout.contains("gradient-check       FAIL"), "{}", o.stdout);
    assert!(o.stdout.contains("first failure in gradient-check"), "{}", o.stdout);
    assert!(o.stdout.contains("seed="), "{}", o.stdout);
}

#[test]
fn unknown_scheme_is_a_usage_error() {
    let o = invoke(&["verify", "--scheme", "nosuch"]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stderr.contains("Usage:"), "{}", o.stderr);
}

fn count_line(stdout: &str, name: &str) -> Option<u64> {
    stdout.lines().find_map(|l| {
        let mut parts = l.split_whitespace();
        (parts.next() == Some(name)).then(|| parts.next()?.parse().ok())?
    })
}

#[test]
fn count_reproduces_closed_forms() {
    let o = invoke(&["count", "--scheme", "tucker", "--core", "500", "500", "500", "--in", "1", "1", "--out", "1"]);
    assert_eq!(o.code, EXIT_OK);
    assert_eq!(count_line(&o.stdout, "core"), Some(125_000_000));

    let o = invoke(&["count", "--scheme", "cp", "--in", "10", "10", "--out", "10", "--rank", "5"]);
    assert_eq!(count_line(&o.stdout, "total"), Some(150));

    let o = invoke(&[
        "count", "--scheme", "block", "--in", "2048", "2048", "--out", "3000", "--core", "80", "80", "80",
        "--blocks", "20", "--slice-rank", "10",
    ]);
    assert_eq!(count_line(&o.stdout, "core"), Some(2_560_000));

    let o = invoke(&["count", "--scheme", "block", "--budget", "555000", "--blocks", "20", "--in", "1", "1", "--out", "1"]);
    assert_eq!(count_line(&o.stdout, "L=M=N"), Some(30));
    assert_eq!(count_line(&o.stdout, "unspent"), Some(15_000));
}

#[test]
fn count_without_required_args_is_a_usage_error() {
    let o = invoke(&["count", "--scheme", "cp", "--in", "10", "10", "--out", "10"]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stderr.contains("--rank") && o.stderr.contains("Usage:"), "{}", o.stderr);
    let o = invoke(&["count", "--scheme", "cp", "--rank", "2"]);
    assert_eq!(o.code, EXIT_USAGE);
}

#[test]
fn train_writes_deterministic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        let o = invoke(&["train", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
        assert!(o.stdout.contains("test_metric"), "{}", o.stdout);
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().next(), Some("epoch,train_loss,val_metric"));
    assert!(text.lines().last().unwrap().starts_with("summary,"));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn train_uses_the_config_output_path() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-config.csv");
    let body = format!("output = {:?}\n{SMALL}", target.to_str().unwrap());
    let cfg = write_config(dir.path(), "c.toml", &body);
    assert_eq!(invoke(&["train", cfg.to_str().unwrap()]).code, EXIT_OK);
    assert!(target.exists());
}

#[test]
fn malformed_config_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[fusion\nscheme = \"block\"\n");
    let o = invoke(&["train", cfg.to_str().unwrap(), "--out", "unused.csv"]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stderr.contains("bad.toml:1:"), "{}", o.stderr);

    let cfg = write_config(dir.path(), "extra.toml", &SMALL.replace("blocks = 2", "blocks = 2\ncolour = 1"));
    let o = invoke(&["train", cfg.to_str().unwrap(), "--out", "unused.csv"]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stderr.contains("extra.toml:8:") && o.stderr.contains("colour"), "{}", o.stderr);

    let o = invoke(&["train", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.code, EXIT_USAGE);
}

fn sweep_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("R,L,param_count,metric_mean,metric_std,seconds"));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn sweep_core_size_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", &SMALL.replace("max_epochs = 8", "max_epochs = 2"));
    let out = dir.path().join("sweep.csv");
    let o = invoke(&[
        "sweep", cfg.to_str().unwrap(), "--mode", "fixed_core_size", "--core-dim", "12",
        "--r", "1,2,3,4,6,12", "--splits", "1", "--workers", "2", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let rows = sweep_rows(&out);
    let counts: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(counts, ["1728", "432", "192", "108", "48", "12"]);
    assert!(rows.iter().all(|r| r[4].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn sweep_rejects_non_divisors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", SMALL);
    let o = invoke(&[
        "sweep", cfg.to_str().unwrap(), "--mode", "fixed_core_size", "--core-dim", "12",
        "--r", "1,5", "--out", "unused.csv",
    ]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stderr.contains("R=5"), "{}", o.stderr);
}

#[test]
fn help_exits_cleanly() {
    let mut out = Vec::new();
    let mut err = Vec::new();
    assert_eq!(run(["block-fusion", "--help"], &mut out, &mut err), EXIT_OK);
    assert!(String::from_utf8(out).unwrap().contains("verify"));
}
