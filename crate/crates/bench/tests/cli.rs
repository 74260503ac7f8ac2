use std::io::Write;
use std::process::{Command, Output};

fn lsattn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsattn"))
        .args(args)
        .env_remove("LSATTN_THREADS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn flops_listops_full() {
    let o = lsattn(&["flops", "--preset", "lra-listops", "--variant", "full"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("component,per_layer,total"));
    assert_eq!(out.lines().last(), Some("total,605028352,1210056704"));
    assert!(
        stderr(&o).contains("1210056704 FLOPs (1.21 G)"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn flops_from_a_preset_file() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(
        f,
        "# ListOps length, text width\nn = 2048\nvariant = full\nlayers = 2"
    )
    .unwrap();
    let o = lsattn(&["flops", "--preset", f.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).ends_with("total,605028352,1210056704\n"));
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["flops", "--bogus"][..],
        &["frobnicate"],
        &["flops", "--variant", "sparse"],
        &["flops", "--h", "3"],
        &["flops", "--preset", "/no/such/preset"],
        &["sweep", "--n", "256,1024"],
        &["sweep", "--n", "256", "--reps", "2"],
        &["sweep", "--n", "256", "--mem-limit", "1000"],
        &["norms", "--seeds", "5"],
        &["check", "--seed", "x"],
    ] {
        let o = lsattn(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
}

#[test]
fn timing_requires_one_thread() {
    let o = Command::new(env!("CARGO_BIN_EXE_lsattn"))
        .args(["sweep", "--n", "64", "--layers", "1"])
        .env("LSATTN_THREADS", "4")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("LSATTN_THREADS"));
}

#[test]
fn sweep_writes_monotone_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let o = lsattn(&[
        "sweep",
        "--n",
        "256,512,1024",
        "--variant",
        "long-short",
        "--w",
        "8",
        "--r",
        "32",
        "--seed",
        "1",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "n,w,r,mode,variant,flops,wall_ms,peak_bytes,status"
    );
    assert_eq!(lines.len(), 4);
    let flops: Vec<u64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(5).unwrap().parse().unwrap())
        .collect();
    assert!(flops.windows(2).all(|p| p[1] > p[0]), "{flops:?}");
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(
            (f[1], f[2], f[3], f[4], f[8]),
            ("8", "32", "bidirectional", "long-short", "ok")
        );
        assert!(f[7].parse::<u64>().unwrap() > 0);
    }
}

#[test]
fn memory_limit_turns_large_cells_into_oom_rows() {
    let o = lsattn(&[
        "sweep",
        "--n",
        "256,512,1024",
        "--variant",
        "full",
        "--layers",
        "1",
        "--mem-limit",
        "4000000",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let status: Vec<&str> = out
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert_eq!(status, ["ok", "oom", "oom"]);
    assert!(out.lines().nth(3).unwrap().ends_with(",,,oom"));
}

#[test]
fn check_is_green() {
    let o = lsattn(&["check", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.lines().count() >= 9);
    assert!(out.lines().all(|l| l.starts_with("PASS ")), "{out}");
}

#[test]
fn norms_csv() {
    let o = lsattn(&[
        "norms", "--n", "64", "--d", "16", "--w", "4", "--r", "4", "--layers", "2", "--seeds", "10",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "layer,seed,key_ratio,value_ratio,dual_ln");
    assert_eq!(lines.len(), 1 + 2 * 10 * 2);
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        let key: f64 = f[2].parse().unwrap();
        if f[4] == "true" {
            assert!((0.98..=1.02).contains(&key), "{l}");
        }
    }
}

#[test]
fn one_hot_norm_ratios_are_one() {
    let o = lsattn(&[
        "norms",
        "--n",
        "16",
        "--d",
        "8",
        "--w",
        "4",
        "--r",
        "16",
        "--layers",
        "1",
        "--one-hot",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for l in stdout(&o).lines().skip(1) {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!((f[2], f[3]), ("1", "1"), "{l}");
    }
}

#[test]
fn train_and_ablate_write_csv() {
    let o = lsattn(&[
        "train",
        "--steps",
        "4",
        "--eval-every",
        "2",
        "--seq",
        "16",
        "--synthetic-bytes",
        "2000",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(
        out.lines().next(),
        Some("step,train_loss_nats,val_bpc,wall_ms")
    );
    assert_eq!(out.lines().count(), 5);

    let o = lsattn(&[
        "ablate",
        "--steps",
        "4",
        "--seq",
        "16",
        "--synthetic-bytes",
        "2000",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(
        out.lines().next(),
        Some("step,val_bpc_dual_ln,val_bpc_plain")
    );
    // Untrained model plus the evaluation after the last step.
    assert_eq!(out.lines().count(), 3);

    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(&[b'q'; 100]).unwrap();
    let o = lsattn(&[
        "train",
        "--corpus",
        f.path().to_str().unwrap(),
        "--seq",
        "16",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
