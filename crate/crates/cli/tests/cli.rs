use std::path::Path;
use std::process::{Command, Output};

use tdp_core::bench::{read_csv, wire_throughput, CSV_COLUMNS};
use tdp_core::traffic::read_capture;

fn tdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdp"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn tdp")
}

fn quick<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "run",
        "--frames",
        "2000",
        "--reps",
        "1",
        "--cardinality",
        "1000",
        "--oversubscribe",
        "--out",
        out,
    ];
    v.extend_from_slice(extra);
    v
}

fn stem(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn l2fwd_both_modes_writes_eight_consistent_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = stem(dir.path(), "l2");
    let o = tdp(&quick(&out, &["l2fwd", "--sizes", "64,128,256,512", "--mode", "both"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(format!("{out}.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
    let rows = read_csv(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 8);
    for r in &rows {
        let mpps: f64 = r.mpps.parse().unwrap();
        let gbps: f64 = r.wire_gbps.parse().unwrap();
        // mpps is printed with 2 decimals, so allow half a unit of that.
        let slack = 0.005 * (r.frame_size + 20) as f64 * 8.0 / 1000.0 + 0.005;
        assert!((wire_throughput(mpps, r.frame_size).unwrap() - gbps).abs() <= slack);
        assert_eq!(r.drops, 0);
        assert_eq!(r.overhead_pct.is_empty(), r.mode == "vanilla");
    }
}

#[test]
fn encrypted_ablation_and_lb_matrix_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let out = stem(dir.path(), "enc");
    let o = tdp(&quick(&out, &["l2fwd-enc", "--enclaves", "1,2,3", "--no-icv", "--sizes", "64"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(std::fs::File::open(format!("{out}.csv")).unwrap()).unwrap();
    let topologies: Vec<&str> = rows.iter().map(|r| r.topology.as_str()).collect();
    assert_eq!(
        topologies,
        ["parallel(1),no-icv", "parallel(1),no-icv", "parallel(2),no-icv", "parallel(2),no-icv", "parallel(3),no-icv", "parallel(3),no-icv"]
    );

    let out = stem(dir.path(), "lb");
    let o = tdp(&quick(
        &out,
        &["lb-server", "--servers", "0,5", "--buffer-mode", "trusted_copy,untrusted", "--sizes", "64"],
    ));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(std::fs::File::open(format!("{out}.csv")).unwrap()).unwrap();
    let modes: Vec<(&str, &str)> = rows.iter().map(|r| (r.topology.as_str(), r.mode.as_str())).collect();
    assert_eq!(
        modes,
        [
            ("lb(0)", "vanilla"),
            ("lb(0)", "trusted-copy"),
            ("lb(0)", "trusted-nocopy"),
            ("lb(5)", "vanilla"),
            ("lb(5)", "trusted-copy"),
            ("lb(5)", "trusted-nocopy"),
        ]
    );
    let copy = &rows[4];
    assert_eq!(copy.bytes_out, 2000 * 4 + 2000 * 4);
    let nocopy = &rows[5];
    assert_eq!((nocopy.bytes_out, nocopy.bytes_in), (0, 0));
}

#[test]
fn flags_override_config_file_and_config_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.conf");
    std::fs::write(&file, "# desk run\nscenario = l3fwd\nsizes = 64\nseed = 5\nmode = trusted\n").unwrap();
    let out = stem(dir.path(), "cfg");
    let file_arg = file.display().to_string();
    let o = tdp(&quick(&out, &["--config", &file_arg, "--seed", "9"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(format!("{out}.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["seed"], 9);
    assert_eq!(json["config"]["scenarios"][0], "l3fwd");
    assert_eq!(json["runs"].as_array().unwrap().len(), 1);
    assert!(json["host"]["cpus"].as_u64().unwrap() >= 1);
}

#[test]
fn invalid_configuration_names_the_field_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = stem(dir.path(), "bad");
    for (args, field) in [
        (vec!["l2fwd", "--sizes", "32"], "sizes"),
        (vec!["l2fwd", "--ring-cap", "1000"], "ring-cap"),
        (vec!["l2fwd", "--batch", "0"], "batch"),
        (vec!["l2fwd", "--mode", "sometimes"], "mode"),
        (vec!["lb-server", "--topology", "pipeline"], "topology"),
    ] {
        let o = tdp(&quick(&out, &args));
        assert!(!o.status.success(), "{args:?} succeeded");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(&format!("{field}:")), "{args:?}: {err}");
    }
    assert!(!Path::new(&format!("{out}.json")).exists());
}

#[test]
fn insufficient_workers_without_oversubscription() {
    let o = tdp(&["run", "lb-server", "--servers", "5", "--workers", "2", "--frames", "100", "--reps", "1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--oversubscribe"));
}

#[test]
fn verify_reports_per_suite_and_sets_exit_status() {
    let o = tdp(&["verify", "--suite", "2,5,10"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    for id in ["AC2 ", "AC5 ", "AC10"] {
        assert!(stdout.lines().any(|l| l.starts_with(id) && l.contains("PASS")), "{stdout}");
    }

    let o = tdp(&["verify", "--suite", "3", "--corrupt-table"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(!o.status.success());
    assert!(stdout.contains("AC3  FAIL semantic equivalence"), "{stdout}");

    let o = tdp(&["verify", "--suite", "11"]);
    assert!(!o.status.success());
}

#[test]
fn record_writes_a_readable_capture() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l3.tdpc");
    let p = path.display().to_string();
    let o = tdp(&["record", "l3fwd", "--frames", "500", "--oversubscribe", "--out", &p]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let frames = read_capture(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(frames.len(), 500);
    assert!(frames.iter().all(|f| f.len() == 64 && f[22] == 63));
}
