//! End-to-end pipeline reproducibility: the full CLI flow on an 8-rank
//! transformer workload produces byte-identical artifacts across repeat
//! runs and across thread-count settings.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ettrace"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn ettrace");
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf8 stdout")
}

/// Runs the whole pipeline into `dir` and returns every artifact's bytes,
/// keyed by path relative to `dir`.
fn pipeline(dir: &Path, threads: &str) -> BTreeMap<String, Vec<u8>> {
    let traces = dir.join("traces");
    std::fs::create_dir_all(&traces).unwrap();

    run_ok(bin().args([
        "--threads", threads, "--quiet",
        "generate", "transformer",
        "--layers", "4", "--tp", "2", "--dp", "2", "--pp", "2",
        "--microbatches", "2", "--grad-buckets", "2", "--seed", "7",
        "--out", traces.to_str().unwrap(),
    ]));

    let net = dir.join("net.json");
    std::fs::write(
        &net,
        b"{\"topology\":\"switch\",\"link_bandwidth_bytes_per_us\":100.0,\"latency_alpha_us\":0.5}\n",
    )
    .unwrap();

    let glob = format!("{}/trace.rank*.et.json", traces.display());
    let report = dir.join("simreport.json");
    run_ok(bin().args([
        "--threads", threads, "--quiet",
        "simulate", "--net", net.to_str().unwrap(),
        "--ranks", &glob,
        "--out", report.to_str().unwrap(),
    ]));

    let sweep_out = dir.join("sweep.csv");
    run_ok(bin().args([
        "--threads", threads, "--quiet",
        "sweep", "--net", net.to_str().unwrap(),
        "--ranks", &glob,
        "--axis", "bandwidth", "--values", "0.5,1,2,4",
        "--out", sweep_out.to_str().unwrap(),
    ]));

    // timing-free reports on the transformer trace
    for report in ["counts", "deps"] {
        let csv = run_ok(bin().args([
            "--threads", threads, "--quiet",
            "analyze", traces.join("trace.rank0.et.json").to_str().unwrap(),
            "--report", report,
        ]));
        std::fs::write(dir.join(format!("rank0.{report}.csv")), csv).unwrap();
    }

    // full report set on a timed workload
    let random = dir.join("random");
    std::fs::create_dir_all(&random).unwrap();
    run_ok(bin().args([
        "--threads", threads, "--quiet",
        "generate", "random", "--nodes", "2000", "--edge-prob", "0.002",
        "--seed", "11", "--out", random.to_str().unwrap(),
    ]));
    let analysis = dir.join("analysis");
    std::fs::create_dir_all(&analysis).unwrap();
    run_ok(bin().args([
        "--threads", threads, "--quiet",
        "analyze", random.join("trace.rank0.et.json").to_str().unwrap(),
        "--all", "--out", analysis.to_str().unwrap(),
    ]));

    // feed order for one rank, captured from stdout
    let feed = run_ok(bin().args([
        "--threads", threads, "--quiet",
        "feed", traces.join("trace.rank0.et.json").to_str().unwrap(),
        "--policy", "fifo", "--window", "64",
    ]));
    std::fs::write(dir.join("feed_order.txt"), feed).unwrap();

    collect(dir)
}

fn collect(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn assert_same(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>, what: &str) {
    assert_eq!(
        a.keys().collect::<Vec<_>>(),
        b.keys().collect::<Vec<_>>(),
        "{what}: artifact sets differ"
    );
    for (k, va) in a {
        assert_eq!(va, &b[k], "{what}: {k} differs");
    }
}

#[test]
fn acceptance_8_cli_pipeline_reproducible() {
    let start = Instant::now();
    let dirs: Vec<(tempfile::TempDir, &str)> = vec![
        (tempfile::tempdir().unwrap(), "1"),
        (tempfile::tempdir().unwrap(), "1"),
        (tempfile::tempdir().unwrap(), "1"),
        (tempfile::tempdir().unwrap(), "8"),
    ];
    let runs: Vec<BTreeMap<String, Vec<u8>>> =
        dirs.iter().map(|(d, t)| pipeline(d.path(), t)).collect();

    // the run includes the 8 per-rank traces, simreport + collectives CSV,
    // sweep CSV, five analysis CSVs + summary, net.json, feed order
    assert!(runs[0].len() >= 17, "only {} artifacts", runs[0].len());
    assert_same(&runs[0], &runs[1], "run 1 vs 2");
    assert_same(&runs[0], &runs[2], "run 1 vs 3");
    assert_same(&runs[0], &runs[3], "threads 1 vs 8");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 30, "pipeline took {elapsed:?}");
    println!(
        "ACCEPTANCE 8 CLI pipeline reproducibility (4 runs, {} artifacts, {elapsed:?}): PASS",
        runs[0].len()
    );
}
