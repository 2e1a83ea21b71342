use std::process::{Command, Output};

fn fusedgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusedgnn"))
        .args(args)
        .output()
        .expect("spawn fusedgnn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn verify_all_models_agree() {
    for model in ["gt", "agnn", "gat"] {
        for dtype in ["f32", "f64"] {
            let o = fusedgnn(&[
                "verify",
                "--model",
                model,
                "--nodes",
                "120",
                "--avg-degree",
                "5",
                "--dim",
                "16",
                "--seed",
                "4",
                "--dtype",
                dtype,
            ]);
            assert!(o.status.success(), "{model} {dtype}: {}", stdout(&o));
            assert_eq!(stdout(&o).matches("PASS").count(), 4);
        }
    }
}

#[test]
fn verify_skips_infeasible_smmf_but_fails_when_forced() {
    let base = [
        "verify",
        "--nodes",
        "200",
        "--avg-degree",
        "2",
        "--hub-degree",
        "180",
        "--dim",
        "8",
        "--shared-mem-bytes",
        "1024",
    ];
    let o = fusedgnn(&base);
    assert!(o.status.success());
    assert!(stdout(&o).contains("smmf              SKIP"));

    let mut forced = base.to_vec();
    forced.extend(["--strategy", "smmf"]);
    let o = fusedgnn(&forced);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("shared memory"));
}

#[test]
fn gradcheck_passes_and_rejects_bad_step() {
    for model in ["gt", "agnn", "gat"] {
        let o = fusedgnn(&[
            "gradcheck",
            "--model",
            model,
            "--nodes",
            "12",
            "--dim",
            "4",
            "--seed",
            "1",
        ]);
        assert!(o.status.success(), "{}", stdout(&o));
        assert!(stdout(&o).contains("max relative error"));
    }
    let o = fusedgnn(&["gradcheck", "--nodes", "8", "--h", "0.1"]);
    assert!(!o.status.success());
}

#[test]
fn bench_writes_csv_and_markdown() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let csv = dir.path().join("report.csv");
    let md = dir.path().join("report.md");
    std::fs::write(
        &cfg,
        r#"{"model": "gat", "nodes": 40, "avg_degree": 6, "batch_count": 2, "dim": 8, "timing_repeats": 1}"#,
    )
    .unwrap();
    let o = fusedgnn(&[
        "bench",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
        "--md",
        md.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with(
        "mode,elapsed_ns,kernel_launches,global_bytes_read,global_bytes_written,shared_bytes,\
         memory_transactions,softmax_scalar_ops,max_group_load,mean_group_load,speedup_vs_unfused,\
         bandwidth_utilization\n"
    ));
    assert_eq!(text.lines().count(), 6);
    assert!(std::fs::read_to_string(&md).unwrap().contains("| auto |"));
}

#[test]
fn bench_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"strategies": ["nope"]}"#).unwrap();
    let out = dir.path().join("r.csv");
    let o = fusedgnn(&[
        "bench",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
}

#[test]
fn gen_graph_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.txt");
    let o = fusedgnn(&[
        "gen-graph",
        "--nodes",
        "50",
        "--avg-degree",
        "3",
        "--hub-degree",
        "40",
        "--seed",
        "9",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let g = fusedgnn::graph::read_edge_list(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(g, fusedgnn::gen_super_node(50, 3.0, 40, 9).unwrap());
}
