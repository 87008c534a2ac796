mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use serde_json::Value;

use snn_hwnas::arch::{LayerKind, LayerRole, LayerSpec};
use snn_hwnas::batch::{gen_synthetic_batch, save_batch};
use snn_hwnas::imc::map_layer;
use snn_hwnas::quant::QuantSpec;
use snn_hwnas::search::{hw_aware_search, Constraints, SearchOptions};
use snn_hwnas::RunConfig;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_snn-hwnas")
}

fn run(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Small run config with its batch on disk.
fn small_setup(dir: &Path) -> (RunConfig, PathBuf) {
    let batch_path = dir.join("b.nnas");
    save_batch(&gen_synthetic_batch(5, 3, 8, 8, 4).unwrap(), &batch_path).unwrap();
    let cfg = RunConfig {
        base_channels: 8,
        run_seed: 5,
        batch_path,
        output_path: dir.join("search.json"),
        constraints: Constraints {
            mem_params_max: 50_000.0,
            area_mm2_max: 500.0,
            latency_ms_max: f64::INFINITY,
            energy_uj_max: 80.0,
        },
        ..RunConfig::default()
    };
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    (cfg, path)
}

#[test]
fn gen_batch_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.nnas");
    let b = dir.path().join("b.nnas");
    for p in [&a, &b] {
        let out = run(
            &[
                "gen-batch",
                "--samples",
                "16",
                "--seed",
                "3",
                "--out",
                p.to_str().unwrap(),
            ],
            None,
        );
        assert!(out.status.success());
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(bytes.len(), 22 + 196_608);
}

#[test]
fn exit_codes_for_usage_and_config_errors() {
    assert_eq!(run(&["--help"], None).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"], None).status.code(), Some(1));
    assert_eq!(
        run(&["score", "--cell-a", "0,1,2", "--cell-b", "0,0,0,0,0,0"], None)
            .status
            .code(),
        Some(1)
    );

    let dir = tempfile::tempdir().unwrap();
    let shipped = include_str!("../config/default.toml");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, shipped.replace("bits_per_cell = 1", "bits_per_cell = 16")).unwrap();
    let out = run(&["search"], Some(&bad));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bit_d exceeds bit_w"));

    std::fs::write(&bad, shipped.replace("latency_ms_max", "latencyy_ms_max")).unwrap();
    let out = run(&["search"], Some(&bad));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("latencyy_ms_max"));

    let missing = dir.path().join("nope.nnas");
    let out = run(&["search", "--batch", missing.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn search_report_reproduces_through_score_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, cfg_path) = small_setup(dir.path());
    let out = run(&["search"], Some(&cfg_path));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&cfg.output_path);
    assert_eq!(report["schema_version"], 1);
    let canon = &report["canonical"];
    assert_eq!(canon["evaluated_count"], 1458);
    assert_eq!(canon["satisfies_constraints"], true);
    for axis in ["mem_params", "area_mm2", "latency_ms", "energy_uj"] {
        let m = &canon["margins"][axis];
        assert!(m == "inf" || m.as_f64().unwrap() >= 0.0, "{axis} margin {m}");
    }
    assert_eq!(canon["config"]["run_seed"], 5);
    assert_eq!(canon["config"]["fitness"]["beta"], "samples_per_neuron");
    assert_eq!(canon["config"]["lif"]["leak"], 0.75);
    assert!(canon["config"].get("workers").is_none());
    let lif_layers = canon["costs"]["layers"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|l| l["kind"] != "avg_pool" && l["kind"] != "fully_connected")
        .count();
    assert_eq!(canon["betas"].as_array().unwrap().len(), lif_layers);

    let codes = |v: &Value| {
        v.as_array()
            .unwrap()
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let (a, b) = (codes(&canon["cell_a"]), codes(&canon["cell_b"]));
    let score_out = dir.path().join("score.json");
    let out = run(
        &[
            "score",
            "--cell-a",
            &a,
            "--cell-b",
            &b,
            "--out",
            score_out.to_str().unwrap(),
        ],
        Some(&cfg_path),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scored = read_json(&score_out);
    assert_eq!(scored["canonical"]["score"], canon["score"]);
    assert_eq!(scored["canonical"]["costs"], canon["costs"]);

    let cost_out = dir.path().join("cost.json");
    let out = run(
        &[
            "cost",
            "--cell-a",
            &a,
            "--cell-b",
            &b,
            "--out",
            cost_out.to_str().unwrap(),
        ],
        Some(&cfg_path),
    );
    assert!(out.status.success());
    let costed = read_json(&cost_out);
    assert!(costed["canonical"].get("score").is_none());
    assert_eq!(costed["canonical"]["costs"], canon["costs"]);

    // the report itself is a valid config
    let rerun_out = dir.path().join("rerun.json");
    let out = run(
        &["search", "--out", rerun_out.to_str().unwrap()],
        Some(&cfg.output_path),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rerun = read_json(&rerun_out);
    assert_eq!(rerun["canonical"]["cell_a"], canon["cell_a"]);
    assert_eq!(rerun["canonical"]["cell_b"], canon["cell_b"]);
    assert_eq!(rerun["canonical"]["costs"], canon["costs"]);
}

#[test]
fn bits_flag_overrides_precision() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg_path) = small_setup(dir.path());
    let mut xbars = Vec::new();
    for bits in ["4", "16"] {
        let out_path = dir.path().join(format!("c{bits}.json"));
        let out = run(
            &[
                "cost",
                "--cell-a",
                "1,1,1,1,1,1",
                "--cell-b",
                "1,1,1,1,1,1",
                "--bits",
                bits,
                "--out",
                out_path.to_str().unwrap(),
            ],
            Some(&cfg_path),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let r = read_json(&out_path);
        assert_eq!(r["canonical"]["config"]["quant"]["bit_w"].to_string(), bits);
        xbars.push(r["canonical"]["costs"]["total_xbars"].as_u64().unwrap());
    }
    assert!(xbars[0] < xbars[1]);
}

#[test]
fn trace_records_skipped_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, cfg_path) = small_setup(dir.path());
    let out = run(&["search", "--trace"], Some(&cfg_path));
    assert!(out.status.success());
    let report = read_json(&cfg.output_path);
    let trace = report["canonical"]["trace"].as_array().unwrap();
    assert_eq!(trace.len(), 1458);
    for t in trace {
        let over = t["costs"]["mem_params"].as_f64().unwrap() > cfg.constraints.mem_params_max;
        if over {
            assert!(t.get("score").is_none_or(Value::is_null) && t["feasible"] == false);
        }
    }
}

#[test]
fn phase_one_budgets_never_move_cell_a() {
    let base = common::small_problem(4, 4, 12);
    let free = hw_aware_search(&base, &SearchOptions::default()).unwrap();
    let costs = &free.report;
    for scale in [0.5, 0.9, 1.0, 1.5] {
        let mut p = base.clone();
        p.constraints.area_mm2_max = costs.area_mm2 * scale;
        p.constraints.latency_ms_max = costs.latency_ms * scale;
        p.constraints.energy_uj_max = costs.energy_uj * (2.0 - scale);
        match hw_aware_search(&p, &SearchOptions::default()) {
            Ok(r) => {
                assert_eq!(r.cell_a, free.cell_a);
                assert!(r.evaluated_count <= 1458 && r.feasible_count <= r.evaluated_count);
            }
            Err(e) => assert_eq!(e.exit_code(), 2),
        }
    }
}

#[test]
fn published_budgets_with_default_hardware() {
    // full-width default network, four 32x32 samples to keep the run short
    let cfg = RunConfig::default();
    let batch = gen_synthetic_batch(4, 3, 32, 32, 1).unwrap();
    let p = cfg.problem(batch).unwrap();
    let r = hw_aware_search(&p, &SearchOptions::default()).unwrap();
    let c = cfg.constraints;
    assert!(r.report.mem_params as f64 <= c.mem_params_max);
    assert!(r.report.area_mm2 <= c.area_mm2_max);
    assert!(r.report.latency_ms <= c.latency_ms_max);
    assert!(r.report.energy_uj <= c.energy_uj_max);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mapping_matches_placement(
        conv in any::<bool>(),
        d in 1usize..300,
        f in 1usize..300,
        x in prop::sample::select(vec![16u32, 32, 64, 128, 256]),
        bw in 1u32..=16,
        bd_raw in 1u32..=16,
    ) {
        let bd = bd_raw.min(bw);
        let spec = QuantSpec::new(bw, bd).unwrap();
        prop_assume!(spec.adjustment_factor() <= x);
        let kernel = if conv { 3 } else { 1 };
        let layer = LayerSpec {
            kind: if conv { LayerKind::Conv } else { LayerKind::FullyConnected },
            role: LayerRole::Stem,
            kernel,
            in_channels: d,
            out_channels: f,
            in_spatial: if conv { 8 } else { 1 },
            stride: 1,
            padding: kernel / 2,
            has_lif: conv,
        };
        let m = map_layer(&layer, &common::hw_with_xbar(x), &spec).unwrap();
        let o = common::place_layer(&layer, x as usize, 9, 8, bw, bd);
        prop_assert_eq!((m.n_xbars, m.n_pes, m.n_tiles), (o.xbars, o.pes, o.tiles));
    }
}
