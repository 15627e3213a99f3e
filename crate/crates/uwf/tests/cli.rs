//! End-to-end runs of the `uwf` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use uwf::cli::{CURVES_FILE, DATASET_FILE, HISTORY_FILE, MODEL_FILE, PLOT_FILE, REPORT_FILE, THEORY_FILE};
use uwf::data::{dataset_from_container, map_from_container, model_from_container, model_to_container, state_from_container, Container};
use uwf::experiments::wf_errors;
use uwf::forward::ScaleRule;
use uwf::metrics::Curves;
use uwf::nets::Net;
use uwf::unrolled::{ModelSpec, UnrolledModel};
use uwf::wf::{StepSize, WfConfig};

fn uwf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uwf")).args(args).env("UWF_THREADS", "2").output().expect("spawn uwf")
}

fn ok(args: &[&str]) -> Output {
    let o = uwf(args);
    assert!(o.status.success(), "uwf {args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config(dir: &Path, name: &str, count: usize, epochs: usize, lr: &str) -> std::path::PathBuf {
    let text = format!(
        r#"{{
  "map": {{"kind": "gaussian", "M": 64, "N": 16, "seed": 4}},
  "model": {{"N_y": 4, "L": 2, "encoder_dims": [12], "decoder_dims": [8]}},
  "train": {{"lr": {lr}, "epochs": {epochs}, "batch": 8, "seed": 9, "scale_rule": "norm_of_d"}},
  "data": {{"source": "squares", "count": {count}, "H": 4, "W": 4, "snr_db": 30, "seed": 2}},
  "wf": {{"step": 0.1, "max_iter": 300}}
}}"#
    );
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn gen_data_round_trips_and_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let cfg = config(t.path(), "c.json", 10, 1, "2e-3");
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&b)]);
    let fa = fs::read(a.join(DATASET_FILE)).unwrap();
    assert_eq!(fa, fs::read(b.join(DATASET_FILE)).unwrap());

    let c = Container::from_bytes(&fa).unwrap();
    let ds = dataset_from_container(&c).unwrap();
    let f = map_from_container(&c).unwrap();
    assert_eq!((ds.samples.len(), ds.h, ds.w, f.m(), f.n()), (10, 4, 4, 64, 16));
    assert_eq!(Container::from_bytes(&c.to_bytes()).unwrap(), c);

    // A different seed changes the data.
    let d = t.path().join("d");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&d), "--seed", "77"]);
    assert_ne!(fa, fs::read(d.join(DATASET_FILE)).unwrap());
}

#[test]
fn dataset_size_is_linear_in_count() {
    let t = tempfile::tempdir().unwrap();
    let sizes: Vec<u64> = [10, 20, 30]
        .iter()
        .map(|&k| {
            let cfg = config(t.path(), &format!("c{k}.json"), k, 1, "2e-3");
            let out = t.path().join(format!("o{k}"));
            ok(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
            fs::metadata(out.join(DATASET_FILE)).unwrap().len()
        })
        .collect();
    // Each sample stores N image values and M intensities as f64.
    let per_ten = 10 * (16 + 64) * 8;
    assert_eq!(sizes[1] - sizes[0], per_ten);
    assert_eq!(sizes[2] - sizes[1], per_ten);
}

#[test]
fn zero_epochs_checkpoint_is_the_initialization() {
    let t = tempfile::tempdir().unwrap();
    let cfg = config(t.path(), "c.json", 12, 0, "2e-3");
    let out = t.path().join("o");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
    ok(&["train", "--config", s(&cfg), "--data", s(&out.join(DATASET_FILE)), "--out", s(&out)]);
    let got = model_from_container(&Container::load(out.join(MODEL_FILE)).unwrap()).unwrap();
    let spec: ModelSpec = serde_json::from_str(r#"{"N_y": 4, "L": 2, "encoder_dims": [12], "decoder_dims": [8]}"#).unwrap();
    assert_eq!(got, UnrolledModel::init(16, &spec, 9).unwrap());
    let hist = fs::read_to_string(out.join(HISTORY_FILE)).unwrap();
    assert_eq!(hist.lines().count(), 1);
}

#[test]
fn history_rows_match_epochs_and_resume_is_exact() {
    let t = tempfile::tempdir().unwrap();
    let c2 = config(t.path(), "c2.json", 24, 2, "2e-3");
    let c4 = config(t.path(), "c4.json", 24, 4, "2e-3");
    let data_dir = t.path().join("data");
    ok(&["gen-data", "--config", s(&c2), "--out", s(&data_dir)]);
    let data = data_dir.join(DATASET_FILE);

    let full = t.path().join("full");
    ok(&["train", "--config", s(&c4), "--data", s(&data), "--out", s(&full)]);
    let full_hist = fs::read_to_string(full.join(HISTORY_FILE)).unwrap();
    assert_eq!(full_hist.lines().count(), 1 + 4);

    let first = t.path().join("first");
    let second = t.path().join("second");
    ok(&["train", "--config", s(&c2), "--data", s(&data), "--out", s(&first)]);
    ok(&["train", "--config", s(&c2), "--data", s(&data), "--out", s(&second), "--model", s(&first.join(MODEL_FILE))]);
    assert_eq!(fs::read_to_string(second.join(HISTORY_FILE)).unwrap(), full_hist);
    let a = state_from_container(&Container::load(full.join(MODEL_FILE)).unwrap()).unwrap();
    let b = state_from_container(&Container::load(second.join(MODEL_FILE)).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn eval_of_a_planted_identity_model_and_wf_column() {
    let t = tempfile::tempdir().unwrap();
    let cfg_text = r#"{
  "map": {"kind": "gaussian", "M": 128, "N": 16, "seed": 5},
  "model": {"N_y": 16, "L": 2},
  "train": {"scale_rule": "norm_of_d"},
  "data": {"source": "squares", "count": 6, "H": 4, "W": 4, "seed": 3},
  "wf": {"step": 0.2, "max_iter": 400}
}"#;
    let cfg = t.path().join("c.json");
    fs::write(&cfg, cfg_text).unwrap();
    let out = t.path().join("o");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);

    // Encoder keeps the real part of the aligned init and the decoder is the
    // identity, so the stages run real-valued WF steps in image space.
    let n = 16;
    let mut w = vec![0.0; n * 2 * n];
    for i in 0..n {
        w[i * 2 * n + i] = 1.0;
    }
    let model = UnrolledModel::new(Net::linear(w, n, 2 * n).unwrap(), Net::identity(n), vec![0.3; 400]).unwrap();
    let mut c = Container::default();
    model_to_container(&model, &mut c).unwrap();
    let mp = t.path().join("planted.uwfd");
    c.store(&mp).unwrap();

    let data = out.join(DATASET_FILE);
    ok(&["eval", "--model", s(&mp), "--data", s(&data), "--out", s(&out), "--config", s(&cfg)]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(REPORT_FILE)).unwrap()).unwrap();
    let r = &report["report"];
    assert!(r["model_median"].as_f64().unwrap() < 1e-8, "{}", r["model_median"]);
    for key in ["d1", "d2", "d3"] {
        assert!(r["init"][key].is_number(), "missing {key}");
    }
    let rows = r["per_sample"].as_array().unwrap();
    assert_eq!(rows.len(), 6);

    // The WF column equals a standalone library run with the same settings.
    let ds = dataset_from_container(&Container::load(&data).unwrap()).unwrap();
    let f = map_from_container(&Container::load(&data).unwrap()).unwrap();
    let wf = WfConfig { step: StepSize::Constant(0.2), max_iter: 400, ..WfConfig::default() };
    let direct = wf_errors(&f, &ds.samples, &wf, ScaleRule::NormOfD).unwrap();
    for (row, d) in rows.iter().zip(&direct) {
        assert_eq!(row["wf_mse"].as_f64().unwrap(), *d);
    }

    let curves = Curves::from_csv(&fs::read_to_string(out.join(CURVES_FILE)).unwrap()).unwrap();
    assert_eq!(curves.get("model").unwrap().len(), 6);
    assert_eq!(curves.get("wf").unwrap().len(), 6);

    let none = t.path().join("none");
    ok(&["eval", "--model", s(&mp), "--data", s(&data), "--out", s(&none), "--baseline", "none"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(none.join(REPORT_FILE)).unwrap()).unwrap();
    assert!(report["report"]["wf_median"].is_null());
}

#[test]
fn theory_report_schema() {
    let t = tempfile::tempdir().unwrap();
    let cfg = config(t.path(), "c.json", 12, 1, "2e-3");
    let out = t.path().join("o");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
    let data = out.join(DATASET_FILE);
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    ok(&["theory", "--samples", s(&data), "--model", s(&out.join(MODEL_FILE)), "--out", s(&out), "--config", s(&cfg)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(THEORY_FILE)).unwrap()).unwrap();
    let id = &v["identity_decoder"];
    assert_eq!(id["params"]["omega"], 1.0);
    assert_eq!(id["params"]["mu_H"], 1.0);
    assert!(id["checks"].as_array().unwrap().iter().all(|c| c["status"].is_string()));
    let sweep = v["delta_sweep"].as_array().unwrap();
    assert_eq!(sweep.len(), 5);
    assert!(sweep.iter().all(|e| e["delta"].as_f64().unwrap() > 0.0));
    let checks = v["model"]["report"]["checks"].as_array().unwrap();
    assert!(checks.iter().any(|c| c["name"] == "delta1_below_1"));
    assert!(v["model"]["provenance"]["samples"].as_u64().unwrap() == 12);
}

#[test]
fn plot_emits_svg_covering_the_data() {
    let t = tempfile::tempdir().unwrap();
    let csv = t.path().join("c.csv");
    fs::write(&csv, "series,x,y\nwf,0.25,1.2\nwf,0.5,0.9\ndl,0.25,0.3\ndl,0.5,0.2\ndl,1.0,-0.1\n").unwrap();
    ok(&["plot", "--curves", s(&csv), "--out", s(t.path())]);
    let svg = fs::read_to_string(t.path().join(PLOT_FILE)).unwrap();
    let doc = roxmltree::Document::parse(&svg).expect("well-formed SVG");
    let root = doc.root_element();
    assert_eq!(root.tag_name().name(), "svg");
    let lines: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("polyline")).collect();
    assert_eq!(lines.len(), 2);
    let attr = |k: &str| root.attribute(k).unwrap().parse::<f64>().unwrap();
    assert!(attr("data-x-min") <= 0.25 && attr("data-x-max") >= 1.0);
    assert!(attr("data-y-min") <= -0.1 && attr("data-y-max") >= 1.2);
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let missing = t.path().join("missing.json");
    assert_eq!(uwf(&["gen-data", "--config", s(&missing)]).status.code(), Some(4));

    let bad = t.path().join("bad.json");
    fs::write(&bad, r#"{"map": {"kind": "gaussian", "M": 4}, "surprise": 1}"#).unwrap();
    assert_eq!(uwf(&["gen-data", "--config", s(&bad)]).status.code(), Some(2));
    assert_eq!(uwf(&["no-such-command"]).status.code(), Some(2));

    let garbage = t.path().join("garbage.uwfd");
    fs::write(&garbage, b"not a container").unwrap();
    let o = t.path().join("o");
    assert_eq!(uwf(&["eval", "--model", s(&garbage), "--data", s(&garbage), "--out", s(&o)]).status.code(), Some(4));

    let cfg = config(t.path(), "c.json", 8, 2, "1e300");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&o)]);
    let code = uwf(&["train", "--config", s(&cfg), "--data", s(&o.join(DATASET_FILE)), "--out", s(&o)]).status.code();
    assert_eq!(code, Some(3));

    let out = Command::new(env!("CARGO_BIN_EXE_uwf"))
        .args(["plot", "--curves", s(&missing), "--out", s(&o)])
        .env("UWF_THREADS", "none")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
