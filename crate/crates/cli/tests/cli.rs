mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use common::*;
use dynba::graph::text::read_values;
use dynba::metrics::{evaluate, read_tum, write_tum, AlignMode, Trajectory};
use dynba::simulation::{preset, run_ablation, AblationMode, AblationOptions};

fn ok(o: &std::process::Output) {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(o), stderr(o));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn files_except_manifest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|f| f.is_file() && f.file_name().unwrap() != "manifest.txt")
        .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&f).unwrap()))
        .collect();
    out.sort();
    out
}

fn simulate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--out", p(dir)];
    args.extend_from_slice(extra);
    ok(&dynba(args));
}

#[test]
fn simulate_is_reproducible_and_lists_its_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&a, &["--preset", "group1", "--seed", "5"]);
    simulate(&b, &["--config", p(&config_file("group1")), "--seed", "5"]);
    let fa = files_except_manifest(&a);
    assert_eq!(fa, files_except_manifest(&b));
    let names: BTreeSet<String> = fa.iter().map(|f| f.0.clone()).collect();
    assert_eq!(names, ["graph.txt", "init.txt", "init.tum", "truth.txt", "truth.tum"].map(String::from).into());
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    for n in names.iter().chain(std::iter::once(&"manifest.txt".to_string())) {
        assert!(manifest.contains(&format!("file {n}\n")), "{n} missing from manifest");
    }
    assert_eq!(field(&manifest, "seeds"), Some("5"));
    assert_eq!(field(&manifest, "status"), Some("complete"));
}

#[test]
fn missing_noise_field_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config_file("group1")).unwrap().replace("measurement = 0.05\n", "");
    let cfg = tmp.path().join("broken.toml");
    fs::write(&cfg, text).unwrap();
    let o = dynba(["simulate", "--config", p(&cfg), "--out", p(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("measurement") && err.contains("broken.toml") && err.contains("line"), "{err}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn default_scene_has_the_target_landmark_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dynba(["simulate", "--config", p(&config_file("default")), "--out", p(tmp.path())]);
    ok(&o);
    let ratio: f64 = field(&stdout(&o), "dynamic_per_static").unwrap().parse().unwrap();
    assert!((ratio / 1.8 - 1.0).abs() <= 0.1, "{ratio}");
}

#[test]
fn configs_match_the_builtin_presets() {
    for name in dynba::simulation::PRESET_NAMES {
        let text = fs::read_to_string(config_file(name)).unwrap();
        assert_eq!(dynba::simulation::SimConfig::from_toml(&text).unwrap(), preset(name).unwrap(), "{name}");
    }
}

#[test]
fn before_ba_ablation_equals_simulated_initial_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let (sim, ab) = (tmp.path().join("sim"), tmp.path().join("ab"));
    simulate(&sim, &["--preset", "group1", "--seed", "9"]);
    ok(&dynba(["ablate", "--preset", "group1", "--seeds", "9", "--modes", "before-ba", "--out", p(&ab)]));
    let init = read_values(&fs::read_to_string(sim.join("init.txt")).unwrap()).unwrap();
    let truth = read_values(&fs::read_to_string(sim.join("truth.txt")).unwrap()).unwrap();
    let est = Trajectory::new(init.camera_poses()).unwrap();
    let gt = Trajectory::new(truth.camera_poses()).unwrap();
    let r = evaluate(&est, &gt, AlignMode::Rigid, 1).unwrap();
    let (h, rows) = read_csv(&ab.join("results.csv"));
    assert_eq!(rows.len(), 1);
    let row = &rows[0];
    assert_eq!(row[column(&h, "mode")], "before-ba");
    assert_eq!(row[column(&h, "ate_cm_mean")], dynba_cli::units::num(r.ate_rmse * 100.0));
    assert_eq!(row[column(&h, "rpe_trans_cm_mean")], dynba_cli::units::num(r.rpe_trans_rmse * 100.0));
    assert_eq!(row[column(&h, "rpe_rot_deg_mean")], dynba_cli::units::num(r.rpe_rot_rmse_deg));
    assert_eq!(row[column(&h, "iterations_mean")], "", "no solver ran");
    let (_, timing) = read_csv(&ab.join("timing.csv"));
    assert!(timing.is_empty(), "no solver ran");
}

#[test]
fn ablate_reports_centimeters_of_the_library_result() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&dynba(["ablate", "--preset", "group1", "--seeds", "0..3", "--modes", "full,no-motion", "--out", p(tmp.path())]));
    let cfg = preset("group1").unwrap();
    let modes = [AblationMode::Full.strategy(), AblationMode::NoMotion.strategy()];
    let table = run_ablation(&cfg, &modes, &[0, 1, 2], &AblationOptions::default()).unwrap();
    let (h, rows) = read_csv(&tmp.path().join("results.csv"));
    for (row, s) in rows.iter().zip(table.summaries()) {
        assert_eq!(row[column(&h, "mode")], s.mode);
        let ate = s.ate.unwrap();
        assert_eq!(row[column(&h, "ate_cm_mean")], dynba_cli::units::num(ate.mean * 100.0));
        let dynamic = s.dynamic_ate.unwrap();
        assert_eq!(row[column(&h, "dynamic_ate_cm_mean")], dynba_cli::units::num(dynamic.mean * 100.0));
    }
    let (th, timing) = read_csv(&tmp.path().join("timing.csv"));
    assert_eq!(timing.len(), 2);
    for row in &timing {
        assert!(row[column(&th, "ms_per_iteration_mean")].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn ablate_output_does_not_depend_on_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |dir: &str, workers: &str| {
        let out = tmp.path().join(dir);
        ok(&dynba(["ablate", "--preset", "group1", "--seeds", "0..4", "--workers", workers, "--out", p(&out)]));
        (fs::read(out.join("results.csv")).unwrap(), fs::read(out.join("cells.csv")).unwrap())
    };
    let one = run("one", "1");
    assert_eq!(one, run("four", "4"));
    assert_eq!(one, run("again", "1"));
}

#[test]
fn failed_cells_give_exit_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = preset("group1").unwrap();
    // Static landmarks behind the camera path are never seen.
    cfg.static_landmarks.box_min[2] = -14.0;
    cfg.static_landmarks.box_max[2] = -4.0;
    let path = tmp.path().join("blind.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    let out = tmp.path().join("out");
    let o = dynba(["ablate", "--config", p(&path), "--seeds", "0,1", "--modes", "before-ba,static-only", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let (h, rows) = read_csv(&out.join("results.csv"));
    let failed: Vec<&str> = rows.iter().map(|r| r[column(&h, "failed")].as_str()).collect();
    assert_eq!(failed, ["0", "2"]);
    let cells = fs::read_to_string(out.join("cells.csv")).unwrap();
    assert!(cells.contains("static measurements"));
    assert_eq!(field(&fs::read_to_string(out.join("manifest.txt")).unwrap(), "status"), Some("partial"));
}

#[test]
fn eval_of_a_file_against_itself_is_zero() {
    let gt = fixture("toy_gt.tum");
    let o = dynba(["eval", p(&gt), p(&gt)]);
    ok(&o);
    let text = stdout(&o);
    for key in ["ate_cm", "rpe_rot_deg", "rpe_trans_cm"] {
        let v: f64 = field(&text, key).unwrap().parse().unwrap();
        assert!(v.abs() < 1e-9, "{key} = {v}");
    }
    assert_eq!(field(&text, "frames"), Some("8"));
}

#[test]
fn eval_ignores_a_constant_transform() {
    let tmp = tempfile::tempdir().unwrap();
    let gt_path = fixture("toy_gt.tum");
    let gt = read_tum(&fs::read_to_string(&gt_path).unwrap()).unwrap();
    let g = dynba::geometry::Pose::exp(&dynba::geometry::Twist::new(
        nalgebra::Vector3::new(0.3, -0.2, 0.5),
        nalgebra::Vector3::new(1.0, 2.0, -3.0),
    ));
    let moved = tmp.path().join("moved.tum");
    fs::write(&moved, write_tum(&gt.transformed(&g))).unwrap();
    let o = dynba(["eval", p(&moved), p(&gt_path)]);
    ok(&o);
    let text = stdout(&o);
    // Nine printed digits bound the round trip through the file.
    for key in ["ate_cm", "rpe_trans_cm"] {
        let v: f64 = field(&text, key).unwrap().parse().unwrap();
        assert!(v.abs() < 1e-5, "{key} = {v}");
    }
    let r: f64 = field(&text, "rpe_rot_deg").unwrap().parse().unwrap();
    assert!(r.abs() < 1e-5, "{r}");
}

#[test]
fn eval_fixture_matches_reference_loops() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("m.csv");
    let (est, gt) = (fixture("toy_est.tum"), fixture("toy_gt.tum"));
    ok(&dynba(["eval", p(&est), p(&gt), "--csv", p(&csv)]));
    let e = parse_tum(&fs::read_to_string(&est).unwrap());
    let g = parse_tum(&fs::read_to_string(&gt).unwrap());
    let ate = reference_ate(&e, &g);
    let (rot, trans) = reference_rpe(&e, &g, 1);
    let (h, rows) = read_csv(&csv);
    let get = |name: &str| rows[0][column(&h, name)].parse::<f64>().unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-8 * b.abs().max(1e-3);
    assert!(close(get("ate_cm"), ate * 100.0), "{} vs {}", get("ate_cm"), ate * 100.0);
    assert!(close(get("rpe_trans_cm"), trans * 100.0));
    assert!(close(get("rpe_rot_deg"), rot));
    assert!(ate > 0.005 && rot > 0.1, "fixture has visible errors");
}

#[test]
fn eval_names_the_malformed_line() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.tum");
    let text = fs::read_to_string(fixture("toy_gt.tum")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "2 0.1 0.2 oops 0 0 0 1";
    fs::write(&bad, lines.join("\n")).unwrap();
    let o = dynba(["eval", p(&bad), p(&fixture("toy_gt.tum"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn noiseless_graph_solves_to_zero_cost() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("clean.toml");
    fs::write(&cfg, preset("group1").unwrap().noiseless().to_toml()).unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &["--config", p(&cfg), "--seed", "2"]);
    let out = tmp.path().join("solved");
    ok(&dynba(["solve", "--graph", p(&sim.join("graph.txt")), "--init", p(&sim.join("init.txt")), "--out", p(&out)]));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    let cost: f64 = field(&report, "final_cost").unwrap().parse().unwrap();
    assert!(cost < 1e-12, "{cost}");
}

#[test]
fn zero_prune_rounds_is_the_default_solve() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &["--preset", "group1", "--seed", "4", "--corrupt-motion", "0.1"]);
    let solve = |dir: &str, extra: &[&str]| {
        let out = tmp.path().join(dir);
        let (graph, init) = (sim.join("graph.txt"), sim.join("init.txt"));
        let mut args = vec!["solve", "--graph", p(&graph), "--init", p(&init)];
        let out_s = out.to_str().unwrap().to_string();
        args.extend_from_slice(&["--out", &out_s]);
        args.extend_from_slice(extra);
        ok(&dynba(&args));
        files_except_manifest(&out)
    };
    let plain = solve("plain", &[]);
    assert_eq!(plain.len(), 3);
    assert_eq!(plain, solve("zero", &["--prune-rounds", "0"]));
    assert_ne!(plain, solve("two", &["--prune-rounds", "2"]));
}

#[test]
fn pruning_removes_the_injected_factors() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &["--preset", "group1", "--seed", "1", "--corrupt-motion", "0.1"]);
    let injected: BTreeSet<String> =
        fs::read_to_string(sim.join("injected.txt")).unwrap().lines().map(str::to_string).collect();
    assert_eq!(injected.len(), 20);
    let out = tmp.path().join("solved");
    let o = dynba([
        "solve",
        "--graph",
        p(&sim.join("graph.txt")),
        "--init",
        p(&sim.join("init.txt")),
        "--out",
        p(&out),
        "--prune-rounds",
        "2",
    ]);
    ok(&o);
    let pruned: BTreeSet<String> = field(&stdout(&o), "pruned").unwrap().split_whitespace().map(str::to_string).collect();
    assert_eq!(pruned, injected);
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    let listed: BTreeSet<String> = report
        .lines()
        .filter_map(|l| l.split_once(" removed ").map(|(_, ids)| ids))
        .flat_map(|ids| ids.split_whitespace().map(str::to_string))
        .collect();
    assert_eq!(listed, injected);
}

#[test]
fn graph_errors_name_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &["--preset", "group1"]);
    let text = fs::read_to_string(sim.join("graph.txt")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let at = lines.iter().position(|l| l.starts_with("FACTOR")).unwrap();
    lines.insert(at, "FACTOR 999999 OBSERVATION POSE 99 SPOINT 0 1 2 3 1 0 0 1 0 1".into());
    let broken = tmp.path().join("broken.txt");
    fs::write(&broken, lines.join("\n")).unwrap();
    let o = dynba(["solve", "--graph", p(&broken), "--init", p(&sim.join("init.txt")), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(&format!("line {}", at + 1)), "{}", stderr(&o));
}

#[test]
fn a_graph_without_anchor_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &["--preset", "group1"]);
    let text = fs::read_to_string(sim.join("graph.txt")).unwrap();
    let free: String = text.lines().filter(|l| !l.starts_with("CONST")).map(|l| format!("{l}\n")).collect();
    let path = tmp.path().join("free.txt");
    fs::write(&path, free).unwrap();
    let o = dynba(["solve", "--graph", p(&path), "--init", p(&sim.join("init.txt")), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = p(tmp.path());
    for args in [
        vec!["frobnicate"],
        vec!["simulate", "--preset", "nope", "--out", out],
        vec!["simulate", "--preset", "group1", "--mode", "nope", "--out", out],
        vec!["simulate", "--preset", "group1", "--mode", "before-ba", "--out", out],
        vec!["ablate", "--preset", "group1", "--seeds", "3..1", "--out", out],
        vec!["ablate", "--preset", "group1", "--seeds", "1", "--modes", "full,nope", "--out", out],
        vec!["ablate", "--seeds", "1", "--out", out],
        vec!["eval", "/nonexistent/a.tum", "/nonexistent/b.tum"],
    ] {
        let o = dynba(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(dynba(["--help"]).status.code(), Some(0));
}
