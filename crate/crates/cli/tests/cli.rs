use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use psr_core::feature_io::{write_feature_file, FeatureTensor, Manifest, UtteranceEntry};
use psr_core::mel::{write_wav, Waveform};
use psr_core::synthetic::{planted_layer_stacks, psr_mixture, write_dataset};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_psr-kit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn psr-kit")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(dir: &Path) -> PathBuf {
    write_dataset(dir, &psr_mixture(96, 6, 0.7, 0.1, 3)).unwrap();
    dir.join("manifest.json")
}

const TRAIN: &[&str] = &["--rank", "3", "--output-dim", "6", "--lr", "1e-3", "--epochs", "5", "--batch", "16"];

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(snapshot(&p));
        } else {
            out.push((p.clone(), fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn validate_manifest_reports_views_and_count() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let out = run(&["validate-manifest", "--manifest", s(&m)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("views=ssl,mel,text") && stdout.contains("utterances=96"), "{stdout}");
}

#[test]
fn validation_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    fs::write(dir.path().join("mel/utt00003.psrf"), b"garbage").unwrap();
    assert_eq!(run(&["validate-manifest", "--manifest", s(&m)]).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    assert_eq!(run(&["validate-manifest", "--manifest", s(&missing)]).status.code(), Some(2));
    assert_eq!(run(&["validate-manifest", "--unknown-flag"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn bad_config_exits_2_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[dgcca]\nrank = 0\n").unwrap();
    let out_path = dir.path().join("model.psrm");
    let out = run(&["dgcca-train", "--config", s(&cfg), "--manifest", s(&m), "--views", "ssl,mel", "--out", s(&out_path)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_path.exists());
    fs::write(&cfg, "[dgcca]\nlearnin_rate = 1.0\n").unwrap();
    let out = run(&["dgcca-train", "--config", s(&cfg), "--manifest", s(&m), "--views", "ssl,mel", "--out", s(&out_path)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let out_path = dir.path().join("model.psrm");
    let mut args = vec!["dgcca-train", "--manifest", s(&m), "--views", "ssl,mel,text", "--out", s(&out_path)];
    args.extend_from_slice(&["--rank", "3", "--output-dim", "6", "--batch", "16", "--lr", "1e300"]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn gcca_writes_solution_and_projections() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let out_path = dir.path().join("out/solution.json");
    let out = run(&["gcca", "--manifest", s(&m), "--views", "ssl,mel,text", "--rank", "3", "--eps", "1e-8", "--out", s(&out_path)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(v["eigenvalues"].as_array().unwrap().len(), 3);
    assert!(v["objective"].as_f64().unwrap() >= 0.0);
    assert!(v["orthonormality_error"].as_f64().unwrap() <= 1e-6);
    assert_eq!(v["config"]["rank"], 3);
    let g = psr_core::feature_io::read_feature_file(dir.path().join("out/solution.G.psrf")).unwrap();
    assert_eq!(g.shape(), &[3, 96]);
    let u = psr_core::feature_io::read_feature_file(dir.path().join("out/solution.U.mel.psrf")).unwrap();
    assert_eq!(u.shape(), &[6, 3]);
}

#[test]
fn dgcca_train_writes_model_and_loss_curve() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let model = dir.path().join("model.psrm");
    let curve = dir.path().join("loss.csv");
    let mut args = vec!["dgcca-train", "--manifest", s(&m), "--views", "ssl,mel,text", "--seed", "7"];
    args.extend_from_slice(TRAIN);
    args.extend_from_slice(&["--patience", "0", "--loss-curve", s(&curve), "--out", s(&model)]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let file = psr_core::dgcca::read_model(&model).unwrap();
    assert_eq!(file.model.config.seed, 7);
    assert_eq!(file.model.view_names, ["ssl", "mel", "text"]);
    let csv = fs::read_to_string(&curve).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert_eq!(csv.lines().next(), Some("epoch,objective"));
}

#[test]
fn psr_is_byte_deterministic_and_leaves_inputs_alone() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let m = fixture(&data);
    let before = snapshot(&data);
    let mut reports = Vec::new();
    for name in ["a.json", "b.json"] {
        let report = dir.path().join(name);
        let scores = dir.path().join(format!("{name}.csv"));
        let mut args = vec!["psr", "--manifest", s(&m), "--ssl-view", "ssl", "--mel-view", "mel", "--text-view", "text"];
        args.extend_from_slice(TRAIN);
        args.extend_from_slice(&["--scores-csv", s(&scores), "--out", s(&report)]);
        let out = run(&args);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        reports.push((fs::read(&report).unwrap(), fs::read(&scores).unwrap()));
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(before, snapshot(&data));
    let v: serde_json::Value = serde_json::from_slice(&reports[0].0).unwrap();
    assert!(v["psr_percent"].as_f64().unwrap().is_finite());
    assert_eq!(v["n"], 96);
    assert_eq!(v["scores"]["phonetic"].as_array().unwrap().len(), 96);
    assert_eq!(v["provenance"]["train_config"]["seed"], 0);
    let csv = String::from_utf8(reports[0].1.clone()).unwrap();
    assert_eq!(csv.lines().next(), Some("utt_id,phonetic,syntax,ratio"));
    assert_eq!(csv.lines().count(), 97);
}

#[test]
fn psr_pairwise_runs_and_json_logs() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let report = dir.path().join("r.json");
    let mut args = vec!["psr", "--json-logs", "-v", "--pairwise-runs", "--manifest", s(&m)];
    args.extend_from_slice(&["--ssl-view", "ssl", "--mel-view", "mel", "--text-view", "text"]);
    args.extend_from_slice(TRAIN);
    args.extend_from_slice(&["--out", s(&report)]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["provenance"]["pairwise_runs"], true);
    assert_eq!(v["provenance"]["epochs_run"].as_array().unwrap().len(), 2);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.lines().count() > 0);
    for line in stderr.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"));
        assert!(rec["level"].is_string() && rec["message"].is_string());
    }
}

fn stack_fixture(dir: &Path) -> PathBuf {
    let (stacks, target) = planted_layer_stacks(64, 5, 4, 4, 2, 10.0, 1);
    let mut manifest = Manifest {
        views: vec!["layers".into(), "target".into()],
        root: dir.to_path_buf(),
        ..Default::default()
    };
    fs::create_dir_all(dir.join("layers")).unwrap();
    fs::create_dir_all(dir.join("target")).unwrap();
    for (i, id) in target.utt_ids.iter().enumerate() {
        let mut e = UtteranceEntry::default();
        let stack_rel = format!("layers/{id}.psrf");
        write_feature_file(dir.join(&stack_rel), &stacks[i]).unwrap();
        let col: Vec<f32> = target.matrix.column(i).iter().map(|&v| v as f32).collect();
        let target_rel = format!("target/{id}.psrf");
        write_feature_file(dir.join(&target_rel), &FeatureTensor::new(vec![col.len()], col).unwrap()).unwrap();
        e.paths.insert("layers".into(), stack_rel);
        e.paths.insert("target".into(), target_rel);
        manifest.utterances.insert(id.clone(), e);
    }
    let path = dir.join("manifest.json");
    manifest.save(&path).unwrap();
    path
}

#[test]
fn layer_fit_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let m = stack_fixture(dir.path());
    assert_eq!(run(&["validate-manifest", "--manifest", s(&m)]).status.code(), Some(0));
    let weights = dir.path().join("weights.json");
    let plot = dir.path().join("weights_plot.csv");
    let out = run(&["layer-fit", "--manifest", s(&m), "--stack-view", "layers", "--target-view", "target", "--plot", s(&plot), "--out", s(&weights)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&weights).unwrap()).unwrap();
    assert_eq!(v["weights"]["normalized"].as_array().unwrap().len(), 5);
    assert_eq!(v["history"].as_array().unwrap().len(), 201);
    assert_eq!(fs::read_to_string(&plot).unwrap().lines().count(), 6);

    let csv_path = dir.path().join("report.csv");
    let out = run(&["layer-report", "--weights", s(&weights), "--labels", "0..4", "--out", s(&csv_path)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "layer,label,weight,rank,is_max");
    assert_eq!(lines.len(), 6);
    assert!(lines[3].ends_with(",1,true"), "{csv}");
    let total: f64 = lines[1..].iter().map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);

    let bad = run(&["layer-report", "--weights", s(&weights), "--labels", "0..2", "--out", s(&csv_path)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn dgcca_model_embeds_layer_weights_for_report() {
    let dir = tempfile::tempdir().unwrap();
    let m = stack_fixture(dir.path());
    let weights = dir.path().join("weights.json");
    assert_eq!(
        run(&["layer-fit", "--manifest", s(&m), "--stack-view", "layers", "--target-view", "target", "--steps", "20", "--out", s(&weights)]).status.code(),
        Some(0)
    );
    let model = dir.path().join("m.psrm");
    let mut args = vec!["dgcca-train", "--manifest", s(&m), "--views", "layers,target"];
    args.extend_from_slice(&["--layer-weights", s(&weights), "--stack-view", "layers"]);
    args.extend_from_slice(&["--rank", "2", "--output-dim", "4", "--batch", "16", "--epochs", "2", "--lr", "1e-3", "--out", s(&model)]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv_path = dir.path().join("from_model.csv");
    let out = run(&["layer-report", "--weights", s(&model), "--out", s(&csv_path)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&csv_path).unwrap().lines().count(), 6);
}

#[test]
fn lingdist_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.tsv");
    let b = dir.path().join("b.tsv");
    fs::write(&a, "1\tab\n2\tcd\n").unwrap();
    fs::write(&b, "# list b\n1\tAB\n2\tce\n").unwrap();
    let out_path = dir.path().join("dist.csv");
    let out = run(&["lingdist", "--lists", s(&a), s(&b), "--metric", "ldnd", "--fold-case", "--out", s(&out_path)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&out_path).unwrap(), "list_a,list_b,ldnd\na,b,0.25\n");
    let out = run(&["lingdist", "--lists", s(&a), s(&b), "--metric", "ldn", "--out", s(&out_path)]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(&out_path).unwrap();
    assert_eq!(csv, "list_a,list_b,concept,word_a,word_b,ldn\na,b,1,ab,AB,1\na,b,2,cd,ce,0.5\n");
    fs::write(&b, "1\tab\n1\tcd\n").unwrap();
    let out = run(&["lingdist", "--lists", s(&a), s(&b), "--out", s(&out_path)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mel_extract_builds_a_valid_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let wavs = dir.path().join("wav");
    fs::create_dir_all(&wavs).unwrap();
    for (name, freq) in [("u1", 440.0), ("u2", 1000.0)] {
        let wave = Waveform {
            samples: (0..8000).map(|i| 0.3 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin()).collect(),
            sample_rate: 16000,
        };
        write_wav(wavs.join(format!("{name}.wav")), &wave).unwrap();
    }
    let cfg = dir.path().join("mel.toml");
    fs::write(&cfg, "[mel]\nn_mels = 40\n").unwrap();
    let out_dir = dir.path().join("feats");
    let out = run(&["mel-extract", "--config", s(&cfg), "--wav-dir", s(&wavs), "--out-dir", s(&out_dir), "--hop-length", "200"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let t = psr_core::feature_io::read_feature_file(out_dir.join("u1.psrf")).unwrap();
    // 1 + (8000 - 400) / 200
    assert_eq!(t.shape(), &[39, 40]);
    let echoed: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("mel_config.json")).unwrap()).unwrap();
    assert_eq!(echoed["hop_length"], 200);
    assert_eq!(echoed["n_mels"], 40);
    let m = out_dir.join("manifest.json");
    assert_eq!(run(&["validate-manifest", "--manifest", s(&m)]).status.code(), Some(0));
    let bad = run(&["mel-extract", "--wav-dir", s(&wavs), "--out-dir", s(&out_dir), "--n-mels", "400"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn version_prints_format_versions() {
    let out = run(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
    let v = String::from_utf8(out.stdout).unwrap();
    assert!(v.contains("PSRF v1") && v.contains("PSRM v1"), "{v}");
}
