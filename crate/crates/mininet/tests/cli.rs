use std::path::Path;
use std::process::{Command, Output};

use mininet::tensor_file;
use mininet_core::Tensor;

fn mininet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mininet")).args(args).env_remove("RUST_LOG").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(mininet(&[]).status.code(), Some(2));
    assert_eq!(mininet(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(mininet(&["profile", "--bogus"]).status.code(), Some(2));
    assert_eq!(mininet(&["profile", "--variant", "huge"]).status.code(), Some(2));
    let help = mininet(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    for sub in ["train", "infer", "eval-depth", "eval-pose", "profile", "synth-data", "gradcheck"] {
        assert!(stdout(&help).contains(sub), "{sub}");
    }
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = mininet(&["eval-depth", "--pred", s(&dir.path().join("nope.tnsr")), "--gt", s(&dir.path().join("nope.tnsr"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
}

#[test]
fn profile_row() {
    let o = mininet(&["profile", "--variant", "original", "--out-res", "F", "--width", "640", "--height", "192", "--csv"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("model,input,params,params_m"));
    let params_m: f64 = lines[1].split(',').nth(3).unwrap().parse().unwrap();
    assert!((params_m / 0.217 - 1.0).abs() < 0.05, "{params_m}");
    let all = stdout(&mininet(&["profile", "--csv"]));
    assert_eq!(all.lines().count(), 13);
    assert_eq!(mininet(&["profile", "--height", "190"]).status.code(), Some(1));
}

#[test]
fn eval_depth_of_identical_maps() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::new(&[4, 6], (1..=24).map(|v| v as f32 * 0.5).collect()).unwrap();
    let p = dir.path().join("a.tnsr");
    tensor_file::save_tensor(&p, &t).unwrap();
    let o = mininet(&["eval-depth", "--pred", s(&p), "--gt", s(&p)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3\n0.0000,0.0000,0.0000,0.0000,1.0000,1.0000,1.0000\n");
}

#[test]
fn eval_depth_disparity_and_crop() {
    let dir = tempfile::tempdir().unwrap();
    let depth = Tensor::new(&[1, 8, 4], (1..=32).map(|v| v as f64).collect()).unwrap();
    let disp = depth.map(|d| 1.0 / d);
    let (gp, pp) = (dir.path().join("gt.tnsr"), dir.path().join("pred.tnsr"));
    tensor_file::save_tensor(&gp, &depth).unwrap();
    tensor_file::save_tensor(&pp, &disp).unwrap();
    let o = mininet(&["eval-depth", "--pred", s(&pp), "--gt", s(&gp), "--pred-kind", "disparity", "--make3d-crop", "--cap", "70"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).ends_with("0.0000,0.0000,0.0000,0.0000,1.0000,1.0000,1.0000\n"));
    let small = Tensor::new(&[2, 2], vec![1.0f32; 4]).unwrap();
    tensor_file::save_tensor(&pp, &small).unwrap();
    assert_eq!(mininet(&["eval-depth", "--pred", s(&pp), "--gt", s(&gp)]).status.code(), Some(1));
}

#[test]
fn eval_pose_of_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let o = mininet(&["synth-data", "--out", s(dir.path()), "--frames", "7", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let poses = dir.path().join("poses.txt");
    let o = mininet(&["eval-pose", "--gt", s(&poses), "--pred", s(&poses)]);
    assert_eq!(stdout(&o), "ATE: 0.000 ± 0.000 (3 snippets)\n");
    assert_eq!(mininet(&["eval-pose", "--gt", s(&poses)]).status.code(), Some(1));
    // A second run must not overwrite the dataset.
    assert_eq!(mininet(&["synth-data", "--out", s(dir.path())]).status.code(), Some(1));
}

#[test]
fn synth_train_infer_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let inf = dir.path().join("inf");
    assert_eq!(mininet(&["synth-data", "--out", s(&data), "--frames", "4", "--speed", "0"]).status.code(), Some(0));

    // Invalid settings fail before anything is written.
    let bad = mininet(&["train", "--data", s(&data), "--out", s(&run), "--width", "100", "--height", "64"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(!run.exists());

    let args = [
        "train", "--data", s(&data), "--out", s(&run), "--variant", "small", "--out-res", "E", "--width", "128", "--height", "64",
        "--batch-size", "2", "--epochs", "1", "--seed", "4",
    ];
    let o = mininet(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "step,L_ph,L_md,total");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].split(',').skip(1).all(|v| v.parse::<f64>().unwrap().is_finite()));
    assert!(run.join("epoch_001.ckpt").is_file() && run.join("final.ckpt").is_file());

    let first = std::fs::read(run.join("final.ckpt")).unwrap();
    assert_eq!(mininet(&args).status.code(), Some(0));
    assert_eq!(std::fs::read(run.join("final.ckpt")).unwrap(), first, "training is deterministic given --seed");

    let o = mininet(&["infer", "--checkpoint", s(&run.join("final.ckpt")), "--input", s(&data), "--out", s(&inf)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for i in 0..4 {
        let t = tensor_file::load_tensor(inf.join(format!("{i:06}_disp.tnsr"))).unwrap().cast::<f32>();
        assert_eq!(t.numel(), 128 * 64);
        assert!(t.data().iter().all(|&d| d > 0.0 && d < 1.0));
        assert!(inf.join(format!("{i:06}_disp.png")).is_file());
    }
    let o = mininet(&["eval-depth", "--pred", s(&inf), "--gt", s(&data.join("depth")), "--pred-kind", "disparity"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = mininet(&["eval-pose", "--gt", s(&data.join("poses.txt")), "--checkpoint", s(&run.join("final.ckpt")), "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(1), "4 frames are fewer than one snippet");
}

#[test]
fn gradcheck_passes() {
    let o = mininet(&["gradcheck", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("all "));
}
