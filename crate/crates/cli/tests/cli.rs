use kernel_diff::blur::{synth_motion_kernel, KernelDataset, TrajectoryParams};
use kernel_diff::image::write_image;
use kernel_diff::scenes::synth_scene;
use std::path::Path;
use std::process::{Command, Output};

fn kdiff(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdiff"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn kdiff")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&kdiff(dir.path(), &["--help"])), 0);
    assert_eq!(code(&kdiff(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&kdiff(dir.path(), &["gen-kernels", "--threads", "0"])), 2);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = kdiff(dir.path(), &["gen-kernels", "--set", "kernels.colour=3"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("kernels.colour"));
    assert_eq!(code(&kdiff(dir.path(), &["gen-kernels", "--set", "kernels.size=4"])), 2);
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\"train\": {\"iterations\": \"many\"}}").unwrap();
    assert_eq!(code(&kdiff(dir.path(), &["train", "--config", cfg.to_str().unwrap()])), 2);
    assert_eq!(code(&kdiff(dir.path(), &["deblur"])), 2, "paths.input is required");
}

#[test]
fn missing_inputs_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&kdiff(dir.path(), &["train"])), 3, "no kernel dataset yet");
    assert_eq!(code(&kdiff(dir.path(), &["ablate"])), 3, "no checkpoint yet");
    let o = kdiff(dir.path(), &["eval", "--set", "paths.input=nope.png", "--set", "paths.ground_truth=nope.png"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn exploding_training_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let small = ["--set", "kernels.count=8", "--set", "data.scenes=4", "--set", "train.batch_size=2"];
    assert_eq!(code(&kdiff(dir.path(), &[&["gen-kernels"], &small[..]].concat())), 0);
    let args = [&["train", "--set", "train.learning_rate=1e300", "--set", "train.iterations=20"], &small[..]].concat();
    assert_eq!(code(&kdiff(dir.path(), &args)), 4);
}

#[test]
fn eval_of_an_image_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("scene.png");
    write_image(&img, &synth_scene(24, 24, 3).unwrap()).unwrap();
    let k = dir.path().join("k.kdkd");
    KernelDataset::from_kernels(&[synth_motion_kernel(11, &TrajectoryParams::default(), 1).unwrap()])
        .unwrap()
        .save(&k)
        .unwrap();
    let (img, k) = (img.to_str().unwrap(), k.to_str().unwrap());
    let sets = [
        format!("paths.input={img}"),
        format!("paths.ground_truth={img}"),
        format!("paths.kernel_estimate={k}"),
        format!("paths.kernel_truth={k}"),
    ];
    let mut args = vec!["eval"];
    for s in &sets {
        args.extend(["--set", s.as_str()]);
    }
    let o = kdiff(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = lines(&dir.path().join("eval.csv"));
    assert_eq!(rows[0], "id,psnr_db,ssim,mnc,final_residual,lpips,fid");
    assert_eq!(rows[1], "scene.png,inf,1,1,,,");
    assert!(rows[2].starts_with("MEAN,inf,1,1"));
    assert!(dir.path().join("config.json").exists());
}

#[test]
fn toy_commands_write_expected_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = kdiff(dir.path(), &["toy1d-surface", "--set", "toy_surface.resolution=7"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let surface = lines(&dir.path().join("surface.csv"));
    assert_eq!(surface[0], "axis1,axis2,a,w,sigma,loss");
    assert_eq!(surface.len(), 1 + 49);
    assert_eq!(lines(&dir.path().join("marginal_grid.csv")).len(), 1 + 60);
    assert_eq!(lines(&dir.path().join("marginal_laplace.csv")).len(), 1 + 60);

    let o = kdiff(dir.path(), &["toy1d-compare", "--set", "toy_compare.restarts=5", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let compare = lines(&dir.path().join("compare.csv"));
    assert_eq!(compare.len(), 1 + 5 + 1);
    assert!(compare[6].starts_with("kernel_first,"));
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 3);
    assert_eq!(cfg["toy_compare"]["restarts"], 5);
}

#[test]
fn pipeline_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let small = [
        "--set", "kernels.count=20", "--set", "data.scenes=6", "--set", "train.iterations=20", "--set",
        "train.batch_size=2", "--set", "eval.test_images=2", "--set", "guidance.refine_steps=3",
    ];
    for cmd in ["gen-kernels", "train", "ablate"] {
        let o = kdiff(dir.path(), &[&[cmd][..], &small[..]].concat());
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["kernels.kdkd", "model.kdnn", "loss_curve.csv", "ablation.csv", "residual_traces.csv", "guided.csv", "unguided.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let ablation = lines(&dir.path().join("ablation.csv"));
    assert_eq!(ablation.len(), 1 + 2 + 1);
    assert!(ablation[3].starts_with("MEAN,"));
    assert_eq!(lines(&dir.path().join("residual_traces.csv")).len(), 1 + 2 * 200);

    let img = dir.path().join("in.png");
    write_image(&img, &synth_scene(32, 32, 9).unwrap()).unwrap();
    let input = format!("paths.input={}", img.display());
    let o = kdiff(dir.path(), &[&["deblur", "--set", &input][..], &small[..]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(KernelDataset::load(&dir.path().join("kernel.kdkd")).unwrap().len(), 1);
    assert_eq!(lines(&dir.path().join("residual.csv")).len(), 1 + 200);

    // The checkpoint pins its architecture.
    let o = kdiff(dir.path(), &[&["deblur", "--set", &input, "--set", "arch.channels=[4,4]"][..], &small[..]].concat());
    assert_eq!(code(&o), 2);
}
