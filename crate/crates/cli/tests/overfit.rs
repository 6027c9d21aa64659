//! A model trained on a single kernel and a single scene must memorize the
//! kernel: its loss gets small and deblurring recovers that kernel.

use kernel_diff::blur::{convolve, Boundary, KernelDataset};
use kernel_diff::denoiser::{forward, load_checkpoint, loss_and_grad};
use kernel_diff::image::write_image;
use kernel_diff::metrics::mnc;
use kernel_diff::scenes::synth_scene;
use ndarray::Array2;
use std::path::Path;
use std::process::Command;

fn kdiff(cwd: &Path, args: &[&str]) {
    let o = Command::new(env!("CARGO_BIN_EXE_kdiff"))
        .current_dir(cwd)
        .args(args)
        .args(["--out", "."])
        .output()
        .expect("spawn kdiff");
    assert!(o.status.success(), "kdiff {args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn single_kernel_model_memorizes_its_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let base = [
        "--set", "kernels.count=1", "--set", "data.scenes=1", "--set", "data.noise_std=0", "--set",
        "train.iterations=5000",
    ];
    kdiff(cwd, &[&["gen-kernels"][..], &base].concat());
    kdiff(cwd, &[&["train"][..], &base].concat());

    let curve = std::fs::read_to_string(cwd.join("loss_curve.csv")).unwrap();
    let losses: Vec<f64> = curve.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 50);
    let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(best < 0.05, "lowest windowed loss {best}");
    assert!(losses[49] < losses[0]);

    let truth = KernelDataset::load(&cwd.join("kernels.kdkd")).unwrap().kernel(0).unwrap();
    let sharp = synth_scene(32, 32, 77).unwrap();
    write_image(&cwd.join("blurry.png"), &convolve(&sharp, &truth, Boundary::Symmetric).unwrap()).unwrap();
    kdiff(cwd, &[&["deblur", "--set", "paths.input=blurry.png"][..], &base].concat());
    let est = KernelDataset::load(&cwd.join("kernel.kdkd")).unwrap().kernel(0).unwrap();
    let m = mnc(est.weights(), truth.weights()).unwrap();
    assert!(m > 0.9, "MNC {m}");

    // Fresh draws score well below the zero predictor, whose loss is E‖ε‖² = 1.
    let ckpt = load_checkpoint(&cwd.join("model.kdnn")).unwrap();
    let sched = ckpt.schedule.build().unwrap();
    let y = convolve(&synth_scene(32, 32, 79).unwrap(), &truth, Boundary::Symmetric).unwrap();
    let batch = vec![(truth.weights() * ckpt.kernel_scale, y); 64];
    let (val, _) = loss_and_grad(&ckpt.params, &ckpt.arch, &batch, &sched, 5).unwrap();
    assert!(val < 0.5, "validation loss {val}");

    // The prediction depends on the observed image.
    let k_t = Array2::from_shape_fn((11, 11), |(i, j)| ((i * 11 + j) as f64 * 0.37).sin());
    let a = forward(&ckpt.params, &ckpt.arch, &k_t, &sharp, 50).unwrap();
    let b = forward(&ckpt.params, &ckpt.arch, &k_t, &synth_scene(32, 32, 78).unwrap(), 50).unwrap();
    let diff = (&a - &b).mapv(|v| v * v).sum().sqrt();
    assert!(diff > 0.0);
}
