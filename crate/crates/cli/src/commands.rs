//! One function per subcommand. Each writes its outputs and the resolved
//! configuration into the output directory.

use crate::config::RunConfig;
use crate::CliError;
use kernel_diff::blur::{add_noise, convolve, gen_dataset, Boundary, KernelDataset};
use kernel_diff::csv::{fmt_num, Table};
use kernel_diff::denoiser::{load_checkpoint, save_checkpoint, train, Checkpoint, Denoiser, TrainingSet};
use kernel_diff::diffusion::DiffusionSchedule;
use kernel_diff::image::{read_image, write_image};
use kernel_diff::metrics::{mnc, psnr, ssim, EvalReport, EvalRow};
use kernel_diff::rng::derive_seed;
use kernel_diff::sampler::{kernel_diff, GuidanceConfig, SampleOutput};
use kernel_diff::scenes::synth_corpus;
use kernel_diff::toy1d;
use kernel_diff::{Error, Image};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

type Result<T> = std::result::Result<T, CliError>;

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn save_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_text(&out.join("config.json"), &cfg.to_json())
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| CliError::Config(format!("`{key}` must be set")))
}

fn existing(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(CliError::Io(format!("{what} not found: {}", path.display())));
    }
    Ok(())
}

pub fn toy1d_surface(cfg: &RunConfig, out: &Path) -> Result<()> {
    let prob = &cfg.toy;
    let y = prob.observe()?;
    let sc = &cfg.toy_surface;
    let surf = toy1d::projected_surface(
        &prob.bounds,
        &y,
        prob.truth(),
        derive_seed(cfg.seed, "toy-surface", 0),
        sc.half_extent,
        sc.resolution,
    )?;
    let mut t = Table::new(&["axis1", "axis2", "a", "w", "sigma", "loss"]);
    for i in 0..sc.resolution {
        for j in 0..sc.resolution {
            let p = surf.point(i, j);
            t.push(&[surf.axis1_values[i], surf.axis2_values[j], p[0], p[1], p[2], surf.loss_values[[i, j]]]);
        }
    }
    t.save(&out.join("surface.csv"))?;

    let sigmas = toy1d::sigma_grid(sc.sigma_step, prob.bounds.sigma_max);
    let grid = toy1d::marginal_sigma_grid(&prob.bounds, &y, &sigmas, prob.noise_std)?;
    let laplace = toy1d::marginal_sigma_laplace(&prob.bounds, &y, &sigmas, prob.noise_std, sc.marginal)?;
    for (name, values) in [("marginal_grid.csv", &grid), ("marginal_laplace.csv", &laplace)] {
        let mut t = Table::new(&["sigma", "log_marginal"]);
        for (s, v) in sigmas.iter().zip(values.iter()) {
            t.push(&[*s, *v]);
        }
        t.save(&out.join(name))?;
    }
    eprintln!(
        "grid argmax sigma {}, laplace argmax sigma {}",
        sigmas[toy1d::select_index(&grid, false)],
        sigmas[toy1d::select_index(&laplace, sc.marginal.select_argmin)]
    );
    save_config(cfg, out)
}

pub fn toy1d_compare(cfg: &RunConfig, out: &Path) -> Result<()> {
    let prob = &cfg.toy;
    let y = prob.observe()?;
    let cc = &cfg.toy_compare;
    let restarts = toy1d::multi_start_alt_min(
        &prob.bounds,
        &y,
        cc.restarts,
        cc.max_iters,
        derive_seed(cfg.seed, "toy-compare", 0),
    )?;
    let sigmas = toy1d::sigma_grid(cfg.toy_surface.sigma_step, prob.bounds.sigma_max);
    let kf = toy1d::kernel_first_estimate(&prob.bounds, &y, &sigmas, prob.noise_std, cfg.toy_surface.marginal)?;
    let failed = |s: f64| (s - prob.sigma_true).abs() > cc.failure_tolerance;
    let alt_rate = if restarts.is_empty() {
        f64::NAN
    } else {
        restarts.iter().filter(|r| failed(r.result.sigma)).count() as f64 / restarts.len() as f64
    };
    let kf_rate = f64::from(u8::from(failed(kf.sigma)));
    let header = [
        "method", "index", "init_a", "init_w", "init_sigma", "a", "w", "sigma", "loss", "failed",
        "alt_min_failure_rate", "kernel_first_failure_rate",
    ];
    let mut t = Table::new(&header);
    for (i, r) in restarts.iter().enumerate() {
        let mut cells = vec!["alt_min".to_string(), i.to_string()];
        cells.extend(
            [r.init[0], r.init[1], r.init[2], r.result.a, r.result.w, r.result.sigma, r.result.final_loss]
                .map(fmt_num),
        );
        cells.extend([u8::from(failed(r.result.sigma)).to_string(), String::new(), String::new()]);
        t.push_raw(cells);
    }
    let kf_loss = toy1d::joint_loss(&prob.bounds, kf.a, kf.w, kf.sigma, &y)?;
    let mut cells = vec!["kernel_first".to_string(), String::new(), String::new(), String::new(), String::new()];
    cells.extend([kf.a, kf.w, kf.sigma, kf_loss].map(fmt_num));
    cells.extend([kf_rate.to_string(), fmt_num(alt_rate), fmt_num(kf_rate)]);
    t.push_raw(cells);
    t.save(&out.join("compare.csv"))?;
    eprintln!("alt_min failure rate {alt_rate}, kernel-first sigma {} (failure {kf_rate})", kf.sigma);
    save_config(cfg, out)
}

pub fn gen_kernels(cfg: &RunConfig, out: &Path) -> Result<()> {
    let kc = &cfg.kernels;
    let ds = gen_dataset(kc.count, kc.size, &kc.trajectory, derive_seed(cfg.seed, "kernels", 0))?;
    ds.save(&out.join("kernels.kdkd"))?;
    eprintln!("wrote {} kernels of size {}", ds.len(), ds.size);
    save_config(cfg, out)
}

fn load_kernels(path: &Path, size: usize) -> Result<KernelDataset> {
    existing(path, "kernel dataset")?;
    let ds = KernelDataset::load(path)?;
    if ds.size != size {
        return Err(CliError::Config(format!(
            "kernel dataset has size {}, architecture expects {size}",
            ds.size
        )));
    }
    Ok(ds)
}

pub fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let arch = &cfg.arch;
    let ds = load_kernels(&cfg.kernels_path(out), arch.kernel_size)?;
    let side = arch.image_size + cfg.data.crop_margin;
    let scenes = synth_corpus(cfg.data.scenes, side, side, derive_seed(cfg.seed, "scenes", 0))?;
    let kernel_scale = GuidanceConfig::default_scale(arch.kernel_size);
    let set = TrainingSet {
        kernels: (0..ds.len()).map(|i| ds.kernel(i).map(|k| k.into_weights())).collect::<kernel_diff::Result<_>>()?,
        scenes,
        noise_std: cfg.data.noise_std,
        kernel_scale,
    };
    let sched = cfg.schedule.build()?;
    let result = train(&set, &cfg.train, arch, &sched, |it, loss| eprintln!("iter {it} loss {loss:.6}"))?;
    let mut t = Table::new(&["iteration", "loss"]);
    for (it, l) in &result.loss_curve {
        t.push(&[*it as f64, *l]);
    }
    t.save(&out.join("loss_curve.csv"))?;
    save_checkpoint(
        &out.join("model.kdnn"),
        &Checkpoint {
            arch: arch.clone(),
            schedule: cfg.schedule.clone(),
            kernel_scale,
            params: result.params,
        },
    )?;
    save_config(cfg, out)
}

/// Loads the checkpoint and checks it against the configured architecture
/// and schedule; returns the model, its schedule and the guidance settings
/// with the stored kernel scale.
fn load_model(cfg: &RunConfig, out: &Path) -> Result<(Denoiser, DiffusionSchedule, GuidanceConfig)> {
    let path = cfg.checkpoint_path(out);
    existing(&path, "checkpoint")?;
    let ckpt = load_checkpoint(&path)?;
    ckpt.expect_arch(&cfg.arch)?;
    if ckpt.schedule != cfg.schedule {
        return Err(Error::Mismatch {
            field: "schedule".into(),
            reason: format!("checkpoint has {:?}, config has {:?}", ckpt.schedule, cfg.schedule),
        }
        .into());
    }
    let sched = ckpt.schedule.build()?;
    let guidance = GuidanceConfig {
        kernel_scale: ckpt.kernel_scale,
        ..cfg.guidance.clone()
    };
    Ok((Denoiser::new(ckpt.arch, ckpt.params)?, sched, guidance))
}

fn residual_table(trace: &[f64]) -> Table {
    let mut t = Table::new(&["t", "residual"]);
    let steps = trace.len();
    for (i, r) in trace.iter().enumerate() {
        t.push(&[(steps - i) as f64, *r]);
    }
    t
}

pub fn deblur(cfg: &RunConfig, out: &Path) -> Result<()> {
    let input = require(&cfg.paths.input, "paths.input")?;
    existing(input, "input image")?;
    let y = read_image(input)?;
    let (model, sched, guidance) = load_model(cfg, out)?;
    let res = kernel_diff(&y, &model, &cfg.solver, &sched, &guidance, derive_seed(cfg.seed, "deblur", 0))?;
    KernelDataset::from_kernels(std::slice::from_ref(&res.kernel))?.save(&out.join("kernel.kdkd"))?;
    write_image(&out.join("x0.png"), &res.image.clipped())?;
    residual_table(&res.residual_trace).save(&out.join("residual.csv"))?;
    let mut resolved = cfg.clone();
    resolved.guidance = guidance;
    save_config(&resolved, out)
}

fn file_id(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let input = require(&cfg.paths.input, "paths.input")?;
    let truth = require(&cfg.paths.ground_truth, "paths.ground_truth")?;
    existing(input, "input image")?;
    existing(truth, "ground-truth image")?;
    let x = read_image(input)?;
    let gt = read_image(truth)?;
    let kernel_mnc = match (&cfg.paths.kernel_estimate, &cfg.paths.kernel_truth) {
        (Some(ke), Some(kt)) => {
            existing(ke, "kernel estimate")?;
            existing(kt, "kernel truth")?;
            let a = KernelDataset::load(ke)?.kernel(0)?;
            let b = KernelDataset::load(kt)?.kernel(0)?;
            Some(mnc(a.weights(), b.weights())?)
        }
        (None, None) => None,
        _ => return Err(CliError::Config("set both paths.kernel_estimate and paths.kernel_truth".into())),
    };
    let mut report = EvalReport::default();
    report.push(EvalRow {
        id: file_id(input),
        psnr_db: psnr(&x, &gt, 1.0)?,
        ssim: ssim(&x, &gt, 1.0)?,
        mnc: kernel_mnc,
        final_residual: None,
    });
    report.to_table().save(&out.join("eval.csv"))?;
    save_config(cfg, out)
}

struct Paired {
    guided: SampleOutput,
    unguided: SampleOutput,
    truth: Image,
    kernel: kernel_diff::Kernel,
}

pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (model, sched, guidance) = load_model(cfg, out)?;
    let (n, ks, size) = (cfg.eval.test_images, cfg.arch.kernel_size, cfg.arch.image_size);
    let kernels = gen_dataset(n, ks, &cfg.kernels.trajectory, derive_seed(cfg.seed, "test-kernels", 0))?;
    let scenes = synth_corpus(n, size, size, derive_seed(cfg.seed, "test-scenes", 0))?;
    let unguided = GuidanceConfig::unguided(guidance.kernel_scale);
    let runs: Vec<Result<Paired>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let k = kernels.kernel(i)?;
            let blurred = convolve(&scenes[i], &k, Boundary::Symmetric)?;
            let y = add_noise(&blurred, cfg.data.noise_std, derive_seed(cfg.seed, "test-noise", i as u64))?;
            let seed = derive_seed(cfg.seed, "ablate", i as u64);
            Ok(Paired {
                guided: kernel_diff(&y, &model, &cfg.solver, &sched, &guidance, seed)?,
                unguided: kernel_diff(&y, &model, &cfg.solver, &sched, &unguided, seed)?,
                truth: scenes[i].clone(),
                kernel: k,
            })
        })
        .collect();

    let header = [
        "id", "mnc_guided", "mnc_unguided", "psnr_guided", "psnr_unguided", "ssim_guided", "ssim_unguided",
        "residual_initial", "residual_final", "refine_start", "refine_end",
    ];
    let mut paired = Table::new(&header);
    let mut traces = Table::new(&["id", "t", "guided", "unguided"]);
    let (mut rep_g, mut rep_u) = (EvalReport::default(), EvalReport::default());
    let mut sums = [0.0; 10];
    for (i, run) in runs.into_iter().enumerate() {
        let p = run?;
        let id = format!("test{i:03}");
        let score = |s: &SampleOutput| -> Result<EvalRow> {
            let x = s.image.clipped();
            Ok(EvalRow {
                id: id.clone(),
                psnr_db: psnr(&x, &p.truth, 1.0)?,
                ssim: ssim(&x, &p.truth, 1.0)?,
                mnc: Some(mnc(s.kernel.weights(), p.kernel.weights())?),
                final_residual: s.residual_trace.last().copied(),
            })
        };
        let (g, u) = (score(&p.guided)?, score(&p.unguided)?);
        let trace = &p.guided.residual_trace;
        let vals = [
            g.mnc.unwrap(),
            u.mnc.unwrap(),
            g.psnr_db,
            u.psnr_db,
            g.ssim,
            u.ssim,
            trace[0],
            *trace.last().unwrap(),
            p.guided.refine_losses.0,
            p.guided.refine_losses.1,
        ];
        for (s, v) in sums.iter_mut().zip(vals) {
            *s += v;
        }
        let mut cells = vec![id.clone()];
        cells.extend(vals.map(fmt_num));
        paired.push_raw(cells);
        let steps = trace.len();
        for (j, (a, b)) in trace.iter().zip(&p.unguided.residual_trace).enumerate() {
            traces.push_raw([id.clone(), (steps - j).to_string(), fmt_num(*a), fmt_num(*b)]);
        }
        rep_g.push(g);
        rep_u.push(u);
    }
    let mut mean = vec!["MEAN".to_string()];
    mean.extend(sums.iter().map(|s| fmt_num(s / n as f64)));
    paired.push_raw(mean);
    paired.save(&out.join("ablation.csv"))?;
    traces.save(&out.join("residual_traces.csv"))?;
    rep_g.to_table().save(&out.join("guided.csv"))?;
    rep_u.to_table().save(&out.join("unguided.csv"))?;
    eprintln!(
        "mean MNC guided {:.4} unguided {:.4}; mean PSNR guided {:.3} unguided {:.3}",
        sums[0] / n as f64,
        sums[1] / n as f64,
        sums[2] / n as f64,
        sums[3] / n as f64
    );
    let mut resolved = cfg.clone();
    resolved.guidance = guidance;
    save_config(&resolved, out)
}
